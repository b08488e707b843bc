use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, Prediction, PredictionSet};
use crate::geometry::{rasterize_rings, rle_decode, rle_encode, BinaryMask, Coord, RunLengthCounts};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Mask payload of a prediction line. Polygon data is a list of flat
/// `[x1, y1, x2, y2, ...]` rings in tile-pixel coordinates, filled jointly
/// with the even-odd rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MaskRecord {
    Rle {
        width: u32,
        height: u32,
        data: RunLengthCounts,
    },
    Polygon {
        width: u32,
        height: u32,
        data: Vec<Vec<f64>>,
    },
}

impl MaskRecord {
    pub fn decode(&self) -> Result<BinaryMask, String> {
        match self {
            MaskRecord::Rle { width, height, data } => {
                rle_decode(data, *width, *height).map_err(|e| e.to_string())
            }
            MaskRecord::Polygon { width, height, data } => {
                let mut rings: Vec<Vec<Coord>> = Vec::with_capacity(data.len());
                for (i, flat) in data.iter().enumerate() {
                    if flat.len() % 2 != 0 || flat.len() < 6 {
                        return Err(format!(
                            "polygon ring {i} needs an even number of at least 6 coordinates, got {}",
                            flat.len()
                        ));
                    }
                    if flat.iter().any(|v| !v.is_finite()) {
                        return Err(format!("polygon ring {i} has a non-finite coordinate"));
                    }
                    rings.push(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect());
                }
                rasterize_rings(rings.iter().map(Vec::as_slice), *width, *height).map_err(|e| e.to_string())
            }
        }
    }

    pub fn rle(mask: &BinaryMask) -> Self {
        MaskRecord::Rle {
            width: mask.width(),
            height: mask.height(),
            data: rle_encode(mask),
        }
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub tile_id: String,
    pub class_id: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score2: Option<f64>,
    pub mask: MaskRecord,
}

impl PredictionRecord {
    pub fn from_prediction(tile_id: &str, p: &Prediction) -> Self {
        PredictionRecord {
            tile_id: tile_id.to_string(),
            class_id: p.class_id,
            score: p.score,
            score2: p.score2,
            mask: MaskRecord::rle(&p.mask),
        }
    }

    pub fn to_prediction(&self) -> Result<Prediction, String> {
        let p = Prediction {
            class_id: self.class_id,
            score: self.score,
            score2: self.score2,
            mask: self.mask.decode()?,
        };
        p.fused_score().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// Reads a JSON-lines prediction file. Blank lines are skipped.
pub fn read_predictions(path: &Path) -> Result<PredictionSet, EvalError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| EvalError::Io {
        path: display.clone(),
        source,
    })?;
    let mut set = PredictionSet::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EvalError::Parse {
            path: display.clone(),
            line: i + 1,
            message,
        };
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let p = rec.to_prediction().map_err(parse_err)?;
        set.push(rec.tile_id, p);
    }
    Ok(set)
}

impl PredictionSet {
    /// Writes one RLE-encoded line per prediction, tile by tile.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (tile_id, list) in &self.tiles {
            for p in list {
                let rec = PredictionRecord::from_prediction(tile_id, p);
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json` and `report.csv` into `dir`. The CSV has one row per
/// class (`class, n_c, AP, AP50`) followed by summary rows; undefined values
/// are left empty.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let json_path = dir.join(REPORT_JSON);
    let mut text = serde_json::to_string_pretty(report).map_err(|e| EvalError::Output(e.to_string()))?;
    text.push('\n');
    fs::write(&json_path, text).map_err(io(&json_path))?;

    let csv_path = dir.join(REPORT_CSV);
    let out = |e: csv::Error| EvalError::Output(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(out)?;
    w.write_record(["class", "n_c", "AP", "AP50"]).map_err(out)?;
    for c in &report.classes {
        w.write_record([c.name.clone(), c.n_gt.to_string(), opt(c.ap), opt(c.ap50)])
            .map_err(out)?;
    }
    let n = report.num_gt.to_string();
    let footer = [
        ("mAP", opt(report.map), opt(report.map50)),
        ("wmAP", opt(report.wmap), opt(report.wmap50)),
        ("mAP_single", report.map_single.to_string(), report.map_single50.to_string()),
        ("mIoU", report.miou.to_string(), String::new()),
    ];
    for (name, v, v50) in footer {
        w.write_record([name.to_string(), n.clone(), v, v50]).map_err(out)?;
    }
    w.flush().map_err(|e| EvalError::Output(e.to_string()))
}
