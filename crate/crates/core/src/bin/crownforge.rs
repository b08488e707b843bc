use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crownforge::chart::{render_chart, ChartSeries, ChartSpec};
use crownforge::config::{RunConfig, SourceInput};
use crownforge::dataset::{
    assign_splits, build_class_map, generate_tiles, read_annotations, read_manifest, read_polygons,
    read_split_regions, validate_splits, write_manifest, write_tile_rasters, Split, TileManifest,
    TILES_DIR,
};
use crownforge::evaluation::{
    evaluate, read_predictions, write_report, ApMode, EvalReport, GroundTruthSet, PredictionSet,
};
use crownforge::geometry::{nms_indices, OverlapMetric};
use crownforge::prompting::{dsm_local_maxima, grid_prompts, write_prompts, PromptSet};
use crownforge::raster::{align_dsm, read_raster, RasterGrid};

/// Tiling, point prompts, mask NMS and evaluation for tree-crown
/// instance segmentation.
#[derive(Parser)]
#[command(name = "crownforge", version)]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut orthomosaics into labelled tiles.
    Tile(TileArgs),
    /// Assign the tiles of a manifest to train/val/test regions.
    Split(SplitArgs),
    /// Generate point prompts.
    #[command(subcommand)]
    Prompts(PromptsCommand),
    /// Suppress overlapping predicted masks.
    Nms(NmsArgs),
    /// Score predictions against a tiled ground truth.
    Eval(EvalArgs),
    /// Per-class AP bar chart from one or more reports.
    Chart(ChartArgs),
    /// Check that every class is present in every split.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct TileArgs {
    /// RGB raster base path (single-source mode).
    #[arg(long, requires_all = ["dsm", "aoi"])]
    rgb: Option<PathBuf>,
    #[arg(long)]
    dsm: Option<PathBuf>,
    /// GeoJSON AOI polygons.
    #[arg(long)]
    aoi: Option<PathBuf>,
    /// Source name used in tile ids.
    #[arg(long, default_value = "site")]
    name: String,
    /// GeoJSON crowns with a `species` property.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// GeoJSON split regions; tiles are assigned when given.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tile_size: Option<u32>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    max_black: Option<f64>,
    #[arg(long)]
    min_visible: Option<f64>,
    #[arg(long)]
    species_threshold: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Output directory; defaults to the manifest's own directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Regular pps x pps grid.
    Grid(GridArgs),
    /// Local maxima of each tile's DSM.
    Dsm(DsmArgs),
}

#[derive(Args)]
struct GridArgs {
    /// One prompt set per tile of this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    pps: Option<u32>,
    #[arg(long)]
    tile_size: Option<u32>,
    #[arg(long, default_value = "tile")]
    tile_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DsmArgs {
    /// One prompt set per tile of this manifest.
    #[arg(long, conflicts_with = "dsm")]
    manifest: Option<PathBuf>,
    /// A single DSM raster base path.
    #[arg(long)]
    dsm: Option<PathBuf>,
    #[arg(long, default_value = "tile")]
    tile_id: String,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    min_height: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Only suppress instances of the same class.
    #[arg(long)]
    class_aware: bool,
    /// Use bounding-box IoU instead of mask IoU.
    #[arg(long = "box")]
    box_iou: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth manifest (`manifest.jsonl` or its directory).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    ap_mode: Option<ApMode>,
    #[arg(long)]
    max_dets: Option<usize>,
}

#[derive(Args)]
struct ChartArgs {
    #[arg(long, required = true)]
    report: Vec<PathBuf>,
    /// Series label per report, in order.
    #[arg(long)]
    label: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Plot on a 0-100 axis.
    #[arg(long)]
    percent: bool,
    #[arg(long, default_value = "AP per class")]
    title: String,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// A failed check as opposed to a usage, format or I/O problem.
#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("CROWNFORGE_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: CROWNFORGE_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationFailure>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Tile(a) => tile(&mut cfg, a),
        Command::Split(a) => split(&mut cfg, a),
        Command::Prompts(PromptsCommand::Grid(a)) => prompts_grid(&mut cfg, a),
        Command::Prompts(PromptsCommand::Dsm(a)) => prompts_dsm(&mut cfg, a),
        Command::Nms(a) => nms(&mut cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
        Command::Chart(a) => chart(&cfg, a),
        Command::Validate(a) => validate(&mut cfg, a),
    }
}

fn set<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.with_context(|| format!("missing {what}: pass the flag or set it in the config inputs"))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_source(src: &SourceInput) -> Result<(RasterGrid, RasterGrid)> {
    let rgb = read_raster(&src.rgb)?;
    let mut dsm = read_raster(&src.dsm)?;
    if (dsm.width(), dsm.height()) != (rgb.width(), rgb.height())
        || dsm.geotransform() != rgb.geotransform()
    {
        info!("{}: resampling DSM onto the RGB grid", src.name);
        dsm = align_dsm(&dsm, &rgb)?;
    }
    Ok((rgb, dsm))
}

fn tile(cfg: &mut RunConfig, a: TileArgs) -> Result<()> {
    set(&mut cfg.tile_size, a.tile_size);
    set(&mut cfg.overlap, a.overlap);
    set(&mut cfg.max_black_fraction, a.max_black);
    set(&mut cfg.min_visible_fraction, a.min_visible);
    set(&mut cfg.species_threshold, a.species_threshold);
    set(&mut cfg.inputs.annotations, a.annotations.map(Some));
    set(&mut cfg.inputs.regions, a.regions.map(Some));
    if let (Some(rgb), Some(dsm), Some(aoi)) = (a.rgb, a.dsm, a.aoi) {
        cfg.inputs.sources = vec![SourceInput {
            name: a.name,
            rgb,
            dsm,
            aoi,
        }];
    }
    cfg.validate()?;
    if cfg.inputs.sources.is_empty() {
        bail!("no sources: pass --rgb/--dsm/--aoi or list them in the config inputs");
    }
    let annotations = read_annotations(&required(cfg.inputs.annotations.clone(), "--annotations")?)?;
    let class_map = build_class_map(&annotations, cfg.species_threshold);
    info!("classes: {:?}", class_map.class_names());
    let params = cfg.tiling_params();
    let tiles_dir = a.out.join(TILES_DIR);
    fs::create_dir_all(&tiles_dir).with_context(|| format!("creating {}", tiles_dir.display()))?;

    let mut tiles = Vec::new();
    let mut sources = Vec::new();
    for src in &cfg.inputs.sources {
        let (rgb, dsm) = load_source(src)?;
        let aoi = read_polygons(&src.aoi)?;
        let tiled = generate_tiles(&src.name, &rgb, &dsm, &aoi, &annotations, &class_map, &params)?;
        write_tile_rasters(&tiled, &tiles_dir, cfg.normalization)?;
        info!("{}: {} tiles", src.name, tiled.tiles.len());
        sources.push(tiled.source);
        tiles.extend(tiled.tiles);
    }
    if let Some(regions) = &cfg.inputs.regions {
        tiles = assign_splits(&tiles, &read_split_regions(regions)?)?;
    }
    let manifest = TileManifest {
        class_map,
        params,
        sources,
        tiles,
    };
    write_manifest(&a.out, &manifest, Some(cfg.to_value()))?;
    println!("{} tiles written to {}", manifest.tiles.len(), a.out.display());
    Ok(())
}

fn split(cfg: &mut RunConfig, a: SplitArgs) -> Result<()> {
    set(&mut cfg.inputs.manifest, a.manifest.map(Some));
    set(&mut cfg.inputs.regions, a.regions.map(Some));
    let manifest_path = required(cfg.inputs.manifest.clone(), "--manifest")?;
    let regions = read_split_regions(&required(cfg.inputs.regions.clone(), "--regions")?)?;
    let (mut manifest, _) = read_manifest(&manifest_path)?;
    manifest.tiles = assign_splits(&manifest.tiles, &regions)?;
    let out = a.out.unwrap_or_else(|| manifest_dir(&manifest_path));
    write_manifest(&out, &manifest, Some(cfg.to_value()))?;
    let report = validate_splits(&manifest.tiles, &manifest.class_map);
    println!(
        "train {} / val {} / test {} tiles, {} unassigned",
        report.totals.train, report.totals.val, report.totals.test, report.unassigned_tiles
    );
    Ok(())
}

fn manifest_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

fn prompts_grid(cfg: &mut RunConfig, a: GridArgs) -> Result<()> {
    set(&mut cfg.pps, a.pps);
    set(&mut cfg.tile_size, a.tile_size);
    set(&mut cfg.inputs.manifest, a.manifest.map(Some));
    cfg.validate()?;
    let sets: Vec<PromptSet> = match &cfg.inputs.manifest {
        Some(m) => {
            let (manifest, _) = read_manifest(m)?;
            manifest
                .active_tiles()
                .map(|t| Ok(grid_prompts(t.window.width, cfg.pps)?.with_tile_id(&t.tile_id)))
                .collect::<Result<_>>()?
        }
        None => vec![grid_prompts(cfg.tile_size, cfg.pps)?.with_tile_id(a.tile_id)],
    };
    let mut out = create_file(&a.out)?;
    write_prompts(&mut out, &sets)?;
    out.flush()?;
    println!("{} prompt sets written to {}", sets.len(), a.out.display());
    Ok(())
}

fn prompts_dsm(cfg: &mut RunConfig, a: DsmArgs) -> Result<()> {
    set(&mut cfg.maxima_window, a.window);
    set(&mut cfg.min_height, a.min_height.map(Some));
    if a.dsm.is_none() {
        set(&mut cfg.inputs.manifest, a.manifest.map(Some));
    }
    cfg.validate()?;
    let (window, min_height) = (cfg.maxima_window, cfg.min_height);
    let sets: Vec<PromptSet> = match (&a.dsm, &cfg.inputs.manifest) {
        (Some(base), _) => {
            vec![dsm_local_maxima(&read_raster(base)?, window, min_height)?.with_tile_id(a.tile_id)]
        }
        (None, Some(m)) => {
            let (manifest, _) = read_manifest(m)?;
            let dir = manifest_dir(m).join(TILES_DIR);
            manifest
                .active_tiles()
                .map(|t| {
                    let dsm = read_raster(&dir.join(format!("{}_dsm", t.tile_id)))?;
                    Ok(dsm_local_maxima(&dsm, window, min_height)?.with_tile_id(&t.tile_id))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => bail!("pass --dsm or --manifest"),
    };
    let mut out = create_file(&a.out)?;
    write_prompts(&mut out, &sets)?;
    out.flush()?;
    let points: usize = sets.iter().map(|s| s.prompts.len()).sum();
    println!("{points} prompts over {} tiles written to {}", sets.len(), a.out.display());
    Ok(())
}

fn nms(cfg: &mut RunConfig, a: NmsArgs) -> Result<()> {
    set(&mut cfg.nms_score_threshold, a.score_threshold);
    set(&mut cfg.nms_iou_threshold, a.iou_threshold);
    cfg.nms_class_aware |= a.class_aware;
    if a.box_iou {
        cfg.nms_overlap = OverlapMetric::Box;
    }
    set(&mut cfg.inputs.predictions, a.pred.map(Some));
    cfg.validate()?;
    let preds = read_predictions(&required(cfg.inputs.predictions.clone(), "--pred")?)?;
    let params = cfg.nms_params();
    let mut kept = PredictionSet::default();
    for (tile_id, list) in &preds.tiles {
        let scored = list.iter().map(|p| p.to_scored()).collect::<Result<Vec<_>, _>>()?;
        for i in nms_indices(&scored, &params)? {
            kept.push(tile_id.clone(), list[i].clone());
        }
    }
    let mut out = create_file(&a.out)?;
    kept.write_jsonl(&mut out)?;
    out.flush()?;
    println!("kept {} of {} predictions", kept.len(), preds.len());
    Ok(())
}

fn eval(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    set(&mut cfg.inputs.manifest, a.gt.map(Some));
    set(&mut cfg.inputs.predictions, a.pred.map(Some));
    set(&mut cfg.ap_mode, a.ap_mode);
    set(&mut cfg.max_dets, a.max_dets);
    cfg.validate()?;
    let (manifest, _) = read_manifest(&required(cfg.inputs.manifest.clone(), "--gt")?)?;
    let gt = GroundTruthSet::from_manifest(&manifest, a.split)?;
    let mut preds = read_predictions(&required(cfg.inputs.predictions.clone(), "--pred")?)?;
    preds.restrict_to(&gt, &manifest);
    let mut report = evaluate(&gt, &preds, &cfg.eval_params())?;
    let mut echo = cfg.to_value();
    if let (Some(s), Some(obj)) = (a.split, echo.as_object_mut()) {
        obj.insert("split".into(), serde_json::Value::String(s.to_string()));
    }
    report.config = Some(echo);
    write_report(&a.out, &report)?;
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    println!(
        "mAP {}  wmAP {}  mAP(single) {:.2}  mIoU {:.2}",
        pct(report.map),
        pct(report.wmap),
        100.0 * report.map_single,
        100.0 * report.miou
    );
    Ok(())
}

fn chart(cfg: &RunConfig, a: ChartArgs) -> Result<()> {
    let reports: Vec<EvalReport> = a
        .report
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<_>>()?;
    if !a.label.is_empty() && a.label.len() != reports.len() {
        bail!("{} labels for {} reports", a.label.len(), reports.len());
    }
    let first = &reports[0];
    let classes: Vec<String> = first.classes.iter().map(|c| c.name.clone()).collect();
    let scale = if a.percent { 100.0 } else { 1.0 };
    let mut series = Vec::with_capacity(reports.len());
    for (i, r) in reports.iter().enumerate() {
        let names: Vec<&str> = r.classes.iter().map(|c| c.name.as_str()).collect();
        if names != classes.iter().map(String::as_str).collect::<Vec<_>>() {
            bail!("{}: class list differs from {}", a.report[i].display(), a.report[0].display());
        }
        series.push(ChartSeries {
            label: a.label.get(i).cloned().unwrap_or_else(|| format!("model {}", i + 1)),
            values: r.classes.iter().map(|c| c.ap.map(|v| v * scale)).collect(),
            errors: None,
        });
    }
    let description = serde_json::json!({
        "config": cfg.to_value(),
        "reports": reports.iter().map(|r| r.config.clone()).collect::<Vec<_>>(),
    });
    let spec = ChartSpec {
        title: a.title,
        classes,
        counts: first.classes.iter().map(|c| c.n_gt).collect(),
        series,
        percent: a.percent,
        description: Some(description.to_string()),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    render_chart(&spec, &a.out)?;
    println!("chart written to {}", a.out.display());
    Ok(())
}

fn validate(cfg: &mut RunConfig, a: ValidateArgs) -> Result<()> {
    set(&mut cfg.inputs.manifest, a.manifest.map(Some));
    let (manifest, _) = read_manifest(&required(cfg.inputs.manifest.clone(), "--manifest")?)?;
    let report = validate_splits(&manifest.tiles, &manifest.class_map);
    println!(
        "tiles: train {} / val {} / test {} (total {}), unassigned {}, unsplit {}",
        report.totals.train,
        report.totals.val,
        report.totals.test,
        report.totals.total,
        report.unassigned_tiles,
        report.unsplit_tiles
    );
    if report.passed {
        println!("every class is present in every split");
        return Ok(());
    }
    let mut problems: Vec<String> = report
        .missing
        .iter()
        .map(|m| format!("class `{}` has no labels in {}", m.class_name, m.split))
        .collect();
    if report.unsplit_tiles > 0 {
        problems.push(format!("{} tiles have no split assigned", report.unsplit_tiles));
    }
    Err(ValidationFailure(problems.join("; ")).into())
}
