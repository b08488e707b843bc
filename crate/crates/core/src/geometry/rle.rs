use serde::{Deserialize, Serialize};

use super::mask::{BinaryMask, MaskBuilder};
use super::GeometryError;

/// Uncompressed COCO-style run lengths: alternating runs of 0s and 1s over
/// the column-major pixel order, starting with a (possibly empty) run of 0s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunLengthCounts(pub Vec<u32>);

impl RunLengthCounts {
    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }
}

pub fn rle_encode(m: &BinaryMask) -> RunLengthCounts {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for i in 0..m.len() {
        let v = m.bit(i);
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    RunLengthCounts(counts)
}

pub fn rle_decode(
    rle: &RunLengthCounts,
    width: u32,
    height: u32,
) -> Result<BinaryMask, GeometryError> {
    let expected = u64::from(width) * u64::from(height);
    let total = rle.total();
    if total != expected {
        return Err(GeometryError::Codec(format!(
            "run lengths sum to {total}, expected {width}x{height}={expected}"
        )));
    }
    if let Some(pos) = rle.0.iter().skip(1).position(|&c| c == 0) {
        return Err(GeometryError::Codec(format!(
            "zero-length run at position {}",
            pos + 1
        )));
    }
    let mut b = MaskBuilder::new(width, height);
    let mut idx = 0usize;
    for (k, &c) in rle.0.iter().enumerate() {
        if k % 2 == 1 {
            b.set_run(idx, c as usize);
        }
        idx += c as usize;
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_three_by_three() {
        let m = BinaryMask::zeros(3, 3);
        assert_eq!(rle_encode(&m).0, vec![9]);
    }

    #[test]
    fn single_top_left_pixel() {
        let (w, h) = (5u32, 4u32);
        let m = BinaryMask::from_fn(w, h, |x, y| x == 0 && y == 0);
        assert_eq!(rle_encode(&m).0, vec![0, 1, w * h - 1]);
    }

    #[test]
    fn column_major_order() {
        // pixel (x=1, y=0) in a 2x3 mask sits at column-major index 3
        let m = BinaryMask::from_fn(2, 3, |x, y| x == 1 && y == 0);
        assert_eq!(rle_encode(&m).0, vec![3, 1, 2]);
    }

    #[test]
    fn full_mask() {
        let m = BinaryMask::from_fn(4, 4, |_, _| true);
        let rle = rle_encode(&m);
        assert_eq!(rle.0, vec![0, 16]);
        assert_eq!(rle_decode(&rle, 4, 4).unwrap(), m);
    }

    #[test]
    fn decode_rejects_bad_sums_and_zero_runs() {
        assert!(matches!(
            rle_decode(&RunLengthCounts(vec![3, 4]), 3, 3),
            Err(GeometryError::Codec(_))
        ));
        assert!(matches!(
            rle_decode(&RunLengthCounts(vec![3, 0, 6]), 3, 3),
            Err(GeometryError::Codec(_))
        ));
    }
}
