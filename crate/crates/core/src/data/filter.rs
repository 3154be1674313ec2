use super::SampleRecord;
use crate::{Error, Result};

/// Evaluation pairs must contain at least 3% hair.
pub const DEFAULT_MIN_HAIR_FRACTION: f64 = 0.03;

/// Keeps records whose hair fraction is at least `min_hair_fraction`
/// (inclusive), preserving order.
pub fn eval_filter(records: &[SampleRecord], min_hair_fraction: f64) -> Result<Vec<&SampleRecord>> {
    if !(0.0..=1.0).contains(&min_hair_fraction) {
        return Err(Error::InvalidArgument(format!(
            "min_hair_fraction must lie in [0, 1], got {min_hair_fraction}"
        )));
    }
    let kept: Vec<_> = records
        .iter()
        .filter(|r| r.hair_fraction() >= min_hair_fraction)
        .collect();
    if kept.is_empty() && !records.is_empty() {
        log::warn!("no record has a hair fraction of at least {min_hair_fraction}");
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{device, IMAGE_SIZE};
    use candle_core::{DType, Tensor};

    /// Record whose mask has exactly `hair` ones.
    fn record(id: &str, hair: usize) -> SampleRecord {
        let n = IMAGE_SIZE * IMAGE_SIZE;
        let mask: Vec<f32> = (0..n).map(|i| if i < hair { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::from_vec(mask, (1, 1, IMAGE_SIZE, IMAGE_SIZE), &device()).unwrap();
        let image = Tensor::zeros((1, 3, IMAGE_SIZE, IMAGE_SIZE), DType::F32, &device()).unwrap();
        SampleRecord::new(id, image, mask).unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let n = (IMAGE_SIZE * IMAGE_SIZE) as f64;
        let fractions = [0.0, 0.02, 0.03, 0.5];
        let recs: Vec<_> = fractions
            .iter()
            .enumerate()
            .map(|(i, f)| record(&i.to_string(), (f * n).ceil() as usize))
            .collect();
        // ceil keeps 0.03 at or just above the threshold.
        let kept: Vec<_> = eval_filter(&recs, 0.03).unwrap().iter().map(|r| r.id().to_owned()).collect();
        assert_eq!(kept, ["2", "3"]);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let recs = vec![record("a", 0), record("b", 10)];
        assert_eq!(eval_filter(&recs, 0.0).unwrap().len(), 2);
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        assert!(eval_filter(&[], 1.5).is_err());
    }
}
