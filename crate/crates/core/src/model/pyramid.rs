use candle_core::Tensor;

use crate::{Error, Result, IMAGE_SIZE};

/// A full-resolution hair mask and its per-stage copies, one per generator
/// stage. Each level is the 128×128 mask area-averaged down to the stage
/// resolution and re-binarized at 0.5.
#[derive(Clone, Debug)]
pub struct MaskPyramid {
    levels: Vec<Tensor>,
}

impl MaskPyramid {
    /// Builds levels for `resolutions` from a `[B, 1, 128, 128]` binary mask.
    pub fn new(mask: &Tensor, resolutions: &[usize]) -> Result<Self> {
        let (_, c, h, w) = mask.dims4()?;
        if c != 1 || h != IMAGE_SIZE || w != IMAGE_SIZE {
            return Err(Error::shape("mask pyramid input", "B×1×128×128", format!("{:?}", mask.dims())));
        }
        let levels = resolutions
            .iter()
            .map(|&r| {
                if r == 0 || !IMAGE_SIZE.is_multiple_of(r) {
                    return Err(Error::InvalidArgument(format!("resolution {r} does not divide {IMAGE_SIZE}")));
                }
                let factor = IMAGE_SIZE / r;
                let pooled = if factor == 1 {
                    mask.clone()
                } else {
                    mask.avg_pool2d(factor)?
                };
                Ok(pooled.ge(0.5)?.to_dtype(mask.dtype())?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> Option<&Tensor> {
        self.levels.get(i)
    }

    /// The full-resolution level.
    pub fn full(&self) -> &Tensor {
        self.levels.last().expect("pyramid has at least one level")
    }

    pub fn to_dtype(&self, dtype: candle_core::DType) -> Result<Self> {
        Ok(Self {
            levels: self
                .levels
                .iter()
                .map(|l| l.to_dtype(dtype))
                .collect::<candle_core::Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use candle_core::DType;

    #[test]
    fn levels_match_block_majority() {
        let n = IMAGE_SIZE;
        // Left 40 columns are hair.
        let data: Vec<f32> = (0..n * n).map(|i| if i % n < 40 { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::from_vec(data, (1, 1, n, n), &device()).unwrap();
        let p = MaskPyramid::new(&mask, &[8, 16, 32, 64, 128]).unwrap();
        for (level, &r) in p.levels().iter().zip(&[8usize, 16, 32, 64, 128]) {
            assert_eq!(level.dims(), &[1, 1, r, r]);
            let f = n / r;
            let row = level.squeeze(0).unwrap().squeeze(0).unwrap().get(0).unwrap().to_vec1::<f32>().unwrap();
            for (j, v) in row.iter().enumerate() {
                // Block j covers columns [j·f, (j+1)·f); its hair share.
                let share = (0..f).filter(|k| j * f + k < 40).count() as f32 / f as f32;
                assert_eq!(*v, if share >= 0.5 { 1.0 } else { 0.0 }, "r={r} j={j}");
            }
        }
        assert_eq!(p.full().dtype(), DType::F32);
    }
}
