//! Pretrained feature extractors used by the perceptual loss and by FID.
//!
//! Weights are provisioned as safetensors files using the torchvision
//! parameter names (`features.N.weight` for VGG19; `Mixed_5b.branch1x1.conv.weight`
//! and friends for the FID Inception network). Both also have stub
//! implementations that need no weights, for offline testing.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};

use crate::{device, Error, Result};

/// Maps `[-1, 1]` images to a list of intermediate feature maps.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;

    /// Weight of each tap layer in the perceptual loss.
    fn tap_weights(&self) -> Vec<f64>;
}

/// The identity map as a single tap. Turns the perceptual loss into the
/// pixel loss, so tests never need pretrained weights.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![images.clone()])
    }

    fn tap_weights(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// Maps `[-1, 1]` images to one embedding vector each, `[N, d]`.
pub trait ImageEmbedder: Send + Sync {
    fn embed(&self, images: &Tensor) -> Result<Tensor>;
    fn dim(&self) -> usize;
}

/// Average-pools each image to `grid × grid` and flattens: a cheap embedder
/// for tests of the FID pipeline.
#[derive(Clone, Copy, Debug)]
pub struct PooledPixelEmbedder {
    pub grid: usize,
}

impl ImageEmbedder for PooledPixelEmbedder {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, h, _) = images.dims4()?;
        if self.grid == 0 || h % self.grid != 0 {
            return Err(Error::InvalidArgument(format!("grid {} does not divide {h}", self.grid)));
        }
        let pooled = images.avg_pool2d(h / self.grid)?;
        Ok(pooled.reshape((n, c * self.grid * self.grid))?)
    }

    fn dim(&self) -> usize {
        3 * self.grid * self.grid
    }
}

/// Source of named weights during network construction.
type WeightSource<'a> = dyn FnMut(&str, &[usize]) -> Result<Tensor> + 'a;

fn from_map<'a>(map: &'a HashMap<String, Tensor>, dtype: DType) -> impl FnMut(&str, &[usize]) -> Result<Tensor> + 'a {
    move |name, shape| {
        let t = map
            .get(name)
            .ok_or_else(|| Error::ExtractorUnavailable(format!("weights file lacks tensor {name}")))?;
        if t.dims() != shape {
            return Err(Error::ExtractorUnavailable(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.dims()
            )));
        }
        Ok(t.to_dtype(dtype)?)
    }
}

fn random_source(seed: u64, dtype: DType) -> impl FnMut(&str, &[usize]) -> Result<Tensor> {
    let mut store = crate::model::ParamStore::new(dtype, seed);
    move |name, shape| {
        let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
        let init = if name.ends_with("running_var") {
            crate::model::Init::Const(1.0)
        } else if name.ends_with("running_mean") || name.ends_with("bn.bias") {
            crate::model::Init::Const(0.0)
        } else if name.ends_with("bn.weight") {
            crate::model::Init::Const(1.0)
        } else {
            crate::model::Init::Normal((2.0 / fan_in as f64).sqrt())
        };
        Ok(store.create(name.to_owned(), shape.to_vec(), init)?.detach())
    }
}

fn load_weights(path: &Path) -> Result<HashMap<String, Tensor>> {
    if !path.is_file() {
        return Err(Error::ExtractorUnavailable(format!("no weights file at {}", path.display())));
    }
    candle_core::safetensors::load(path, &device())
        .map_err(|e| Error::ExtractorUnavailable(format!("cannot read {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// VGG19

/// `(index in torchvision's vgg19.features, in, out)` for every conv up to
/// the first conv of the fifth block.
const VGG19_CONVS: [(usize, usize, usize); 9] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (16, 256, 256),
    (19, 256, 512),
];
const VGG19_TAIL: [(usize, usize, usize); 4] = [(21, 512, 512), (23, 512, 512), (25, 512, 512), (28, 512, 512)];
/// Conv indices whose ReLU output is a tap: relu1_1 … relu5_1.
const VGG19_TAPS: [usize; 5] = [0, 5, 10, 19, 28];
/// Max-pools follow these conv indices.
const VGG19_POOL_AFTER: [usize; 4] = [2, 7, 16, 25];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG19 convolutional trunk truncated after `relu5_1`; taps are the first
/// activation of each of the five blocks, weight 1 each.
#[derive(Debug)]
pub struct Vgg19Features {
    convs: Vec<(usize, Tensor, Tensor)>,
    mean: Tensor,
    std: Tensor,
}

impl Vgg19Features {
    /// Loads ImageNet weights from a safetensors file with torchvision names.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let map = load_weights(path)?;
        let mut source = from_map(&map, dtype);
        
        Self::build(&mut source, dtype)
    }

    /// Randomly initialized trunk, for shape and plumbing tests.
    pub fn random(seed: u64, dtype: DType) -> Result<Self> {
        Self::build(&mut random_source(seed, dtype), dtype)
    }

    fn build(source: &mut WeightSource<'_>, dtype: DType) -> Result<Self> {
        let convs = VGG19_CONVS
            .iter()
            .chain(&VGG19_TAIL)
            .map(|&(idx, cin, cout)| {
                let w = source(&format!("features.{idx}.weight"), &[cout, cin, 3, 3])?;
                let b = source(&format!("features.{idx}.bias"), &[cout])?;
                Ok((idx, w, b.reshape((1, cout, 1, 1))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = Tensor::new(&IMAGENET_MEAN, &device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, &device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(Self { convs, mean, std })
    }
}

impl FeatureExtractor for Vgg19Features {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let unit = images.affine(0.5, 0.5)?;
        let mut x = unit.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut taps = Vec::with_capacity(VGG19_TAPS.len());
        for (idx, w, b) in &self.convs {
            x = x.conv2d(w, 1, 1, 1, 1)?.broadcast_add(b)?.relu()?;
            if VGG19_TAPS.contains(idx) {
                taps.push(x.clone());
            }
            if VGG19_POOL_AFTER.contains(idx) {
                x = x.max_pool2d(2)?;
            }
        }
        Ok(taps)
    }

    fn tap_weights(&self) -> Vec<f64> {
        vec![1.0; VGG19_TAPS.len()]
    }
}

// ---------------------------------------------------------------------------
// Inception (FID variant)

/// Conv + folded batch norm + ReLU.
#[derive(Debug)]
struct BasicConv {
    weight: Tensor,
    scale: Tensor,
    shift: Tensor,
    stride: usize,
    pad: (usize, usize),
}

/// Batch-norm epsilon of the Inception checkpoints.
const INCEPTION_BN_EPS: f64 = 1e-3;

impl BasicConv {
    fn new(
        source: &mut WeightSource<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: (usize, usize),
    ) -> Result<Self> {
        let weight = source(&format!("{name}.conv.weight"), &[cout, cin, kernel.0, kernel.1])?;
        let gamma = source(&format!("{name}.bn.weight"), &[cout])?;
        let beta = source(&format!("{name}.bn.bias"), &[cout])?;
        let mean = source(&format!("{name}.bn.running_mean"), &[cout])?;
        let var = source(&format!("{name}.bn.running_var"), &[cout])?;
        let scale = gamma.div(&var.affine(1.0, INCEPTION_BN_EPS)?.sqrt()?)?;
        let shift = beta.sub(&mean.mul(&scale)?)?;
        Ok(Self {
            weight,
            scale: scale.reshape((1, cout, 1, 1))?,
            shift: shift.reshape((1, cout, 1, 1))?,
            stride,
            pad,
        })
    }

    fn sq(source: &mut WeightSource<'_>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::new(source, name, cin, cout, (k, k), stride, (pad, pad))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.pad_with_zeros(2, self.pad.0, self.pad.0)?.pad_with_zeros(3, self.pad.1, self.pad.1)?;
        let y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        Ok(y.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?.relu()?)
    }
}

/// 3×3, stride 1, padding 1 average pool that excludes the padding from the
/// denominator.
fn avg_pool_3x3_exclude_pad(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let summed = padded.avg_pool2d_with_stride(3, 1)?.affine(9.0, 0.0)?;
    let count = |i: usize, n: usize| -> f64 { if n == 1 { 1.0 } else if i == 0 || i == n - 1 { 2.0 } else { 3.0 } };
    let counts: Vec<f64> = (0..h)
        .flat_map(|i| (0..w).map(move |j| 1.0 / (count(i, h) * count(j, w))))
        .collect();
    let inv = Tensor::from_vec(counts, (1, 1, h, w), &device())?.to_dtype(x.dtype())?;
    Ok(summed.broadcast_mul(&inv)?)
}

/// 3×3 stride-1 max pool with one pixel of padding. Inputs are post-ReLU, so
/// zero padding never wins the max.
fn max_pool_3x3_same(x: &Tensor) -> Result<Tensor> {
    Ok(x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?.max_pool2d_with_stride(3, 1)?)
}

#[derive(Debug)]
enum Block {
    A {
        b1: BasicConv,
        b5: [BasicConv; 2],
        b3: [BasicConv; 3],
        pool: BasicConv,
    },
    B {
        b3: BasicConv,
        b3dbl: [BasicConv; 3],
    },
    C {
        b1: BasicConv,
        b7: [BasicConv; 3],
        b7dbl: [BasicConv; 5],
        pool: BasicConv,
    },
    D {
        b3: [BasicConv; 2],
        b7: [BasicConv; 4],
    },
    E {
        b1: BasicConv,
        b3_1: BasicConv,
        b3_2: [BasicConv; 2],
        b3dbl_1: [BasicConv; 2],
        b3dbl_2: [BasicConv; 2],
        pool: BasicConv,
        max_pool: bool,
    },
}

fn seq(x: &Tensor, convs: &[BasicConv]) -> Result<Tensor> {
    convs.iter().try_fold(x.clone(), |x, c| c.forward(&x))
}

impl Block {
    fn a(s: &mut WeightSource<'_>, name: &str, cin: usize, pool_features: usize) -> Result<Self> {
        let n = |b: &str| format!("{name}.{b}");
        Ok(Block::A {
            b1: BasicConv::sq(s, &n("branch1x1"), cin, 64, 1, 1, 0)?,
            b5: [
                BasicConv::sq(s, &n("branch5x5_1"), cin, 48, 1, 1, 0)?,
                BasicConv::sq(s, &n("branch5x5_2"), 48, 64, 5, 1, 2)?,
            ],
            b3: [
                BasicConv::sq(s, &n("branch3x3dbl_1"), cin, 64, 1, 1, 0)?,
                BasicConv::sq(s, &n("branch3x3dbl_2"), 64, 96, 3, 1, 1)?,
                BasicConv::sq(s, &n("branch3x3dbl_3"), 96, 96, 3, 1, 1)?,
            ],
            pool: BasicConv::sq(s, &n("branch_pool"), cin, pool_features, 1, 1, 0)?,
        })
    }

    fn b(s: &mut WeightSource<'_>, name: &str, cin: usize) -> Result<Self> {
        let n = |b: &str| format!("{name}.{b}");
        Ok(Block::B {
            b3: BasicConv::sq(s, &n("branch3x3"), cin, 384, 3, 2, 0)?,
            b3dbl: [
                BasicConv::sq(s, &n("branch3x3dbl_1"), cin, 64, 1, 1, 0)?,
                BasicConv::sq(s, &n("branch3x3dbl_2"), 64, 96, 3, 1, 1)?,
                BasicConv::sq(s, &n("branch3x3dbl_3"), 96, 96, 3, 2, 0)?,
            ],
        })
    }

    fn c(s: &mut WeightSource<'_>, name: &str, cin: usize, c7: usize) -> Result<Self> {
        let n = |b: &str| format!("{name}.{b}");
        let row = |s: &mut WeightSource<'_>, b: &str, i: usize, o: usize| BasicConv::new(s, &n(b), i, o, (1, 7), 1, (0, 3));
        let col = |s: &mut WeightSource<'_>, b: &str, i: usize, o: usize| BasicConv::new(s, &n(b), i, o, (7, 1), 1, (3, 0));
        Ok(Block::C {
            b1: BasicConv::sq(s, &n("branch1x1"), cin, 192, 1, 1, 0)?,
            b7: [
                BasicConv::sq(s, &n("branch7x7_1"), cin, c7, 1, 1, 0)?,
                row(s, "branch7x7_2", c7, c7)?,
                col(s, "branch7x7_3", c7, 192)?,
            ],
            b7dbl: [
                BasicConv::sq(s, &n("branch7x7dbl_1"), cin, c7, 1, 1, 0)?,
                col(s, "branch7x7dbl_2", c7, c7)?,
                row(s, "branch7x7dbl_3", c7, c7)?,
                col(s, "branch7x7dbl_4", c7, c7)?,
                row(s, "branch7x7dbl_5", c7, 192)?,
            ],
            pool: BasicConv::sq(s, &n("branch_pool"), cin, 192, 1, 1, 0)?,
        })
    }

    fn d(s: &mut WeightSource<'_>, name: &str, cin: usize) -> Result<Self> {
        let n = |b: &str| format!("{name}.{b}");
        Ok(Block::D {
            b3: [
                BasicConv::sq(s, &n("branch3x3_1"), cin, 192, 1, 1, 0)?,
                BasicConv::sq(s, &n("branch3x3_2"), 192, 320, 3, 2, 0)?,
            ],
            b7: [
                BasicConv::sq(s, &n("branch7x7x3_1"), cin, 192, 1, 1, 0)?,
                BasicConv::new(s, &n("branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3))?,
                BasicConv::new(s, &n("branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0))?,
                BasicConv::sq(s, &n("branch7x7x3_4"), 192, 192, 3, 2, 0)?,
            ],
        })
    }

    fn e(s: &mut WeightSource<'_>, name: &str, cin: usize, max_pool: bool) -> Result<Self> {
        let n = |b: &str| format!("{name}.{b}");
        Ok(Block::E {
            b1: BasicConv::sq(s, &n("branch1x1"), cin, 320, 1, 1, 0)?,
            b3_1: BasicConv::sq(s, &n("branch3x3_1"), cin, 384, 1, 1, 0)?,
            b3_2: [
                BasicConv::new(s, &n("branch3x3_2a"), 384, 384, (1, 3), 1, (0, 1))?,
                BasicConv::new(s, &n("branch3x3_2b"), 384, 384, (3, 1), 1, (1, 0))?,
            ],
            b3dbl_1: [
                BasicConv::sq(s, &n("branch3x3dbl_1"), cin, 448, 1, 1, 0)?,
                BasicConv::sq(s, &n("branch3x3dbl_2"), 448, 384, 3, 1, 1)?,
            ],
            b3dbl_2: [
                BasicConv::new(s, &n("branch3x3dbl_3a"), 384, 384, (1, 3), 1, (0, 1))?,
                BasicConv::new(s, &n("branch3x3dbl_3b"), 384, 384, (3, 1), 1, (1, 0))?,
            ],
            pool: BasicConv::sq(s, &n("branch_pool"), cin, 192, 1, 1, 0)?,
            max_pool,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let parts = match self {
            Block::A { b1, b5, b3, pool } => vec![
                b1.forward(x)?,
                seq(x, b5)?,
                seq(x, b3)?,
                pool.forward(&avg_pool_3x3_exclude_pad(x)?)?,
            ],
            Block::B { b3, b3dbl } => vec![b3.forward(x)?, seq(x, b3dbl)?, x.max_pool2d_with_stride(3, 2)?],
            Block::C { b1, b7, b7dbl, pool } => vec![
                b1.forward(x)?,
                seq(x, b7)?,
                seq(x, b7dbl)?,
                pool.forward(&avg_pool_3x3_exclude_pad(x)?)?,
            ],
            Block::D { b3, b7 } => vec![seq(x, b3)?, seq(x, b7)?, x.max_pool2d_with_stride(3, 2)?],
            Block::E {
                b1,
                b3_1,
                b3_2,
                b3dbl_1,
                b3dbl_2,
                pool,
                max_pool,
            } => {
                let t = b3_1.forward(x)?;
                let u = seq(x, b3dbl_1)?;
                let pooled = if *max_pool {
                    max_pool_3x3_same(x)?
                } else {
                    avg_pool_3x3_exclude_pad(x)?
                };
                vec![
                    b1.forward(x)?,
                    b3_2[0].forward(&t)?,
                    b3_2[1].forward(&t)?,
                    b3dbl_2[0].forward(&u)?,
                    b3dbl_2[1].forward(&u)?,
                    pool.forward(&pooled)?,
                ]
            }
        };
        Ok(Tensor::cat(&parts, 1)?)
    }
}

/// Inception-v3 trunk in the layout used for FID, producing the 2048-d
/// pool features. Inputs are resized bilinearly to 299×299.
#[derive(Debug)]
pub struct InceptionPool {
    stem: Vec<BasicConv>,
    blocks: Vec<Block>,
}

pub const INCEPTION_INPUT: usize = 299;
pub const INCEPTION_DIM: usize = 2048;

impl InceptionPool {
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let map = load_weights(path)?;
        let mut source = from_map(&map, dtype);
        
        Self::build(&mut source)
    }

    pub fn random(seed: u64, dtype: DType) -> Result<Self> {
        Self::build(&mut random_source(seed, dtype))
    }

    fn build(s: &mut WeightSource<'_>) -> Result<Self> {
        let stem = vec![
            BasicConv::sq(s, "Conv2d_1a_3x3", 3, 32, 3, 2, 0)?,
            BasicConv::sq(s, "Conv2d_2a_3x3", 32, 32, 3, 1, 0)?,
            BasicConv::sq(s, "Conv2d_2b_3x3", 32, 64, 3, 1, 1)?,
            BasicConv::sq(s, "Conv2d_3b_1x1", 64, 80, 1, 1, 0)?,
            BasicConv::sq(s, "Conv2d_4a_3x3", 80, 192, 3, 1, 0)?,
        ];
        let blocks = vec![
            Block::a(s, "Mixed_5b", 192, 32)?,
            Block::a(s, "Mixed_5c", 256, 64)?,
            Block::a(s, "Mixed_5d", 288, 64)?,
            Block::b(s, "Mixed_6a", 288)?,
            Block::c(s, "Mixed_6b", 768, 128)?,
            Block::c(s, "Mixed_6c", 768, 160)?,
            Block::c(s, "Mixed_6d", 768, 160)?,
            Block::c(s, "Mixed_6e", 768, 192)?,
            Block::d(s, "Mixed_7a", 768)?,
            Block::e(s, "Mixed_7b", 1280, false)?,
            Block::e(s, "Mixed_7c", 2048, true)?,
        ];
        Ok(Self { stem, blocks })
    }
}

impl ImageEmbedder for InceptionPool {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape("inception input", 3, c));
        }
        let x = crate::metrics::resize_bilinear_tensor(images, INCEPTION_INPUT, INCEPTION_INPUT)?;
        let x = self.stem[0].forward(&x)?;
        let x = self.stem[1].forward(&x)?;
        let x = self.stem[2].forward(&x)?.max_pool2d_with_stride(3, 2)?;
        let x = self.stem[3].forward(&x)?;
        let x = self.stem[4].forward(&x)?.max_pool2d_with_stride(3, 2)?;
        let x = self.blocks.iter().try_fold(x, |x, b| b.forward(&x))?;
        Ok(x.mean((2, 3))?.reshape((n, INCEPTION_DIM))?)
    }

    fn dim(&self) -> usize {
        INCEPTION_DIM
    }
}
