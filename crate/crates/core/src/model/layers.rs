//! Convolution and linear layers over a [`ParamStore`].

use candle_core::{Tensor, D};

use super::params::{Init, ParamStore};
use super::shape::conv_output_size;
use crate::{Error, Result};

/// Slope of the leaky ReLU used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAKY_SLOPE, 0.0)?)?)
}

/// `ln(1 + eˣ)` computed as `max(x, 0) + ln(1 + e^{−|x|})`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((pos + tail)?)
}

/// `softplus⁻¹(1) = ln(e − 1)`.
pub fn inverse_softplus_one() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Square-kernel convolution with PyTorch's default uniform init.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Self::with_init(
            store,
            prefix,
            (in_channels, out_channels, kernel, stride, padding),
            Init::Uniform(bound),
            bias.then_some(Init::Uniform(bound)),
        )
    }

    pub fn with_init(
        store: &mut ParamStore,
        prefix: &str,
        (in_channels, out_channels, kernel, stride, padding): (usize, usize, usize, usize, usize),
        weight_init: Init,
        bias_init: Option<Init>,
    ) -> Result<Self> {
        let weight = store.create(
            format!("{prefix}.weight"),
            (out_channels, in_channels, kernel, kernel),
            weight_init,
        )?;
        let bias = bias_init
            .map(|init| store.create(format!("{prefix}.bias"), out_channels, init))
            .transpose()?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    /// Spatial size produced for an input of size `n`.
    pub fn output_size(&self, n: usize) -> Result<usize> {
        conv_output_size(n, self.padding, self.kernel(), self.stride)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels() {
            return Err(Error::shape("conv2d input channels", self.in_channels(), c));
        }
        let y = super::conv::conv2d(x, &self.weight, self.stride, self.padding)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, in_features: usize, out_features: usize) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self::with_init(
            store,
            prefix,
            in_features,
            out_features,
            Init::Uniform(bound),
            Init::Uniform(bound),
        )
    }

    pub fn with_init(
        store: &mut ParamStore,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        let weight = store.create(format!("{prefix}.weight"), (out_features, in_features), weight_init)?;
        let bias = store.create(format!("{prefix}.bias"), out_features, bias_init)?;
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    /// `x · Wᵀ + b` for `x` of shape `[B, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = x.dim(D::Minus1)?;
        if k != self.in_features() {
            return Err(Error::shape("linear input features", self.in_features(), k));
        }
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}
