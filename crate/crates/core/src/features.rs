//! Frozen, seeded random convolutional feature extractors used by the
//! patch-matching loss and the Fréchet distance.

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rayon::prelude::*;

use crate::autograd::Var;
use crate::nn::kaiming_normal;
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Maps image batches to fixed-length feature vectors.
pub trait FeatureExtractor: Send + Sync {
    /// Identity string recorded next to every reported FID.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// `images` is (n, h, w, 3) in [0, 1]; returns (n, dim).
    fn embed(&self, images: &Array4<f64>) -> Result<Array2<f64>>;
}

#[derive(Clone, Debug)]
struct Layer {
    weight: ArrayD<f64>,
    stride: usize,
}

/// A stack of 3×3 convolutions with ReLU, weights drawn once from a seed.
#[derive(Clone, Debug)]
pub struct RandomConvNet {
    layers: Vec<Layer>,
    in_channels: usize,
}

impl RandomConvNet {
    /// `widths[i]` and `strides[i]` describe layer `i`.
    pub fn new(in_channels: usize, widths: &[usize], strides: &[usize], seed: u64) -> RandomConvNet {
        assert_eq!(widths.len(), strides.len());
        let mut r = rng::stream(seed, &[purpose::FEATURES]);
        let mut c = in_channels;
        let layers = widths
            .iter()
            .zip(strides)
            .map(|(&w, &s)| {
                let weight = kaiming_normal(&[3, 3, c, w], std::f64::consts::SQRT_2, &mut r);
                c = w;
                Layer { weight, stride: s }
            })
            .collect();
        RandomConvNet { layers, in_channels }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.weight.shape()[3])
    }

    /// Total stride of the stack.
    pub fn reduction(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Differentiable in `x`; the weights are constants.
    pub fn forward(&self, x: &Var) -> Var {
        let mut y = x.clone();
        for l in &self.layers {
            y = y.conv2d(&Var::constant(l.weight.clone()), None, l.stride, 1, 1).relu();
        }
        y
    }
}

/// Feature maps for the patch-matching loss: three layers, total stride 4.
pub fn mrf_feature_net(seed: u64) -> RandomConvNet {
    RandomConvNet::new(3, &[16, 32, 32], &[1, 2, 2], seed)
}

/// Global-average-pooled random convolutional embedding.
pub struct RandomEmbedding {
    net: RandomConvNet,
    id: String,
}

pub const EMBEDDING_DIM: usize = 64;

impl RandomEmbedding {
    pub fn new(seed: u64) -> RandomEmbedding {
        RandomEmbedding {
            net: RandomConvNet::new(3, &[16, 32, EMBEDDING_DIM], &[2, 2, 2], seed),
            id: format!("random-conv-{EMBEDDING_DIM}:seed={seed}"),
        }
    }
}

const EMBED_CHUNK: usize = 16;

impl FeatureExtractor for RandomEmbedding {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    fn embed(&self, images: &Array4<f64>) -> Result<Array2<f64>> {
        let (n, h, w, c) = images.dim();
        if c != 3 || h < 8 || w < 8 {
            return Err(Error::invalid(format!(
                "embedding expects (n, h >= 8, w >= 8, 3) images, got {:?}",
                images.dim()
            )));
        }
        let starts: Vec<usize> = (0..n).step_by(EMBED_CHUNK).collect();
        let chunks: Vec<Array2<f64>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + EMBED_CHUNK).min(n);
                let x = images.slice(ndarray::s![s..e, .., .., ..]).to_owned().into_dyn();
                let y = self.net.forward(&Var::constant(x));
                let sh = y.shape().to_vec();
                let pooled = y
                    .value()
                    .to_shape(IxDyn(&[sh[0], sh[1] * sh[2], sh[3]]))
                    .unwrap()
                    .mean_axis(Axis(1))
                    .unwrap();
                pooled.into_dimensionality().unwrap()
            })
            .collect();
        let views: Vec<_> = chunks.iter().map(|a| a.view()).collect();
        if views.is_empty() {
            return Ok(Array2::zeros((0, EMBEDDING_DIM)));
        }
        Ok(ndarray::concatenate(Axis(0), &views).unwrap())
    }
}
