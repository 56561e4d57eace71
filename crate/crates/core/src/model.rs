//! The completion generator and the Wasserstein critic.

use std::path::Path;
use std::rc::Rc;

use ndarray::{Array3, Array4, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::nn::{kaiming_normal, ParamSet};
use crate::rng::{self, purpose};
use crate::{Error, Result};

const CN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub downsample_stages: usize,
    pub dilated_blocks: usize,
    pub use_context_normalization: bool,
    /// Image channels plus one mask channel.
    pub input_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            downsample_stages: 3,
            dilated_blocks: 4,
            use_context_normalization: true,
            input_channels: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(Error::invalid("generator base_channels must be at least 8"));
        }
        if self.downsample_stages < 1 {
            return Err(Error::invalid("generator needs at least one downsample stage"));
        }
        if self.input_channels < 2 {
            return Err(Error::invalid("generator input needs image channels plus a mask channel"));
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.input_channels - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub base_channels: usize,
    pub downsample_stages: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            downsample_stages: 4,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.downsample_stages == 0 {
            return Err(Error::invalid("critic needs positive base_channels and downsample_stages"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
}

impl Conv {
    fn new(
        params: &mut ParamSet,
        name: &str,
        [k, c_in, c_out]: [usize; 3],
        gain: f64,
        (stride, dilation): (usize, usize),
        rng: &mut rng::Rng,
    ) -> Conv {
        let weight = params.push(format!("{name}.weight"), kaiming_normal(&[k, k, c_in, c_out], gain, rng));
        let bias = params.push(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[c_out])));
        Conv {
            weight,
            bias,
            stride,
            pad: dilation * (k / 2),
            dilation,
        }
    }

    fn apply(&self, params: &ParamSet, x: &Var) -> Var {
        x.conv2d(
            params.var(self.weight),
            Some(params.var(self.bias)),
            self.stride,
            self.pad,
            self.dilation,
        )
    }
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
const DILATIONS: [usize; 3] = [2, 4, 8];

/// Encoder of strided convolutions, dilated residual blocks, optional
/// context normalization and a nearest-upsampling decoder ending in a
/// sigmoid.
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
    stem: Conv,
    down: Vec<Conv>,
    blocks: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    head: Conv,
    rho_logit: Option<usize>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Generator> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[purpose::INIT_GENERATOR]);
        let mut p = ParamSet::new();
        let base = config.base_channels;
        let stem = Conv::new(&mut p, "stem", [3, config.input_channels, base], RELU_GAIN, (1, 1), &mut rng);
        let mut ch = base;
        let mut down = Vec::new();
        for s in 0..config.downsample_stages {
            down.push(Conv::new(&mut p, &format!("down{s}"), [3, ch, ch * 2], RELU_GAIN, (2, 1), &mut rng));
            ch *= 2;
        }
        let mut blocks = Vec::new();
        for b in 0..config.dilated_blocks {
            let d = DILATIONS[b % DILATIONS.len()];
            let a = Conv::new(&mut p, &format!("block{b}.dilated"), [3, ch, ch], RELU_GAIN, (1, d), &mut rng);
            let c = Conv::new(&mut p, &format!("block{b}.mix"), [3, ch, ch], 0.5, (1, 1), &mut rng);
            blocks.push((a, c));
        }
        let rho_logit = config
            .use_context_normalization
            .then(|| p.push("context_norm.rho_logit", ArrayD::zeros(IxDyn(&[]))));
        let mut up = Vec::new();
        for s in 0..config.downsample_stages {
            up.push(Conv::new(&mut p, &format!("up{s}"), [3, ch, ch / 2], RELU_GAIN, (1, 1), &mut rng));
            ch /= 2;
        }
        let head = Conv::new(&mut p, "head", [3, ch, config.output_channels()], 1.0, (1, 1), &mut rng);
        Ok(Generator {
            config,
            params: p,
            stem,
            down,
            blocks,
            up,
            head,
            rho_logit,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Current context-normalization blend factor, if the module is enabled.
    pub fn rho(&self) -> Option<f64> {
        self.rho_logit.map(|i| self.params.var(i).sigmoid().item())
    }

    fn check_input(&self, s: &[usize]) -> Result<()> {
        let f = 1usize << self.config.downsample_stages;
        if s.len() != 4 || s[3] != self.config.input_channels {
            return Err(Error::invalid(format!(
                "generator expects (b, h, w, {}) input, got {:?}",
                self.config.input_channels, s
            )));
        }
        if s[0] == 0 || s[1] == 0 || !s[1].is_multiple_of(f) || !s[2].is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "input spatial size {}x{} must be a positive multiple of {f}",
                s[1], s[2]
            )));
        }
        Ok(())
    }

    /// `input` is the masked image with the mask appended as the last
    /// channel; returns the predicted image in [0, 1].
    pub fn forward(&self, input: &Var) -> Result<Var> {
        self.check_input(input.shape())?;
        let p = &self.params;
        let mut x = self.stem.apply(p, input).elu();
        for c in &self.down {
            x = c.apply(p, &x).elu();
        }
        for (a, c) in &self.blocks {
            let y = c.apply(p, &a.apply(p, &x).elu());
            x = x.add(&y).elu();
        }
        if let Some(i) = self.rho_logit {
            let weights = downsample_mask(input, 1 << self.config.downsample_stages);
            x = context_normalize(&x, &weights, &p.var(i).sigmoid());
        }
        for c in &self.up {
            x = c.apply(p, &x.upsample_nearest(2)).elu();
        }
        Ok(self.head.apply(p, &x).sigmoid())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(config: GeneratorConfig, path: &Path) -> Result<Generator> {
        let mut g = Generator::new(config, 0)?;
        g.params.load(path)?;
        Ok(g)
    }
}

/// Area-averages the mask channel of `input` by `factor`, giving visibility
/// weights of shape (b, h/factor, w/factor, 1).
fn downsample_mask(input: &Var, factor: usize) -> ArrayD<f64> {
    let c = input.shape()[3];
    let mask = input.value().index_axis(Axis(3), c - 1).insert_axis(Axis(3)).to_owned();
    let pooled = Var::constant(mask).sum_pool(factor);
    pooled.value().mapv(|v| v / (factor * factor) as f64)
}

/// The generator input: masked image with the mask appended as a channel.
pub fn generator_input(masked_images: &Array4<f64>, masks: &Array3<f64>) -> Result<Var> {
    let (b, h, w, c) = masked_images.dim();
    if masks.dim() != (b, h, w) {
        return Err(Error::invalid(format!(
            "mask batch {:?} does not match image batch {:?}",
            masks.dim(),
            (b, h, w)
        )));
    }
    let mut x = Array4::zeros((b, h, w, c + 1));
    x.slice_mut(ndarray::s![.., .., .., ..c]).assign(masked_images);
    x.slice_mut(ndarray::s![.., .., .., c]).assign(masks);
    Ok(Var::constant(x.into_dyn()))
}

/// Renormalizes hidden-cell features to the per-image, per-channel
/// statistics of the visible cells, blended by `rho`:
/// `out = rho·f' + (1 − rho)·f` on hidden cells, visible cells unchanged.
///
/// `weights` has shape (b, h, w, 1); cells above 0.5 count as visible.
/// Images whose cells are all visible or all hidden pass through unchanged.
pub fn context_normalize(features: &Var, weights: &ArrayD<f64>, rho: &Var) -> Var {
    let s = features.shape().to_vec();
    assert_eq!(s.len(), 4, "context_normalize expects (b, h, w, c) features");
    assert_eq!(weights.shape(), &[s[0], s[1], s[2], 1], "weights must be (b, h, w, 1)");
    let (b, c) = (s[0], s[3]);
    let visible = weights.mapv(|w| if w > 0.5 { 1.0 } else { 0.0 });
    let n_vis = visible.sum_axis(Axis(1)).sum_axis(Axis(1));
    let cells = (s[1] * s[2]) as f64;
    let degenerate: Vec<bool> = n_vis.iter().map(|&n| n == 0.0 || n == cells).collect();
    if degenerate.iter().any(|&d| d) {
        log::warn!("context normalization skipped for images without both visible and hidden cells");
    }

    let mut keep = visible.broadcast(IxDyn(&s)).unwrap().to_owned();
    for (i, &d) in degenerate.iter().enumerate() {
        if d {
            keep.index_axis_mut(Axis(0), i).fill(1.0);
        }
    }
    let stat_shape = [b, 1, 1, c];
    let count = |n: f64| n.max(1.0);
    let n_v = Var::constant(
        n_vis
            .mapv(count)
            .into_shape_with_order(IxDyn(&[b, 1, 1, 1]))
            .unwrap(),
    );
    let n_h = Var::constant(
        n_vis
            .mapv(|n| count(cells - n))
            .into_shape_with_order(IxDyn(&[b, 1, 1, 1]))
            .unwrap(),
    );
    let v = Var::constant(visible.clone());
    let h = Var::constant(visible.mapv(|x| 1.0 - x));
    let moments = |ind: &Var, n: &Var| {
        let mu = features.mul(ind).sum_to(&stat_shape).div(n);
        let var = features.sub(&mu).square().mul(ind).sum_to(&stat_shape).div(n);
        (mu, var.shift(CN_EPS).sqrt())
    };
    let (mu_v, sd_v) = moments(&v, &n_v);
    let (mu_h, sd_h) = moments(&h, &n_h);
    let renorm = features.sub(&mu_h).div(&sd_h).mul(&sd_v).add(&mu_v);
    let blended = features.add(&rho.mul(&renorm.sub(features)));
    features.select(&Rc::new(keep), &blended)
}

/// Visible pixels from `original`, hidden pixels from `predicted`.
/// `mask` is (b, h, w) with 1 = visible.
pub fn composite_output(predicted: &Var, original: &Var, mask: &Array3<f64>) -> Result<Var> {
    let s = predicted.shape();
    if s != original.shape() || s.len() != 4 || mask.dim() != (s[0], s[1], s[2]) {
        return Err(Error::invalid(format!(
            "composite shapes disagree: predicted {:?}, original {:?}, mask {:?}",
            s,
            original.shape(),
            mask.dim()
        )));
    }
    let sel = mask
        .view()
        .insert_axis(Axis(3))
        .broadcast((s[0], s[1], s[2], s[3]))
        .unwrap()
        .to_owned()
        .into_dyn();
    Ok(original.select(&Rc::new(sel), predicted))
}

/// Strided convolutions with leaky ReLU, a one-channel score map, and its
/// spatial mean as the per-image score.
pub struct Critic {
    config: CriticConfig,
    params: ParamSet,
    convs: Vec<Conv>,
    head: Conv,
    channels: usize,
}

impl Critic {
    pub fn new(config: CriticConfig, channels: usize, seed: u64) -> Result<Critic> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[purpose::INIT_CRITIC]);
        let mut p = ParamSet::new();
        let mut ch = channels;
        let mut convs = Vec::new();
        for s in 0..config.downsample_stages {
            let out = config.base_channels << s;
            convs.push(Conv::new(&mut p, &format!("conv{s}"), [3, ch, out], RELU_GAIN, (2, 1), &mut rng));
            ch = out;
        }
        let head = Conv::new(&mut p, "score", [3, ch, 1], 1.0, (1, 1), &mut rng);
        Ok(Critic {
            config,
            params: p,
            convs,
            head,
            channels,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// One unbounded score per image, shape (b).
    pub fn forward(&self, x: &Var) -> Result<Var> {
        let s = x.shape();
        let f = 1usize << self.config.downsample_stages;
        if s.len() != 4 || s[3] != self.channels || s[0] == 0 || !s[1].is_multiple_of(f) || !s[2].is_multiple_of(f) || s[1] == 0 || s[2] == 0
        {
            return Err(Error::invalid(format!(
                "critic expects (b, h, w, {}) input with h, w multiples of {f}, got {:?}",
                self.channels, s
            )));
        }
        let p = &self.params;
        let mut y = x.clone();
        for c in &self.convs {
            y = c.apply(p, &y).leaky_relu(0.2);
        }
        let map = self.head.apply(p, &y);
        let m = map.shape().to_vec();
        Ok(map.reshape(&[m[0], m[1] * m[2]]).sum_to(&[m[0], 1]).scale(1.0 / (m[1] * m[2]) as f64).reshape(&[m[0]]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(config: CriticConfig, channels: usize, path: &Path) -> Result<Critic> {
        let mut c = Critic::new(config, channels, 0)?;
        c.params.load(path)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            base_channels: 8,
            downsample_stages: 2,
            dilated_blocks: 2,
            use_context_normalization: true,
            input_channels: 4,
        }
    }

    fn random_input(b: usize, h: usize, w: usize, seed: u64) -> Var {
        let mut r = rng::from_seed(seed);
        let masked = Array4::from_shape_fn((b, h, w, 3), |_| r.random_range(0.0..1.0));
        let masks = Array3::from_shape_fn((b, h, w), |(_, y, x)| {
            if (h / 4..3 * h / 4).contains(&y) && (w / 4..3 * w / 4).contains(&x) {
                0.0
            } else {
                1.0
            }
        });
        generator_input(&masked, &masks).unwrap()
    }

    #[test]
    fn generator_output_shape_and_range() {
        let g = Generator::new(tiny(), 1).unwrap();
        let x = random_input(1, 64, 64, 2);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 64, 64, 3]);
        assert!(y.value().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let y2 = g.forward(&x).unwrap();
        assert_eq!(y.value(), y2.value());
    }

    #[test]
    fn generator_rejects_bad_shapes() {
        let g = Generator::new(tiny(), 1).unwrap();
        assert!(g.forward(&random_input(1, 30, 32, 3)).is_err());
        assert!(g.forward(&Var::zeros(&[1, 32, 32, 3])).is_err());
        assert!(Generator::new(GeneratorConfig { base_channels: 4, ..tiny() }, 0).is_err());
        assert!(Generator::new(GeneratorConfig { downsample_stages: 0, ..tiny() }, 0).is_err());
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let mut g = Generator::new(tiny(), 4).unwrap();
        let x = random_input(1, 16, 16, 5);
        let mut r = rng::from_seed(6);
        let proj = Var::constant(ArrayD::from_shape_fn(IxDyn(&[1, 16, 16, 3]), |_| r.random_range(-1.0..1.0)));
        let loss = |g: &Generator| g.forward(&x).unwrap().mul(&proj).sum();
        let analytic = grad(&loss(&g), &g.params().vars(), false);

        let n = g.params().len();
        let mut picks = Vec::new();
        while picks.len() < 10 {
            let t = r.random_range(0..n);
            let e = r.random_range(0..g.params().var(t).value().len());
            if !picks.contains(&(t, e)) {
                picks.push((t, e));
            }
        }
        let h = 1e-6;
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &(t, e) in &picks {
            let base: Vec<ArrayD<f64>> = g.params().values().into_iter().cloned().collect();
            let eval = |g: &mut Generator, delta: f64| {
                let mut v = base.clone();
                v[t].as_slice_mut().unwrap()[e] += delta;
                g.params_mut().set_values(v).unwrap();
                loss(g).item()
            };
            let d = (eval(&mut g, h) - eval(&mut g, -h)) / (2.0 * h);
            g.params_mut().set_values(base).unwrap();
            num.push(d);
            ana.push(analytic[t].value().as_slice().unwrap()[e]);
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-5, "relative error {}", diff / scale);
    }

    #[test]
    fn save_load_reproduces_outputs_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::new(tiny(), 7).unwrap();
        let path = dir.path().join("g.bin");
        g.save(&path).unwrap();
        let g2 = Generator::load(tiny(), &path).unwrap();
        let x = random_input(2, 32, 32, 8);
        let (a, b) = (g.forward(&x).unwrap(), g2.forward(&x).unwrap());
        assert!(a.value().iter().zip(b.value().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let other = GeneratorConfig { dilated_blocks: 3, ..tiny() };
        assert!(matches!(Generator::load(other, &path), Err(Error::Incompatible(_))));
    }

    fn half_mask(h: usize, w: usize) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(&[1, h, w, 1]), |ix| if ix[2] < w / 2 { 1.0 } else { 0.0 })
    }

    #[test]
    fn context_normalize_matches_visible_statistics() {
        let (h, w) = (64, 64);
        let mut r = rng::from_seed(9);
        let n = Normal::new(0.0, 1.0).unwrap();
        let weights = half_mask(h, w);
        let f = ArrayD::from_shape_fn(IxDyn(&[1, h, w, 1]), |ix| {
            let z = n.sample(&mut r);
            if ix[2] < w / 2 { z } else { 10.0 + z }
        });
        let out = context_normalize(&Var::constant(f.clone()), &weights, &Var::scalar(1.0));
        let hidden: Vec<f64> = out
            .value()
            .indexed_iter()
            .filter(|(ix, _)| ix[2] >= w / 2)
            .map(|(_, &v)| v)
            .collect();
        let mean = hidden.iter().sum::<f64>() / hidden.len() as f64;
        let sd = (hidden.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hidden.len() as f64).sqrt();
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.2, "std {sd}");
        for (ix, &v) in out.value().indexed_iter() {
            if ix[2] < w / 2 {
                assert_eq!(v.to_bits(), f[&ix].to_bits());
            }
        }
    }

    #[test]
    fn context_normalize_identities() {
        let weights = half_mask(8, 8);
        let mut r = rng::from_seed(10);
        let f = ArrayD::from_shape_fn(IxDyn(&[1, 8, 8, 2]), |_| r.random_range(-3.0..3.0));
        let out = context_normalize(&Var::constant(f.clone()), &weights, &Var::scalar(0.0));
        assert_eq!(out.value(), &f);

        let k = ArrayD::from_elem(IxDyn(&[1, 8, 8, 2]), 0.37);
        let out = context_normalize(&Var::constant(k.clone()), &weights, &Var::scalar(1.0));
        assert_eq!(out.value(), &k);

        let all = ArrayD::from_elem(IxDyn(&[1, 8, 8, 1]), 1.0);
        let out = context_normalize(&Var::constant(f.clone()), &all, &Var::scalar(1.0));
        assert_eq!(out.value(), &f);
        let none = ArrayD::zeros(IxDyn(&[1, 8, 8, 1]));
        let out = context_normalize(&Var::constant(f.clone()), &none, &Var::scalar(1.0));
        assert_eq!(out.value(), &f);
    }

    #[test]
    fn context_normalize_is_per_image() {
        let mut weights = ArrayD::zeros(IxDyn(&[2, 4, 4, 1]));
        weights.index_axis_mut(Axis(0), 0).assign(&half_mask(4, 4).index_axis(Axis(0), 0));
        weights.index_axis_mut(Axis(0), 1).fill(1.0);
        let f = ArrayD::from_shape_fn(IxDyn(&[2, 4, 4, 1]), |ix| (ix[0] * 16 + ix[1] * 4 + ix[2]) as f64);
        let out = context_normalize(&Var::constant(f.clone()), &weights, &Var::scalar(1.0));
        assert_eq!(out.value().index_axis(Axis(0), 1), f.index_axis(Axis(0), 1));
        assert_ne!(out.value().index_axis(Axis(0), 0), f.index_axis(Axis(0), 0));
    }

    #[test]
    fn composite_selects_per_pixel() {
        let mut r = rng::from_seed(11);
        let pred = ArrayD::from_shape_fn(IxDyn(&[2, 5, 6, 3]), |_| r.random_range(0.0..1.0));
        let orig = ArrayD::from_shape_fn(IxDyn(&[2, 5, 6, 3]), |_| r.random_range(0.0..1.0));
        let mask = Array3::from_shape_fn((2, 5, 6), |_| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        let out = composite_output(&Var::constant(pred.clone()), &Var::constant(orig.clone()), &mask).unwrap();
        for (ix, &v) in out.value().indexed_iter() {
            let expected = if mask[[ix[0], ix[1], ix[2]]] == 1.0 { orig[&ix] } else { pred[&ix] };
            assert_eq!(v, expected);
        }
        let ones = Array3::ones((2, 5, 6));
        let out = composite_output(&Var::constant(pred.clone()), &Var::constant(orig.clone()), &ones).unwrap();
        assert_eq!(out.value(), &orig);
        let zeros = Array3::zeros((2, 5, 6));
        let out = composite_output(&Var::constant(pred.clone()), &Var::constant(orig.clone()), &zeros).unwrap();
        assert_eq!(out.value(), &pred);
        assert!(composite_output(&Var::constant(pred), &Var::constant(orig), &Array3::zeros((2, 5, 5))).is_err());
    }

    #[test]
    fn critic_scores_are_per_item_and_sensitive() {
        let c = Critic::new(CriticConfig { base_channels: 8, downsample_stages: 2 }, 3, 12).unwrap();
        let mut r = rng::from_seed(13);
        let x = ArrayD::from_shape_fn(IxDyn(&[4, 16, 16, 3]), |_| r.random_range(0.0..1.0));
        let s = c.forward(&Var::constant(x.clone())).unwrap();
        assert_eq!(s.shape(), &[4]);
        assert!(s.value().iter().all(|v| v.is_finite()));
        assert_eq!(s.value(), c.forward(&Var::constant(x.clone())).unwrap().value());
        let noisy = x.mapv(|v| v + r.random_range(-0.5..0.5));
        let s2 = c.forward(&Var::constant(noisy)).unwrap();
        assert!(s.value().iter().zip(s2.value().iter()).all(|(a, b)| a != b));
        assert!(c.forward(&Var::zeros(&[1, 10, 16, 3])).is_err());
    }
}
