//! Reconstruction, adversarial and patch-matching losses and their
//! stage-dependent composition.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::masks::Mask;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::invalid(format!("unknown stage {s:?}"))),
        }
    }
}

/// Loss weights of one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    recon_weight: f64,
    adv_weight: f64,
    mrf_weight: f64,
    stage: Stage,
}

impl LossBundle {
    /// Rejects negative or non-finite weights, and adversarial or
    /// patch-matching weight in the pretraining stage.
    pub fn new(stage: Stage, recon_weight: f64, adv_weight: f64, mrf_weight: f64) -> Result<LossBundle> {
        let mut problems = Vec::new();
        for (name, w) in [("recon_weight", recon_weight), ("adv_weight", adv_weight), ("mrf_weight", mrf_weight)] {
            if !w.is_finite() || w < 0.0 {
                problems.push(format!("loss.{name} must be a finite non-negative number, got {w}"));
            }
        }
        if stage == Stage::Pretrain && (adv_weight != 0.0 || mrf_weight != 0.0) {
            problems.push("the pretraining stage uses the reconstruction loss only".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(LossBundle {
            recon_weight,
            adv_weight,
            mrf_weight,
            stage,
        })
    }

    pub fn pretrain(recon_weight: f64) -> Result<LossBundle> {
        Self::new(Stage::Pretrain, recon_weight, 0.0, 0.0)
    }

    pub fn recon_weight(&self) -> f64 {
        self.recon_weight
    }

    pub fn adv_weight(&self) -> f64 {
        self.adv_weight
    }

    pub fn mrf_weight(&self) -> f64 {
        self.mrf_weight
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn is_adversarial(&self) -> bool {
        self.adv_weight > 0.0
    }
}

/// Chebyshev distance from each pixel to the nearest visible pixel; `None`
/// when the mask has no visible pixel.
pub fn chebyshev_distance(m: &Mask) -> Option<Array2<u32>> {
    if m.visible_count() == 0 {
        return None;
    }
    let (h, w) = (m.height(), m.width());
    let inf = u32::MAX / 2;
    let mut d = Array2::from_shape_fn((h, w), |(y, x)| if m.is_visible(y, x) { 0 } else { inf });
    for y in 0..h {
        for x in 0..w {
            let mut best = d[[y, x]];
            if x > 0 {
                best = best.min(d[[y, x - 1]] + 1);
            }
            if y > 0 {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    best = best.min(d[[y - 1, nx]] + 1);
                }
            }
            d[[y, x]] = best;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut best = d[[y, x]];
            if x + 1 < w {
                best = best.min(d[[y, x + 1]] + 1);
            }
            if y + 1 < h {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    best = best.min(d[[y + 1, nx]] + 1);
                }
            }
            d[[y, x]] = best;
        }
    }
    Some(d)
}

/// `gamma^(d − 1)` on hidden pixels, `d` the Chebyshev distance to the
/// visible region; 0 on visible pixels. A mask without visible pixels gets
/// weight 1 everywhere.
pub fn spatial_weight_map(m: &Mask, gamma: f64) -> Result<Array2<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("decay must lie in (0, 1), got {gamma}")));
    }
    Ok(match chebyshev_distance(m) {
        Some(d) => d.mapv(|d| if d == 0 { 0.0 } else { gamma.powi(d as i32 - 1) }),
        None => {
            log::warn!("mask has no visible pixel; using uniform reconstruction weights");
            Array2::ones((m.height(), m.width()))
        }
    })
}

/// Plain hole weighting: 1 on hidden pixels, 0 on visible ones.
pub fn uniform_weight_map(m: &Mask) -> Array2<f64> {
    Array2::from_shape_fn((m.height(), m.width()), |(y, x)| if m.is_visible(y, x) { 0.0 } else { 1.0 })
}

/// Stacks per-mask weights into (b, h, w). `gamma = None` selects the
/// uniform hole weighting.
pub fn batch_weight_maps(masks: &[Mask], gamma: Option<f64>) -> Result<Array3<f64>> {
    let first = masks.first().ok_or_else(|| Error::invalid("no masks given"))?;
    let mut out = Array3::zeros((masks.len(), first.height(), first.width()));
    for (i, m) in masks.iter().enumerate() {
        let w = match gamma {
            Some(g) => spatial_weight_map(m, g)?,
            None => uniform_weight_map(m),
        };
        if w.dim() != (first.height(), first.width()) {
            return Err(Error::invalid("masks in a batch must share one size"));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(&w);
    }
    Ok(out)
}

/// `Σ w·|p − t| / Σ w` with the channel mean inside the sum, plus the mean
/// L1 error over pixels of weight zero (the visible pixels).
///
/// `predicted` and `target` are (b, h, w, c); `weights` is (b, h, w).
pub fn reconstruction_loss(predicted: &Var, target: &Var, weights: &Array3<f64>) -> Result<Var> {
    let s = predicted.shape();
    if s != target.shape() || s.len() != 4 || weights.dim() != (s[0], s[1], s[2]) {
        return Err(Error::invalid(format!(
            "reconstruction shapes disagree: {:?}, {:?}, weights {:?}",
            s,
            target.shape(),
            weights.dim()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("reconstruction weights must be finite and non-negative"));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let pix = [b, h, w, 1];
    let per_pixel = predicted.sub(target).abs().sum_to(&pix).scale(1.0 / c as f64);
    let wts = weights.clone().into_shape_with_order(IxDyn(&pix)).unwrap();
    let visible = wts.mapv(|v| if v == 0.0 { 1.0 } else { 0.0 });
    let n_visible = visible.sum();
    let visible_term = if n_visible > 0.0 {
        per_pixel.mul(&Var::constant(visible)).sum().scale(1.0 / n_visible)
    } else {
        Var::scalar(0.0)
    };
    let total_weight = wts.sum();
    if total_weight == 0.0 {
        log::warn!("reconstruction weights sum to zero; using the visible-pixel term only");
        return Ok(visible_term);
    }
    let weighted = per_pixel.mul(&Var::constant(wts)).sum().scale(1.0 / total_weight);
    Ok(weighted.add(&visible_term))
}

/// Critic and generator adversarial terms of one step.
pub struct CriticLosses {
    /// `mean(score(fake)) − mean(score(real)) + gp_weight · penalty`, with
    /// `fake` detached.
    pub critic_loss: Var,
    /// `−mean(score(fake))`, attached to `fake`'s graph.
    pub generator_adv_loss: Var,
    pub wasserstein: f64,
    pub gradient_penalty: Var,
}

const GP_NORM_EPS: f64 = 1e-12;

/// Wasserstein critic losses with gradient penalty on random interpolates
/// `ε·real + (1 − ε)·fake`, one `ε ~ U[0, 1)` per item.
///
/// Non-finite scores or gradients give a numerical-instability error, which
/// the training loop turns into an abort.
pub fn critic_losses<F>(critic: F, real: &Var, fake: &Var, gp_weight: f64, rng: &mut Rng) -> Result<CriticLosses>
where
    F: Fn(&Var) -> Result<Var>,
{
    let s = real.shape().to_vec();
    if s != fake.shape() || s.len() != 4 {
        return Err(Error::invalid(format!(
            "real {:?} and fake {:?} must be equal (b, h, w, c) tensors",
            s,
            fake.shape()
        )));
    }
    let fake_detached = fake.detach();
    let score_real = critic(real)?;
    let score_fake = critic(&fake_detached)?;
    let wasserstein_var = score_fake.mean().sub(&score_real.mean());

    let eps: Array1<f64> = (0..s[0]).map(|_| rng.random::<f64>()).collect();
    let eps = eps.into_shape_with_order(IxDyn(&[s[0], 1, 1, 1])).unwrap();
    let one_minus = eps.mapv(|e| 1.0 - e);
    let mut xhat = real.mul(&Var::constant(eps)).add(&fake_detached.mul(&Var::constant(one_minus)));
    if !xhat.requires_grad() {
        xhat = Var::param(xhat.value().clone());
    }
    let score_hat = critic(&xhat)?;
    let g = grad(&score_hat.sum(), &[&xhat], true).remove(0);
    let norms = g.square().sum_to(&[s[0], 1, 1, 1]).shift(GP_NORM_EPS).sqrt();
    let penalty = norms.shift(-1.0).square().mean();

    let critic_loss = wasserstein_var.add(&penalty.scale(gp_weight));
    let generator_adv_loss = if fake.requires_grad() {
        critic(fake)?.mean().neg()
    } else {
        score_fake.mean().neg()
    };
    for (name, v) in [("critic loss", &critic_loss), ("generator adversarial loss", &generator_adv_loss)] {
        if !v.item().is_finite() {
            return Err(Error::NumericalInstability(format!("{name} is not finite")));
        }
    }
    if g.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalInstability("critic input gradient is not finite".into()));
    }
    Ok(CriticLosses {
        wasserstein: wasserstein_var.item(),
        critic_loss,
        generator_adv_loss,
        gradient_penalty: penalty,
    })
}

const MRF_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Patch-matching loss with relative similarities.
///
/// Patches of `patch`×`patch` cells are compared by cosine similarity. For
/// each predicted patch `v` the similarity to target patch `s` is divided by
/// `max_r cos(v, r) + ε`, passed through `exp(· / bandwidth)` and normalized
/// over `s`. The loss is `−log` of the mean over target patches of the best
/// normalized similarity over predicted patches, averaged over the batch.
pub fn idmrf_loss(predicted: &Var, target: &Var, bandwidth: f64, patch: usize) -> Result<Var> {
    let s = predicted.shape().to_vec();
    if s != target.shape() || s.len() != 4 {
        return Err(Error::invalid(format!(
            "feature maps {:?} and {:?} must be equal (b, h, w, c) tensors",
            s,
            target.shape()
        )));
    }
    if patch == 0 || patch > s[1] || patch > s[2] {
        return Err(Error::invalid(format!("patch size {patch} does not fit {}x{} features", s[1], s[2])));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let all_zero = |v: &Var| v.value().iter().all(|&x| x == 0.0);
    if all_zero(predicted) || all_zero(target) {
        log::warn!("patch-matching features are all zero; loss set to 0");
        return Ok(Var::scalar(0.0));
    }
    let geom = crate::autograd::Geom {
        kh: patch,
        kw: patch,
        stride: 1,
        pad: 0,
        dilation: 1,
        in_h: s[1],
        in_w: s[2],
    };
    let normalized = |x: &Var| {
        let p = x.unfold(geom);
        let ps = p.shape().to_vec();
        let norm = p.square().sum_to(&[ps[0], ps[1], 1]).shift(NORM_EPS).sqrt();
        p.div(&norm)
    };
    let v = normalized(predicted);
    let t = normalized(target);
    let cos = v.matmul(&t.swap_last());
    let best_r = cos.max_axis(2).shift(MRF_EPS);
    let rs = cos.div(&best_r).scale(1.0 / bandwidth).exp();
    let cs = cos.shape().to_vec();
    let rs = rs.div(&rs.sum_to(&[cs[0], cs[1], 1]));
    let best_v = rs.max_axis(1);
    let per_image = best_v.sum_to(&[cs[0], 1, 1]).scale(1.0 / cs[2] as f64);
    Ok(per_image.ln().neg().mean())
}

/// The individual loss terms of one generator step. Terms whose weight is
/// zero may be left out.
pub struct LossParts {
    pub recon: Var,
    pub adv: Option<Var>,
    pub mrf: Option<Var>,
}

/// `recon_weight·recon + adv_weight·adv + mrf_weight·mrf`; pretraining
/// bundles use the reconstruction term only.
pub fn total_loss(bundle: &LossBundle, parts: &LossParts) -> Result<Var> {
    let mut total = parts.recon.scale(bundle.recon_weight);
    if bundle.stage == Stage::Pretrain {
        return Ok(total);
    }
    for (name, w, part) in [("adversarial", bundle.adv_weight, &parts.adv), ("patch-matching", bundle.mrf_weight, &parts.mrf)] {
        if w == 0.0 {
            continue;
        }
        let p = part
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{name} weight is {w} but the term was not computed")))?;
        total = total.add(&p.scale(w));
    }
    Ok(total)
}
