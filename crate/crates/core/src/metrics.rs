//! Image-quality metrics and difficulty-bucketed evaluation reports.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::features::FeatureExtractor;
use crate::masks::{DifficultyClass, Mask};
use crate::{Error, Result};

fn check_same(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("image shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::invalid("images are empty"));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &ArrayView3<f64>, b: &ArrayView3<f64>, max_value: f64) -> Result<f64> {
    check_same(a, b)?;
    if !(max_value > 0.0) {
        return Err(Error::invalid("max_value must be positive"));
    }
    let mse = ndarray::Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub max_value: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            max_value: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of one (h, w) plane.
fn filter(plane: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..k).map(|i| taps[i] * plane[[y, x + i]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..k).map(|i| taps[i] * rows[[y + i, x]]).sum::<f64>();
        }
    }
    out
}

/// Mean structural similarity over every valid window position and channel.
pub fn ssim(a: &ArrayView3<f64>, b: &ArrayView3<f64>, params: &SsimParams) -> Result<f64> {
    check_same(a, b)?;
    let (h, w, c) = a.dim();
    if params.window == 0 || h < params.window || w < params.window {
        return Err(Error::invalid(format!(
            "images of {h}x{w} are smaller than the {} px window",
            params.window
        )));
    }
    let taps = params.taps();
    let c1 = (params.k1 * params.max_value).powi(2);
    let c2 = (params.k2 * params.max_value).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = a.index_axis(Axis(2), ch).to_owned();
        let y = b.index_axis(Axis(2), ch).to_owned();
        let mu_x = filter(&x, &taps);
        let mu_y = filter(&y, &taps);
        let xx = filter(&(&x * &x), &taps);
        let yy = filter(&(&y * &y), &taps);
        let xy = filter(&(&x * &y), &taps);
        ndarray::Zip::from(&mu_x)
            .and(&mu_y)
            .and(&xx)
            .and(&yy)
            .and(&xy)
            .for_each(|&mx, &my, &sxx, &syy, &sxy| {
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                count += 1;
            });
    }
    Ok(total / count as f64)
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Checks shapes, finiteness and `count >= 2`; the covariance is
    /// symmetrized. Definiteness is checked when distances are computed.
    pub fn from_parts(mean: Array1<f64>, covariance: Array2<f64>, count: usize) -> Result<FeatureStats> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::invalid(format!(
                "covariance {:?} does not match mean of length {d}",
                covariance.dim()
            )));
        }
        if count < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: count });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature statistics must be finite"));
        }
        let covariance = (&covariance + &covariance.t()) / 2.0;
        Ok(FeatureStats { mean, covariance, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased, symmetrized covariance of the rows.
pub fn feature_stats(features: &Array2<f64>) -> Result<FeatureStats> {
    let (n, _) = features.dim();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    let mean = features.mean_axis(Axis(0)).unwrap();
    let centered = features - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    FeatureStats::from_parts(mean, cov, n)
}

fn to_matrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Square root of a symmetric matrix with negative eigenvalues clipped to
/// zero; also returns the eigenvalues after clipping.
fn sqrt_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        lambda.len(),
        lambda.iter().map(|l| l.sqrt()),
    ));
    let v = &eig.eigenvectors;
    (v * sqrt * v.transpose(), lambda)
}

pub const SQRT_RESIDUAL_TOLERANCE: f64 = 1e-3;

fn check_residual(root: &DMatrix<f64>, m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.norm();
    if scale == 0.0 {
        return Ok(());
    }
    let residual = (root * root - m).norm() / scale;
    if residual <= SQRT_RESIDUAL_TOLERANCE {
        Ok(())
    } else {
        Err(Error::NumericalInstability(format!(
            "{what} square root has relative residual {residual:.3e}"
        )))
    }
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2})`.
///
/// The trace of the product square root is taken from the symmetric form
/// `Σ1^{1/2} Σ2 Σ1^{1/2}`, which has the same eigenvalues as `Σ1Σ2`. A
/// square root whose relative residual exceeds 1e-3 (for example from an
/// indefinite covariance) is a numerical-instability error.
pub fn frechet_distance(s1: &FeatureStats, s2: &FeatureStats) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            s1.dim(),
            s2.dim()
        )));
    }
    let mean_term: f64 = (&s1.mean - &s2.mean).mapv(|v| v * v).sum();
    let c1 = to_matrix(&s1.covariance);
    let c2 = to_matrix(&s2.covariance);
    let (a, _) = sqrt_psd(&c1);
    check_residual(&a, &c1, "first covariance")?;
    let m = &a * &c2 * &a;
    let m = (&m + m.transpose()) * 0.5;
    let (root, lambda) = sqrt_psd(&m);
    check_residual(&root, &m, "covariance product")?;
    let tr_sqrt: f64 = lambda.iter().map(|l| l.sqrt()).sum();
    let d = mean_term + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
    if d < 0.0 {
        if d > -1e-6 {
            return Ok(0.0);
        }
        return Err(Error::NumericalInstability(format!("Fréchet distance came out negative ({d:.3e})")));
    }
    Ok(d)
}

/// Fréchet distance between the extractor features of two image sets.
pub fn fid(real: &Array4<f64>, generated: &Array4<f64>, extractor: &dyn FeatureExtractor) -> Result<f64> {
    for set in [real, generated] {
        if set.dim().0 < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: set.dim().0,
            });
        }
    }
    let a = feature_stats(&extractor.embed(real)?)?;
    let b = feature_stats(&extractor.embed(generated)?)?;
    frechet_distance(&a, &b)
}

/// Serializes non-finite numbers as "inf", "-inf" or "nan" strings.
pub mod json_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("unexpected number {s:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    #[serde(with = "json_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub difficulty: DifficultyClass,
    pub visible_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidEntry {
    pub n: usize,
    /// `None` when fewer than two samples are available.
    pub fid: Option<f64>,
    /// Fewer than twice the feature dimension in samples.
    pub small_sample: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "json_f64")]
    pub psnr_mean: f64,
    pub psnr_inf_count: usize,
    pub ssim_mean: f64,
    pub fid_overall: FidEntry,
    /// Only non-empty buckets appear here.
    pub fid_by_bucket: BTreeMap<DifficultyClass, FidEntry>,
    /// Buckets with no images, whose FID is omitted.
    pub omitted_buckets: Vec<DifficultyClass>,
    pub extractor_id: String,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageRow>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<EvalReport, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One evaluation sample: the original image, the raw generator output and
/// the mask, all at the same size.
pub struct EvalItem {
    pub id: String,
    pub real: Array3<f64>,
    pub generated: Array3<f64>,
    pub mask: Mask,
}

fn composite(real: &Array3<f64>, generated: &Array3<f64>, m: &Mask) -> Array3<f64> {
    let mut out = generated.clone();
    for ((y, x, c), v) in out.indexed_iter_mut() {
        if m.is_visible(y, x) {
            *v = real[[y, x, c]];
        }
    }
    out
}

fn fid_entry(real: &[&Array3<f64>], generated: &[&Array3<f64>], extractor: &dyn FeatureExtractor) -> Result<FidEntry> {
    let n = real.len();
    let small_sample = n < 2 * extractor.dim();
    if n < 2 {
        return Ok(FidEntry {
            n,
            fid: None,
            small_sample,
        });
    }
    let stack = |imgs: &[&Array3<f64>]| {
        let views: Vec<_> = imgs.iter().map(|a| a.view().insert_axis(Axis(0))).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    };
    let value = fid(&stack(real), &stack(generated), extractor)?;
    Ok(FidEntry {
        n,
        fid: Some(value),
        small_sample,
    })
}

/// Per-image PSNR/SSIM on composited outputs, FID overall and per
/// difficulty bucket. With `fid_on_composite` false the FID uses the raw
/// generator outputs instead.
pub fn bucketed_report(
    items: &[EvalItem],
    extractor: &dyn FeatureExtractor,
    fid_on_composite: bool,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("evaluation needs at least one image"));
    }
    let params = SsimParams::default();
    let mut rows = Vec::with_capacity(items.len());
    let mut composites = Vec::with_capacity(items.len());
    for it in items {
        if it.real.dim() != it.generated.dim() || (it.real.dim().0, it.real.dim().1) != (it.mask.height(), it.mask.width()) {
            return Err(Error::invalid(format!("item {} has mismatched image and mask sizes", it.id)));
        }
        let comp = composite(&it.real, &it.generated, &it.mask);
        rows.push(ImageRow {
            id: it.id.clone(),
            psnr: psnr(&it.real.view(), &comp.view(), 1.0)?,
            ssim: ssim(&it.real.view(), &comp.view(), &params)?,
            difficulty: it.mask.difficulty(),
            visible_fraction: it.mask.visible_fraction(),
        });
        composites.push(comp);
    }
    let fakes: Vec<&Array3<f64>> = if fid_on_composite {
        composites.iter().collect()
    } else {
        items.iter().map(|i| &i.generated).collect()
    };
    let reals: Vec<&Array3<f64>> = items.iter().map(|i| &i.real).collect();
    let fid_overall = fid_entry(&reals, &fakes, extractor)?;
    let mut fid_by_bucket = BTreeMap::new();
    let mut omitted_buckets = Vec::new();
    for class in DifficultyClass::ALL {
        let idx: Vec<usize> = (0..items.len()).filter(|&i| rows[i].difficulty == class).collect();
        if idx.is_empty() {
            omitted_buckets.push(class);
            continue;
        }
        let r: Vec<_> = idx.iter().map(|&i| reals[i]).collect();
        let f: Vec<_> = idx.iter().map(|&i| fakes[i]).collect();
        fid_by_bucket.insert(class, fid_entry(&r, &f, extractor)?);
    }
    let n = rows.len();
    let psnr_inf_count = rows.iter().filter(|r| r.psnr.is_infinite()).count();
    let psnr_mean = rows.iter().map(|r| r.psnr).sum::<f64>() / n as f64;
    let ssim_mean = rows.iter().map(|r| r.ssim).sum::<f64>() / n as f64;
    Ok(EvalReport {
        per_image: rows,
        summary: Summary {
            psnr_mean,
            psnr_inf_count,
            ssim_mean,
            fid_overall,
            fid_by_bucket,
            omitted_buckets,
            extractor_id: extractor.id().to_string(),
            n,
        },
    })
}
