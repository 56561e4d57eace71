//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the test fails if any criterion fails.
//!
//! Run with `cargo test -p innout --test acceptance -- --nocapture`
//! to see the report.

mod common;

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};
use rand::Rng as _;

use innout::autograd::{grad, no_grad, Var};
use innout::commands::{self, EvalSplit, EvaluateArgs};
use innout::losses::{critic_losses, idmrf_loss, reconstruction_loss, spatial_weight_map, LossBundle, Stage};
use innout::masks::{
    apply_mask, make_bspline_panorama_mask, make_center_rect_mask, make_irregular_mask, make_random_rect_mask,
    DifficultyClass, FillMode, Mask, TaskKind,
};
use innout::metrics::{feature_stats, frechet_distance, psnr, ssim, FeatureStats, SsimParams};
use innout::model::{generator_input, Critic, CriticConfig, Generator};
use innout::rng;
use innout::schedule::{epoch_schedule_adapter, Schedule, Strategy};
use innout::train::{read_manifest, run_training, Trainer};
use innout::Error;

// Pinned tolerances.
const FID_CLOSED_FORM_TOL: f64 = 1e-6;
const FID_SELF_TOL: f64 = 1e-6;
const FID_SYMMETRY_TOL: f64 = 1e-8;
const PSNR_TOL: f64 = 1e-9;
const SSIM_TOL: f64 = 1e-7;
const STATS_TOL: f64 = 1e-10;
const GRAD_REL_TOL: f64 = 1e-5;
const UNIT_CRITIC_GP_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_mask(h: usize, w: usize, p: f64, r: &mut rng::Rng) -> Mask {
    Mask::from_grid(h, w, (0..h * w).map(|_| r.random_bool(p) as u8).collect()).unwrap()
}

fn random_array(shape: &[usize], r: &mut rng::Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || r.random_range(0.0..1.0))
}

// ---- 1. masks ---------------------------------------------------------------

fn masks_suite() -> Check {
    let start = Instant::now();
    let mut r = rng::from_seed(101);
    let mut samples = Vec::new();
    for k in 0..20u64 {
        let mut mr = rng::from_seed(k);
        samples.push(make_center_rect_mask(32, 32, 8 + (k as usize % 16), 12).unwrap());
        samples.push(make_random_rect_mask(32, 48, None, &mut mr).unwrap());
        samples.push(make_irregular_mask(32, 32, 4, &mut mr).unwrap());
        samples.push(make_bspline_panorama_mask(32, 64, &mut mr).unwrap());
        samples.push(random_mask(17, 23, 0.4, &mut r));
    }
    for m in &samples {
        let inv = m.inverted();
        ensure(inv.inverted() == *m, || "inverting twice changed a mask".into())?;
        let cover = (0..m.height()).all(|y| (0..m.width()).all(|x| m.is_visible(y, x) != inv.is_visible(y, x)));
        ensure(cover, || "mask and inverse are not complementary".into())?;
        ensure((m.visible_fraction() + inv.visible_fraction() - 1.0).abs() < 1e-12, || "fractions do not sum to 1".into())?;

        let img = Array3::from_shape_fn((m.height(), m.width(), 3), |_| r.random_range(0.0..1.0));
        for fill in [FillMode::UniformNoise, FillMode::Constant(vec![0.5])] {
            let out = apply_mask(&img, m, &fill, &mut r).unwrap();
            let kept = out.indexed_iter().all(|((y, x, c), v)| !m.is_visible(y, x) || *v == img[[y, x, c]]);
            ensure(kept, || "a visible pixel changed".into())?;
        }
    }
    let expected = [
        (0.15, DifficultyClass::Extreme),
        (0.20, DifficultyClass::Difficult),
        (0.35, DifficultyClass::Difficult),
        (0.40, DifficultyClass::Easy),
        (0.50, DifficultyClass::Easy),
    ];
    for (f, class) in expected {
        let got = DifficultyClass::from_visible_fraction(f);
        ensure(got == class, || format!("fraction {f} classified {got:?}, expected {class:?}"))?;
    }
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..1000u64 {
        seen.insert(make_random_rect_mask(64, 64, None, &mut rng::from_seed(seed)).unwrap().difficulty());
    }
    ensure(seen.len() == 3, || format!("random rectangles only produced {seen:?}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("{} masks, 1000 random-rect seeds cover all buckets, {t:.2?}", samples.len()))
}

// ---- 2. FID ----------------------------------------------------------------

fn stats1(mu: f64, var: f64) -> FeatureStats {
    FeatureStats::from_parts(Array1::from(vec![mu]), Array2::from_elem((1, 1), var), 100).unwrap()
}

fn random_spd(d: usize, r: &mut rng::Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((d, d), |_| r.random_range(-1.0..1.0));
    a.dot(&a.t()) + Array2::<f64>::eye(d) * 0.1
}

fn fid_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng::from_seed(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (m1, m2): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let (s1, s2): (f64, f64) = (r.random_range(0.1..2.0), r.random_range(0.1..2.0));
        let closed = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        let got = frechet_distance(&stats1(m1, s1 * s1), &stats1(m2, s2 * s2)).map_err(|e| e.to_string())?;
        worst = worst.max((got - closed).abs());
    }
    ensure(worst <= FID_CLOSED_FORM_TOL, || format!("1-d closed form off by {worst:e}"))?;

    let feats = Array2::from_shape_fn((300, 8), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.1 + r.random_range(0.0..1.0));
    let s = feature_stats(&feats).unwrap();
    let same = frechet_distance(&s, &s).map_err(|e| e.to_string())?;
    ensure(same.abs() <= FID_SELF_TOL, || format!("FID(set, set) = {same:e}"))?;

    let mut asym: f64 = 0.0;
    for _ in 0..10 {
        let a = FeatureStats::from_parts(Array1::from_shape_fn(6, |_| r.random_range(-1.0..1.0)), random_spd(6, &mut r), 50).unwrap();
        let b = FeatureStats::from_parts(Array1::from_shape_fn(6, |_| r.random_range(-1.0..1.0)), random_spd(6, &mut r), 50).unwrap();
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        asym = asym.max((ab - ba).abs());
    }
    ensure(asym <= FID_SYMMETRY_TOL, || format!("asymmetry {asym:e}"))?;

    let good = FeatureStats::from_parts(Array1::zeros(2), Array2::eye(2), 10).unwrap();
    let bad = FeatureStats::from_parts(Array1::zeros(2), Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, -1.0]).unwrap(), 10).unwrap();
    for (x, y) in [(&good, &bad), (&bad, &good)] {
        ensure(matches!(frechet_distance(x, y), Err(Error::NumericalInstability(_))), || {
            "indefinite covariance was not rejected".into()
        })?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("closed-form err {worst:.1e}, self {same:.1e}, asymmetry {asym:.1e}, residual check on, {t:.2?}"))
}

// ---- 3. metric oracles -----------------------------------------------------

fn psnr_loop(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let mut se = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        se += (x - y) * (x - y);
    }
    10.0 * (1.0 / (se / a.len() as f64)).log10()
}

fn ssim_loop(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let (h, w, c) = a.dim();
    let (k, sigma) = (11usize, 1.5f64);
    let centre = (k as f64 - 1.0) / 2.0;
    let mut win = vec![vec![0.0; k]; k];
    let mut norm = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - centre).powi(2) + (j as f64 - centre).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..c {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = win[i][j] / norm;
                        let (x, y) = (a[[y0 + i, x0 + j, ch]], b[[y0 + i, x0 + j, ch]]);
                        mx += g * x;
                        my += g * y;
                        sxx += g * x * x;
                        syy += g * y * y;
                        sxy += g * x * y;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

fn metric_oracles() -> Check {
    let mut r = rng::from_seed(303);
    let params = SsimParams::default();
    let (mut ep, mut es, mut ef): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let (h, w) = (r.random_range(11..18), r.random_range(11..18));
        let a = Array3::from_shape_fn((h, w, 3), |_| r.random_range(0.0..1.0));
        let b = Array3::from_shape_fn((h, w, 3), |_| r.random_range(0.0..1.0));
        ep = ep.max((psnr(&a.view(), &b.view(), 1.0).unwrap() - psnr_loop(&a, &b)).abs());
        es = es.max((ssim(&a.view(), &b.view(), &params).unwrap() - ssim_loop(&a, &b)).abs());
        let self_ssim = ssim(&a.view(), &a.view(), &params).unwrap();
        ensure(self_ssim == 1.0, || format!("SSIM(a, a) = {self_ssim:.17}"))?;

        let (n, d) = (r.random_range(2..30), r.random_range(1..6));
        let f = Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
        let st = feature_stats(&f).unwrap();
        for j in 0..d {
            let mu: f64 = (0..n).map(|i| f[[i, j]]).sum::<f64>() / n as f64;
            ef = ef.max((st.mean[j] - mu).abs());
        }
        for j in 0..d {
            for l in 0..d {
                let mj: f64 = (0..n).map(|i| f[[i, j]]).sum::<f64>() / n as f64;
                let ml: f64 = (0..n).map(|i| f[[i, l]]).sum::<f64>() / n as f64;
                let cov: f64 = (0..n).map(|i| (f[[i, j]] - mj) * (f[[i, l]] - ml)).sum::<f64>() / (n as f64 - 1.0);
                ef = ef.max((st.covariance[[j, l]] - cov).abs());
            }
        }
    }
    ensure(ep <= PSNR_TOL, || format!("PSNR off by {ep:e}"))?;
    ensure(es <= SSIM_TOL, || format!("SSIM off by {es:e}"))?;
    ensure(ef <= STATS_TOL, || format!("feature stats off by {ef:e}"))?;
    Ok(format!("50 inputs: PSNR {ep:.1e}, SSIM {es:.1e}, stats {ef:.1e}, SSIM(a,a) = 1"))
}

// ---- 4. loss gradients -----------------------------------------------------

/// `||analytic - central difference|| / ||central difference||`.
fn fd_rel_error(x0: &ArrayD<f64>, analytic: &ArrayD<f64>, f: &dyn Fn(&ArrayD<f64>) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp.as_slice_mut().unwrap()[i] += FD_STEP;
        xm.as_slice_mut().unwrap()[i] -= FD_STEP;
        let fd = (f(&xp) - f(&xm)) / (2.0 * FD_STEP);
        let a = analytic.as_slice().unwrap()[i];
        num += (a - fd).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-300)
}

fn loss_gradients() -> Check {
    let mut r = rng::from_seed(404);

    // Reconstruction with distance-decayed weights.
    let mask = random_mask(6, 6, 0.5, &mut r);
    let w = spatial_weight_map(&mask, 0.9).unwrap().insert_axis(ndarray::Axis(0));
    let target = Var::constant(random_array(&[1, 6, 6, 3], &mut r));
    let p0 = random_array(&[1, 6, 6, 3], &mut r);
    let recon = |p: &ArrayD<f64>| reconstruction_loss(&Var::constant(p.clone()), &target, &w).unwrap().item();
    let pv = Var::param(p0.clone());
    let g = grad(&reconstruction_loss(&pv, &target, &w).unwrap(), &[&pv], false);
    let e_recon = fd_rel_error(&p0, g[0].value(), &recon);

    // Patch matching on 6x6 feature maps.
    let t_feat = Var::constant(random_array(&[1, 6, 6, 4], &mut r));
    let f0 = random_array(&[1, 6, 6, 4], &mut r);
    let mrf = |p: &ArrayD<f64>| idmrf_loss(&Var::constant(p.clone()), &t_feat, 0.5, 2).unwrap().item();
    let fv = Var::param(f0.clone());
    let g = grad(&idmrf_loss(&fv, &t_feat, 0.5, 2).unwrap(), &[&fv], false);
    let e_mrf = fd_rel_error(&f0, g[0].value(), &mrf);

    // Gradient penalty with respect to the critic weights and to the real batch.
    // The critic is piecewise linear, so the penalty is locally flat in the
    // real batch and both gradients there are zero.
    let cfg = CriticConfig {
        base_channels: 4,
        downsample_stages: 1,
    };
    let critic = Critic::new(cfg.clone(), 3, 9).unwrap();
    let real0 = random_array(&[2, 6, 6, 3], &mut r);
    let fake = Var::constant(random_array(&[2, 6, 6, 3], &mut r));
    let gp_at = |crit: &Critic, real: &Var| {
        let mut er = rng::from_seed(77);
        critic_losses(|x| crit.forward(x), real, &fake, 1.0, &mut er).unwrap().gradient_penalty
    };
    let realv = Var::param(real0.clone());
    let gp = gp_at(&critic, &realv);
    let mut wrt: Vec<&Var> = critic.params().vars();
    wrt.push(&realv);
    let grads = grad(&gp, &wrt, false);
    let e_real = fd_rel_error(&real0, grads.last().unwrap().value(), &|x| gp_at(&critic, &Var::constant(x.clone())).item());
    let mut e_weights: f64 = 0.0;
    let values: Vec<ArrayD<f64>> = critic.params().values().into_iter().cloned().collect();
    for (k, v0) in values.iter().enumerate() {
        let f = |v: &ArrayD<f64>| {
            let mut c = Critic::new(cfg.clone(), 3, 9).unwrap();
            let mut vals = values.clone();
            vals[k] = v.clone();
            c.params_mut().set_values(vals).unwrap();
            gp_at(&c, &Var::constant(real0.clone())).item()
        };
        e_weights = e_weights.max(fd_rel_error(v0, grads[k].value(), &f));
    }

    // A linear critic with a unit-norm weight has gradient norm one everywhere.
    let dir = random_array(&[1, 6, 6, 3], &mut r);
    let dir = &dir / dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dirv = Var::constant(dir);
    let unit = |x: &Var| Ok(x.mul(&dirv).sum_to(&[x.shape()[0], 1, 1, 1]).reshape(&[x.shape()[0]]));
    let mut er = rng::from_seed(5);
    let unit_gp = critic_losses(unit, &Var::constant(real0.clone()), &fake, 10.0, &mut er).unwrap().gradient_penalty.item();

    let worst = e_recon.max(e_mrf).max(e_real).max(e_weights);
    ensure(worst < GRAD_REL_TOL, || {
        format!("relative errors recon {e_recon:.1e}, mrf {e_mrf:.1e}, gp/real {e_real:.1e}, gp/weights {e_weights:.1e}")
    })?;
    ensure(unit_gp < UNIT_CRITIC_GP_TOL, || format!("unit-gradient critic GP = {unit_gp:e}"))?;
    Ok(format!(
        "recon {e_recon:.1e}, ID-MRF {e_mrf:.1e}, GP real {e_real:.1e}, GP weights {e_weights:.1e}, unit GP {unit_gp:.1e}"
    ))
}

// ---- 5. weight map ---------------------------------------------------------

fn bfs_weights(m: &Mask, gamma: f64) -> Array2<f64> {
    let (h, w) = (m.height(), m.width());
    let mut dist = vec![usize::MAX; h * w];
    let mut q = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if m.is_visible(y, x) {
                dist[y * w + x] = 0;
                q.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = q.pop_front() {
        let d = dist[y * w + x];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if dist[j] == usize::MAX {
                    dist[j] = d + 1;
                    q.push_back((ny as usize, nx as usize));
                }
            }
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| match dist[y * w + x] {
        0 => 0.0,
        d => gamma.powi(d as i32 - 1),
    })
}

fn weight_map() -> Check {
    let mut r = rng::from_seed(505);
    for k in 0..10 {
        let mut m = random_mask(16, 16, 0.15, &mut r);
        if m.visible_count() == 0 {
            m = Mask::from_grid(16, 16, (0..256).map(|i| (i == 0) as u8).collect()).unwrap();
        }
        let gamma = r.random_range(0.5..0.99);
        let got = spatial_weight_map(&m, gamma).unwrap();
        ensure(got == bfs_weights(&m, gamma), || format!("mask {k} differs from the BFS oracle"))?;
    }
    Ok("10 random 16x16 masks equal the BFS oracle exactly".into())
}

// ---- 6. schedule -----------------------------------------------------------

fn schedule_checks() -> Check {
    let start = Instant::now();
    let p = LossBundle::pretrain(1.0).unwrap();
    let f = LossBundle::new(Stage::Finetune, 1.0, 1e-3, 0.05).unwrap();
    for (n, k) in [(5u64, 7u64), (20000, 40000)] {
        let s = Schedule::new(TaskKind::Inpainting, Strategy::InNOut, n, k, p, f).unwrap();
        let mut task_switch = Vec::new();
        let mut loss_switch = Vec::new();
        for i in 1..n + k {
            if s.task_for_iteration(i).unwrap() != s.task_for_iteration(i - 1).unwrap() {
                task_switch.push(i);
            }
            if s.loss_bundle_for_iteration(i).unwrap() != s.loss_bundle_for_iteration(i - 1).unwrap() {
                loss_switch.push(i);
            }
        }
        ensure(task_switch == [n] && loss_switch == [n], || format!("({n},{k}) switched at {task_switch:?}/{loss_switch:?}"))?;
        ensure(s.task_for_iteration(0).unwrap() == TaskKind::Outpainting, || "first stage is not the opposite task".into())?;
        ensure(s.task_for_iteration(n + k).is_err(), || "out-of-range iteration accepted".into())?;
        let b = Schedule::new(TaskKind::Inpainting, Strategy::Baseline, n, k, p, f).unwrap();
        ensure((0..n + k).all(|i| b.task_for_iteration(i).unwrap() == TaskKind::Inpainting), || "baseline switched".into())?;
    }
    let e = epoch_schedule_adapter(30, 0.5, 100, Strategy::InNOut, TaskKind::Inpainting, p, f).unwrap();
    ensure((e.n_pretrain(), e.k_finetune()) == (1500, 1500), || "epoch adapter split is not 15+15".into())?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("(5,7) and (20000,40000) switch at N, baseline constant, 30 epochs -> 15+15, {t:.2?}"))
}

// ---- 7. resume -------------------------------------------------------------

fn resume_bit_exact() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let root = common::write_corpus(&dir.path().join("data"), 6, 32);
    let cfg = |out: &std::path::Path| {
        common::config(&[
            ("preset", "tiny-inpaint"),
            ("data.root", root.to_str().unwrap()),
            ("run.out_dir", out.to_str().unwrap()),
            ("schedule.n_pretrain", "15"),
            ("schedule.k_finetune", "25"),
            ("train.checkpoint_every", "10"),
            ("seed", "21"),
        ])
    };
    let full = run_training(cfg(&dir.path().join("full"))).map_err(|e| e.to_string())?;
    let part_dir = dir.path().join("part");
    let mut t = Trainer::create(cfg(&part_dir)).map_err(|e| e.to_string())?;
    t.run_until(23).map_err(|e| e.to_string())?;
    drop(t);
    let mut t = Trainer::resume(&part_dir, None).map_err(|e| e.to_string())?;
    ensure(t.iteration() == 20, || format!("resumed at {}", t.iteration()))?;
    let rest = t.run().map_err(|e| e.to_string())?;
    ensure(rest.rows == full.rows[20..], || "loss trajectory after resume differs".into())?;
    let reference = Trainer::resume(&dir.path().join("full"), None).map_err(|e| e.to_string())?;
    ensure(t.generator().params().values() == reference.generator().params().values(), || "generator weights differ".into())?;
    Ok("40 iterations resumed at 20: losses and weights bit-identical".into())
}

// ---- 8. overfit ------------------------------------------------------------

fn masked_l1(g: &Generator, batch: &innout::data::Batch) -> f64 {
    let _guard = no_grad();
    let pred = g.forward(&generator_input(&batch.masked_images, &batch.masks).unwrap()).unwrap();
    let pred: Array4<f64> = pred.value().clone().into_dimensionality().unwrap();
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((b, y, x, c), v) in pred.indexed_iter() {
        if batch.masks[[b, y, x]] == 0.0 {
            sum += (v - batch.images[[b, y, x, c]]).abs();
            n += 1;
        }
    }
    sum / n as f64
}

fn overfit() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = common::write_corpus(&dir.path().join("data"), 8, 64);
    let c = common::config(&[
        ("preset", "tiny"),
        ("data.root", root.to_str().unwrap()),
        ("run.out_dir", dir.path().join("run").to_str().unwrap()),
        ("data.resize", "64x64"),
        ("data.augment", "none"),
        ("data.test_fraction", "0"),
        ("masks.family", "center-rect"),
        ("masks.hole", "32x32"),
        ("schedule.n_pretrain", "0"),
        ("schedule.k_finetune", "500"),
        ("loss.adv_weight", "0"),
        ("loss.mrf_weight", "0"),
        ("train.batch_size", "8"),
        ("train.checkpoint_every", "0"),
        ("seed", "8"),
    ]);
    let untrained = Generator::new(c.generator.clone(), c.seed).unwrap();
    let data = innout::data::Dataset::load_split(&c.data, None).unwrap();
    let family = c.masks.family(c.data.resize_to).unwrap();
    let items: Vec<innout::data::BatchItem> = data
        .images
        .iter()
        .enumerate()
        .map(|(k, image)| innout::data::BatchItem { image, seed: 1000 + k as u64 })
        .collect();
    let probe = innout::data::make_batch(&items, &c.data, TaskKind::Inpainting, &family, &c.fill).unwrap();
    let before = masked_l1(&untrained, &probe);

    let mut t = Trainer::create(c).map_err(|e| e.to_string())?;
    let out = t.run().map_err(|e| e.to_string())?;
    let (first, last) = (out.rows[0].recon, out.rows.last().unwrap().recon);
    let after = masked_l1(t.generator(), &probe);
    ensure(last <= 0.5 * first, || format!("reconstruction loss {first:.4} -> {last:.4}"))?;
    ensure(after < before, || format!("masked L1 {before:.4} -> {after:.4}"))?;
    let el = start.elapsed();
    ensure(el < Duration::from_secs(600), || format!("took {el:?}"))?;
    Ok(format!("recon {first:.4} -> {last:.4}, masked L1 {before:.4} -> {after:.4}, {el:.0?}"))
}

// ---- 9. toy comparison -----------------------------------------------------

fn toy_comparison() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let root = common::write_corpus(&dir.path().join("data"), 64, 32);
    let mut reports = Vec::new();
    for strategy in ["innout", "baseline"] {
        let run = dir.path().join(strategy);
        let c = common::config(&[
            ("preset", "tiny-inpaint"),
            ("data.root", root.to_str().unwrap()),
            ("run.out_dir", run.to_str().unwrap()),
            ("schedule.strategy", strategy),
            ("schedule.n_pretrain", "300"),
            ("schedule.k_finetune", "300"),
            ("train.checkpoint_every", "150"),
            ("seed", "3"),
        ]);
        let out = run_training(c.clone()).map_err(|e| format!("{strategy}: {e}"))?;
        ensure(out.completed == 600, || format!("{strategy} stopped at {}", out.completed))?;
        let m = read_manifest(&run).map_err(|e| e.to_string())?;
        let tasks: Vec<(TaskKind, u64, u64)> = m.stages.iter().map(|s| (s.task, s.start, s.end)).collect();
        let expected = match strategy {
            "innout" => vec![(TaskKind::Outpainting, 0, 300), (TaskKind::Inpainting, 300, 600)],
            _ => vec![(TaskKind::Inpainting, 0, 300), (TaskKind::Inpainting, 300, 600)],
        };
        ensure(tasks == expected && m.status == "completed", || format!("{strategy} manifest stages {tasks:?}"))?;
        let report = commands::evaluate(&EvaluateArgs {
            config: &c,
            checkpoint: &run,
            data_root: &root,
            split: EvalSplit::All,
            masks: None,
            batch_size: 16,
        })
        .map_err(|e| e.to_string())?;
        commands::write_report(&run.join(commands::REPORT_FILE), &report).map_err(|e| e.to_string())?;
        reports.push(run);
    }
    let cmp = commands::report(&reports, &dir.path().join("cmp")).map_err(|e| e.to_string())?;
    ensure(cmp.rows.len() == 2 && dir.path().join("cmp/comparison.csv").is_file(), || "comparison not written".into())?;
    let row = |i: usize| {
        let r = &cmp.rows[i];
        format!("{} PSNR {:.2} SSIM {:.3} FID {}", r.run, r.psnr, r.ssim, r.fid.map_or("n/a".into(), |f| format!("{f:.3}")))
    };
    Ok(format!("both 600-iteration runs complete; {}; {}", row(0), row(1)))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("mask suite", masks_suite),
        ("FID oracle", fid_oracle),
        ("metric oracles", metric_oracles),
        ("loss gradients", loss_gradients),
        ("spatial weight map", weight_map),
        ("schedule", schedule_checks),
        ("resume determinism", resume_bit_exact),
        ("overfit smoke", overfit),
        ("toy In-N-Out comparison", toy_comparison),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
