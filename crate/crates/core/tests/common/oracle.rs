//! Independent oracles: closed-form projector algebra, derivative-free
//! search for the probe loss infimum, and SVD ranks.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use uprobe_core::amnesic::{apply_projection, inlp, nullspace_projector, StopReason, StoppingRule};
use uprobe_core::corpus::NumberLabel;
use uprobe_core::probes::{train_probe, v_conditional_entropy, v_entropy, ProbeConfig};
use uprobe_core::repr::{Category, RepresentationSet};

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Symmetry, idempotence, `P θ = 0` and trace `d - 1` within `tol` for
/// `per_dim` random directions in each dimension.
pub fn check_projector_algebra(dims: &[usize], per_dim: usize, tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &d in dims {
        for _ in 0..per_dim {
            // spread magnitudes over several orders
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let theta: Array1<f64> = (0..d).map(|_| scale * gaussian(&mut rng)).collect();
            let p = nullspace_projector(theta.view()).unwrap();
            let pp = p.dot(&p);
            let ptheta = p.dot(&theta);
            let mut trace = 0.0;
            for i in 0..d {
                trace += p[[i, i]];
                for j in 0..d {
                    assert!((p[[i, j]] - p[[j, i]]).abs() <= tol, "symmetry, d = {d}");
                    assert!((pp[[i, j]] - p[[i, j]]).abs() <= tol, "idempotence, d = {d}");
                }
            }
            // P·θ = 0 relative to |θ|
            let norm = theta.dot(&theta).sqrt();
            assert!(ptheta.iter().all(|v| v.abs() <= tol * norm.max(1.0)), "P theta, d = {d}");
            assert!((trace - (d as f64 - 1.0)).abs() <= tol, "trace, d = {d}");
        }
    }
}

/// Mean logistic loss of labels `y` under scores `X w[..d] + w[d]`.
fn oracle_loss(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> f64 {
    let d = w.len() - 1;
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z: f64 = row.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d];
            // log(1 + e^z) - t z, computed stably
            let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            sp - t * z
        })
        .sum();
    total / y.len() as f64
}

/// Minimum of a convex function of `t` on `[0, hi]` by golden sections.
fn golden(f: &dyn Fn(f64) -> f64, hi: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..200 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let t = (a + b) / 2.0;
    (t, f(t))
}

/// Derivative-free infimum of the logistic loss: a dense direction grid on
/// the cube surface with a line search for scale, then compass search from
/// the best point with shrinking steps.
pub fn grid_oracle(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let m = x[0].len() + 1;
    let per_axis: i64 = match m {
        2 => 401,
        3 => 61,
        _ => 21,
    };
    let half = (per_axis - 1) / 2;
    let mut best = (oracle_loss(x, y, &vec![0.0; m]), vec![0.0; m]);
    let total = (per_axis as usize).pow(m as u32);
    for idx in 0..total {
        let mut u = vec![0.0; m];
        let mut rest = idx;
        let mut on_surface = false;
        for c in u.iter_mut() {
            let k = (rest % per_axis as usize) as i64 - half;
            rest /= per_axis as usize;
            on_surface |= k.abs() == half;
            *c = k as f64 / half as f64;
        }
        if !on_surface {
            continue;
        }
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir: Vec<f64> = u.iter().map(|v| v / norm).collect();
        let f = |t: f64| oracle_loss(x, y, &dir.iter().map(|v| v * t).collect::<Vec<_>>());
        let (t, v) = golden(&f, 1e3);
        if v < best.0 {
            best = (v, dir.iter().map(|c| c * t).collect());
        }
    }
    // zoom
    let (mut fbest, mut w) = best;
    let mut step = 0.1 * w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    while step > 1e-10 {
        let mut improved = false;
        for i in 0..m {
            for sign in [1.0, -1.0] {
                let mut cand = w.clone();
                cand[i] += sign * step;
                let v = oracle_loss(x, y, &cand);
                if v < fbest {
                    fbest = v;
                    w = cand;
                    improved = true;
                }
            }
        }
        // scale move along the current ray
        for factor in [1.0 + step, 1.0 / (1.0 + step)] {
            let cand: Vec<f64> = w.iter().map(|v| v * factor).collect();
            let v = oracle_loss(x, y, &cand);
            if v < fbest {
                fbest = v;
                w = cand;
                improved = true;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    fbest
}

fn to_set(x: &[Vec<f64>], labels: &[NumberLabel]) -> RepresentationSet {
    let d = x[0].len();
    let flat: Vec<f32> = x.iter().flatten().map(|&v| v as f32).collect();
    RepresentationSet::new(
        Array2::from_shape_vec((x.len(), d), flat).unwrap(),
        labels.to_vec(),
        Category::Noun,
        0,
    )
    .unwrap()
}

/// Trained-probe conditional V-entropy against the grid oracle on
/// `datasets` random small sets; returns the largest gap seen.
pub fn check_v_information(datasets: usize, tol: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < datasets {
        let n = rng.random_range(4..=16);
        let d = rng.random_range(1..=3);
        // a noisy logistic teacher gives both separable and overlapping sets
        let teacher: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| gaussian(&mut rng)).collect::<Vec<_>>())
            .map(|row| row.into_iter().map(|v| (v as f32) as f64).collect())
            .collect();
        let labels: Vec<NumberLabel> = x
            .iter()
            .map(|row| {
                let z: f64 = row.iter().zip(&teacher).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-2.0 * z).exp());
                if rng.random::<f64>() < p {
                    NumberLabel::Singular
                } else {
                    NumberLabel::Plural
                }
            })
            .collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let set = to_set(&x, &labels);
        let probe = train_probe(&set, &set, &ProbeConfig::default()).unwrap();
        let trained = v_conditional_entropy(&probe, &set).unwrap();
        let y: Vec<f64> = labels.iter().map(|l| l.as_target()).collect();
        let oracle = grid_oracle(&x, &y);
        let gap = (trained - oracle).abs();
        assert!(gap <= tol, "n = {n}, d = {d}: trained {trained} vs oracle {oracle}");
        worst = worst.max(gap);

        let p = y.iter().sum::<f64>() / n as f64;
        let closed = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert_eq!(v_entropy(&labels), closed);
        checked += 1;
    }
    worst
}

/// Gaussian clouds whose label is carried by the first `informative`
/// coordinates.
pub fn synthetic(n: usize, d: usize, informative: usize, seed: u64) -> RepresentationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { NumberLabel::Singular } else { NumberLabel::Plural };
        let sign = if label == NumberLabel::Singular { 1.0 } else { -1.0 };
        for j in 0..d {
            let shift = if j < informative { 1.5 * sign } else { 0.0 };
            data.push((shift + gaussian(&mut rng)) as f32);
        }
        labels.push(label);
    }
    RepresentationSet::new(Array2::from_shape_vec((n, d), data).unwrap(), labels, Category::Verb, 1).unwrap()
}

pub fn svd_rank(m: &Array2<f64>, threshold: f64) -> usize {
    let (r, c) = m.dim();
    let dm = DMatrix::from_fn(r, c, |i, j| m[[i, j]]);
    dm.singular_values().iter().filter(|&&s| s > threshold).count()
}

/// Runs INLP and checks convergence, the composed rank, independence of the
/// directions, and that a fresh probe on projected data is at chance.
/// Returns `(k, fresh dev accuracy, dev majority)`.
pub fn check_inlp(train: &RepresentationSet, dev: &RepresentationSet) -> (usize, f64, f64) {
    let d = train.matrix.ncols();
    let rule = StoppingRule::default();
    let cfg = ProbeConfig::default();
    let proj = inlp(train, dev, &rule, &cfg).unwrap();
    assert_eq!(proj.stop_reason, StopReason::Converged, "d = {d}");
    assert!(proj.k() >= 1);
    assert_eq!(svd_rank(&proj.composed, 1e-6), d - proj.k(), "d = {d}");

    let stacked = Array2::from_shape_fn((proj.k(), d), |(i, j)| proj.directions[i][j]);
    assert_eq!(svd_rank(&stacked, 1e-6), proj.k(), "directions are independent");

    let pt = apply_projection(train, &proj).unwrap();
    let pd = apply_projection(dev, &proj).unwrap();
    let fresh = train_probe(&pt, &pd, &cfg).unwrap();
    let acc = fresh.dev_accuracy.unwrap();
    assert!(acc <= dev.majority_rate() + rule.eps, "d = {d}: accuracy {acc}");
    (proj.k(), acc, dev.majority_rate())
}
