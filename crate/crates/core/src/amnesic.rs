//! Iterative nullspace projection (INLP) and random-direction controls.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::{fit_logistic, ProbeConfig};
use crate::repr::{ByteReader, Category, RepresentationSet};

pub const PROJ_MAGIC: &[u8; 4] = b"PROJ";
pub const PROJ_VERSION: u32 = 1;

/// `I − θθᵀ/‖θ‖²`.
pub fn nullspace_projector(theta: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    let norm2 = theta.dot(&theta);
    if norm2 == 0.0 || !norm2.is_finite() {
        return Err(Error::DegenerateDirection(
            "cannot project out a zero or non-finite direction".into(),
        ));
    }
    let d = theta.len();
    let mut p = Array2::eye(d);
    for i in 0..d {
        for j in 0..d {
            p[[i, j]] -= theta[i] * theta[j] / norm2;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    /// Stop once dev accuracy is at most `majority + eps`.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { eps: 0.005, max_iter: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The property is no longer linearly extractable.
    Converged,
    /// The iteration cap was reached first.
    Cap,
    /// Random control; no stopping rule applies.
    Random,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::Cap => "cap",
            StopReason::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmnesicProjector {
    /// Directions in the order they were removed, as trained.
    pub directions: Vec<Array1<f64>>,
    /// `P⁽ᵏ⁾ ⋯ P⁽¹⁾`.
    pub composed: Array2<f64>,
    /// `None` for random controls.
    pub category: Option<Category>,
    pub layer: usize,
    pub stop_reason: StopReason,
    /// Dev majority rate the stopping rule compared against.
    pub majority: f64,
    pub eps: f64,
    /// Dev accuracy of the probe trained at each iteration, including the
    /// final one that triggered the stop.
    pub dev_accuracies: Vec<f64>,
}

impl AmnesicProjector {
    pub fn identity(d: usize, category: Option<Category>, layer: usize) -> Self {
        Self {
            directions: Vec::new(),
            composed: Array2::eye(d),
            category,
            layer,
            stop_reason: StopReason::Converged,
            majority: 0.0,
            eps: 0.0,
            dev_accuracies: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.directions.len()
    }

    pub fn d(&self) -> usize {
        self.composed.nrows()
    }
}

fn project_rows(x: &Array2<f64>, p: &Array2<f64>) -> Array2<f64> {
    // rows are r; result rows are P r, i.e. X Pᵀ
    x.dot(&p.t())
}

/// Runs INLP until `train`'s labels can no longer be predicted on `dev`
/// above the majority rate plus `rule.eps`.
pub fn inlp(
    train: &RepresentationSet,
    dev: &RepresentationSet,
    rule: &StoppingRule,
    probe_cfg: &ProbeConfig,
) -> Result<AmnesicProjector> {
    train.validate()?;
    dev.validate()?;
    if train.d() != dev.d() {
        return Err(Error::Shape(format!("train d {} vs dev d {}", train.d(), dev.d())));
    }
    if !train.has_both_labels() {
        return Err(Error::DegenerateData("INLP needs both labels in the training set".into()));
    }
    let d = train.d();
    let majority = dev.majority_rate();
    let mut xt = train.to_f64();
    let mut xd = dev.to_f64();
    let mut out = AmnesicProjector::identity(d, Some(train.category), train.layer);
    out.majority = majority;
    out.eps = rule.eps;

    loop {
        let fit = fit_logistic(xt.view(), &train.labels, probe_cfg)?;
        let acc = accuracy(&xd, &fit.theta, fit.bias, dev);
        out.dev_accuracies.push(acc);
        log::debug!(
            "inlp ({}, layer {}) iteration {}: dev accuracy {acc:.4} (majority {majority:.4})",
            train.category,
            train.layer,
            out.k()
        );
        if acc <= majority + rule.eps {
            out.stop_reason = StopReason::Converged;
            break;
        }
        if out.k() >= rule.max_iter {
            out.stop_reason = StopReason::Cap;
            log::warn!(
                "inlp ({}, layer {}) hit the {}-iteration cap with dev accuracy {acc:.4} > {:.4}",
                train.category,
                train.layer,
                rule.max_iter,
                majority + rule.eps
            );
            break;
        }
        let p = nullspace_projector(fit.theta.view())?;
        xt = project_rows(&xt, &p);
        xd = project_rows(&xd, &p);
        out.composed = p.dot(&out.composed);
        out.directions.push(fit.theta);
    }
    log::info!(
        "inlp ({}, layer {}): removed {} direction(s), stop reason {}",
        train.category,
        train.layer,
        out.k(),
        out.stop_reason
    );
    Ok(out)
}

fn accuracy(x: &Array2<f64>, theta: &Array1<f64>, bias: f64, set: &RepresentationSet) -> f64 {
    let z = x.dot(theta);
    let hits = z
        .iter()
        .zip(&set.labels)
        .filter(|(&z, &l)| (z + bias > 0.0) == (l == crate::corpus::NumberLabel::Singular))
        .count();
    hits as f64 / set.n() as f64
}

/// Removes `k` random orthonormal directions drawn from a seeded Gaussian.
pub fn random_projector(d: usize, k: usize, seed: u64) -> Result<AmnesicProjector> {
    if k > d {
        return Err(Error::Config(format!("cannot remove {k} directions from a {d}-dimensional space")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        // modified Gram–Schmidt, twice for numerical safety
        for _ in 0..2 {
            for u in &basis {
                let c = u.dot(&v);
                v.scaled_add(-c, u);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut composed = Array2::eye(d);
    for u in &basis {
        composed = nullspace_projector(u.view())?.dot(&composed);
    }
    Ok(AmnesicProjector {
        directions: basis,
        composed,
        category: None,
        layer: 0,
        stop_reason: StopReason::Random,
        majority: 0.0,
        eps: 0.0,
        dev_accuracies: Vec::new(),
    })
}

/// Replaces every row `r` by `composed · r`.
pub fn apply_projection(reps: &RepresentationSet, proj: &AmnesicProjector) -> Result<RepresentationSet> {
    if reps.d() != proj.d() {
        return Err(Error::Shape(format!(
            "projector is {}-dimensional but representations are {}",
            proj.d(),
            reps.d()
        )));
    }
    let projected = project_rows(&reps.to_f64(), &proj.composed);
    reps.with_matrix(projected.mapv(|v| v as f32))
}

#[derive(Debug, Serialize, Deserialize)]
struct Trailer {
    category: Option<Category>,
    layer: usize,
    stop_reason: StopReason,
    majority: f64,
    eps: f64,
    #[serde(default)]
    dev_accuracies: Vec<f64>,
}

/// Writes a `PROJ` file: magic, version, `d`, `k`, the raw directions and
/// the composed matrix as f32, then a JSON trailer to end of file.
pub fn write_projector(path: impl AsRef<Path>, proj: &AmnesicProjector) -> Result<()> {
    let path = path.as_ref();
    let d = proj.d();
    let mut out = Vec::new();
    out.extend_from_slice(PROJ_MAGIC);
    out.extend_from_slice(&PROJ_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(proj.k() as u32).to_le_bytes());
    for dir in &proj.directions {
        for &v in dir {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &v in &proj.composed {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let trailer = Trailer {
        category: proj.category,
        layer: proj.layer,
        stop_reason: proj.stop_reason,
        majority: proj.majority,
        eps: proj.eps,
        dev_accuracies: proj.dev_accuracies.clone(),
    };
    out.extend_from_slice(&serde_json::to_vec(&trailer)?);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `PROJ` file. Stored values are f32.
pub fn read_projector(path: impl AsRef<Path>) -> Result<AmnesicProjector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &bytes);
    if r.take(4)? != PROJ_MAGIC {
        return Err(Error::format(path, "missing PROJ magic"));
    }
    let version = r.u32()?;
    if version != PROJ_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let directions = (0..k)
        .map(|_| Ok(r.f32s(d)?.into_iter().map(f64::from).collect()))
        .collect::<Result<Vec<Array1<f64>>>>()?;
    let composed: Vec<f64> = r.f32s(d * d)?.into_iter().map(f64::from).collect();
    let trailer: Trailer = serde_json::from_slice(r.rest()).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(AmnesicProjector {
        directions,
        composed: Array2::from_shape_vec((d, d), composed).expect("length checked"),
        category: trailer.category,
        layer: trailer.layer,
        stop_reason: trailer.stop_reason,
        majority: trailer.majority,
        eps: trailer.eps,
        dev_accuracies: trailer.dev_accuracies,
    })
}
