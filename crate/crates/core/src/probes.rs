//! Linear diagnostic probes and V-information.
//!
//! A probe is `p(singular | r) = σ(θᵀr + b)`. Training minimizes the mean
//! logistic loss with a damped Newton method from `θ = 0` and `b` at the
//! prior log-odds; it is deterministic and single-threaded. All entropies
//! are in nats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::NumberLabel;
use crate::error::{Error, Result};
use crate::repr::{Category, RepresentationSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub max_iter: usize,
    /// Stop once the gradient's ∞-norm falls to this value.
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub category: Category,
    pub layer: usize,
    pub d: usize,
    pub theta: Vec<f64>,
    pub bias: f64,
    /// Mean training loss at the returned parameters.
    pub final_loss: f64,
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_accuracy: Option<f64>,
}

impl ProbeParams {
    pub fn theta_norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    fn check_dim(&self, set: &RepresentationSet) -> Result<()> {
        if set.d() != self.d || self.theta.len() != self.d {
            return Err(Error::Shape(format!(
                "probe has dimension {} but representations have {}",
                self.d,
                set.d()
            )));
        }
        Ok(())
    }

    /// `θᵀr + b` for every row.
    pub fn scores(&self, set: &RepresentationSet) -> Result<Array1<f64>> {
        self.check_dim(set)?;
        Ok(scores(set.to_f64().view(), ArrayView1::from(&self.theta), self.bias))
    }

    /// Singular iff the score is strictly positive.
    pub fn predict(&self, set: &RepresentationSet) -> Result<Vec<NumberLabel>> {
        Ok(self.scores(set)?.iter().map(|&z| label_of(z)).collect())
    }

    pub fn accuracy(&self, set: &RepresentationSet) -> Result<f64> {
        let pred = self.predict(set)?;
        Ok(agreement_rate(&pred, &set.labels))
    }
}

fn label_of(z: f64) -> NumberLabel {
    if z > 0.0 {
        NumberLabel::Singular
    } else {
        NumberLabel::Plural
    }
}

fn agreement_rate(pred: &[NumberLabel], gold: &[NumberLabel]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    // one minus the disagreement rate, the definition callers rely on
    let wrong = pred.iter().zip(gold).filter(|(a, b)| a != b).count();
    1.0 - wrong as f64 / gold.len() as f64
}

fn scores(x: ArrayView2<'_, f64>, theta: ArrayView1<'_, f64>, bias: f64) -> Array1<f64> {
    let mut z = x.dot(&theta);
    z += bias;
    z
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood of targets `y` (1 = singular).
fn mean_nll(z: &Array1<f64>, y: &[f64]) -> f64 {
    z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / y.len() as f64
}

pub(crate) struct Fit {
    pub theta: Array1<f64>,
    pub bias: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton on the mean logistic loss. The Hessian receives a tiny
/// ridge only to keep the linear solve well-posed; the objective itself is
/// unregularized.
pub(crate) fn fit_logistic(x: ArrayView2<'_, f64>, labels: &[NumberLabel], cfg: &ProbeConfig) -> Result<Fit> {
    let n = x.nrows();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} rows but {} labels", labels.len())));
    }
    let y: Vec<f64> = labels.iter().map(|l| l.as_target()).collect();
    let p = y.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 || p == 0.0 || p == 1.0 {
        return Err(Error::DegenerateData("probe training needs both number labels".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite representation value".into()));
    }

    // Directions the data only reach through rounding noise (for example
    // ones a projection already removed) would let an unregularized fit
    // grow without bound, so the fit runs in the numerical column space.
    let basis = column_space(x);
    let reduced = x.dot(&basis);
    let mut fit = fit_reduced(reduced.view(), &y, p, cfg);
    fit.theta = basis.dot(&fit.theta);
    Ok(fit)
}

/// Orthonormal basis (d × r) of the row span of `x`, dropping singular
/// values below `1e-10` of the largest.
fn column_space(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Array2::zeros((d, 0));
    }
    let m = DMatrix::from_fn(n, d, |i, j| x[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-10 * smax)
        .collect();
    Array2::from_shape_fn((d, keep.len()), |(j, c)| v_t[(keep[c], j)])
}

fn fit_reduced(x: ArrayView2<'_, f64>, y: &[f64], p: f64, cfg: &ProbeConfig) -> Fit {
    let (n, d) = x.dim();
    // augmented design [X | 1]
    let mut xa = Array2::ones((n, d + 1));
    xa.slice_mut(ndarray::s![.., ..d]).assign(&x);
    let mut w = Array1::zeros(d + 1);
    w[d] = (p / (1.0 - p)).ln();

    let eval = |w: &Array1<f64>| -> (Array1<f64>, f64) {
        let z = xa.dot(w);
        let loss = mean_nll(&z, y);
        (z, loss)
    };
    let (mut z, mut loss) = eval(&w);
    let mut iterations = 0;
    let mut converged = false;
    let nf = n as f64;
    while iterations < cfg.max_iter {
        let resid: Array1<f64> = z.iter().zip(y).map(|(&z, &y)| sigmoid(z) - y).collect();
        let grad = xa.t().dot(&resid) / nf;
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let sw: Array1<f64> = z
            .iter()
            .map(|&z| {
                let s = sigmoid(z);
                (s * (1.0 - s) / nf).sqrt()
            })
            .collect();
        let xw = &xa * &sw.view().insert_axis(Axis(1));
        let h = xw.t().dot(&xw);
        let dir = newton_direction(&h, &grad).unwrap_or_else(|| -&grad);

        let slope = grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -&grad };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &w + &(&dir * step);
            let (zc, lc) = eval(&cand);
            if lc.is_finite() && lc <= loss + 1e-4 * step * slope {
                w = cand;
                z = zc;
                loss = lc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable decrease remains
            break;
        }
    }
    let bias = w[d];
    w.slice_collapse(ndarray::s![..d]);
    Fit {
        theta: w,
        bias,
        loss,
        iterations,
        converged,
    }
}

fn newton_direction(h: &Array2<f64>, grad: &Array1<f64>) -> Option<Array1<f64>> {
    let k = h.nrows();
    let scale = h.diag().iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-300);
    let mut ridge = 1e-10 * scale;
    let g = DVector::from_iterator(k, grad.iter().copied());
    for _ in 0..12 {
        let mut m = DMatrix::from_fn(k, k, |i, j| h[[i, j]]);
        for i in 0..k {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let sol = chol.solve(&g);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().map(|v| -v).collect());
            }
        }
        ridge *= 100.0;
    }
    None
}

/// Trains a probe on `train` and records its accuracy on `dev`.
pub fn train_probe(train: &RepresentationSet, dev: &RepresentationSet, cfg: &ProbeConfig) -> Result<ProbeParams> {
    train.validate()?;
    if dev.d() != train.d() {
        return Err(Error::Shape(format!(
            "train dimension {} differs from dev dimension {}",
            train.d(),
            dev.d()
        )));
    }
    let fit = fit_logistic(train.to_f64().view(), &train.labels, cfg)?;
    if !fit.converged {
        log::warn!(
            "probe ({}, layer {}) stopped after {} iterations without reaching the gradient tolerance",
            train.category,
            train.layer,
            fit.iterations
        );
    }
    let mut probe = ProbeParams {
        category: train.category,
        layer: train.layer,
        d: train.d(),
        theta: fit.theta.to_vec(),
        bias: fit.bias,
        final_loss: fit.loss,
        iterations: fit.iterations,
        converged: fit.converged,
        dev_accuracy: None,
    };
    if dev.n() > 0 {
        probe.dev_accuracy = Some(probe.accuracy(dev)?);
    }
    Ok(probe)
}

/// `H_V(N)`: binary entropy of the empirical prior.
pub fn v_entropy(labels: &[NumberLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let p = labels.iter().filter(|&&l| l == NumberLabel::Singular).count() as f64 / labels.len() as f64;
    binary_entropy(p)
}

pub(crate) fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { q * q.ln() } else { 0.0 };
    -(term(p) + term(1.0 - p))
}

/// `H_V(N | R)`: mean negative log-likelihood of `eval` under `probe`.
pub fn v_conditional_entropy(probe: &ProbeParams, eval: &RepresentationSet) -> Result<f64> {
    let z = probe.scores(eval)?;
    if eval.n() == 0 {
        return Err(Error::DegenerateData("empty evaluation set".into()));
    }
    let y: Vec<f64> = eval.labels.iter().map(|l| l.as_target()).collect();
    Ok(mean_nll(&z, &y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VInfo {
    pub h_v: f64,
    pub h_v_cond: f64,
    /// `max(0, raw)`.
    pub i_v: f64,
    /// Before clamping; slightly negative values come from imperfect
    /// optimization.
    pub i_v_raw: f64,
    /// `i_v / h_v`, absent when `h_v` is zero.
    pub u_v: Option<f64>,
}

pub fn v_information(probe: &ProbeParams, eval: &RepresentationSet) -> Result<VInfo> {
    let h_v = v_entropy(&eval.labels);
    let h_v_cond = v_conditional_entropy(probe, eval)?;
    let i_v_raw = h_v - h_v_cond;
    let i_v = i_v_raw.max(0.0);
    let u_v = (h_v > 0.0).then(|| (i_v / h_v).min(1.0));
    Ok(VInfo {
        h_v,
        h_v_cond,
        i_v,
        i_v_raw,
        u_v,
    })
}

pub fn v_uncertainty(probe: &ProbeParams, eval: &RepresentationSet) -> Result<f64> {
    v_information(probe, eval)?
        .u_v
        .ok_or_else(|| Error::DegenerateData("V-uncertainty is undefined for single-label data".into()))
}

/// One row of a probe report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReportRow {
    pub category: Category,
    pub layer: usize,
    pub h_v: f64,
    pub h_v_cond: f64,
    pub i_v: f64,
    pub u_v: Option<f64>,
    pub accuracy: f64,
}

pub fn probe_report(probe: &ProbeParams, eval: &RepresentationSet) -> Result<ProbeReportRow> {
    let info = v_information(probe, eval)?;
    Ok(ProbeReportRow {
        category: probe.category,
        layer: probe.layer,
        h_v: info.h_v,
        h_v_cond: info.h_v_cond,
        i_v: info.i_v,
        u_v: info.u_v,
        accuracy: probe.accuracy(eval)?,
    })
}

/// Pairwise cosine similarity of probe weight vectors (biases ignored).
pub fn cosine_matrix(probes: &[ProbeParams]) -> Result<Array2<f64>> {
    let Some(first) = probes.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let d = first.theta.len();
    let mut norms = Vec::with_capacity(probes.len());
    for p in probes {
        if p.theta.len() != d {
            return Err(Error::Shape(format!("probe dimensions {} and {} differ", d, p.theta.len())));
        }
        let norm = p.theta_norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateProbe(format!(
                "probe ({}, layer {}) has a zero or non-finite weight vector",
                p.category, p.layer
            )));
        }
        norms.push(norm);
    }
    let k = probes.len();
    let mut m = Array2::zeros((k, k));
    for i in 0..k {
        m[[i, i]] = 1.0;
        for j in i + 1..k {
            let dot: f64 = probes[i].theta.iter().zip(&probes[j].theta).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m[[i, j]] = c;
            m[[j, i]] = c;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalEntry {
    pub probe_category: Category,
    pub set_category: Category,
    pub layer: usize,
    pub accuracy: f64,
    /// Accuracy of always guessing the set's more frequent label.
    pub majority: f64,
    /// Accuracy of guessing each lemma's more frequent label; absent when
    /// the set carries no words.
    pub lemma_majority: Option<f64>,
}

/// Accuracy of every probe on every set of the same layer.
pub fn cross_evaluate(
    probes: &[ProbeParams],
    sets: &[RepresentationSet],
    lemma: &dyn Fn(&str) -> String,
) -> Result<Vec<CrossEvalEntry>> {
    let mut out = Vec::new();
    for probe in probes {
        for set in sets.iter().filter(|s| s.layer == probe.layer) {
            out.push(CrossEvalEntry {
                probe_category: probe.category,
                set_category: set.category,
                layer: set.layer,
                accuracy: probe.accuracy(set)?,
                majority: set.majority_rate(),
                lemma_majority: lemma_majority(set, lemma),
            });
        }
    }
    Ok(out)
}

fn lemma_majority(set: &RepresentationSet, lemma: &dyn Fn(&str) -> String) -> Option<f64> {
    if set.words.is_empty() || set.n() == 0 {
        return None;
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (w, l) in set.words.iter().zip(&set.labels) {
        let e = counts.entry(lemma(w)).or_default();
        match l {
            NumberLabel::Singular => e.0 += 1,
            NumberLabel::Plural => e.1 += 1,
        }
    }
    let hits: usize = counts.values().map(|&(s, p)| s.max(p)).sum();
    Some(hits as f64 / set.n() as f64)
}

pub fn write_probe(path: impl AsRef<Path>, probe: &ProbeParams) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(probe)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_probe(path: impl AsRef<Path>) -> Result<ProbeParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let probe: ProbeParams = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if probe.theta.len() != probe.d || probe.theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::format(path, "theta length or values are invalid"));
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use NumberLabel::{Plural as P, Singular as S};

    fn set(rows: &[&[f32]], labels: &[NumberLabel]) -> RepresentationSet {
        let d = rows[0].len();
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let m = Array2::from_shape_vec((rows.len(), d), data).unwrap();
        RepresentationSet::new(m, labels.to_vec(), Category::Noun, 0).unwrap()
    }

    fn blobs() -> RepresentationSet {
        set(
            &[&[2.0, 1.0], &[3.0, 0.5], &[2.5, -1.0], &[-2.0, 0.3], &[-3.0, -0.2], &[-2.2, 1.1]],
            &[S, S, S, P, P, P],
        )
    }

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let b = blobs();
        let p = train_probe(&b, &b, &ProbeConfig::default()).unwrap();
        assert_eq!(p.dev_accuracy, Some(1.0));
        assert!(p.converged);
        assert!(p.final_loss < 1e-4);
    }

    #[test]
    fn zero_representations_predict_the_prior() {
        let zero: &[f32] = &[0.0, 0.0];
        let z = set(&[zero; 5], &[S, S, S, P, P]);
        let p = train_probe(&z, &z, &ProbeConfig::default()).unwrap();
        assert_eq!(p.iterations, 0);
        assert_eq!(p.predict(&z).unwrap(), vec![S; 5]);
        assert_eq!(p.accuracy(&z).unwrap(), 0.6);
    }

    #[test]
    fn flipped_labels_flip_the_direction() {
        let b = set(
            &[&[2.0, 1.0], &[0.5, 0.4], &[-1.0, 0.5], &[-2.0, 0.3], &[1.0, -0.2], &[-0.2, 1.1]],
            &[S, S, P, P, P, S],
        );
        let mut f = b.clone();
        f.labels = b.labels.iter().map(|l| l.flip()).collect();
        let p = train_probe(&b, &b, &ProbeConfig::default()).unwrap();
        let q = train_probe(&f, &f, &ProbeConfig::default()).unwrap();
        let c = cosine_matrix(&[p, q]).unwrap();
        assert!(c[[0, 1]] <= -0.99, "{}", c[[0, 1]]);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let s = set(&[&[1.0], &[2.0]], &[S, S]);
        assert!(matches!(
            train_probe(&s, &s, &ProbeConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn entropy_values() {
        assert!((v_entropy(&[S, P]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v_entropy(&[S, S, S]), 0.0);
        let mut labels = vec![S; 9];
        labels.push(P);
        let expected = -(0.9f64 * 0.9f64.ln() + 0.1f64 * 0.1f64.ln());
        assert!((v_entropy(&labels) - expected).abs() < 1e-12);
        assert!((expected - 0.3251).abs() < 1e-4);
    }

    fn manual(theta: Vec<f64>, bias: f64) -> ProbeParams {
        ProbeParams {
            category: Category::Noun,
            layer: 0,
            d: theta.len(),
            theta,
            bias,
            final_loss: 0.0,
            iterations: 0,
            converged: true,
            dev_accuracy: None,
        }
    }

    #[test]
    fn conditional_entropy_limits() {
        let b = blobs();
        let zero = manual(vec![0.0, 0.0], 0.0);
        assert!((v_conditional_entropy(&zero, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let sharp = manual(vec![1e4, 0.0], 0.0);
        assert!(v_conditional_entropy(&sharp, &b).unwrap() < 1e-12);
        let wrong = manual(vec![1.0, 0.0, 0.0], 0.0);
        assert!(matches!(v_conditional_entropy(&wrong, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn v_uncertainty_needs_two_labels() {
        let s = set(&[&[1.0], &[2.0]], &[S, S]);
        let p = manual(vec![1.0], 0.0);
        assert!(matches!(v_uncertainty(&p, &s), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn cosine_matrix_edge_cases() {
        let a = manual(vec![1.0, 2.0], 0.3);
        let b = manual(vec![-1.0, -2.0], 0.0);
        let m = cosine_matrix(&[a.clone(), b]).unwrap();
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[1, 1]], 1.0);
        assert!((m[[0, 1]] + 1.0).abs() < 1e-15);
        let z = manual(vec![0.0, 0.0], 1.0);
        assert!(matches!(cosine_matrix(&[a, z]), Err(Error::DegenerateProbe(_))));
    }

    #[test]
    fn cross_evaluation_baselines() {
        let mut b = blobs();
        b.words = ["cat", "cat", "dog", "cats", "dogs", "dogs"].iter().map(|s| s.to_string()).collect();
        let p = train_probe(&b, &b, &ProbeConfig::default()).unwrap();
        let lemma = |w: &str| w.trim_end_matches('s').to_string();
        let r = cross_evaluate(&[p.clone()], &[b.clone()], &lemma).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(Some(r[0].accuracy), p.dev_accuracy);
        assert_eq!(r[0].majority, 0.5);
        // cat: 2 sg 1 pl, dog: 1 sg 2 pl
        assert!((r[0].lemma_majority.unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn probe_file_round_trip() {
        let b = blobs();
        let p = train_probe(&b, &b, &ProbeConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        write_probe(&path, &p).unwrap();
        assert_eq!(read_probe(&path).unwrap(), p);
    }
}
