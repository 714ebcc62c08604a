//! Number-agreement evaluation under interventions.
//!
//! An instance succeeds when, with the target masked, the logit of the
//! verb form agreeing with the cue is strictly larger than the other form's.
//! Ties are failures and are counted separately.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amnesic::{random_projector, AmnesicProjector};
use crate::attention::{AttentionMaskSpec, MaskKind, MaskMode};
use crate::corpus::{label_stats, AgreementInstance};
use crate::error::{Error, Result};
use crate::model::{collect_representations_with, mask_target, InterventionSpec, Model};
use crate::probes::{train_probe, ProbeConfig};
use crate::repr::Category;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    Cue,
    Target,
}

impl PositionKind {
    pub fn of(self, inst: &AgreementInstance) -> usize {
        match self {
            PositionKind::Cue => inst.cue_index,
            PositionKind::Target => inst.target_index,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositionKind::Cue => "cue",
            PositionKind::Target => "target",
        }
    }
}

impl fmt::Display for PositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(PositionKind::Cue),
            "target" => Ok(PositionKind::Target),
            other => Err(Error::Config(format!("unknown position kind {other:?}"))),
        }
    }
}

/// An intervention described relative to an instance's cue and target,
/// resolved to concrete positions per sentence.
#[derive(Debug, Clone)]
pub enum Intervention {
    Project {
        layer: usize,
        position: PositionKind,
        matrix: Arc<Array2<f64>>,
    },
    Mask {
        kind: MaskKind,
        first_layer: usize,
        last_layer: usize,
        mode: MaskMode,
    },
}

impl Intervention {
    pub fn for_instance(&self, inst: &AgreementInstance) -> InterventionSpec {
        match self {
            Intervention::Project { layer, position, matrix } => InterventionSpec::ProjectRepresentation {
                layer: *layer,
                positions: vec![position.of(inst)],
                matrix: Arc::clone(matrix),
            },
            Intervention::Mask {
                kind,
                first_layer,
                last_layer,
                mode,
            } => InterventionSpec::MaskAttention {
                spec: AttentionMaskSpec {
                    kind: *kind,
                    cue: inst.cue_index,
                    target: inst.target_index,
                    first_layer: *first_layer,
                    last_layer: *last_layer,
                },
                mode: *mode,
            },
        }
    }

    fn validate(&self, model: &Model) -> Result<()> {
        let c = model.config();
        match self {
            Intervention::Project { layer, matrix, .. } => {
                if *layer > c.n_layers {
                    return Err(Error::Intervention(format!(
                        "projection layer {layer} outside 0..={}",
                        c.n_layers
                    )));
                }
                if matrix.dim() != (c.hidden_dim, c.hidden_dim) {
                    return Err(Error::Intervention(format!(
                        "projection matrix is {:?}, model width is {}",
                        matrix.dim(),
                        c.hidden_dim
                    )));
                }
            }
            Intervention::Mask {
                first_layer,
                last_layer,
                ..
            } => {
                if first_layer > last_layer || *last_layer >= c.n_layers {
                    return Err(Error::Intervention(format!(
                        "attention layer range [{first_layer}, {last_layer}] invalid for {} blocks",
                        c.n_layers
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub n: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NAResult {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    /// Evaluated instances whose two logits were exactly equal.
    pub ties: usize,
    /// Instances not evaluated (out-of-vocabulary candidate or too long).
    pub skipped: usize,
    /// Keyed by `|target_index − cue_index|`.
    pub per_distance: BTreeMap<usize, Bucket>,
    pub per_attractors: BTreeMap<usize, Bucket>,
}

/// NA accuracy of `model` on `dataset` with `interventions` applied.
pub fn na_eval(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    interventions: &[Intervention],
) -> Result<NAResult> {
    for iv in interventions {
        iv.validate(model)?;
    }
    let max_len = model.config().max_seq_len;
    // per-instance outcomes in parallel, reduced in dataset order
    let outcomes: Vec<Option<(bool, bool)>> = dataset
        .par_iter()
        .map(|inst| -> Result<Option<(bool, bool)>> {
            let (Some(good), Some(bad)) = (vocab.id(inst.correct_form()), vocab.id(inst.wrong_form())) else {
                return Ok(None);
            };
            if inst.tokens.len() > max_len {
                return Ok(None);
            }
            let tokens = vocab.encode(&mask_target(inst));
            let specs: Vec<_> = interventions.iter().map(|iv| iv.for_instance(inst)).collect();
            let trace = model.forward(&tokens, &specs)?;
            let row = trace.logits.row(inst.target_index);
            let (g, b) = (row[good as usize], row[bad as usize]);
            Ok(Some((g > b, g == b)))
        })
        .collect::<Result<_>>()?;
    let mut out = NAResult::default();
    for (inst, outcome) in dataset.iter().zip(outcomes) {
        let Some((hit, tie)) = outcome else {
            out.skipped += 1;
            continue;
        };
        out.ties += usize::from(tie);
        out.n += 1;
        out.correct += usize::from(hit);
        for bucket in [
            out.per_distance.entry(inst.distance()).or_default(),
            out.per_attractors.entry(inst.attractor_count).or_default(),
        ] {
            bucket.n += 1;
            bucket.correct += usize::from(hit);
        }
    }
    if out.skipped > 0 {
        log::warn!("skipped {} of {} instances", out.skipped, dataset.len());
    }
    out.accuracy = if out.n == 0 { 0.0 } else { out.correct as f64 / out.n as f64 };
    Ok(out)
}

/// Accuracy of always predicting the more frequent cue number.
pub fn majority_accuracy(dataset: &[AgreementInstance]) -> f64 {
    label_stats(dataset).majority_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub baseline: NAResult,
    pub intervened: NAResult,
    pub drop: f64,
    pub majority_gap: f64,
}

impl DropReport {
    pub fn new(baseline: NAResult, intervened: NAResult, majority: f64) -> Self {
        Self {
            drop: baseline.accuracy - intervened.accuracy,
            majority_gap: baseline.accuracy - majority,
            baseline,
            intervened,
        }
    }
}

/// One row of an amnesic sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer: usize,
    /// Category the projector was trained on.
    pub category: Option<Category>,
    pub position_kind: PositionKind,
    pub baseline_acc: f64,
    pub intervened_acc: f64,
    pub drop: f64,
    pub random_control_drop: f64,
    pub k_directions: usize,
    pub majority_gap: f64,
}

/// How the random controls are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub seed: u64,
    /// Independent random projectors averaged per row.
    pub draws: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { seed: 0, draws: 5 }
    }
}

/// Random control for `proj`: as many random directions, same layer.
/// Draw `t` of a control configuration is reproducible on its own.
pub fn matched_random(proj: &AmnesicProjector, control: &ControlConfig, t: usize) -> Result<AmnesicProjector> {
    let seed = control
        .seed
        .wrapping_add(1_000_003u64.wrapping_mul(proj.layer as u64))
        .wrapping_add(t as u64);
    let mut random = random_projector(proj.d(), proj.k(), seed)?;
    random.layer = proj.layer;
    Ok(random)
}

fn project_at(layer: usize, position: PositionKind, matrix: &Array2<f64>) -> Intervention {
    Intervention::Project {
        layer,
        position,
        matrix: Arc::new(matrix.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    baseline: &NAResult,
    majority: f64,
    proj: &AmnesicProjector,
    position: PositionKind,
    control: &ControlConfig,
) -> Result<SweepRow> {
    let d = model.config().hidden_dim;
    if proj.d() != d {
        return Err(Error::Shape(format!("projector is {}-dimensional, model width is {d}", proj.d())));
    }
    let hit = na_eval(model, vocab, dataset, &[project_at(proj.layer, position, &proj.composed)])?;
    let report = DropReport::new(baseline.clone(), hit, majority);

    let draws = control.draws.max(1);
    let mut control_drop = 0.0;
    for t in 0..draws {
        let random = matched_random(proj, control, t)?;
        let r = na_eval(model, vocab, dataset, &[project_at(proj.layer, position, &random.composed)])?;
        control_drop += baseline.accuracy - r.accuracy;
    }
    control_drop /= draws as f64;
    log::info!(
        "{} projector at {position}, layer {}: drop {:.4} (random control {:.4}, k = {})",
        proj.category.map_or("random", |c| c.as_str()),
        proj.layer,
        report.drop,
        control_drop,
        proj.k()
    );
    Ok(SweepRow {
        layer: proj.layer,
        category: proj.category,
        position_kind: position,
        baseline_acc: report.baseline.accuracy,
        intervened_acc: report.intervened.accuracy,
        drop: report.drop,
        random_control_drop: control_drop,
        k_directions: proj.k(),
        majority_gap: report.majority_gap,
    })
}

/// NA drop from applying each projector at its own layer and the given
/// position, alongside a random projector removing as many directions.
pub fn amnesic_na_sweep(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    projectors: &[AmnesicProjector],
    position: PositionKind,
    control: &ControlConfig,
) -> Result<Vec<SweepRow>> {
    let baseline = na_eval(model, vocab, dataset, &[])?;
    let majority = majority_accuracy(dataset);
    projectors
        .iter()
        .map(|p| sweep_row(model, vocab, dataset, &baseline, majority, p, position, control))
        .collect()
}

/// Every projector at every position.
pub fn cross_category_sweep(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    projectors: &[AmnesicProjector],
    positions: &[PositionKind],
    control: &ControlConfig,
) -> Result<Vec<SweepRow>> {
    let baseline = na_eval(model, vocab, dataset, &[])?;
    let majority = majority_accuracy(dataset);
    let mut rows = Vec::new();
    for p in projectors {
        for &pos in positions {
            rows.push(sweep_row(model, vocab, dataset, &baseline, majority, p, pos, control)?);
        }
    }
    for r in rows.iter().filter(|r| r.drop.abs() <= INERT_TOLERANCE) {
        log::info!(
            "inert: {} projector at {}, layer {} (drop {:.4})",
            r.category.map_or("random", |c| c.as_str()),
            r.position_kind,
            r.layer,
            r.drop
        );
    }
    Ok(rows)
}

/// Drops within this distance of zero count as inert.
pub const INERT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoLossOptions {
    pub probe: ProbeConfig,
    /// Train fresh probes on intervened representations (otherwise reuse
    /// the unintervened probe of each layer).
    pub retrain: bool,
}

impl Default for InfoLossOptions {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            retrain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoLossMatrix {
    pub probe_category: Category,
    pub position_kind: PositionKind,
    /// Probe dev accuracy at every hidden layer without intervention.
    pub baseline: Vec<f64>,
    /// `loss[i][j]` for a projection at layer `i` read at layer `j ≥ i`.
    pub loss: Vec<Vec<Option<f64>>>,
    /// Matching intervened accuracies.
    pub intervened: Vec<Vec<Option<f64>>>,
    /// Directions removed by the projector applied at each row.
    pub k_directions: Vec<Option<usize>>,
}

/// Probe-accuracy drop at every layer `j ≥ i` after applying each projector
/// at its layer `i` and `position`. Probes read `probe_category`.
#[allow(clippy::too_many_arguments)]
pub fn info_loss_matrix(
    model: &Model,
    vocab: &Vocab,
    train: &[AgreementInstance],
    dev: &[AgreementInstance],
    projectors: &[AmnesicProjector],
    position: PositionKind,
    probe_category: Category,
    opts: &InfoLossOptions,
) -> Result<InfoLossMatrix> {
    let n_hidden = model.config().n_layers + 1;
    let all: Vec<usize> = (0..n_hidden).collect();
    let base_train = collect_representations_with(model, vocab, train, probe_category, &all, &[])?;
    let base_dev = collect_representations_with(model, vocab, dev, probe_category, &all, &[])?;
    let mut base_probes = Vec::with_capacity(n_hidden);
    let mut baseline = Vec::with_capacity(n_hidden);
    for (t, d) in base_train.iter().zip(&base_dev) {
        let p = train_probe(t, d, &opts.probe)?;
        baseline.push(p.dev_accuracy.unwrap_or(0.0));
        base_probes.push(p);
    }

    let mut loss = vec![vec![None; n_hidden]; n_hidden];
    let mut intervened = vec![vec![None; n_hidden]; n_hidden];
    let mut k_directions = vec![None; n_hidden];
    for proj in projectors {
        let i = proj.layer;
        if i >= n_hidden {
            return Err(Error::Intervention(format!("projector layer {i} outside 0..{n_hidden}")));
        }
        let iv = [project_at(i, position, &proj.composed)];
        let layers: Vec<usize> = (i..n_hidden).collect();
        let tr = collect_representations_with(model, vocab, train, probe_category, &layers, &iv)?;
        let dv = collect_representations_with(model, vocab, dev, probe_category, &layers, &iv)?;
        for ((j, t), d) in layers.iter().copied().zip(&tr).zip(&dv) {
            let acc = if opts.retrain {
                // a fully erased layer may leave a single usable class only
                match train_probe(t, d, &opts.probe) {
                    Ok(p) => p.dev_accuracy.unwrap_or(0.0),
                    Err(Error::DegenerateData(_)) => d.majority_rate(),
                    Err(e) => return Err(e),
                }
            } else {
                base_probes[j].accuracy(d)?
            };
            intervened[i][j] = Some(acc);
            loss[i][j] = Some(baseline[j] - acc);
        }
        k_directions[i] = Some(proj.k());
    }
    Ok(InfoLossMatrix {
        probe_category,
        position_kind: position,
        baseline,
        loss,
        intervened,
        k_directions,
    })
}

/// NA results per linear distance, one column per intervention set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    /// Column labels; the first is the unintervened baseline `"none"`.
    pub columns: Vec<String>,
    /// Populated distance buckets, ascending.
    pub distances: Vec<usize>,
    pub results: Vec<NAResult>,
}

impl DistanceTable {
    pub fn cell(&self, distance: usize, column: usize) -> Option<Bucket> {
        self.results.get(column)?.per_distance.get(&distance).copied()
    }

    /// Accuracy drop relative to the baseline column.
    pub fn drop(&self, distance: usize, column: usize) -> Option<f64> {
        let base = self.cell(distance, 0)?;
        let c = self.cell(distance, column)?;
        Some(base.accuracy() - c.accuracy())
    }
}

pub fn distance_stratified(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    columns: &[(String, Vec<Intervention>)],
) -> Result<DistanceTable> {
    let baseline = na_eval(model, vocab, dataset, &[])?;
    let distances: Vec<usize> = baseline.per_distance.keys().copied().collect();
    if let (Some(&lo), Some(&hi)) = (distances.first(), distances.last()) {
        let missing: Vec<usize> = (lo..=hi).filter(|d| !baseline.per_distance.contains_key(d)).collect();
        if !missing.is_empty() {
            log::info!("distance buckets without instances omitted: {missing:?}");
        }
    }
    let mut names = vec!["none".to_string()];
    let mut results = vec![baseline];
    for (name, ivs) in columns {
        names.push(name.clone());
        results.push(na_eval(model, vocab, dataset, ivs)?);
    }
    Ok(DistanceTable {
        columns: names,
        distances,
        results,
    })
}

/// Sample Pearson correlation; `None` when either side is constant or the
/// lengths differ.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GrammarConfig};
    use crate::model::ModelConfig;

    fn fixture() -> (Model, Vocab, Vec<AgreementInstance>) {
        let g = GrammarConfig::default();
        let vocab = Vocab::from_grammar(&g).unwrap();
        let mut c = ModelConfig::toy(vocab.len(), vocab.mask_id());
        c.hidden_dim = 16;
        c.ffn_dim = 16;
        (Model::new(c).unwrap(), vocab, generate_corpus(&g, 60, 4).unwrap())
    }

    #[test]
    fn buckets_sum_to_total() {
        let (m, v, data) = fixture();
        let r = na_eval(&m, &v, &data, &[]).unwrap();
        assert_eq!(r.n, data.len());
        let (c, n) = r
            .per_distance
            .values()
            .fold((0, 0), |(c, n), b| (c + b.correct, n + b.n));
        assert_eq!((c, n), (r.correct, r.n));
        assert_eq!(c as f64 / n as f64, r.accuracy);
        assert_eq!(r.per_attractors.values().map(|b| b.n).sum::<usize>(), r.n);
    }

    #[test]
    fn identity_mask_leaves_accuracy_unchanged() {
        let (m, v, data) = fixture();
        let base = na_eval(&m, &v, &data, &[]).unwrap();
        let id = Intervention::Mask {
            kind: MaskKind::Identity,
            first_layer: 0,
            last_layer: 1,
            mode: MaskMode::PostSoftmax,
        };
        assert_eq!(na_eval(&m, &v, &data, &[id]).unwrap(), base);
    }

    #[test]
    fn impossible_layers_are_rejected() {
        let (m, v, data) = fixture();
        let mask = Intervention::Mask {
            kind: MaskKind::AllToCue,
            first_layer: 2,
            last_layer: 2,
            mode: MaskMode::PostSoftmax,
        };
        assert!(matches!(na_eval(&m, &v, &data, &[mask]), Err(Error::Intervention(_))));
        let proj = project_at(3, PositionKind::Cue, &Array2::eye(16));
        assert!(matches!(na_eval(&m, &v, &data, &[proj]), Err(Error::Intervention(_))));
    }

    #[test]
    fn out_of_vocabulary_candidates_are_skipped() {
        let (m, v, mut data) = fixture();
        data[0].target_pl_form = "zzz".into();
        data[0].target_sg_form = "zzzs".into();
        let r = na_eval(&m, &v, &data, &[]).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.n, data.len() - 1);
    }

    #[test]
    fn pearson_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[0.0]), None);
    }

    #[test]
    fn distance_table_baseline_matches_na_eval() {
        let (m, v, data) = fixture();
        let t = distance_stratified(&m, &v, &data, &[]).unwrap();
        let base = na_eval(&m, &v, &data, &[]).unwrap();
        let total: usize = t.distances.iter().map(|&d| t.cell(d, 0).unwrap().correct).sum();
        assert_eq!(total, base.correct);
    }
}
