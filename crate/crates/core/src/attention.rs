//! Attention-mask interventions and their layer sweeps.
//!
//! Attention layers are indexed `0..n_layers` over transformer blocks, unlike
//! hidden states which run `0..=n_layers`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::agreement::{distance_stratified, na_eval, DistanceTable, Intervention, NAResult};
use crate::corpus::AgreementInstance;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Cut only the target's attention to the cue.
    TargetToCue,
    /// Cut every position's attention to the cue (the cue's key column).
    AllToCue,
    Identity,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::TargetToCue => "target_to_cue",
            MaskKind::AllToCue => "all_to_cue",
            MaskKind::Identity => "identity",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target_to_cue" | "target-to-cue" => Ok(MaskKind::TargetToCue),
            "all_to_cue" | "all-to-cue" => Ok(MaskKind::AllToCue),
            "identity" => Ok(MaskKind::Identity),
            other => Err(Error::Config(format!("unknown mask kind {other:?}"))),
        }
    }
}

/// How a binary mask is combined with the attention scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Multiply post-softmax weights by the mask; rows no longer sum to one.
    #[default]
    PostSoftmax,
    /// Multiply post-softmax weights, then rescale rows to sum to one.
    PostSoftmaxRenormalized,
    /// Set masked scores to −∞ before the softmax.
    PreSoftmax,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post_softmax" | "post-softmax" => Ok(MaskMode::PostSoftmax),
            "post_softmax_renormalized" | "renormalized" => Ok(MaskMode::PostSoftmaxRenormalized),
            "pre_softmax" | "pre-softmax" => Ok(MaskMode::PreSoftmax),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMaskSpec {
    pub kind: MaskKind,
    pub cue: usize,
    pub target: usize,
    /// Inclusive block range.
    pub first_layer: usize,
    pub last_layer: usize,
}

impl AttentionMaskSpec {
    pub fn validate(&self, n_layers: usize, len: usize) -> Result<()> {
        if self.first_layer > self.last_layer || self.last_layer >= n_layers {
            return Err(Error::Intervention(format!(
                "attention layer range [{}, {}] invalid for {n_layers} blocks",
                self.first_layer, self.last_layer
            )));
        }
        if self.cue >= len || self.target >= len {
            return Err(Error::Intervention(format!(
                "mask positions (cue {}, target {}) outside sequence of length {len}",
                self.cue, self.target
            )));
        }
        Ok(())
    }
}

/// The `T × T` binary mask for `spec`.
pub fn build_mask(spec: &AttentionMaskSpec, len: usize) -> Result<Array2<f64>> {
    if spec.cue >= len || spec.target >= len {
        return Err(Error::Intervention(format!(
            "mask positions (cue {}, target {}) outside sequence of length {len}",
            spec.cue, spec.target
        )));
    }
    Ok(build_mask_unchecked(spec, len))
}

pub(crate) fn build_mask_unchecked(spec: &AttentionMaskSpec, len: usize) -> Array2<f64> {
    let mut m = Array2::ones((len, len));
    match spec.kind {
        MaskKind::TargetToCue => m[[spec.target, spec.cue]] = 0.0,
        MaskKind::AllToCue => m.column_mut(spec.cue).fill(0.0),
        MaskKind::Identity => {}
    }
    m
}

/// One `(i, j)` cell of a range sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeCell {
    pub i: usize,
    pub j: usize,
    pub accuracy: f64,
    pub drop: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSweep {
    pub kind: MaskKind,
    pub n_layers: usize,
    pub baseline: NAResult,
    /// Cells with `i <= j`, row-major.
    pub cells: Vec<RangeCell>,
}

impl RangeSweep {
    pub fn cell(&self, i: usize, j: usize) -> Option<&RangeCell> {
        self.cells.iter().find(|c| c.i == i && c.j == j)
    }

    /// `n_layers × n_layers` drop matrix; entries below the diagonal are
    /// `None`.
    pub fn drop_matrix(&self) -> Vec<Vec<Option<f64>>> {
        let mut m = vec![vec![None; self.n_layers]; self.n_layers];
        for c in &self.cells {
            m[c.i][c.j] = Some(c.drop);
        }
        m
    }
}

/// NA accuracy drop for the mask applied over every block range `[i, j]`.
pub fn range_sweep(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    kind: MaskKind,
    mode: MaskMode,
) -> Result<RangeSweep> {
    let n_layers = model.config().n_layers;
    let baseline = na_eval(model, vocab, dataset, &[])?;
    let mut cells = Vec::new();
    for i in 0..n_layers {
        for j in i..n_layers {
            let iv = Intervention::Mask {
                kind,
                first_layer: i,
                last_layer: j,
                mode,
            };
            let r = na_eval(model, vocab, dataset, &[iv])?;
            log::debug!("{kind} [{i}, {j}]: accuracy {:.4}", r.accuracy);
            cells.push(RangeCell {
                i,
                j,
                accuracy: r.accuracy,
                drop: baseline.accuracy - r.accuracy,
                n: r.n,
            });
        }
    }
    Ok(RangeSweep {
        kind,
        n_layers,
        baseline,
        cells,
    })
}

/// Per-distance results for cuts at `{l}`, `[l, L-1]` and `[0, l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triptych {
    pub kind: MaskKind,
    pub single: DistanceTable,
    pub to_last: DistanceTable,
    pub from_first: DistanceTable,
}

pub fn triptych_sweep(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    kind: MaskKind,
    mode: MaskMode,
) -> Result<Triptych> {
    let n_layers = model.config().n_layers;
    let table = |range: &dyn Fn(usize) -> (usize, usize)| {
        let columns: Vec<(String, Vec<Intervention>)> = (0..n_layers)
            .map(|l| {
                let (first_layer, last_layer) = range(l);
                (
                    format!("{first_layer}-{last_layer}"),
                    vec![Intervention::Mask {
                        kind,
                        first_layer,
                        last_layer,
                        mode,
                    }],
                )
            })
            .collect();
        distance_stratified(model, vocab, dataset, &columns)
    };
    Ok(Triptych {
        kind,
        single: table(&|l| (l, l))?,
        to_last: table(&|l| (l, n_layers - 1))?,
        from_first: table(&|l| (0, l))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: MaskKind, cue: usize, target: usize) -> AttentionMaskSpec {
        AttentionMaskSpec {
            kind,
            cue,
            target,
            first_layer: 0,
            last_layer: 0,
        }
    }

    #[test]
    fn target_to_cue_zeroes_one_entry() {
        let m = build_mask(&spec(MaskKind::TargetToCue, 1, 2), 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if (i, j) == (2, 1) { 0.0 } else { 1.0 };
                assert_eq!(m[[i, j]], expected);
            }
        }
    }

    #[test]
    fn all_to_cue_zeroes_the_cue_column() {
        let m = build_mask(&spec(MaskKind::AllToCue, 0, 2), 3).unwrap();
        assert!(m.column(0).iter().all(|&v| v == 0.0));
        assert_eq!(m.sum(), 6.0);
    }

    #[test]
    fn identity_is_all_ones() {
        let m = build_mask(&spec(MaskKind::Identity, 0, 1), 5).unwrap();
        assert_eq!(m.sum(), 25.0);
    }

    #[test]
    fn out_of_bounds_positions_are_rejected() {
        assert!(build_mask(&spec(MaskKind::TargetToCue, 4, 1), 4).is_err());
        assert!(build_mask(&spec(MaskKind::AllToCue, 0, 9), 4).is_err());
    }

    #[test]
    fn layer_range_validation() {
        let mut s = spec(MaskKind::AllToCue, 0, 1);
        assert!(s.validate(2, 3).is_ok());
        s.last_layer = 2;
        assert!(s.validate(2, 3).is_err());
        s.first_layer = 2;
        s.last_layer = 1;
        assert!(s.validate(4, 3).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [MaskKind::TargetToCue, MaskKind::AllToCue, MaskKind::Identity] {
            assert_eq!(k.as_str().parse::<MaskKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }
}
