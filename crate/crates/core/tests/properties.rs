//! Property tests for the invariants every module promises.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use uprobe_core::agreement::{na_eval, Intervention, PositionKind};
use uprobe_core::amnesic::{nullspace_projector, random_projector};
use uprobe_core::attention::{AttentionMaskSpec, MaskKind, MaskMode};
use uprobe_core::corpus::{generate_corpus, load_dataset, write_dataset, GrammarConfig, NumberLabel};
use uprobe_core::model::{InterventionSpec, Model, ModelConfig};
use uprobe_core::probes::{cosine_matrix, train_probe, v_information, ProbeConfig, ProbeParams};
use uprobe_core::repr::{Category, RepresentationSet};
use uprobe_core::vocab::Vocab;

fn small_model(seed: u64, n_layers: usize) -> (Model, Vocab) {
    let vocab = Vocab::from_grammar(&GrammarConfig::default()).unwrap();
    let mut c = ModelConfig::toy(vocab.len(), vocab.mask_id());
    c.n_layers = n_layers;
    c.hidden_dim = 16;
    c.ffn_dim = 24;
    c.n_heads = 2;
    c.seed = seed;
    (Model::new(c).unwrap(), vocab)
}

fn tokens_strategy(vocab_len: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..vocab_len as u32, 2..12)
}

fn reps(x: Vec<f32>, labels: Vec<NumberLabel>, d: usize) -> RepresentationSet {
    let n = labels.len();
    RepresentationSet::new(Array2::from_shape_vec((n, d), x).unwrap(), labels, Category::Noun, 0).unwrap()
}

fn label_vec(n: usize) -> impl Strategy<Value = Vec<NumberLabel>> {
    prop::collection::vec(prop::bool::ANY, n).prop_map(|bits| {
        bits.into_iter()
            .map(|b| if b { NumberLabel::Singular } else { NumberLabel::Plural })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_instances_are_self_consistent(seed in any::<u64>(), n in 1usize..120) {
        let g = GrammarConfig::default();
        let lex = g.lexicon().unwrap();
        let data = generate_corpus(&g, n, seed).unwrap();
        prop_assert_eq!(data.len(), n);
        for inst in &data {
            let (_, number, _) = lex.lookup(&inst.tokens[inst.target_index]).unwrap();
            prop_assert_eq!(number, inst.target_number);
            let mut swapped = inst.tokens.clone();
            swapped[inst.target_index] = inst.wrong_form().to_string();
            let changed = swapped.iter().zip(&inst.tokens).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, 1);
        }
    }

    #[test]
    fn dataset_round_trip_is_identity(seed in any::<u64>(), n in 1usize..60) {
        let data = generate_corpus(&GrammarConfig::default(), n, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &data).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), data);
    }

    #[test]
    fn attention_rows_are_stochastic_and_forward_is_pure(
        seed in 0u64..1000,
        tokens in tokens_strategy(40),
    ) {
        let (model, _) = small_model(seed, 2);
        let a = model.forward(&tokens, &[]).unwrap();
        let b = model.forward(&tokens, &[]).unwrap();
        prop_assert_eq!(&a.logits, &b.logits);
        prop_assert_eq!(&a.hidden, &b.hidden);
        for layer in &a.attention {
            for head in layer {
                for row in head.rows() {
                    prop_assert!((row.sum() - 1.0).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn masks_zero_exactly_their_entries(
        seed in 0u64..1000,
        tokens in tokens_strategy(40),
        cue_frac in 0.0f64..1.0,
        target_frac in 0.0f64..1.0,
        all in any::<bool>(),
        first in 0usize..2,
    ) {
        let (model, _) = small_model(seed, 2);
        let t = tokens.len();
        let cue = ((cue_frac * t as f64) as usize).min(t - 1);
        let mut target = ((target_frac * t as f64) as usize).min(t - 1);
        if target == cue {
            target = (cue + 1) % t;
        }
        let kind = if all { MaskKind::AllToCue } else { MaskKind::TargetToCue };
        let spec = AttentionMaskSpec { kind, cue, target, first_layer: first, last_layer: 1 };
        let iv = InterventionSpec::MaskAttention { spec, mode: MaskMode::PostSoftmax };
        let plain = model.forward(&tokens, &[]).unwrap();
        let masked = model.forward(&tokens, std::slice::from_ref(&iv)).unwrap();
        for l in first..=1 {
            for (h, head) in masked.attention[l].iter().enumerate() {
                let zeroed = head.iter().filter(|&&v| v == 0.0).count();
                let expected = if all { t } else { 1 };
                prop_assert_eq!(zeroed, expected);
                prop_assert_eq!(head[[target, cue]], 0.0);
                if l == first {
                    // inputs to the first masked block are untouched
                    for ((i, j), &v) in head.indexed_iter() {
                        let hit = if all { j == cue } else { i == target && j == cue };
                        if !hit {
                            prop_assert_eq!(v, plain.attention[l][h][[i, j]]);
                        }
                    }
                }
            }
        }
        let twice = model.forward(&tokens, &[iv.clone(), iv]).unwrap();
        prop_assert_eq!(&twice.logits, &masked.logits);
    }

    #[test]
    fn identity_masks_are_bit_identical(seed in 0u64..1000, tokens in tokens_strategy(40), first in 0usize..2) {
        let (model, _) = small_model(seed, 2);
        let spec = AttentionMaskSpec { kind: MaskKind::Identity, cue: 0, target: 1, first_layer: first, last_layer: 1 };
        for mode in [MaskMode::PostSoftmax, MaskMode::PostSoftmaxRenormalized, MaskMode::PreSoftmax] {
            let masked = model.forward(&tokens, &[InterventionSpec::MaskAttention { spec, mode }]).unwrap();
            let plain = model.forward(&tokens, &[]).unwrap();
            prop_assert_eq!(&masked.logits, &plain.logits);
        }
    }

    #[test]
    fn projection_leaves_earlier_states_alone(
        seed in 0u64..1000,
        tokens in tokens_strategy(40),
        layer in 0usize..3,
        theta in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        prop_assume!(theta.iter().any(|v| v.abs() > 1e-3));
        let (model, _) = small_model(seed, 2);
        let p = nullspace_projector(Array1::from(theta).view()).unwrap();
        let iv = InterventionSpec::ProjectRepresentation { layer, positions: vec![0], matrix: Arc::new(p) };
        let plain = model.forward(&tokens, &[]).unwrap();
        let hit = model.forward(&tokens, &[iv]).unwrap();
        for j in 0..=layer {
            prop_assert_eq!(&hit.hidden[j], &plain.hidden[j]);
        }
    }

    #[test]
    fn projectors_are_symmetric_idempotent_contractions(
        thetas in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..5),
        r in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let r = Array1::from(r);
        let mut composed: Array2<f64> = Array2::eye(6);
        for t in &thetas {
            let t = Array1::from(t.clone());
            prop_assume!(t.dot(&t) > 1e-6);
            let p = nullspace_projector(t.view()).unwrap();
            let pp = p.dot(&p);
            for ((i, j), &v) in p.indexed_iter() {
                prop_assert!((v - p[[j, i]]).abs() <= 1e-5);
                prop_assert!((pp[[i, j]] - v).abs() <= 1e-5);
            }
            composed = p.dot(&composed);
            let pr = composed.dot(&r);
            prop_assert!(pr.dot(&pr).sqrt() <= r.dot(&r).sqrt() + 1e-9);
        }
    }

    #[test]
    fn v_information_is_bounded(
        labels in label_vec(24),
        x in prop::collection::vec(-2.0f32..2.0, 24 * 3),
    ) {
        let set = reps(x, labels, 3);
        prop_assume!(set.has_both_labels());
        let probe = train_probe(&set, &set, &ProbeConfig::default()).unwrap();
        let v = v_information(&probe, &set).unwrap();
        prop_assert!(v.i_v >= 0.0);
        prop_assert!(v.i_v <= v.h_v + 1e-12);
        prop_assert!(v.h_v <= std::f64::consts::LN_2 + 1e-12);
        let u = v.u_v.unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn probe_decisions_are_scale_invariant_and_accuracy_counts_signs(
        labels in label_vec(30),
        x in prop::collection::vec(-2.0f32..2.0, 30 * 4),
        theta in prop::collection::vec(-2.0f64..2.0, 4),
        bias in -1.0f64..1.0,
    ) {
        let set = reps(x, labels, 4);
        let probe = ProbeParams {
            category: Category::Noun,
            layer: 0,
            d: 4,
            theta: theta.clone(),
            bias,
            final_loss: 0.0,
            iterations: 0,
            converged: true,
            dev_accuracy: None,
        };
        let scaled = ProbeParams {
            theta: theta.iter().map(|t| 7.0 * t).collect(),
            bias: 7.0 * bias,
            ..probe.clone()
        };
        prop_assert_eq!(probe.predict(&set).unwrap(), scaled.predict(&set).unwrap());
        let z = probe.scores(&set).unwrap();
        let disagree = z
            .iter()
            .zip(&set.labels)
            .filter(|(&z, &l)| (z > 0.0) != (l == NumberLabel::Singular))
            .count();
        let expected = 1.0 - disagree as f64 / set.n() as f64;
        prop_assert_eq!(probe.accuracy(&set).unwrap(), expected);
    }

    #[test]
    fn cosine_matrix_is_symmetric_with_unit_diagonal(
        thetas in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..6),
    ) {
        prop_assume!(thetas.iter().all(|t| t.iter().any(|v| v.abs() > 1e-3)));
        let probes: Vec<ProbeParams> = thetas
            .into_iter()
            .map(|theta| ProbeParams {
                category: Category::Verb,
                layer: 1,
                d: 5,
                theta,
                bias: 0.0,
                final_loss: 0.0,
                iterations: 0,
                converged: true,
                dev_accuracy: None,
            })
            .collect();
        let m = cosine_matrix(&probes).unwrap();
        for ((i, j), &v) in m.indexed_iter() {
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert_eq!(v, m[[j, i]]);
            if i == j {
                prop_assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn random_projectors_have_rank_d_minus_k(d in 2usize..12, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = ((k_frac * d as f64) as usize).min(d);
        let p = random_projector(d, k, seed).unwrap();
        let trace: f64 = (0..d).map(|i| p.composed[[i, i]]).sum();
        prop_assert!((trace - (d - k) as f64).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn na_eval_is_deterministic_and_consistent(seed in 0u64..100, data_seed in any::<u64>(), layer in 0usize..3) {
        let (model, vocab) = small_model(seed, 2);
        let data = generate_corpus(&GrammarConfig::default(), 40, data_seed).unwrap();
        let base = na_eval(&model, &vocab, &data, &[]).unwrap();
        prop_assert_eq!(&na_eval(&model, &vocab, &data, &[]).unwrap(), &base);
        let summed: usize = base.per_distance.values().map(|b| b.correct).sum();
        let total: usize = base.per_distance.values().map(|b| b.n).sum();
        prop_assert_eq!(total, base.n);
        prop_assert_eq!(summed as f64 / total as f64, base.accuracy);

        let p = random_projector(16, 4, seed).unwrap();
        let iv = Intervention::Project { layer, position: PositionKind::Cue, matrix: Arc::new(p.composed) };
        let hit = na_eval(&model, &vocab, &data, &[iv]).unwrap();
        prop_assert_eq!(hit.n, base.n);
        prop_assert_eq!(hit.skipped, base.skipped);

        let bad = Intervention::Mask { kind: MaskKind::AllToCue, first_layer: 2, last_layer: 2, mode: MaskMode::PostSoftmax };
        prop_assert!(na_eval(&model, &vocab, &data, &[bad]).is_err());
        let bad = Intervention::Project { layer: 3, position: PositionKind::Target, matrix: Arc::new(Array2::eye(16)) };
        prop_assert!(na_eval(&model, &vocab, &data, &[bad]).is_err());
    }
}
