//! Reading labeled hidden states out of the model.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::{InterventionSpec, Model};
use crate::agreement::Intervention;
use crate::corpus::{AgreementInstance, NumberLabel};
use crate::error::{Error, Result};
use crate::repr::{Category, RepresentationSet};
use crate::vocab::{Vocab, MASK};

/// The instance's words with the target replaced by `[MASK]`.
pub fn mask_target(instance: &AgreementInstance) -> Vec<String> {
    let mut tokens = instance.tokens.clone();
    if let Some(t) = tokens.get_mut(instance.target_index) {
        *t = MASK.to_string();
    }
    tokens
}

/// Representations of `category` at a single `layer`.
pub fn collect_representations(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    category: Category,
    layer: usize,
) -> Result<RepresentationSet> {
    let mut sets = collect_representations_with(model, vocab, dataset, category, &[layer], &[])?;
    Ok(sets.remove(0))
}

/// Representations of `category` at each of `layers`, read from forward
/// passes carrying `interventions`. A projection at the read layer and
/// position is reflected in the returned vector.
pub fn collect_representations_with(
    model: &Model,
    vocab: &Vocab,
    dataset: &[AgreementInstance],
    category: Category,
    layers: &[usize],
    interventions: &[Intervention],
) -> Result<Vec<RepresentationSet>> {
    if dataset.is_empty() {
        return Err(Error::DegenerateData("cannot collect representations from an empty dataset".into()));
    }
    let n_layers = model.config().n_layers;
    if let Some(&bad) = layers.iter().find(|&&l| l > n_layers) {
        return Err(Error::Input(format!("layer {bad} outside 0..={n_layers}")));
    }
    let d = model.config().hidden_dim;

    // Mixed reads both the cue and the target of each sentence
    let sources = match category {
        Category::Mixed => vec![Category::Noun, Category::Verb],
        c => vec![c],
    };
    let masked = category == Category::MaskedVerb;
    // per instance: one vector per (source, layer)
    let per_instance: Vec<Vec<Vec<f32>>> = dataset
        .par_iter()
        .map(|inst| -> Result<Vec<Vec<f32>>> {
            let words = if masked { mask_target(inst) } else { inst.tokens.clone() };
            let tokens = vocab.encode(&words);
            let specs: Vec<_> = interventions.iter().map(|iv| iv.for_instance(inst)).collect();
            let trace = model.forward(&tokens, &specs)?;
            let mut vecs = Vec::with_capacity(sources.len() * layers.len());
            for src in &sources {
                let pos = source_position(inst, *src);
                for &layer in layers {
                    let mut v: Array1<f64> = trace.hidden[layer].row(pos).to_owned();
                    for spec in &specs {
                        if let InterventionSpec::ProjectRepresentation { layer: l, positions, matrix } = spec {
                            if *l == layer && positions.contains(&pos) {
                                v = matrix.dot(&v);
                            }
                        }
                    }
                    vecs.push(v.iter().map(|&x| x as f32).collect());
                }
            }
            Ok(vecs)
        })
        .collect::<Result<_>>()?;

    // flat row-major data per (layer, source)
    let mut rows: Vec<Vec<Vec<f32>>> = vec![vec![Vec::new(); sources.len()]; layers.len()];
    let mut meta: Vec<Vec<(usize, String, NumberLabel)>> = vec![Vec::new(); sources.len()];
    for (inst, vecs) in dataset.iter().zip(&per_instance) {
        for (si, src) in sources.iter().enumerate() {
            let pos = source_position(inst, *src);
            let label = match src {
                Category::Noun => inst.cue_number,
                _ => inst.target_number,
            };
            meta[si].push((pos, inst.tokens[pos].clone(), label));
            for li in 0..layers.len() {
                rows[li][si].extend_from_slice(&vecs[si * layers.len() + li]);
            }
        }
    }

    let keep = meta.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(layers.len());
    for (li, &layer) in layers.iter().enumerate() {
        let mut data = Vec::with_capacity(keep * sources.len() * d);
        let mut labels = Vec::new();
        let mut positions = Vec::new();
        let mut words = Vec::new();
        for si in 0..sources.len() {
            data.extend_from_slice(&rows[li][si][..keep * d]);
            for (pos, word, label) in meta[si].iter().take(keep) {
                labels.push(*label);
                positions.push(*pos);
                words.push(word.clone());
            }
        }
        let n = labels.len();
        out.push(RepresentationSet {
            matrix: Array2::from_shape_vec((n, d), data).expect("rows have width d"),
            labels,
            category,
            layer,
            positions,
            words,
        });
    }
    Ok(out)
}

fn source_position(inst: &AgreementInstance, source: Category) -> usize {
    match source {
        Category::Noun => inst.cue_index,
        _ => inst.target_index,
    }
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
        (Model::new(c).unwrap(), vocab, generate_corpus(&g, 40, 2).unwrap())
    }

    #[test]
    fn mask_target_replaces_only_the_target() {
        let (_, _, data) = fixture();
        let inst = &data[0];
        let m = mask_target(inst);
        for (i, (a, b)) in m.iter().zip(&inst.tokens).enumerate() {
            if i == inst.target_index {
                assert_eq!(a, MASK);
            } else {
                assert_eq!(a, b);
            }
        }
        let mut twice = inst.clone();
        twice.tokens = m.clone();
        assert_eq!(mask_target(&twice), m);
    }

    #[test]
    fn categories_read_the_right_positions() {
        let (model, vocab, data) = fixture();
        let nouns = collect_representations(&model, &vocab, &data, Category::Noun, 0).unwrap();
        assert_eq!(nouns.n(), data.len());
        for (i, inst) in data.iter().enumerate() {
            assert_eq!(nouns.positions[i], inst.cue_index);
            assert_eq!(nouns.labels[i], inst.cue_number);
            let id = vocab.id(&inst.tokens[inst.cue_index]).unwrap();
            let emb: Vec<f32> = model.token_embedding(id).iter().map(|&x| x as f32).collect();
            assert_eq!(nouns.matrix.row(i).to_vec(), emb);
        }
        let masked = collect_representations(&model, &vocab, &data, Category::MaskedVerb, 0).unwrap();
        let first = masked.matrix.row(0).to_owned();
        assert!(masked.matrix.rows().into_iter().all(|r| r == first));
    }

    #[test]
    fn mixed_is_balanced_union() {
        let (model, vocab, data) = fixture();
        let mixed = collect_representations(&model, &vocab, &data, Category::Mixed, 1).unwrap();
        assert_eq!(mixed.n(), 2 * data.len());
        assert_eq!(mixed.category, Category::Mixed);
    }

    #[test]
    fn empty_dataset_and_bad_layer_are_errors() {
        let (model, vocab, data) = fixture();
        assert!(matches!(
            collect_representations(&model, &vocab, &[], Category::Noun, 0),
            Err(Error::DegenerateData(_))
        ));
        assert!(collect_representations(&model, &vocab, &data, Category::Noun, 3).is_err());
    }
}
