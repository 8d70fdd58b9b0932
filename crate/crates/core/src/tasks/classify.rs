use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedTree;
use crate::deptree::{EdgeType, ROOT};
use crate::error::{Error, Result};
use crate::nncore::{zeros_like, AdaGrad, ParamSet, RectifierClassifier, DEFAULT_HIDDEN};
use crate::treelm::{trace_tree, ModelParams, TraceOptions, TreeLmConfig};

pub const CLASSIFIER_MAGIC: &[u8; 8] = b"TLMCLSF1";

/// One labelled example: `[H[:,v]; W_ho[w_v,:]]` and whether node `v`
/// has the queried dependent.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierRow {
    pub features: Vec<f64>,
    pub label: bool,
}

/// Add-Left, Add-Right, Add-Nx-Left and Add-Nx-Right, indexed by
/// [`EdgeType::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierBundle {
    pub classifiers: [RectifierClassifier; 4],
    /// Hidden size `d` of the language model; features have width `2d`.
    pub model_hidden: usize,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    model_hidden: usize,
    classifier_hidden: usize,
    tensors: Vec<(String, [usize; 2])>,
}

impl ClassifierBundle {
    pub fn init<R: Rng + ?Sized>(model_hidden: usize, hidden: usize, rng: &mut R) -> Self {
        ClassifierBundle {
            classifiers: std::array::from_fn(|_| RectifierClassifier::init(2 * model_hidden, hidden, rng)),
            model_hidden,
        }
    }

    /// Classifiers that always answer `value`, regardless of the input.
    pub fn constant(model_hidden: usize, value: bool) -> Self {
        let mut c = RectifierClassifier::zeros(2 * model_hidden, 1);
        c.b2.set(0, 0, if value { 1e3 } else { -1e3 });
        ClassifierBundle {
            classifiers: std::array::from_fn(|_| c.clone()),
            model_hidden,
        }
    }

    pub fn get(&self, edge: EdgeType) -> &RectifierClassifier {
        &self.classifiers[edge.index()]
    }

    pub fn check(&self, cfg: &TreeLmConfig) -> Result<()> {
        if self.model_hidden != cfg.hidden || self.classifiers.iter().any(|c| c.input_size() != 2 * cfg.hidden) {
            return Err(Error::Config(format!(
                "classifiers expect hidden size {}, model has {}",
                self.model_hidden, cfg.hidden
            )));
        }
        Ok(())
    }

    pub fn features(params: &ModelParams, h: &[f64], word: u32) -> Vec<f64> {
        let mut x = h.to_vec();
        x.extend_from_slice(params.out.row(word as usize));
        x
    }

    pub fn prob(&self, edge: EdgeType, x: &[f64]) -> f64 {
        self.get(edge).predict(x)
    }

    /// Fraction of rows classified correctly at threshold 0.5.
    pub fn accuracy(&self, edge: EdgeType, rows: &[ClassifierRow]) -> f64 {
        let c = self.get(edge);
        let ok = rows.iter().filter(|r| (c.predict(&r.features) > 0.5) == r.label).count();
        ok as f64 / rows.len().max(1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors: Vec<(String, [usize; 2])> = EdgeType::ALL
            .iter()
            .flat_map(|e| {
                self.get(*e)
                    .tensors()
                    .into_iter()
                    .map(move |(n, t)| (format!("{}.{n}", e.name()), [t.rows(), t.cols()]))
            })
            .collect();
        let header = BundleHeader {
            model_hidden: self.model_hidden,
            classifier_hidden: self.classifiers[0].w1.rows(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = CLASSIFIER_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for c in &self.classifiers {
            for (_, t) in c.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("classifier bundle: {m}"));
        if bytes.len() < 16 || &bytes[..8] != CLASSIFIER_MAGIC {
            return Err(bad("missing TLMCLSF1 magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        let header: BundleHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut bundle = ClassifierBundle {
            classifiers: std::array::from_fn(|_| RectifierClassifier::zeros(2 * header.model_hidden, header.classifier_hidden)),
            model_hidden: header.model_hidden,
        };
        let mut payload = bytes[16 + len..].chunks_exact(8);
        let mut names = header.tensors.iter();
        for (e, c) in EdgeType::ALL.iter().zip(&mut bundle.classifiers) {
            let expected: Vec<(String, [usize; 2])> = c
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("{}.{n}", e.name()), [t.rows(), t.cols()]))
                .collect();
            for (want, t) in expected.iter().zip(c.tensors_mut()) {
                if names.next() != Some(want) {
                    return Err(bad(&format!("tensor manifest does not match at {}", want.0)));
                }
                for v in t.data_mut() {
                    let chunk = payload.next().ok_or_else(|| bad("truncated payload"))?;
                    *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                    if !v.is_finite() {
                        return Err(bad("non-finite weight"));
                    }
                }
            }
        }
        if names.next().is_some() || payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(bad("trailing data"));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ClassifierBundle::from_bytes(&bytes)
    }
}

/// Feature rows read off gold trees, indexed by [`EdgeType::index`].
///
/// Every token yields an Add-Left and an Add-Right row. Add-Nx-Left rows
/// come only from left dependents and Add-Nx-Right rows only from right
/// dependents of a token, since those are the only nodes the generator
/// queries. ROOT yields no rows: it always has exactly one dependent.
pub fn classifier_rows(params: &ModelParams, cfg: &TreeLmConfig, trees: &[EncodedTree]) -> Result<[Vec<ClassifierRow>; 4]> {
    let mut rows: [Vec<ClassifierRow>; 4] = Default::default();
    for t in trees {
        let trace = trace_tree(params, cfg, t, TraceOptions::states_only())?;
        let tree = &t.tree;
        for v in 1..=tree.len() {
            let x = ClassifierBundle::features(params, trace.hidden(v), t.ids[v]);
            let h = tree.head(v);
            let mut push = |edge: EdgeType, label: bool| {
                rows[edge.index()].push(ClassifierRow {
                    features: x.clone(),
                    label,
                })
            };
            push(EdgeType::Left, !tree.left_deps(v).is_empty());
            push(EdgeType::Right, !tree.right_deps(v).is_empty());
            if v < h {
                let deps = tree.left_deps(h);
                push(EdgeType::NxLeft, deps.last() != Some(&v));
            } else if h != ROOT {
                let deps = tree.right_deps(h);
                push(EdgeType::NxRight, deps.last() != Some(&v));
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            hidden: DEFAULT_HIDDEN,
            lr: 0.01,
            epochs: 20,
            batch_size: 1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrainReport {
    /// Per classifier, indexed by [`EdgeType::index`].
    pub rows: [usize; 4],
    pub positives: [usize; 4],
    pub final_loss: [f64; 4],
    pub train_accuracy: [f64; 4],
    /// Accuracy of always predicting the more frequent label.
    pub majority_accuracy: [f64; 4],
}

fn train_one(rows: &[ClassifierRow], c: &mut RectifierClassifier, config: &ClassifierTrainConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdaGrad::new(config.lr);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut last = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut g = zeros_like(c);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let r = &rows[i];
                let cache = c.forward(&r.features);
                total += c.backward(&cache, r.label, scale, &mut g);
            }
            opt.step(c, &g)?;
        }
        last = total / rows.len().max(1) as f64;
    }
    Ok(last)
}

/// Trains the four add-edge classifiers on rows read off `trees` with
/// logistic loss and AdaGrad. The classifiers train independently (in
/// parallel), each from its own seed drawn from `config.seed`.
pub fn train_classifiers(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    trees: &[EncodedTree],
    config: &ClassifierTrainConfig,
) -> Result<(ClassifierBundle, ClassifierTrainReport)> {
    if config.hidden == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("classifier hidden size, batch size and lr must be positive".into()));
    }
    let rows = classifier_rows(params, cfg, trees)?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bundle = ClassifierBundle::init(cfg.hidden, config.hidden, &mut master);
    let seeds: [u64; 4] = std::array::from_fn(|_| master.next_u64());
    let losses = bundle
        .classifiers
        .par_iter_mut()
        .zip(rows.par_iter())
        .zip(seeds.par_iter())
        .map(|((c, r), &s)| train_one(r, c, config, s))
        .collect::<Result<Vec<f64>>>()?;
    let positives: [usize; 4] = std::array::from_fn(|i| rows[i].iter().filter(|r| r.label).count());
    let report = ClassifierTrainReport {
        rows: std::array::from_fn(|i| rows[i].len()),
        positives,
        final_loss: std::array::from_fn(|i| losses[i]),
        train_accuracy: std::array::from_fn(|i| bundle.accuracy(EdgeType::ALL[i], &rows[i])),
        majority_accuracy: std::array::from_fn(|i| {
            let n = rows[i].len().max(1);
            positives[i].max(rows[i].len() - positives[i]) as f64 / n as f64
        }),
    };
    Ok((bundle, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_bytes_round_trip() {
        let b = ClassifierBundle::init(3, 5, &mut ChaCha8Rng::seed_from_u64(1));
        let back = ClassifierBundle::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back, b);
        let mut bytes = b.to_bytes();
        bytes.pop();
        assert!(ClassifierBundle::from_bytes(&bytes).is_err());
        assert!(ClassifierBundle::from_bytes(b"TLMCKPT1\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn constant_bundle_answers_fixed_value() {
        let no = ClassifierBundle::constant(4, false);
        let yes = ClassifierBundle::constant(4, true);
        let x = vec![0.3; 8];
        for e in EdgeType::ALL {
            assert!(no.prob(e, &x) < 0.5);
            assert!(yes.prob(e, &x) > 0.5);
        }
    }

    #[test]
    fn separable_rows_are_learned_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Labels from a linear rule with a margin of 0.1 around the boundary.
        let mut rows = Vec::new();
        while rows.len() < 200 {
            let features: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let margin = features[0] + 0.5 * features[1] - 0.1;
            if margin.abs() > 0.1 {
                rows.push(ClassifierRow { features, label: margin > 0.0 });
            }
        }
        let mut c = RectifierClassifier::init(4, 16, &mut rng);
        let cfg = ClassifierTrainConfig {
            epochs: 200,
            lr: 0.05,
            ..ClassifierTrainConfig::default()
        };
        train_one(&rows, &mut c, &cfg, 9).unwrap();
        let ok = rows.iter().filter(|r| (c.predict(&r.features) > 0.5) == r.label).count();
        assert_eq!(ok, 200);
    }
}
