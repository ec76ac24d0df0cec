use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, RewardError};
use crate::model::CompositeIntent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Fraction of each class held out for evaluation.
    pub heldout_fraction: f64,
    pub min_per_class: usize,
    /// Drop classes below `min_per_class` instead of failing.
    pub drop_rare: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            seed: 7,
            epochs: 30,
            learning_rate: 0.5,
            l2: 1e-5,
            heldout_fraction: 0.2,
            min_per_class: 10,
            drop_rare: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_heldout: usize,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    /// Classes dropped for having too few examples.
    pub dropped: Vec<String>,
}

/// Linear softmax over log-scaled, unit-normalized bag-of-words counts.
/// There is no bias, so text with no known tokens gets the uniform
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentClassifier {
    vocabulary: BTreeMap<String, usize>,
    classes: Vec<CompositeIntent>,
    /// `classes.len()` rows of `vocabulary.len()` weights.
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    vocabulary: BTreeMap<String, usize>,
    classes: Vec<String>,
    weights: Vec<Vec<f64>>,
}

type Features = Vec<(usize, f64)>;

impl IntentClassifier {
    pub fn classes(&self) -> &[CompositeIntent] {
        &self.classes
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    fn features(&self, text: &str) -> Features {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&tok) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut f: Features = counts.into_iter().map(|(i, c)| (i, (1.0 + c).ln())).collect();
        let norm = f.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut f {
                *v /= norm;
            }
        }
        f
    }

    fn softmax(&self, f: &Features) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| f.iter().map(|(i, v)| w[*i] * v).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    /// Probability for each class, in `classes()` order.
    pub fn predict_proba(&self, text: &str) -> Vec<f64> {
        self.softmax(&self.features(text))
    }

    pub fn prob(&self, text: &str, target: &CompositeIntent) -> Result<f64, RewardError> {
        let k = self
            .classes
            .iter()
            .position(|c| c == target)
            .ok_or_else(|| RewardError::UnknownClass(target.name()))?;
        Ok(self.predict_proba(text)[k])
    }

    /// Top class and its probability. Ties go to the earlier class.
    pub fn classify(&self, text: &str) -> (CompositeIntent, f64) {
        let p = self.predict_proba(text);
        let mut best = 0;
        for (k, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = k;
            }
        }
        (self.classes[best].clone(), p[best])
    }

    pub fn accuracy(&self, data: &[(String, CompositeIntent)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data.iter().filter(|(t, y)| &self.classify(t).0 == y).count();
        hits as f64 / data.len() as f64
    }

    pub fn to_json(&self) -> String {
        let p = Persisted {
            vocabulary: self.vocabulary.clone(),
            classes: self.classes.iter().map(CompositeIntent::name).collect(),
            weights: self.weights.clone(),
        };
        serde_json::to_string(&p).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RewardError> {
        let p: Persisted = serde_json::from_str(text)?;
        let classes = p
            .classes
            .iter()
            .map(|c| CompositeIntent::parse(c).map_err(|_| RewardError::UnknownClass(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let v = p.vocabulary.len();
        let shape_ok = p.weights.len() == classes.len()
            && p.weights.iter().all(|w| w.len() == v)
            && p.vocabulary.values().all(|&i| i < v);
        if !shape_ok || classes.len() < 2 {
            return Err(RewardError::InsufficientData {
                min: 2,
                detail: "weight matrix does not match vocabulary and classes".into(),
            });
        }
        Ok(IntentClassifier {
            vocabulary: p.vocabulary,
            classes,
            weights: p.weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RewardError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits the classifier by SGD on a stratified split and reports held-out
/// accuracy. Deterministic for a given `cfg.seed`.
pub fn train_classifier(
    corpus: &[(String, CompositeIntent)],
    cfg: &ClassifierConfig,
) -> Result<(IntentClassifier, TrainReport), RewardError> {
    let mut by_class: BTreeMap<CompositeIntent, Vec<&str>> = BTreeMap::new();
    for (text, y) in corpus {
        by_class.entry(y.clone()).or_default().push(text);
    }
    let mut dropped = Vec::new();
    let rare: Vec<String> = by_class
        .iter()
        .filter(|(_, v)| v.len() < cfg.min_per_class)
        .map(|(k, v)| format!("{k} ({})", v.len()))
        .collect();
    if !rare.is_empty() {
        if !cfg.drop_rare {
            return Err(RewardError::InsufficientData {
                min: cfg.min_per_class,
                detail: rare.join(", "),
            });
        }
        by_class.retain(|k, v| {
            let keep = v.len() >= cfg.min_per_class;
            if !keep {
                dropped.push(k.name());
            }
            keep
        });
    }
    if by_class.len() < 2 {
        return Err(RewardError::InsufficientData {
            min: cfg.min_per_class,
            detail: format!("{} usable class(es)", by_class.len()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes: Vec<CompositeIntent> = by_class.keys().cloned().collect();
    let mut train: Vec<(&str, usize)> = Vec::new();
    let mut heldout: Vec<(String, CompositeIntent)> = Vec::new();
    for (k, (class, texts)) in by_class.iter().enumerate() {
        let mut texts = texts.clone();
        texts.shuffle(&mut rng);
        let n_out = (texts.len() as f64 * cfg.heldout_fraction).floor() as usize;
        for (j, t) in texts.into_iter().enumerate() {
            if j < n_out {
                heldout.push((t.to_string(), class.clone()));
            } else {
                train.push((t, k));
            }
        }
    }

    let mut vocabulary = BTreeMap::new();
    for (t, _) in &train {
        for tok in tokenize(t) {
            let n = vocabulary.len();
            vocabulary.entry(tok).or_insert(n);
        }
    }
    // indices follow sorted order so persisted files are stable
    for (i, v) in vocabulary.values_mut().enumerate() {
        *v = i;
    }
    let mut clf = IntentClassifier {
        weights: vec![vec![0.0; vocabulary.len()]; classes.len()],
        vocabulary,
        classes,
    };

    let feats: Vec<(Features, usize)> = train.iter().map(|(t, y)| (clf.features(t), *y)).collect();
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &n in &order {
            let (f, y) = &feats[n];
            let p = clf.softmax(f);
            let lr = cfg.learning_rate / (1.0 + 1e-4 * step as f64);
            step += 1;
            for (k, w) in clf.weights.iter_mut().enumerate() {
                let g = p[k] - if k == *y { 1.0 } else { 0.0 };
                for (i, v) in f {
                    w[*i] -= lr * (g * v + cfg.l2 * w[*i]);
                }
            }
        }
    }

    let train_pairs: Vec<(String, CompositeIntent)> = train
        .iter()
        .map(|(t, y)| (t.to_string(), clf.classes[*y].clone()))
        .collect();
    let report = TrainReport {
        n_train: train_pairs.len(),
        n_heldout: heldout.len(),
        train_accuracy: clf.accuracy(&train_pairs),
        heldout_accuracy: clf.accuracy(&heldout),
        dropped,
    };
    Ok((clf, report))
}
