//! Classifiers over HPC datasets: splitting, balancing, training, evaluation.

pub mod forest;
pub mod metrics;
pub mod nn;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forest::{train_forest, ForestParams, RandomForest};
pub use metrics::{ConfusionCounts, Metrics};
pub use nn::{train_nn, NeuralNet, NnParams};
pub use tree::{train_tree, DecisionTree, MaxFeatures, TreeParams};

use crate::error::{Error, Result};
use crate::hpc::{Dataset, Feature, Label};
use crate::mutate::AttackKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.7, seed: 0, stratified: true }
    }
}

/// Apportion `total` across groups proportionally to `sizes` with the
/// largest-remainder rule; each share stays within one of its exact quota.
fn apportion(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut shares: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total.saturating_sub(shares.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &g in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if shares[g] < sizes[g] {
            shares[g] += 1;
            left -= 1;
        }
    }
    shares
}

/// Deterministic train/test partition. Train size is `floor(fraction * n)`;
/// both halves keep the original row order.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Invalid(format!("train fraction {} not in (0, 1)", spec.train_fraction)));
    }
    let n = d.len();
    if n < 2 {
        return Err(Error::TooFewSamples(format!("{n} samples, need at least 2")));
    }
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::TooFewSamples(format!("{n} samples leave an empty partition")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = vec![false; n];
    if spec.stratified {
        let groups: Vec<Vec<usize>> = [Label::Benign, Label::Malicious]
            .iter()
            .map(|&l| (0..n).filter(|&i| d.samples[i].label == l).collect())
            .collect();
        if groups.iter().any(|g| g.is_empty()) {
            return Err(Error::TooFewSamples("stratified split needs both classes".into()));
        }
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let shares = apportion(&sizes, spec.train_fraction, n_train);
        for (mut g, k) in groups.into_iter().zip(shares) {
            g.shuffle(&mut rng);
            for &i in &g[..k] {
                chosen[i] = true;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for &i in &all[..n_train] {
            chosen[i] = true;
        }
    }
    let train: Vec<usize> = (0..n).filter(|&i| chosen[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
    Ok((d.subset(&train), d.subset(&test)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMethod {
    /// Resample the minority class with replacement up to the majority count.
    #[default]
    Oversample,
    /// Draw the majority class down to the minority count without replacement.
    Undersample,
}

/// Equalize class counts. Oversampling appends minority duplicates after the
/// original rows; undersampling keeps the surviving rows in original order.
pub fn balance(d: &Dataset, seed: u64, method: BalanceMethod) -> Result<Dataset> {
    let benign: Vec<usize> = (0..d.len()).filter(|&i| d.samples[i].label == Label::Benign).collect();
    let malicious: Vec<usize> = (0..d.len()).filter(|&i| d.samples[i].label == Label::Malicious).collect();
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::SingleClass);
    }
    let (minority, majority) = if benign.len() <= malicious.len() { (benign, malicious) } else { (malicious, benign) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = match method {
        BalanceMethod::Oversample => {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            let extra = majority.len() - minority.len();
            idx.extend((0..extra).map(|_| minority[rng.gen_range(0..minority.len())]));
            idx
        }
        BalanceMethod::Undersample => {
            let mut keep: Vec<usize> = majority.choose_multiple(&mut rng, minority.len()).copied().collect();
            keep.extend(&minority);
            keep.sort_unstable();
            keep
        }
    };
    Ok(d.subset(&idx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Nn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Dt, ModelKind::Rf, ModelKind::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Nn => "nn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model kind `{s}`")))
    }
}

/// Hyperparameters for all three trainers; only the selected one is used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub nn: NnParams,
}

impl TrainParams {
    /// Defaults with every trainer seeded from `seed`.
    pub fn seeded(seed: u64) -> Self {
        TrainParams {
            tree: TreeParams::default(),
            forest: ForestParams { seed, ..ForestParams::default() },
            nn: NnParams { seed, ..NnParams::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Dt(DecisionTree),
    Rf(RandomForest),
    Nn(NeuralNet),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Dt(_) => ModelKind::Dt,
            Classifier::Rf(_) => ModelKind::Rf,
            Classifier::Nn(_) => ModelKind::Nn,
        }
    }

    pub fn predict_one(&self, x: &[u32]) -> bool {
        match self {
            Classifier::Dt(m) => m.predict_one(x),
            Classifier::Rf(m) => m.predict_one(x),
            Classifier::Nn(m) => m.predict_one(x),
        }
    }

    pub fn predict(&self, rows: &[Vec<u32>]) -> Vec<bool> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

fn rows_and_labels(d: &Dataset) -> (Vec<Vec<u32>>, Vec<bool>) {
    let rows = d.samples.iter().map(|s| s.values.clone()).collect();
    let labels = d.samples.iter().map(|s| s.label.is_malicious()).collect();
    (rows, labels)
}

pub fn train(kind: ModelKind, train_set: &Dataset, params: &TrainParams) -> Result<Classifier> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (rows, labels) = rows_and_labels(train_set);
    Ok(match kind {
        ModelKind::Dt => Classifier::Dt(train_tree(&rows, &labels, params.tree)?),
        ModelKind::Rf => Classifier::Rf(train_forest(&rows, &labels, params.forest)?),
        ModelKind::Nn => Classifier::Nn(train_nn(&rows, &labels, params.nn)?),
    })
}

/// A trained classifier with everything needed to re-evaluate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub feature_names: Vec<Feature>,
    pub split: SplitSpec,
    pub balanced: Option<BalanceMethod>,
    pub params: TrainParams,
    pub model: Classifier,
}

pub const MODEL_FORMAT: &str = "hpc-sentinel/model/v1";

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Invalid(format!("unsupported model format `{}`", m.format)));
        }
        Ok(m)
    }
}

/// Split, optionally balance the training half, train. Returns the model file
/// and the held-out test set.
pub fn fit(
    kind: ModelKind,
    data: &Dataset,
    spec: &SplitSpec,
    balanced: Option<BalanceMethod>,
    params: &TrainParams,
) -> Result<(ModelFile, Dataset)> {
    let (train_set, test_set) = split(data, spec)?;
    let train_set = match balanced {
        Some(m) => balance(&train_set, spec.seed, m)?,
        None => train_set,
    };
    let model = train(kind, &train_set, params)?;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        feature_names: data.feature_names.clone(),
        split: *spec,
        balanced,
        params: *params,
        model,
    };
    Ok((file, test_set))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub firmware_id: String,
    pub window_index: usize,
    pub label: Label,
    pub predicted: Label,
    pub attack_kind: Option<AttackKind>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub samples: usize,
    pub flagged_malicious: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Keyed by attack kind, `benign` for clean samples.
    pub by_attack: BTreeMap<String, GroupStats>,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(model: &Classifier, test: &Dataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (rows, truth) = rows_and_labels(test);
    let predicted = model.predict(&rows);
    let counts = ConfusionCounts::from_pairs(&truth, &predicted);
    let mut by_attack: BTreeMap<String, GroupStats> = BTreeMap::new();
    let predictions = test
        .samples
        .iter()
        .zip(&predicted)
        .map(|(s, &p)| {
            let key = s.attack_kind.map_or("benign", |k| k.as_str()).to_string();
            let g = by_attack.entry(key).or_default();
            g.samples += 1;
            g.flagged_malicious += p as usize;
            Prediction {
                firmware_id: s.firmware_id.clone(),
                window_index: s.window_index,
                label: s.label,
                predicted: if p { Label::Malicious } else { Label::Benign },
                attack_kind: s.attack_kind,
            }
        })
        .collect();
    Ok(EvalReport { model: model.kind(), counts, metrics: counts.metrics(), by_attack, predictions })
}

/// Re-derive the held-out half recorded in a model file and evaluate on it.
pub fn evaluate_held_out(file: &ModelFile, data: &Dataset) -> Result<EvalReport> {
    let data = data.project(&file.feature_names)?;
    let (_, test) = split(&data, &file.split)?;
    evaluate(&file.model, &test)
}
