//! Principal-component feature ranking and instruction-class elimination.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::InstructionCategory;
use crate::error::{Error, Result};
use crate::hpc::{Dataset, Feature};
use crate::ml::{self, BalanceMethod, Metrics, ModelKind, SplitSpec, TrainParams};

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Symmetric eigendecomposition. Each eigenvector is signed so that its
/// largest-magnitude component is positive.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Eigen {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(order.len());
    let mut vectors = Vec::with_capacity(order.len());
    for k in order {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        values.push(eig.eigenvalues[k]);
        vectors.push(v);
    }
    Eigen { values, vectors }
}

/// Sample covariance (n - 1) of the dataset columns, optionally of the
/// standardized columns (correlation matrix).
pub fn covariance(d: &Dataset, standardize: bool) -> Result<DMatrix<f64>> {
    let n = d.len();
    let f = d.n_features();
    if n < 2 {
        return Err(Error::TooFewSamples(format!("{n} samples, PCA needs at least 2")));
    }
    let mut x = DMatrix::from_fn(n, f, |i, j| d.samples[i].values[j] as f64);
    for j in 0..f {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
        if standardize {
            let sd = (x.column(j).norm_squared() / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                x.column_mut(j).scale_mut(1.0 / sd);
            }
        }
    }
    let cov = x.transpose() * &x / (n - 1) as f64;
    if cov.diagonal().iter().all(|&v| v <= 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    Ok(cov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: Feature,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub n_components: usize,
    pub standardized: bool,
    /// Leading eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub ranking: Vec<RankedFeature>,
}

impl FeatureRanking {
    pub fn top(&self, k: usize) -> Vec<Feature> {
        self.ranking.iter().take(k).map(|r| r.feature).collect()
    }
}

/// Score each feature by `sum_k lambda_k * |v_k[j]|` over the leading
/// `n_components` eigenpairs and sort descending. Ties keep feature order.
pub fn rank_features(d: &Dataset, n_components: usize, standardize: bool) -> Result<FeatureRanking> {
    let cov = covariance(d, standardize)?;
    let eig = symmetric_eigen(&cov);
    let k = n_components.clamp(1, eig.values.len());
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let mut ranking: Vec<RankedFeature> = d
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, &feature)| {
            let score = (0..k).map(|c| eig.values[c].max(0.0) * eig.vectors[c][j].abs()).sum();
            RankedFeature { feature, score }
        })
        .collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(FeatureRanking {
        n_components: k,
        standardized: standardize,
        eigenvalues: eig.values[..k].to_vec(),
        explained_variance_ratio: eig.values[..k].iter().map(|v| v.max(0.0) / total).collect(),
        ranking,
    })
}

/// Feature set left after dropping up to two instruction classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationSpec {
    pub excluded: Vec<InstructionCategory>,
    pub features: Vec<Feature>,
}

impl EliminationSpec {
    /// Initials of the retained classes in `b, l, a, n, s` order, e.g. `BLAN`.
    pub fn name(&self) -> String {
        const ORDER: [InstructionCategory; 5] = [
            InstructionCategory::Branch,
            InstructionCategory::Load,
            InstructionCategory::Arithmetic,
            InstructionCategory::Boolean,
            InstructionCategory::Store,
        ];
        ORDER.iter().filter(|c| !self.excluded.contains(c)).map(|c| c.symbol().unwrap().to_ascii_uppercase()).collect()
    }

    pub fn retained(&self) -> usize {
        5 - self.excluded.len()
    }
}

pub fn eliminate(classes: &[InstructionCategory], full: &[Feature]) -> Result<EliminationSpec> {
    let mut excluded: Vec<InstructionCategory> = classes.to_vec();
    excluded.sort();
    excluded.dedup();
    if excluded.iter().any(|c| *c == InstructionCategory::Other) {
        return Err(Error::Invalid("`other` is not a counted class".into()));
    }
    if excluded.len() > 2 {
        return Err(Error::TooManyExclusions(excluded.len()));
    }
    let features = full.iter().copied().filter(|f| !excluded.iter().any(|&c| f.involves(c))).collect();
    Ok(EliminationSpec { excluded, features })
}

/// All specs with exactly `k` excluded classes, in lexical order of the
/// excluded-class positions (`a, b, l, n, s`).
pub fn exclusion_specs(k: usize) -> Vec<EliminationSpec> {
    let full = Feature::all();
    let classes = InstructionCategory::COUNTED;
    let mut out = Vec::new();
    match k {
        0 => out.push(eliminate(&[], &full).unwrap()),
        1 => {
            for c in classes {
                out.push(eliminate(&[c], &full).unwrap());
            }
        }
        2 => {
            for i in 0..5 {
                for j in i + 1..5 {
                    out.push(eliminate(&[classes[i], classes[j]], &full).unwrap());
                }
            }
        }
        _ => {}
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: String,
    pub excluded: Vec<InstructionCategory>,
    pub n_features: usize,
    pub model: ModelKind,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub split: SplitSpec,
    pub balanced: Option<BalanceMethod>,
    pub params: TrainParams,
}

/// Train and score every (spec, model) cell on projected datasets. Rows come
/// back spec-major in the order given.
pub fn run_ablation(
    d: &Dataset,
    models: &[ModelKind],
    specs: &[EliminationSpec],
    config: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    let cells: Vec<(&EliminationSpec, ModelKind)> =
        specs.iter().flat_map(|s| models.iter().map(move |&m| (s, m))).collect();
    cells
        .par_iter()
        .map(|&(spec, model)| {
            let projected = d.project(&spec.features)?;
            let (file, test) = ml::fit(model, &projected, &config.split, config.balanced, &config.params)?;
            let report = ml::evaluate(&file.model, &test)?;
            Ok(AblationRow {
                spec: spec.name(),
                excluded: spec.excluded.clone(),
                n_features: spec.features.len(),
                model,
                metrics: report.metrics,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spec", "model", "n_features", "accuracy", "precision", "recall", "fp_rate", "fn_rate"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NaN".into());
    for r in rows {
        w.write_record([
            r.spec.clone(),
            r.model.to_string(),
            r.n_features.to_string(),
            fmt(Some(r.metrics.accuracy)),
            fmt(r.metrics.precision),
            fmt(r.metrics.recall),
            fmt(Some(r.metrics.fp_rate)),
            fmt(Some(r.metrics.fn_rate)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpc::{Label, Sample};
    use InstructionCategory::*;

    fn planted(n: usize) -> Dataset {
        // `n` (boolean unigram) carries all the variance
        let mut samples = Vec::new();
        for i in 0..n {
            let mut values = vec![5u32; 30];
            values[3] = (i as u32 * 37) % 41;
            values[0] = 5 + (i % 2) as u32;
            samples.push(Sample {
                firmware_id: "x".into(),
                window_index: i,
                partial: false,
                values,
                label: if i % 2 == 0 { Label::Benign } else { Label::Malicious },
                attack_kind: (i % 2 == 1).then_some(crate::mutate::AttackKind::MpptDos),
            });
        }
        Dataset { feature_names: Feature::all(), samples }
    }

    #[test]
    fn dominant_feature_ranks_first() {
        let r = rank_features(&planted(40), 3, false).unwrap();
        assert_eq!(r.ranking[0].feature.name(), "n");
        assert_eq!(r.ranking.len(), 30);
        assert!(r.ranking.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn constant_data_is_degenerate() {
        let mut d = planted(5);
        d.samples.iter_mut().for_each(|s| s.values = vec![2; 30]);
        assert!(matches!(rank_features(&d, 3, false), Err(Error::DegenerateCovariance)));
        assert!(matches!(rank_features(&planted(1), 3, false), Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn sign_convention() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let e = symmetric_eigen(&m);
        assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
        for v in &e.vectors {
            let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn elimination_cardinality_and_names() {
        let full = Feature::all();
        let blan = eliminate(&[Store], &full).unwrap();
        assert_eq!(blan.features.len(), 20);
        assert_eq!(blan.name(), "BLAN");
        assert!(!blan.features.iter().any(|f| f.name().contains('s')));
        let ban = eliminate(&[Store, Load], &full).unwrap();
        assert_eq!(ban.features.len(), 12);
        assert_eq!(ban.name(), "BAN");
        assert_eq!(eliminate(&[], &full).unwrap().features.len(), 30);
        assert!(matches!(eliminate(&[Store, Load, Branch], &full), Err(Error::TooManyExclusions(3))));
        assert_eq!(exclusion_specs(1).len(), 5);
        assert_eq!(exclusion_specs(2).len(), 10);
    }

    #[test]
    fn ablation_grid_shape() {
        let d = planted(60);
        let mut params = TrainParams::seeded(1);
        params.forest.n_trees = 3;
        params.nn.epochs = 20;
        let cfg = AblationConfig { split: SplitSpec { seed: 1, ..Default::default() }, balanced: None, params };
        let rows = run_ablation(&d, &ModelKind::ALL, &exclusion_specs(1), &cfg).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows[0].spec, "BLNS");
        assert_eq!(rows[0].model, ModelKind::Dt);
        let mut buf = Vec::new();
        write_ablation_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 16);
    }
}
