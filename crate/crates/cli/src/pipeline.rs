//! `reproduce`: corpus, dataset, models, ranking, ablation and simulations in
//! one deterministic bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use hpc_sentinel_core::asm::ParseMode;
use hpc_sentinel_core::corpus::{default_template, synthetic_base};
use hpc_sentinel_core::hpc::{dataset_from_images, Dataset, Feature, Label};
use hpc_sentinel_core::mgsim::{self, MgState, PnoVariant};
use hpc_sentinel_core::ml::{self, BalanceMethod, Metrics, ModelKind, SplitSpec, TrainParams};
use hpc_sentinel_core::mutate::{build_corpus, AttackKind, InjectionTemplate};
use hpc_sentinel_core::pca::{self, AblationConfig, AblationRow, FeatureRanking};

use crate::commands::{exclusion_specs, load_map, read_text, train_params, variant, write_bytes, write_dataset};
use crate::{CliError, ReproduceArgs};

/// Every file a bundle contains, relative to its root.
pub fn bundle_files() -> Vec<String> {
    let mut v: Vec<String> =
        ["base"].into_iter().chain(AttackKind::ALL.map(|k| k.as_str())).map(|n| format!("firmware/{n}.asm")).collect();
    v.push("dataset.csv".into());
    for m in ModelKind::ALL {
        for b in ["unbalanced", "balanced"] {
            v.push(format!("models/{m}_{b}.json"));
        }
    }
    v.push("ranking.json".into());
    v.push("ablation.csv".into());
    v.extend(mgsim::PRESETS.iter().map(|p| format!("simulations/{p}.csv")));
    v.push("summary.md".into());
    v
}

fn stage(name: &str, path: &Path) -> impl Fn(CliError) -> CliError {
    let name = name.to_string();
    let path = path.to_path_buf();
    move |e| {
        let shown = path.display().to_string();
        let msg = |m: String| {
            if m.contains(&shown) {
                format!("{name} stage failed: {m}")
            } else {
                format!("{name} stage failed on {shown}: {m}")
            }
        };
        match e {
            CliError::Usage(m) => CliError::Usage(msg(m)),
            CliError::Data(m) => CliError::Data(msg(m)),
            CliError::Numeric(m) => CliError::Numeric(msg(m)),
        }
    }
}

fn prepare_out(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() {
        if !out.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", out.display())));
        }
        let non_empty =
            fs::read_dir(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::Usage(format!("{} is not empty; pass --force to replace it", out.display())));
            }
            fs::remove_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

fn load_templates(dir: Option<&Path>) -> Result<Vec<InjectionTemplate>, CliError> {
    AttackKind::ALL
        .into_iter()
        .map(|k| match dir {
            None => Ok(default_template(k)),
            Some(d) => {
                let p = d.join(format!("{k}.json"));
                let t = InjectionTemplate::from_json(&read_text(&p)?)
                    .map_err(CliError::from)
                    .map_err(stage("mutate", &p))?;
                if t.attack != k {
                    return Err(CliError::Data(format!("{} holds a `{}` template", p.display(), t.attack)));
                }
                Ok(t)
            }
        })
        .collect::<Result<_, CliError>>()
        .map_err(|e| match dir {
            Some(d) => stage("mutate", d)(e),
            None => e,
        })
}

#[derive(Serialize)]
struct Retrain {
    model: ModelKind,
    features: Vec<Feature>,
    metrics: Metrics,
}

#[derive(Serialize)]
struct RankingReport<'a> {
    pca: &'a FeatureRanking,
    top3: Vec<Feature>,
    retrain: Vec<Retrain>,
}

struct Trained {
    kind: ModelKind,
    balanced: bool,
    metrics: Metrics,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn metrics_row(name: &str, m: &Metrics) -> String {
    format!(
        "| {name} | {:.4} | {} | {} | {:.4} | {:.4} |\n",
        m.accuracy,
        fmt_opt(m.precision),
        fmt_opt(m.recall),
        m.fp_rate,
        m.fn_rate
    )
}

const METRICS_HEAD: &str = "| model | accuracy | precision | recall | FP rate | FN rate |\n|---|---|---|---|---|---|\n";

struct SimSummary {
    name: String,
    mean_pv: f64,
    pv_var: f64,
    f_min: f64,
    f_max: f64,
    ess_end: f64,
}

fn summarize(name: &str, rows: &[MgState]) -> SimSummary {
    let n = rows.len() as f64;
    let mean_pv = rows.iter().map(|r| r.pv_kw).sum::<f64>() / n;
    let end = rows.last().map_or(0.0, |r| r.time_s + 1.0);
    SimSummary {
        name: name.into(),
        mean_pv,
        pv_var: mgsim::pv_variance(rows, 0.0, end),
        f_min: rows.iter().map(|r| r.freq_hz).fold(f64::INFINITY, f64::min),
        f_max: rows.iter().map(|r| r.freq_hz).fold(f64::NEG_INFINITY, f64::max),
        ess_end: rows.last().map_or(0.0, |r| r.ess_kwh),
    }
}

#[allow(clippy::too_many_arguments)]
fn summary_md(
    seed: u64,
    data: &Dataset,
    trained: &[Trained],
    ranking: &FeatureRanking,
    retrain: &[Retrain],
    ablation: &[AblationRow],
    sims: &[SimSummary],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Reproduction bundle (seed {seed})\n");
    let _ = writeln!(
        s,
        "Dataset: {} windows, {} benign, {} malicious, {} features.\n",
        data.len(),
        data.count_label(Label::Benign),
        data.count_label(Label::Malicious),
        data.n_features()
    );
    for (title, bal) in [("Detection, unbalanced training", false), ("Detection, balanced training", true)] {
        let _ = writeln!(s, "## {title}\n");
        s.push_str(METRICS_HEAD);
        for t in trained.iter().filter(|t| t.balanced == bal) {
            s.push_str(&metrics_row(t.kind.as_str(), &t.metrics));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## PCA feature ranking ({} components)\n", ranking.n_components);
    s.push_str("| rank | feature | score |\n|---|---|---|\n");
    for (k, r) in ranking.ranking.iter().take(10).enumerate() {
        let _ = writeln!(s, "| {} | {} | {:.4} |", k + 1, r.feature, r.score);
    }
    let top: Vec<String> = ranking.top(3).iter().map(|f| f.name()).collect();
    let _ = writeln!(s, "\n## Retrained on the top three features ({}), balanced\n", top.join(", "));
    s.push_str(METRICS_HEAD);
    for r in retrain {
        s.push_str(&metrics_row(r.model.as_str(), &r.metrics));
    }
    s.push_str("\n## Accuracy with instruction classes eliminated, balanced\n\n");
    s.push_str("| retained | features | dt | rf | nn |\n|---|---|---|---|---|\n");
    for chunk in ablation.chunks(ModelKind::ALL.len()) {
        let acc: Vec<String> = chunk.iter().map(|r| format!("{:.4}", r.metrics.accuracy)).collect();
        let _ = writeln!(s, "| {} | {} | {} |", chunk[0].spec, chunk[0].n_features, acc.join(" | "));
    }
    s.push_str("\n## Microgrid scenarios\n\n");
    s.push_str(
        "| scenario | mean PV kW | PV variance kW^2 | min Hz | max Hz | final ESS kWh |\n|---|---|---|---|---|---|\n",
    );
    for m in sims {
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.4} | {:.4} | {:.3} |",
            m.name, m.mean_pv, m.pv_var, m.f_min, m.f_max, m.ess_end
        );
    }
    s
}

pub fn reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    if a.window == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(CliError::Usage(format!("--split must lie in (0, 1), got {}", a.split)));
    }
    let out = a.out.clone();
    let at = |rel: &str| -> PathBuf { out.join(rel) };

    // Inputs are read before anything touches the output directory.
    let base = match &a.base {
        Some(p) => read_text(p).map_err(CliError::from).map_err(stage("mutate", p))?,
        None => synthetic_base(),
    };
    let map = match &a.map {
        Some(p) => load_map(Some(p)).map_err(CliError::from).map_err(stage("extract", p))?,
        None => load_map(None)?,
    };
    let templates = load_templates(a.templates.as_deref())?;
    prepare_out(&out, a.force)?;

    let firmware_dir = at("firmware");
    let images = build_corpus(&base, &templates, &map, a.seed)
        .map_err(CliError::from)
        .map_err(stage("mutate", &firmware_dir))?;
    for img in &images {
        let p = firmware_dir.join(format!("{}.asm", img.id));
        write_bytes(&p, img.listing.as_bytes()).map_err(CliError::from).map_err(stage("mutate", &p))?;
    }

    let dataset_path = at("dataset.csv");
    let data = dataset_from_images(&images, &map, a.window, ParseMode::Lenient)
        .map_err(CliError::from)
        .map_err(stage("extract", &dataset_path))?;
    write_dataset(&dataset_path, &data).map_err(CliError::from).map_err(stage("extract", &dataset_path))?;

    let spec = SplitSpec { train_fraction: a.split, seed: a.seed, stratified: true };
    let params: TrainParams = train_params(a.seed, &a.model_flags);
    let jobs: Vec<(ModelKind, bool)> = ModelKind::ALL.into_iter().flat_map(|k| [(k, false), (k, true)]).collect();
    let models_dir = at("models");
    let fitted = jobs
        .par_iter()
        .map(|&(kind, bal)| {
            let (file, test) = ml::fit(kind, &data, &spec, bal.then_some(BalanceMethod::Oversample), &params)?;
            let metrics = ml::evaluate(&file.model, &test)?.metrics;
            Ok((file, Trained { kind, balanced: bal, metrics }))
        })
        .collect::<Result<Vec<_>, hpc_sentinel_core::Error>>()
        .map_err(CliError::from)
        .map_err(stage("train", &models_dir))?;
    let mut trained = Vec::new();
    for (file, t) in fitted {
        let p = models_dir.join(format!("{}_{}.json", t.kind, if t.balanced { "balanced" } else { "unbalanced" }));
        write_bytes(&p, (file.to_json() + "\n").as_bytes()).map_err(CliError::from).map_err(stage("train", &p))?;
        trained.push(t);
    }

    let ranking_path = at("ranking.json");
    let ranking = pca::rank_features(&data, 3, false).map_err(CliError::from).map_err(stage("rank", &ranking_path))?;
    let top3 = ranking.top(3);
    let projected = data.project(&top3).map_err(CliError::from).map_err(stage("rank", &ranking_path))?;
    let retrain = ModelKind::ALL
        .par_iter()
        .map(|&model| {
            let (file, test) = ml::fit(model, &projected, &spec, Some(BalanceMethod::Oversample), &params)?;
            Ok(Retrain { model, features: top3.clone(), metrics: ml::evaluate(&file.model, &test)?.metrics })
        })
        .collect::<Result<Vec<_>, hpc_sentinel_core::Error>>()
        .map_err(CliError::from)
        .map_err(stage("rank", &ranking_path))?;
    let report = RankingReport { pca: &ranking, top3: top3.clone(), retrain };
    let json = serde_json::to_string_pretty(&report).expect("ranking serializes") + "\n";
    write_bytes(&ranking_path, json.as_bytes()).map_err(CliError::from).map_err(stage("rank", &ranking_path))?;

    let ablation_path = at("ablation.csv");
    let specs = exclusion_specs("all")?;
    let config = AblationConfig { split: spec, balanced: Some(BalanceMethod::Oversample), params };
    let ablation = pca::run_ablation(&data, &ModelKind::ALL, &specs, &config)
        .map_err(CliError::from)
        .map_err(stage("ablate", &ablation_path))?;
    let mut buf = Vec::new();
    pca::write_ablation_csv(&ablation, &mut buf).map_err(CliError::from).map_err(stage("ablate", &ablation_path))?;
    write_bytes(&ablation_path, &buf).map_err(CliError::from).map_err(stage("ablate", &ablation_path))?;

    let pno: Option<PnoVariant> = variant(a.pno_variant);
    let sim_dir = at("simulations");
    let runs = mgsim::PRESETS
        .par_iter()
        .map(|name| {
            let mut sc = mgsim::preset(name)?;
            if let Some(v) = pno {
                sc.mppt.variant = v;
            }
            Ok((*name, mgsim::run_scenario(&sc)?))
        })
        .collect::<Result<Vec<_>, hpc_sentinel_core::Error>>()
        .map_err(CliError::from)
        .map_err(stage("simulate", &sim_dir))?;
    let mut sims = Vec::new();
    for (name, rows) in &runs {
        let p = sim_dir.join(format!("{name}.csv"));
        let mut buf = Vec::new();
        mgsim::write_csv(rows, &mut buf).map_err(CliError::from).map_err(stage("simulate", &p))?;
        write_bytes(&p, &buf).map_err(CliError::from).map_err(stage("simulate", &p))?;
        sims.push(summarize(name, rows));
    }

    let summary_path = at("summary.md");
    let md = summary_md(a.seed, &data, &trained, &ranking, &report.retrain, &ablation, &sims);
    write_bytes(&summary_path, md.as_bytes()).map_err(CliError::from).map_err(stage("summary", &summary_path))?;

    println!("{} files -> {}", bundle_files().len(), out.display());
    Ok(())
}
