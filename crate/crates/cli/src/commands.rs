use std::fs;
use std::path::Path;

use hpc_sentinel_core::asm::{parse_listing, CategoryMap, ParseMode};
use hpc_sentinel_core::corpus::default_template;
use hpc_sentinel_core::hpc::{emit_dataset, extract_windows, Dataset, Feature, Run};
use hpc_sentinel_core::mgsim::{self, PnoVariant, Scenario};
use hpc_sentinel_core::ml::{self, BalanceMethod, ModelFile, ModelKind, SplitSpec, TrainParams};
use hpc_sentinel_core::mutate::{inject, AttackKind, InjectionTemplate};
use hpc_sentinel_core::pca::{self, AblationConfig};
use hpc_sentinel_core::Error;

use crate::{
    AblateArgs, CliError, Command, EvalArgs, ExtractArgs, LabelArg, ModeArg, ModelFlags, MutateArgs, RankArgs,
    SimulateArgs, TrainArgs, VariantArg,
};

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Extract(a) => extract(a),
        Command::Mutate(a) => mutate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Rank(a) => rank(a),
        Command::Ablate(a) => ablate(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => crate::svg::report(a),
        Command::Reproduce(a) => crate::pipeline::reproduce(a),
    }
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: Option<&Path>) -> Result<CategoryMap, Error> {
    match path {
        Some(p) => CategoryMap::load(p),
        None => Ok(CategoryMap::c28x_default()),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(f)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), Error> {
    write_bytes(path, d.to_csv_string()?.as_bytes())
}

fn parse_attack(s: &str) -> Result<AttackKind, CliError> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn parse_model(s: &str) -> Result<ModelKind, CliError> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

pub fn variant(v: Option<VariantArg>) -> Option<PnoVariant> {
    v.map(|v| match v {
        VariantArg::Literal => PnoVariant::Literal,
        VariantArg::Symmetric => PnoVariant::Symmetric,
    })
}

pub fn train_params(seed: u64, f: &ModelFlags) -> TrainParams {
    let mut p = TrainParams::seeded(seed);
    p.forest.n_trees = f.trees;
    p.tree.max_depth = f.max_depth;
    p.forest.tree.max_depth = f.max_depth;
    p.nn.epochs = f.epochs;
    p.nn.learning_rate = f.learning_rate;
    p.nn.hidden = f.hidden;
    p
}

fn split_spec(fraction: f64, seed: u64, stratified: bool) -> Result<SplitSpec, CliError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage(format!("--split must lie in (0, 1), got {fraction}")));
    }
    Ok(SplitSpec { train_fraction: fraction, seed, stratified })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    if a.window == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    let attack = match (a.label, &a.attack) {
        (LabelArg::Benign, None) => None,
        (LabelArg::Benign, Some(_)) => return Err(CliError::Usage("benign files take no --attack".into())),
        (LabelArg::Malicious, Some(k)) => Some(parse_attack(k)?),
        (LabelArg::Malicious, None) => return Err(CliError::Usage("malicious files need --attack".into())),
    };
    let map = load_map(a.map.as_deref())?;
    let mode = match a.mode {
        ModeArg::Strict => ParseMode::Strict,
        ModeArg::Lenient => ParseMode::Lenient,
    };
    let mut runs = Vec::new();
    for path in &a.files {
        let parsed = parse_listing(&read_text(path)?, &map, mode)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if !parsed.malformed.is_empty() {
            eprintln!("{}: skipped {} malformed line(s)", path.display(), parsed.malformed.len());
        }
        let mut windows = extract_windows(&parsed.instructions, a.window);
        if a.full_windows_only {
            windows.retain(|w| !w.partial);
        }
        let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        runs.push(Run::new(id, attack, windows));
    }
    let d = emit_dataset(&runs)?;
    write_dataset(&a.out, &d)?;
    println!("{} windows from {} file(s) -> {}", d.len(), a.files.len(), a.out.display());
    Ok(())
}

fn mutate(a: MutateArgs) -> Result<(), CliError> {
    let template = match (&a.template, &a.attack) {
        (Some(p), _) => InjectionTemplate::from_json(&read_text(p)?)?,
        (None, Some(k)) => default_template(parse_attack(k)?),
        (None, None) => return Err(CliError::Usage("give --attack or --template".into())),
    };
    if let (Some(_), Some(k)) = (&a.template, &a.attack) {
        if parse_attack(k)? != template.attack {
            return Err(CliError::Usage(format!("--attack {k} disagrees with the template's `{}`", template.attack)));
        }
    }
    let map = load_map(a.map.as_deref())?;
    let base = read_text(&a.base)?;
    let out = inject(&base, &template, &map, a.seed)?;
    write_bytes(&a.out, out.as_bytes())?;
    println!("{} -> {}", template.attack, a.out.display());
    Ok(())
}

fn select_features(d: Dataset, names: &[String]) -> Result<Dataset, CliError> {
    if names.is_empty() {
        return Ok(d);
    }
    let features = names
        .iter()
        .map(|n| n.trim().parse::<Feature>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(d.project(&features)?)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let kind = parse_model(&a.model)?;
    let spec = split_spec(a.split, a.seed, !a.no_stratify)?;
    let balanced = match (a.balance, a.balance_method) {
        (_, Some(m)) => Some(BalanceMethod::from(m)),
        (true, None) => Some(BalanceMethod::Oversample),
        (false, None) => None,
    };
    let data = select_features(load_dataset(&a.data)?, &a.features)?;
    let params = train_params(a.seed, &a.model_flags);
    let (file, test) = ml::fit(kind, &data, &spec, balanced, &params)?;
    write_bytes(&a.out, (file.to_json() + "\n").as_bytes())?;
    let m = ml::evaluate(&file.model, &test)?.metrics;
    println!(
        "{kind}: held-out accuracy {:.4} precision {:.4} recall {:.4} -> {}",
        m.accuracy,
        m.precision_or_nan(),
        m.recall_or_nan(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let file = ModelFile::from_json(&read_text(&a.model)?)?;
    let data = load_dataset(&a.data)?;
    let report = if a.all_rows {
        ml::evaluate(&file.model, &data.project(&file.feature_names)?)?
    } else {
        ml::evaluate_held_out(&file, &data)?
    };
    write_bytes(&a.out, to_json(&report).as_bytes())?;
    let m = report.metrics;
    println!(
        "{}: accuracy {:.4} precision {:.4} recall {:.4} fp {:.4} fn {:.4}",
        report.model,
        m.accuracy,
        m.precision_or_nan(),
        m.recall_or_nan(),
        m.fp_rate,
        m.fn_rate
    );
    Ok(())
}

fn rank(a: RankArgs) -> Result<(), CliError> {
    if a.components == 0 {
        return Err(CliError::Usage("--components must be positive".into()));
    }
    let d = load_dataset(&a.data)?;
    let r = pca::rank_features(&d, a.components, a.standardize)?;
    write_bytes(&a.out, to_json(&r).as_bytes())?;
    let top: Vec<String> = r.top(3).iter().map(|f| f.name()).collect();
    println!("top features: {}", top.join(", "));
    Ok(())
}

pub fn exclusion_specs(which: &str) -> Result<Vec<pca::EliminationSpec>, CliError> {
    match which {
        "1" => Ok(pca::exclusion_specs(1)),
        "2" => Ok(pca::exclusion_specs(2)),
        "all" => Ok(pca::exclusion_specs(1).into_iter().chain(pca::exclusion_specs(2)).collect()),
        other => Err(CliError::Usage(format!("--exclusions takes 1, 2 or all, got `{other}`"))),
    }
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let specs = exclusion_specs(&a.exclusions)?;
    let d = load_dataset(&a.data)?;
    let config = AblationConfig {
        split: split_spec(a.split, a.seed, true)?,
        balanced: a.balance.then_some(BalanceMethod::Oversample),
        params: train_params(a.seed, &a.model_flags),
    };
    let rows = pca::run_ablation(&d, &ModelKind::ALL, &specs, &config)?;
    let mut buf = Vec::new();
    pca::write_ablation_csv(&rows, &mut buf)?;
    write_bytes(&a.out, &buf)?;
    println!("{} rows -> {}", rows.len(), a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut scenario: Scenario = match (&a.scenario, &a.scenario_file) {
        (Some(name), None) => mgsim::preset(name).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(p)) => Scenario::from_json(&read_text(p)?)?,
        _ => return Err(CliError::Usage("give exactly one of --scenario and --scenario-file".into())),
    };
    if let Some(v) = variant(a.pno_variant) {
        scenario.mppt.variant = v;
    }
    if let Some(p) = &a.dump_scenario {
        write_bytes(p, (scenario.to_json() + "\n").as_bytes())?;
    }
    let rows = mgsim::run_scenario(&scenario)?;
    let mut buf = Vec::new();
    mgsim::write_csv(&rows, &mut buf)?;
    write_bytes(&a.out, &buf)?;
    println!("{}: {} rows -> {}", scenario.name, rows.len(), a.out.display());
    Ok(())
}
