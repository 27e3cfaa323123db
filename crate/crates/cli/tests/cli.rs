use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hpc-sentinel"));
    c.env_remove("HPC_SENTINEL_THREADS");
    c
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train", "--model", "svm", "--data", "x.csv", "--out", "m.json"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ablate", "--data", "x.csv", "--exclusions", "3", "--out", s(&dir.path().join("a.csv"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = bin()
        .env("HPC_SENTINEL_THREADS", "0")
        .args(["simulate", "--scenario", "nominal", "--out", "x.csv"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("HPC_SENTINEL_THREADS"));
    let o = run(&["simulate", "--scenario", "nope", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        run(&["mutate", "--base", "/no/such/base.asm", "--attack", "mppt_dos", "--out", s(&dir.path().join("m.asm"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("/no/such/base.asm"));

    let bad = dir.path().join("bad.asm");
    fs::write(&bad, "0003f00 MOV AL,@X\n0003f01 83a1\n").unwrap();
    let d = dir.path().join("d.csv");
    let args = ["extract", "--label", "benign", "--mode", "strict", s(&bad), "--out", s(&d)];
    assert_eq!(code(&run(&args)), 3);
    let args = ["extract", "--label", "benign", s(&bad), "--out", s(&d)];
    assert_eq!(code(&run(&args)), 0);
}

#[test]
fn reproduce_names_the_failing_stage_and_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bundle");
    let o = run(&["reproduce", "--base", "/no/such/base.asm", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("mutate") && err.contains("/no/such/base.asm"), "{err}");
    assert!(!out.exists());
}

#[test]
fn reproduce_refuses_a_non_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let o = run(&["reproduce", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));
    assert!(dir.path().join("keep.txt").exists());
}

#[test]
fn diverging_simulation_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data("scenarios/nominal.json")).unwrap()).unwrap();
    sc["grid"]["k_f"] = serde_json::json!(1e306);
    sc["duration_s"] = serde_json::json!(1.0);
    let file = dir.path().join("blow.json");
    fs::write(&file, sc.to_string()).unwrap();
    let o = run(&["simulate", "--scenario-file", s(&file), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn mutate_extract_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let base = data("base_microinverter.asm");
    for (k, attack) in ["mppt_dos", "input_sine"].iter().enumerate() {
        let o = run(&[
            "mutate",
            "--base",
            s(&base),
            "--attack",
            attack,
            "--seed",
            &k.to_string(),
            "--out",
            s(&p(&format!("{attack}.asm"))),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let tpl = data("templates/inverter_dos.json");
    let o = run(&["mutate", "--base", s(&base), "--template", s(&tpl), "--out", s(&p("inverter_dos.asm"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o =
        run(&["mutate", "--base", s(&base), "--template", s(&tpl), "--attack", "mppt_dos", "--out", s(&p("x.asm"))]);
    assert_eq!(code(&o), 2);

    let o = run(&["extract", "--label", "benign", s(&base), "--out", s(&p("benign.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&[
        "extract",
        "--label",
        "malicious",
        "--attack",
        "mppt_dos",
        s(&p("mppt_dos.asm")),
        "--out",
        s(&p("mal.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["extract", "--label", "malicious", s(&base), "--out", s(&p("y.csv"))]);
    assert_eq!(code(&o), 2);

    let benign = fs::read_to_string(p("benign.csv")).unwrap();
    let mal = fs::read_to_string(p("mal.csv")).unwrap();
    let merged = benign + mal.split_once('\n').unwrap().1;
    fs::write(p("all.csv"), merged).unwrap();

    for model in ["dt", "rf", "nn"] {
        let m = p(&format!("{model}.json"));
        let o = run(&[
            "train",
            "--model",
            model,
            "--data",
            s(&p("all.csv")),
            "--seed",
            "3",
            "--balance",
            "--trees",
            "15",
            "--epochs",
            "200",
            "--out",
            s(&m),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let r = p(&format!("{model}_eval.json"));
        let o = run(&["eval", "--model", s(&m), "--data", s(&p("all.csv")), "--out", s(&r)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
        let c = &report["counts"];
        let total: u64 = ["tp", "tn", "fp", "fn"].iter().map(|k| c[*k].as_u64().unwrap()).sum();
        let rows = fs::read_to_string(p("all.csv")).unwrap().lines().count() as u64 - 1;
        assert_eq!(total, rows - (rows as f64 * 0.7).floor() as u64);
        let acc = report["metrics"]["accuracy"].as_f64().unwrap();
        let train_line = String::from_utf8_lossy(&o.stdout).into_owned();
        assert!(train_line.contains(&format!("accuracy {acc:.4}")), "{train_line}");
    }

    let o = run(&[
        "train",
        "--model",
        "dt",
        "--data",
        s(&p("all.csv")),
        "--features",
        "a,n,aa",
        "--out",
        s(&p("dt3.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("dt3.json")).unwrap()).unwrap();
    assert_eq!(m["feature_names"], serde_json::json!(["a", "n", "aa"]));

    let o = run(&["rank", "--data", s(&p("all.csv")), "--components", "2", "--out", s(&p("rank.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("rank.json")).unwrap()).unwrap();
    assert_eq!(r["ranking"].as_array().unwrap().len(), 30);

    let o = run(&[
        "ablate",
        "--data",
        s(&p("all.csv")),
        "--exclusions",
        "1",
        "--trees",
        "5",
        "--epochs",
        "50",
        "--out",
        s(&p("abl.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let abl = fs::read_to_string(p("abl.csv")).unwrap();
    assert_eq!(abl.lines().count(), 1 + 5 * 3);
    assert!(abl.lines().nth(1).unwrap().starts_with("BLNS,dt,20,"));
}

#[test]
fn simulate_preset_matches_shipped_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let dump = dir.path().join("dump.json");
    let o = run(&["simulate", "--scenario", "inverter_dos", "--dump-scenario", s(&dump), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&dump).unwrap(), fs::read_to_string(data("scenarios/inverter_dos.json")).unwrap());
    let o = run(&["simulate", "--scenario-file", s(&data("scenarios/inverter_dos.json")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let o = run(&["simulate", "--scenario", "nominal", "--pno-variant", "literal", "--out", s(&b)]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn report_draws_a_deterministic_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sim.csv");
    assert_eq!(code(&run(&["simulate", "--scenario", "mppt_dos", "--out", s(&csv)])), 0);
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    for out in [&a, &b] {
        let o = run(&[
            "report",
            "--input",
            s(&csv),
            "--columns",
            "pv_kw,diesel_kw",
            "--title",
            "PV & diesel",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let svg = fs::read_to_string(&a).unwrap();
    assert_eq!(svg, fs::read_to_string(&b).unwrap());
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    assert_eq!(svg.matches("stroke-width=\"1.5\"").count(), 2);
    assert!(svg.contains("PV &amp; diesel"));
    let o = run(&["report", "--input", s(&csv), "--columns", "nope", "--out", s(&a)]);
    assert_eq!(code(&o), 2);
}
