use std::path::Path;
use std::process::{Command, Output};

use fedal::harness::{
    companion_path, parse_config, parse_config_with, run_experiment, Overrides, ResultTable, CSV_HEADER,
    SUMMARY_HEADER,
};
use fedal::Error;

const SMALL: &str = r#"
seed = 3
repeats = 2

[dataset]
kind = "blobs"
train = 300
test = 200
classes = 3

[partition]
clients = 3

[model]
hidden = [8]

[fl]
max_global_iters = 20

[independent]
max_global_iters = 20

[al]
strategies = ["random", "s_al", "f_al", "full_budget"]
scorers = ["entropy", "coreset"]
rounds = 3
budget = 45
"#;

fn fedal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedal")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let cfg = write_config(dir.path(), SMALL);
    let ok = fedal(&["run", &cfg, "--out", out.to_str().unwrap(), "--repeats", "1", "--strategy", "f_al"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 * 3, "two scorers, three rounds");
    assert!(companion_path(&out, "summary").exists());

    let zero_rounds = write_config(dir.path(), &SMALL.replace("rounds = 3", "rounds = 0"));
    let bad = fedal(&["run", &zero_rounds]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("al.rounds"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(fedal(&["run", missing.to_str().unwrap()]).status.code(), Some(2));

    let csv_cfg = write_config(
        dir.path(),
        "[dataset]\nkind = \"csv\"\ntrain_path = \"/nonexistent/train.csv\"\ntest_path = \"/nonexistent/test.csv\"\n",
    );
    assert_eq!(fedal(&["run", &csv_cfg]).status.code(), Some(1));
}

#[test]
fn overrides_select_one_combination() {
    let o = Overrides { strategy: Some("s_al".into()), scorer: Some("coreset".into()), ..Overrides::default() };
    let cfg = parse_config_with(SMALL.as_bytes(), &o).unwrap();
    assert_eq!(cfg.runs.len(), 1);
    assert_eq!(cfg.runs[0].strategy.name(), "s_al");
    assert_eq!(cfg.runs[0].scorer_name(), "coreset");
    let bad = Overrides { strategy: Some("greedy".into()), ..Overrides::default() };
    assert!(parse_config_with(SMALL.as_bytes(), &bad).is_err());
}

#[test]
fn results_are_reproducible_and_complete() {
    let cfg = parse_config(SMALL.as_bytes()).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(ResultTable::from_csv(&a.to_csv()).unwrap().to_csv(), a.to_csv());

    // 1 random + 2 scorers x 2 AL strategies + full budget.
    assert_eq!(cfg.runs.len(), 6);
    assert_eq!(a.rows().len(), 6 * cfg.repeats * cfg.rounds);
    let initial: usize = cfg.prepare(1).unwrap().pools.iter().map(|p| p.labeled().len()).sum();
    let n = 300.0;
    for row in a.rows() {
        let expected = if row.strategy == "full_budget" {
            1.0
        } else {
            (initial + row.round * 45 / cfg.rounds) as f64 / n
        };
        assert!((row.labeled_fraction - expected).abs() < 1e-12, "{row:?}");
    }

    let summary = a.summary();
    assert_eq!(summary.len(), 6 * cfg.rounds);
    for s in &summary {
        let accs: Vec<f64> = a
            .rows()
            .iter()
            .filter(|r| r.strategy == s.strategy && r.scorer == s.scorer && r.round == s.round)
            .map(|r| r.test_accuracy)
            .collect();
        assert_eq!(s.repeats, accs.len());
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((s.mean_accuracy - mean).abs() < 1e-12);
    }
    assert!(a.summary_csv().starts_with(SUMMARY_HEADER));
}

#[test]
fn budget_larger_than_pool_fails_before_training() {
    let toml = SMALL.replace("budget = 45", "budget = 900");
    let cfg = parse_config(toml.as_bytes());
    let err = match cfg {
        Err(e) => e,
        Ok(cfg) => run_experiment(&cfg).unwrap_err(),
    };
    let inner = match &err {
        Error::Run { source, .. } => source.as_ref(),
        other => other,
    };
    assert!(matches!(inner, Error::Config { key, .. } if key == "al.budget"), "{err}");
}

#[test]
fn prepare_is_deterministic_per_repeat() {
    let cfg = parse_config(SMALL.as_bytes()).unwrap();
    let (a, b, c) = (cfg.prepare(1).unwrap(), cfg.prepare(1).unwrap(), cfg.prepare(2).unwrap());
    assert_eq!(a.pools, b.pools);
    assert_eq!(a.train.features(), b.train.features());
    assert_ne!(a.pools, c.pools);
    assert_eq!(a.seed, cfg.seed + 1);
}
