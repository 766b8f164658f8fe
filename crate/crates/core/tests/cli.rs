use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mirrorflow::cli::config::{BaselineConfig, ExperimentConfig, ScheduleKind};
use mirrorflow::cli::output::read_trajectory_csv;
use mirrorflow::cli::{run_experiment, MAIN_RUN};
use mirrorflow::dynamics::{BaselineForm, RunOutcome};
use mirrorflow::metrics::import_csv;
use tempfile::TempDir;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirrorflow")).args(args).output().unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::from_file(&config_path("synthetic.toml")).unwrap();
    config.dynamics.steps = 5000;
    config
}

#[test]
fn validate_only_accepts_bundled_configs() {
    for name in ["synthetic.toml", "wine_like.toml"] {
        let path = config_path(name);
        let out = bin(&["--config", path.to_str().unwrap(), "--validate-only"]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("config ok"));
    }
}

#[test]
fn missing_dataset_is_a_config_error_before_any_output() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        "[problem]\nkind = \"dataset\"\npath = \"nowhere.csv\"\nagents = 2\nrows_per_agent = 10\n",
    )
    .unwrap();
    let out = bin(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "[dynamics]\nstep = 10\n").unwrap();
    let out = bin(&["--config", cfg.to_str().unwrap(), "--validate-only"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn printed_defaults_parse_back() {
    let out = bin(&["--print-defaults"]);
    assert!(out.status.success());
    let parsed = ExperimentConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn stability_subcommand_writes_a_positive_certificate() {
    let dir = TempDir::new().unwrap();
    let path = config_path("synthetic.toml");
    let out = bin(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "stability"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stability.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["all_positive"], true);
    assert_eq!(json["report"]["hl_positive_definite"], true);
    assert!(json["report"]["min_real_part"].as_f64().unwrap() > 0.0);
    assert_eq!(json["report"]["order"], 27);
}

#[test]
fn oracle_on_wine_like_data() {
    let dir = TempDir::new().unwrap();
    let mut config = ExperimentConfig::from_file(&config_path("wine_like.toml")).unwrap();
    config.dynamics.steps = 1000;
    let oracle = mirrorflow::cli::oracle_run(&config, dir.path()).unwrap();
    assert!(oracle.gradient_ok, "{} > {}", oracle.gradient_norm, oracle.gradient_bound);
    assert_eq!(oracle.x_star.len(), 12);
    assert!(dir.path().join("x_star.csv").exists());
    assert!(dir.path().join("oracle.json").exists());
}

#[test]
fn oversized_step_exits_with_divergence_and_keeps_outputs() {
    let dir = TempDir::new().unwrap();
    let mut config = small_config();
    config.dynamics.dt = Some(5.0);
    config.dynamics.stride = 1;
    config.baselines.clear();
    let cfg = dir.path().join("big.toml");
    std::fs::write(&cfg, config.to_toml()).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("metadata.json").exists());
    let (_, rows) = read_trajectory_csv(&out_dir.join(format!("trajectory_{MAIN_RUN}.csv"))).unwrap();
    assert!(rows.len() > 1);
}

#[test]
fn diverging_baseline_does_not_abort_the_main_run() {
    let dir = TempDir::new().unwrap();
    let mut config = small_config();
    config.baselines = vec![BaselineConfig {
        kind: ScheduleKind::Constant,
        eta0: Some(50.0),
        form: BaselineForm::FullyScaled,
    }];
    let summary = run_experiment(&config, dir.path()).unwrap();
    assert!(matches!(summary.run(MAIN_RUN).unwrap().outcome, RunOutcome::Completed));
    let constant = summary.run("constant").unwrap();
    assert!(matches!(constant.outcome, RunOutcome::Diverged { .. }));
    assert!(summary.into_result().is_ok());
}

#[test]
fn run_outputs_round_trip_with_hash() {
    let dir = TempDir::new().unwrap();
    let mut config = small_config();
    config.dynamics.steps = 20_000;
    let summary = run_experiment(&config, dir.path()).unwrap();
    let hash = config.hash();
    assert_eq!(summary.metadata.config_hash, hash);

    let main = summary.curve(MAIN_RUN).unwrap();
    assert!(main.last_suboptimality().unwrap() < 1e-10);

    let imported = import_csv(&dir.path().join("comparison.csv")).unwrap();
    imported.verify_hash(&hash).unwrap();
    assert!(imported.verify_hash("0000").is_err());
    for name in [MAIN_RUN, "diminishing", "constant"] {
        let (a, b) = (imported.get(name).unwrap(), summary.curve(name).unwrap());
        assert_eq!(a, b, "{name}");
    }

    let (file_hash, rows) = read_trajectory_csv(&dir.path().join(format!("trajectory_{MAIN_RUN}.csv"))).unwrap();
    assert_eq!(file_hash.as_deref(), Some(hash.as_str()));
    assert_eq!(rows.len(), main.len());
    let steps: Vec<usize> = rows.iter().map(|(s, _)| *s).collect();
    assert_eq!(steps, main.steps);
}

#[test]
fn hash_ignores_output_directory_but_not_parameters() {
    let a = small_config();
    let mut b = a.clone();
    b.output.directory = PathBuf::from("elsewhere");
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}
