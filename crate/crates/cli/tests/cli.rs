use std::path::Path;
use std::process::{Command, Output};

fn sgdlab(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(args)
        .env("SGDLAB_OUT", out_dir)
        .current_dir(out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SWEEP: &str = r#"
model_kind = "perceptron"
replicas = 2
base_seed = 5
max_steps = 10000000

[grid]
alpha = [32768.0]
temperature = [0.01, 0.03, 0.1]
batch_size = [2]
P = [64, 128, 256]
chi = [1.5]
d = [16]
"#;

fn run_small_sweep(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sweep.toml");
    std::fs::write(&cfg, SWEEP).unwrap();
    let store = dir.join("runs.jsonl");
    let o = sgdlab(&["sweep", "-c", cfg.to_str().unwrap(), "-o", store.to_str().unwrap(), "-j", "2"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("18 records (0 diverged, 0 failed)"), "{}", stdout(&o));
    store
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgdlab(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = sgdlab(&["evt", "--trials", "many"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgdlab(&["sweep", "-c", "nowhere.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SWEEP.replace("temperature = [0.01, 0.03, 0.1]", "temperature = []")).unwrap();
    let o = sgdlab(&["sweep", "-c", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml"));
    assert!(!dir.path().join("sweep.jsonl").exists());
}

#[test]
fn evt_prints_slope_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgdlab(&["evt", "--chi", "1.5", "--pmin", "64", "--pmax", "1024", "--trials", "200"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("slope "), "{text}");
    assert!(text.contains("predicted 0.4000"));
    let csv = std::fs::read_to_string(dir.path().join("evt_chi1.5.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 200);
}

#[test]
fn sweep_then_fit_collapse_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let store = run_small_sweep(dir.path());
    let store = store.to_str().unwrap();
    assert_eq!(std::fs::read_to_string(store).unwrap().lines().count(), 18);

    let o = sgdlab(&["fit", "-i", store, "--y", "w_perp_norm"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("w_perp_norm ~ temperature^"));

    let o = sgdlab(&["fit", "-i", store, "--report", "--y", "w1_final"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"gamma_over_delta\""));

    let o = sgdlab(&["collapse", "-i", store, "--y", "w1_final", "--step", "0.05"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("a = "));

    let o = sgdlab(&["plot", "-i", store, "--y", "t_star", "--y-rescale", "-1.5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("3 series, 18 points"), "{}", stdout(&o));
    let svg = std::fs::read_to_string(dir.path().join("t_star_vs_temperature.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(dir.path().join("t_star_vs_temperature.csv").exists());

    // a second invocation finds the store complete and leaves it as is
    let before = std::fs::read(store).unwrap();
    run_small_sweep(dir.path());
    assert_eq!(std::fs::read(store).unwrap(), before);
}

#[test]
fn plot_of_unknown_field_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = run_small_sweep(dir.path());
    let o = sgdlab(&["plot", "-i", store.to_str().unwrap(), "--y", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonsense"));
}

#[test]
fn boundary_rendering_uses_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("figs");
    let o = Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(["boundary2d", "--p", "40", "--temperature", "0.05", "--arrows", "4"])
        .env("SGDLAB_OUT", &out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("boundary.svg")).unwrap();
    assert!(svg.contains("model-boundary"));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["d"], 2);
    assert_eq!(rec["diverged"], false);
}

#[test]
fn training_commands_print_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgdlab(&["train-perceptron", "--chi", "1", "--p", "128", "--test-size", "100"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["P"], 128);
    assert!(rec["test_error"].is_number());

    let o = sgdlab(
        &["train-mlp", "--p", "64", "--depth", "2", "--width", "16", "-b", "8", "--temperature", "0.001"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["depth"], 2);
    assert_eq!(rec["loss_kind"], "hinge");
    assert_eq!(rec["regime_alpha"], "lazy");

    let o = sgdlab(&["sample", "--p", "10", "-d", "3"], dir.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("sample.csv")).unwrap().lines().count(), 11);
}

#[test]
fn bad_parameters_exit_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgdlab(&["train-perceptron", "--p", "4", "-b", "8"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}
