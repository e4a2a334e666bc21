use std::path::{Path, PathBuf};

use rsig_cli::config::{ExperimentConfig, Mode, PRESETS};
use rsig_cli::run;
use rsig_core::data::Dataset;
use rsig_core::metrics::MetricsReport;
use rsig_core::Activation;

fn rsig(args: &[&str]) -> i32 {
    run(std::iter::once("rsig").chain(args.iter().copied()))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const TINY: [&str; 14] = [
    "--set",
    "rs.n_dim=6",
    "--set",
    "generator.reservoir_dim=6",
    "--set",
    "generator.hidden=5",
    "--set",
    "data.n_paths=120",
    "--set",
    "evaluation.per_past=3",
    "--steps",
    "4",
    "--batch",
    "16",
];

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn shipped_configs_match_presets_and_hyperparameter_tables() {
    for name in PRESETS {
        let path = configs_dir().join(format!("{name}.toml"));
        let cfg = ExperimentConfig::load(&path, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(cfg, ExperimentConfig::preset(name).unwrap(), "{name}");

        assert_eq!(cfg.training.learning_rate, 1e-4);
        assert_eq!(cfg.training.steps, 2500);
        assert_eq!(cfg.rs.n_dim, 80);
        assert_eq!(cfg.generator.reservoir_dim, 80);
        assert_eq!(cfg.rs.weight_std, 1.0);
        assert_eq!(cfg.generator.weight_std, 1.0);
        assert_eq!(cfg.rs.activation, Activation::Sigmoid);
        assert_eq!(cfg.generator.activation, Activation::Sigmoid);
        assert!(!cfg.generator.rho5_trainable);
        assert_eq!(cfg.data.train_frac, 0.8);
        match cfg.mode {
            Mode::Uncond => {
                assert_eq!(cfg.batch(), 1500);
                assert_eq!(cfg.generator.horizon, 10);
                assert_eq!(cfg.noise_dim(), 5);
            }
            Mode::Cond => {
                assert_eq!(cfg.batch(), 1000);
                assert_eq!((cfg.generator.past, cfg.generator.future), (5, 10));
                assert_eq!(cfg.noise_dim(), 15);
            }
        }
    }
}

#[test]
fn simulate_writes_the_requested_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "d.json");
    assert_eq!(rsig(&["simulate", "bm", "--mu", "0", "--sigma", "1", "--T", "10", "--n", "10000", "--seed", "1", "--out", &out]), 0);
    let ds = Dataset::load(Path::new(&out)).unwrap();
    assert_eq!(ds.samples.dim(), (10000, 10, 1));
    assert!(dir.path().join("d.manifest.json").exists());

    let ar = p(dir.path(), "ar.json");
    assert_eq!(rsig(&["simulate", "ar", "--phi", "-0.5", "--T", "6", "--n", "20", "--past", "2", "--future", "4", "--out", &ar]), 0);
    let ds = Dataset::load(Path::new(&ar)).unwrap();
    assert_eq!(ds.samples.dim(), (20, 6, 1));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(rsig(&["frobnicate"]), 2);
    assert_eq!(rsig(&["simulate", "bm", "--bogus", "1"]), 2);
    assert_eq!(rsig(&["train", "--preset", "nope"]), 2);
    assert_eq!(rsig(&["train"]), 2);
    assert_eq!(rsig(&["evaluate", "--model", "/nonexistent/model.json"]), 1);
    assert_eq!(rsig(&["ingest", "--csv", "/nonexistent/prices.csv"]), 1);
    assert_eq!(rsig(&["--help"]), 0);
}

fn train_tiny(dir: &Path, preset: &str, out: &str, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--preset", preset];
    args.extend(TINY);
    args.extend(extra);
    let out = p(dir, out);
    args.extend(["--out", &out]);
    rsig(&args)
}

#[test]
fn training_and_evaluation_are_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(train_tiny(d, "bm0", "a.json", &[]), 0);
    assert_eq!(train_tiny(d, "bm0", "b.json", &[]), 0);
    let (a, b) = (std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(a, b);
    assert!(d.join("a.history.csv").exists());
    assert!(d.join("a.manifest.json").exists());

    for r in ["r1.json", "r2.json"] {
        assert_eq!(rsig(&["evaluate", "--model", &p(d, "a.json"), "--report", &p(d, r)]), 0);
    }
    let (r1, r2) = (std::fs::read(d.join("r1.json")).unwrap(), std::fs::read(d.join("r2.json")).unwrap());
    assert_eq!(r1, r2);
    let report = MetricsReport::load_json(&d.join("r1.json")).unwrap();
    assert!(report.train_metric.is_finite() && report.acf_dist.is_finite());
    assert!(report.cov_dist.is_some());
    let sw = report.sw_passed.unwrap();
    assert_eq!(sw.total, 9);
    let raw: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    for key in ["train_metric", "cov_dist", "acf_dist", "sw_passed"] {
        assert!(raw.get(key).is_some(), "{key}");
    }
}

#[test]
fn evaluate_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.json");
    assert_eq!(rsig(&["simulate", "bm", "--T", "10", "--n", "120", "--out", &data]), 0);
    assert_eq!(train_tiny(d, "bm0", "m.json", &["--data", &data]), 0);
    let snapshot = |f: &str| std::fs::read(d.join(f)).unwrap();
    let before: Vec<_> = ["m.json", "d.json", "d.csv"].iter().map(|f| snapshot(f)).collect();
    assert_eq!(rsig(&["evaluate", "--model", &p(d, "m.json"), "--data", &data, "--report", &p(d, "r.json")]), 0);
    let after: Vec<_> = ["m.json", "d.json", "d.csv"].iter().map(|f| snapshot(f)).collect();
    assert_eq!(before, after);
}

#[test]
fn mismatched_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "d.json");
    assert_eq!(rsig(&["simulate", "bm", "--T", "7", "--n", "50", "--out", &data]), 0);
    assert_eq!(train_tiny(dir.path(), "bm0", "m.json", &["--data", &data]), 1);
}

fn write_prices(path: &Path, n: usize) {
    let mut text = String::from("date,open,close\n");
    let start = chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    let mut price = 100.0f64;
    for i in 0..n {
        price *= (0.01 * ((i * 7919 % 13) as f64 - 6.0) / 6.0).exp();
        let date = start + chrono::Days::new(i as u64);
        text.push_str(&format!("{date},0,{price}\n"));
    }
    text.push_str("2030-01-01,0,\n");
    std::fs::write(path, text).unwrap();
}

#[test]
fn market_data_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("px.csv");
    write_prices(&csv, 300);
    let out = p(d, "r.json");
    assert_eq!(rsig(&["ingest", "--csv", &csv.to_string_lossy(), "--T", "10", "--out", &out]), 0);
    // 300 prices, 299 returns, 299 - 10 + 1 windows
    assert_eq!(Dataset::load(Path::new(&out)).unwrap().len(), 290);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.manifest.json")).unwrap()).unwrap();
    assert!(manifest["notes"][0].as_str().unwrap().contains("skipped_rows=1"));

    let cond = p(d, "rc.json");
    assert_eq!(rsig(&["ingest", "--csv", &csv.to_string_lossy(), "--past", "5", "--future", "10", "--out", &cond]), 0);
    assert_eq!(Dataset::load(Path::new(&cond)).unwrap().len(), 299 - 15 + 1);

    let csv_set = format!("data.csv_path={:?}", csv.to_string_lossy());
    assert_eq!(train_tiny(d, "spx", "spx.json", &["--set", &csv_set]), 0);
    assert_eq!(rsig(&["evaluate", "--model", &p(d, "spx.json"), "--report", &p(d, "spx_r.json")]), 0);
    let report = MetricsReport::load_json(&d.join("spx_r.json")).unwrap();
    assert!(report.cov_dist.is_some() && report.sw_passed.is_none());
}

#[test]
fn conditional_pipeline_generate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(train_tiny(d, "bm0_cond", "c.json", &["--mc-width", "3"]), 0);
    assert_eq!(rsig(&["evaluate", "--model", &p(d, "c.json"), "--report", &p(d, "cr.json")]), 0);
    let report = MetricsReport::load_json(&d.join("cr.json")).unwrap();
    assert!(report.cov_dist.is_none());
    assert_eq!(report.sw_passed.unwrap().total, 10);

    let g = p(d, "g.json");
    assert_eq!(rsig(&["generate", "--model", &p(d, "c.json"), "--n", "7", "--window", "2", "--out", &g]), 0);
    assert_eq!(Dataset::load(Path::new(&g)).unwrap().samples.dim(), (7, 10, 1));

    let plots = p(d, "plots");
    assert_eq!(rsig(&["plot", "--model", &p(d, "c.json"), "--out-dir", &plots, "--n-paths", "5"]), 0);
    for f in ["paths.svg", "paths.csv", "kde_t5.svg", "kde_t5.csv", "kde_t9.svg", "kde_t9.csv", "manifest.json"] {
        assert!(d.join("plots").join(f).exists(), "{f}");
    }
}

#[test]
fn unconditional_generate_and_plot_use_default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(train_tiny(d, "ar1_0.9", "m.json", &[]), 0);
    let g = p(d, "g.json");
    assert_eq!(rsig(&["generate", "--model", &p(d, "m.json"), "--n", "5000", "--seed", "3", "--out", &g]), 0);
    let gen = Dataset::load(Path::new(&g)).unwrap();
    assert_eq!(gen.samples.dim(), (5000, 10, 1));
    // chunked generation matches a single forward pass
    let g2 = p(d, "g2.json");
    assert_eq!(rsig(&["generate", "--model", &p(d, "m.json"), "--n", "10", "--seed", "3", "--out", &g2]), 0);
    let head = Dataset::load(Path::new(&g2)).unwrap();
    assert_eq!(head.samples, gen.samples.slice(ndarray::s![..10, .., ..]));

    std::env::set_var(rsig_cli::OUT_DIR_ENV, d.join("env_out"));
    assert_eq!(rsig(&["plot", "--model", &p(d, "m.json")]), 0);
    assert!(d.join("env_out/plots/paths.svg").exists());
    assert!(d.join("env_out/plots/kde_t9.csv").exists());
}
