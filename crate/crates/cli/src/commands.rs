//! Subcommand implementations and the library-level pipeline they share.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Array3, ArrayView3, Axis};
use rsig_core::data::{self, Dataset, DatasetKind};
use rsig_core::generator::{draw_noise, CondGeneratorParams, GeneratorConfig, GeneratorParams};
use rsig_core::metrics::{self, EvalConfig, MetricsReport};
use rsig_core::training::{self, AdamHyper, TrainConfig, TrainHistory};
use rsig_core::{sample_rs_params, RsParams};

use crate::config::{ExperimentConfig, Mode, Source};
use crate::manifest::{self, Manifest};
use crate::model::{Generator, Model};
use crate::svg::{line_chart, Series};
use crate::{
    CliError, Command, ConfigArgs, EvaluateArgs, GenerateArgs, IngestArgs, PlotArgs, Process, SplitArgs, TrainArgs,
    OUT_DIR_ENV,
};

type Result<T> = std::result::Result<T, CliError>;

/// Samples generated per forward pass; bounds the memory of the recorded trace.
const CHUNK: usize = 4096;

pub fn dispatch(cmd: Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Simulate { process } => simulate(process, argv),
        Command::Ingest(a) => ingest(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Generate(a) => generate(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Plot(a) => plot(a, argv),
    }
}

/// `given`, or `default_name` inside `$RSIG_OUT_DIR` (current directory if unset).
pub fn out_path(given: Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    let path = given.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")).join(default_name)
    });
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn window_spec(horizon: usize, split: &SplitArgs) -> Result<(usize, Option<(usize, usize)>)> {
    match (split.past, split.future) {
        (Some(p), Some(q)) if p > 0 && q > 0 => Ok((p + q, Some((p, q)))),
        (Some(_), Some(_)) => Err(CliError::Usage("--past and --future must be positive".into())),
        _ => Ok((horizon, None)),
    }
}

fn save_dataset(ds: Dataset, split: SplitArgs, default_name: &str, manifest: Manifest) -> Result<()> {
    let ds = data::train_test_split(ds, split.train_frac, split.split_seed)?;
    let path = out_path(split.out, default_name)?;
    ds.save(&path)?;
    manifest
        .seed("split_seed", split.split_seed)
        .output(&path)?
        .output(&path.with_extension("csv"))?
        .write(&manifest::path_for(&path))?;
    eprintln!("wrote {} ({} x {} x {})", path.display(), ds.len(), ds.horizon(), ds.dim());
    Ok(())
}

fn simulate(process: Process, argv: &[String]) -> Result<()> {
    let manifest = Manifest::new("simulate", argv);
    match process {
        Process::Bm { mu, sigma, horizon, n, seed, split } => {
            let (len, windowed) = window_spec(horizon, &split)?;
            let mut ds = data::simulate_bm(mu, sigma, len, n, seed)?;
            if let Some((past, future)) = windowed {
                ds.kind = DatasetKind::Windowed { past, future };
            }
            save_dataset(ds, split, "bm.json", manifest.seed("seed", seed))
        }
        Process::Ar { phi, sigma, horizon, burn_in, n, seed, split } => {
            let (len, windowed) = window_spec(horizon, &split)?;
            let mut ds = data::simulate_ar(&phi, sigma, len, burn_in, n, seed)?;
            if let Some((past, future)) = windowed {
                ds.kind = DatasetKind::Windowed { past, future };
            }
            for note in &ds.notes {
                eprintln!("warning: {note}");
            }
            save_dataset(ds, split, "ar.json", manifest.seed("seed", seed))
        }
    }
}

fn returns_dataset(csv: &Path, horizon: usize, stride: usize, windowed: Option<(usize, usize)>) -> Result<(Dataset, usize)> {
    let prices = data::load_close_prices(csv)?;
    let returns = data::log_returns(&prices.close)?;
    let series = data::column(&returns);
    let mut ds = match windowed {
        Some((p, q)) => data::past_future_windows(series.view(), p, q)?,
        None => data::rolling_windows(series.view(), horizon, stride)?,
    };
    ds.provenance = format!("{} log-returns of {}", ds.provenance, csv.display());
    if prices.skipped > 0 {
        ds.notes.push(format!("skipped {} malformed rows", prices.skipped));
    }
    Ok((ds, prices.skipped))
}

fn ingest(a: IngestArgs, argv: &[String]) -> Result<()> {
    let (_, windowed) = window_spec(a.horizon, &a.split)?;
    let (ds, skipped) = returns_dataset(&a.csv, a.horizon, a.stride, windowed)?;
    eprintln!("ingested {}: {} windows, {skipped} rows skipped", a.csv.display(), ds.len());
    let manifest = Manifest::new("ingest", argv).input(&a.csv)?.note(format!("skipped_rows={skipped}"));
    save_dataset(ds, a.split, "returns.json", manifest)
}

/// Builds the dataset described by `cfg.data`, split per the config.
pub fn dataset_from_config(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let len = cfg.window_len();
    let windowed = (cfg.mode == Mode::Cond).then_some((cfg.generator.past, cfg.generator.future));
    let mut ds = match d.source {
        Source::Bm => data::simulate_bm(d.mu, d.sigma, len, d.n_paths, d.seed)?,
        Source::Ar => data::simulate_ar(&d.phis, d.sigma, len, d.burn_in, d.n_paths, d.seed)?,
        Source::Csv => {
            let path = d.csv_path.as_ref().ok_or_else(|| CliError::Usage("data.csv_path is not set".into()))?;
            returns_dataset(path, len, 1, windowed)?.0
        }
    };
    if let Some((past, future)) = windowed {
        ds.kind = DatasetKind::Windowed { past, future };
    }
    Ok(data::train_test_split(ds, d.train_frac, d.split_seed)?)
}

/// Loads `path` (splitting it per the config if it has no split) or builds the configured dataset.
pub fn dataset_for(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Dataset> {
    let ds = match path {
        Some(p) => {
            let ds = Dataset::load(p)?;
            if ds.split.is_some() {
                ds
            } else {
                data::train_test_split(ds, cfg.data.train_frac, cfg.data.split_seed)?
            }
        }
        None => dataset_from_config(cfg)?,
    };
    if ds.horizon() != cfg.window_len() {
        return Err(CliError::Runtime(format!(
            "dataset windows have length {}, the config expects {}",
            ds.horizon(),
            cfg.window_len()
        )));
    }
    Ok(ds)
}

pub fn resolve_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut overrides = a.set.clone();
    overrides.extend(a.steps.map(|v| format!("training.steps={v}")));
    overrides.extend(a.batch.map(|v| format!("training.batch={v}")));
    overrides.extend(a.lr.map(|v| format!("training.learning_rate={v:?}")));
    overrides.extend(a.mc_width.map(|v| format!("training.mc_width={v}")));
    match (&a.config, &a.preset) {
        (Some(path), _) => ExperimentConfig::load(path, &overrides),
        (None, Some(name)) => ExperimentConfig::from_preset(name, &overrides),
        (None, None) => Err(CliError::Usage("train needs --config or --preset".into())),
    }
}

pub fn generator_config(cfg: &ExperimentConfig, out_dim: usize) -> GeneratorConfig {
    let g = &cfg.generator;
    let horizon = match cfg.mode {
        Mode::Uncond => g.horizon,
        Mode::Cond => g.future,
    };
    let mut gc = GeneratorConfig::new(g.reservoir_dim, out_dim, cfg.noise_dim(), horizon);
    gc.n_brownian = g.n_brownian;
    gc.hidden = g.hidden;
    gc.fixed_std = g.weight_std;
    gc.activation = g.activation;
    gc.seed = g.seed;
    gc.rho5_trainable = g.rho5_trainable;
    gc.proj_radius = g.proj_radius;
    gc
}

pub fn train_config(cfg: &ExperimentConfig, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
    let t = &cfg.training;
    TrainConfig {
        steps: t.steps,
        batch: cfg.batch(),
        adam: AdamHyper { learning_rate: t.learning_rate, ..AdamHyper::default() },
        batch_seed: t.batch_seed,
        noise_seed: t.noise_seed,
        mc_width: t.mc_width,
        checkpoint_every: t.checkpoint_every,
        checkpoint_dir: t.checkpoint_every.and(checkpoint_dir),
        patience: t.patience,
    }
}

/// Trains the configured model on the training split of `ds`.
pub fn train_model(cfg: &ExperimentConfig, ds: &Dataset, checkpoint_dir: Option<PathBuf>) -> Result<(Model, TrainHistory)> {
    let train = ds.train();
    let d = ds.dim();
    let tc = train_config(cfg, checkpoint_dir);
    let gc = generator_config(cfg, d);
    let rs = sample_rs_params(cfg.rs.n_dim, d, gc.horizon, cfg.rs.weight_std, cfg.rs.activation, cfg.rs.seed)?;
    let (generator, history) = match cfg.mode {
        Mode::Uncond => {
            let (gen, history) = training::train_uncond(&tc, GeneratorParams::init(gc)?, &rs, train.view())?;
            (Generator::Uncond(gen), history)
        }
        Mode::Cond => {
            let gen = CondGeneratorParams::init(gc, cfg.generator.past, cfg.rs.n_dim)?;
            let (pasts, futures) = Dataset::past_future(&train, cfg.generator.past)?;
            let (gen, ols, history) =
                training::train_cond(&tc, gen, &rs, pasts.view(), futures.view(), cfg.training.ridge)?;
            (Generator::Cond { gen, ols }, history)
        }
    };
    Ok((Model { config: cfg.clone(), rs, generator }, history))
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve_config(&a.cfg)?;
    let ds = dataset_for(&cfg, a.data.as_deref())?;
    let out = out_path(a.out, "model.json")?;
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let ckpt = cfg.training.checkpoint_every.map(|_| out.with_file_name(format!("{stem}_checkpoints")));
    if let Some(dir) = &ckpt {
        std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
    }
    let (model, history) = train_model(&cfg, &ds, ckpt)?;
    model.save(&out)?;
    let hist_path = out.with_file_name(format!("{stem}.history.csv"));
    history.write_csv(&hist_path)?;
    if let Some(last) = history.records.last() {
        eprintln!("trained {} steps, final loss {:.6e}", last.step + 1, last.loss);
    }
    let mut m = Manifest::new("train", argv).with_config(&cfg);
    if let Some(p) = &a.data {
        m = m.input(p)?;
    }
    m.output(&out)?.volatile_output(&hist_path)?.write(&manifest::path_for(&out))
}

/// `n` unconditional paths; sample `i` always uses noise stream `i` of `seed`.
pub fn generate_uncond(gen: &GeneratorParams, n: usize, seed: u64) -> Result<Array3<f64>> {
    if n == 0 {
        return Err(CliError::Usage("sample count must be positive".into()));
    }
    let c = gen.config();
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let len = CHUNK.min(n - start);
        let noise = draw_noise(seed, start as u64, len, c.noise_dim, c.horizon - 1, c.n_brownian);
        parts.push(gen.forward(noise.v.view(), noise.dw.view())?.paths);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(CliError::runtime)
}

/// `per_past` futures for each past, grouped by past. Matches
/// `generate_for_features` on the full feature matrix.
pub fn generate_cond_grouped(
    gen: &CondGeneratorParams,
    rs: &RsParams,
    pasts: ArrayView3<f64>,
    per_past: usize,
    seed: u64,
) -> Result<Array3<f64>> {
    let feats = gen.condition_features(rs, pasts)?;
    let c = gen.core.config();
    let rows = (CHUNK / per_past).max(1);
    let mut parts = Vec::new();
    for start in (0..feats.nrows()).step_by(rows) {
        let end = (start + rows).min(feats.nrows());
        let total = (end - start) * per_past;
        let noise = draw_noise(seed, (start * per_past) as u64, total, c.noise_dim, c.horizon - 1, c.n_brownian);
        let mut input = Array2::zeros((total, c.init_input_dim()));
        input.slice_mut(s![.., ..c.noise_dim]).assign(&noise.v);
        for (j, feat) in feats.slice(s![start..end, ..]).rows().into_iter().enumerate() {
            input
                .slice_mut(s![j * per_past..(j + 1) * per_past, c.noise_dim..])
                .assign(&feat.broadcast((per_past, feat.len())).expect("row broadcast"));
        }
        parts.push(gen.core.forward(input.view(), noise.dw.view())?.paths);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(CliError::runtime)
}

/// Scores `model` against held-out `test` samples.
pub fn evaluate_model(model: &Model, test: ArrayView3<f64>, seed: u64) -> Result<MetricsReport> {
    let cfg = &model.config;
    let ecfg = EvalConfig {
        expect_normal: cfg.evaluation.expect_normal,
        sw_alpha: cfg.evaluation.sw_alpha,
        fingerprint: metrics::fingerprint(cfg.to_toml().as_bytes()),
    };
    let n = test.len_of(Axis(0));
    match &model.generator {
        Generator::Uncond(gen) => {
            let generated = generate_uncond(gen, n, seed)?;
            Ok(metrics::evaluate_uncond(&model.rs, generated.view(), test, &ecfg)?)
        }
        Generator::Cond { gen, ols } => {
            let (pasts, futures) = Dataset::past_future(&test.to_owned(), gen.past_len)?;
            let per_past = cfg.evaluation.per_past;
            let generated = generate_cond_grouped(gen, &model.rs, pasts.view(), per_past, seed)?;
            Ok(metrics::evaluate_cond(ols, &model.rs, pasts.view(), futures.view(), generated.view(), per_past, &ecfg)?)
        }
    }
}

fn evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    let model = Model::load(&a.model)?;
    let ds = dataset_for(&model.config, a.data.as_deref())?;
    let seed = a.seed.unwrap_or(model.config.evaluation.seed);
    let report = evaluate_model(&model, ds.test().view(), seed)?;
    let out = out_path(a.report, "report.json")?;
    report.save_json(&out)?;
    eprintln!(
        "train metric {:.4e}, cov {}, acf {:.4e}, sw {}",
        report.train_metric,
        report.cov_dist.map_or("n/a".into(), |c| format!("{c:.4e}")),
        report.acf_dist,
        report.sw_passed.map_or("n/a".into(), |s| format!("{}/{}", s.passed, s.total))
    );
    let mut m = Manifest::new("evaluate", argv).with_config(&model.config).seed("evaluation.seed", seed).input(&a.model)?;
    if let Some(p) = &a.data {
        m = m.input(p)?;
    }
    m.output(&out)?.write(&manifest::path_for(&out))
}

fn generate(a: GenerateArgs, argv: &[String]) -> Result<()> {
    let model = Model::load(&a.model)?;
    let (paths, provenance) = match &model.generator {
        Generator::Uncond(gen) => (generate_uncond(gen, a.n, a.seed)?, format!("generated seed={}", a.seed)),
        Generator::Cond { gen, .. } => {
            let ds = dataset_for(&model.config, a.data.as_deref())?;
            let test = ds.test();
            if a.window >= test.len_of(Axis(0)) {
                return Err(CliError::Usage(format!("--window {} exceeds the {} test windows", a.window, test.len_of(Axis(0)))));
            }
            let past = test.slice(s![a.window..a.window + 1, ..gen.past_len, ..]);
            let paths = generate_cond_grouped(gen, &model.rs, past, a.n, a.seed)?;
            (paths, format!("generated futures for test window {} seed={}", a.window, a.seed))
        }
    };
    let ds = Dataset::new(paths, DatasetKind::Unconditional, provenance)?;
    let out = out_path(a.out, "generated.json")?;
    ds.save(&out)?;
    let mut m = Manifest::new("generate", argv).with_config(&model.config).seed("seed", a.seed).input(&a.model)?;
    if let Some(p) = &a.data {
        m = m.input(p)?;
    }
    m.output(&out)?.output(&out.with_extension("csv"))?.write(&manifest::path_for(&out))
}

fn write_paths_csv(path: &Path, groups: &[(&str, ArrayView3<f64>, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::runtime)?;
    w.write_record(["source", "path", "t", "dim", "value"]).map_err(CliError::runtime)?;
    for (name, arr, offset) in groups {
        for ((i, t, j), v) in arr.indexed_iter() {
            w.write_record([name.to_string(), i.to_string(), (t + offset).to_string(), j.to_string(), v.to_string()])
                .map_err(CliError::runtime)?;
        }
    }
    w.flush().map_err(CliError::runtime)
}

fn lines(arr: ArrayView3<f64>, offset: usize) -> Vec<Vec<(f64, f64)>> {
    arr.outer_iter()
        .map(|p| p.column(0).iter().enumerate().map(|(t, &v)| ((t + offset) as f64, v)).collect())
        .collect()
}

fn kde_figure(dir: &Path, t: usize, real: &[f64], fake: &[f64]) -> Result<Vec<PathBuf>> {
    let lo = real.iter().chain(fake).copied().fold(f64::INFINITY, f64::min);
    let hi = real.iter().chain(fake).copied().fold(f64::NEG_INFINITY, f64::max);
    let (hr, hf) = (metrics::silverman_bandwidth(real)?, metrics::silverman_bandwidth(fake)?);
    let pad = 3.0 * hr.max(hf);
    let grid = metrics::kde_grid(lo - pad, hi + pad, 200);
    let (dr, df) = (metrics::kde_eval(real, hr, &grid), metrics::kde_eval(fake, hf, &grid));
    let csv_path = dir.join(format!("kde_t{t}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(CliError::runtime)?;
    w.write_record(["x", "real", "generated"]).map_err(CliError::runtime)?;
    for k in 0..grid.len() {
        w.write_record([grid[k].to_string(), dr[k].to_string(), df[k].to_string()]).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    let svg_path = dir.join(format!("kde_t{t}.svg"));
    let series = [
        Series { label: "test".into(), color: "steelblue", opacity: 1.0, lines: vec![grid.iter().copied().zip(dr).collect()] },
        Series { label: "generated".into(), color: "firebrick", opacity: 1.0, lines: vec![grid.iter().copied().zip(df).collect()] },
    ];
    write_text(&svg_path, &line_chart(&format!("KDE of marginal t={}", t + 1), &series))?;
    Ok(vec![csv_path, svg_path])
}

fn plot(a: PlotArgs, argv: &[String]) -> Result<()> {
    let model = Model::load(&a.model)?;
    let ds = dataset_for(&model.config, a.data.as_deref())?;
    let test = ds.test();
    let dir = out_path(a.out_dir.map(|d| d.join("manifest.json")), "plots/manifest.json")?
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let n_show = a.n_paths.min(test.len_of(Axis(0))).max(1);
    let mut files = Vec::new();
    let (real_marg, fake_marg, t_len) = match &model.generator {
        Generator::Uncond(gen) => {
            let fake = generate_uncond(gen, test.len_of(Axis(0)), a.seed)?;
            let (real_s, fake_s) = (test.slice(s![..n_show, .., ..]), fake.slice(s![..n_show, .., ..]));
            let csv_path = dir.join("paths.csv");
            write_paths_csv(&csv_path, &[("test", real_s, 0), ("generated", fake_s, 0)])?;
            let series = [
                Series { label: "test".into(), color: "steelblue", opacity: 0.4, lines: lines(real_s, 0) },
                Series { label: "generated".into(), color: "firebrick", opacity: 0.4, lines: lines(fake_s, 0) },
            ];
            let svg_path = dir.join("paths.svg");
            write_text(&svg_path, &line_chart("Test and generated paths", &series))?;
            files.extend([csv_path, svg_path]);
            (test, fake, model.config.generator.horizon)
        }
        Generator::Cond { gen, .. } => {
            let p = gen.past_len;
            let (pasts, futures) = Dataset::past_future(&test, p)?;
            let one = pasts.slice(s![..1, .., ..]);
            let fut = generate_cond_grouped(gen, &model.rs, one, n_show, a.seed)?;
            let csv_path = dir.join("paths.csv");
            write_paths_csv(&csv_path, &[("past", one, 0), ("future", futures.slice(s![..1, .., ..]), p), ("generated", fut.view(), p)])?;
            let last = one[[0, p - 1, 0]];
            let generated: Vec<Vec<(f64, f64)>> = lines(fut.view(), p)
                .into_iter()
                .map(|l| std::iter::once(((p - 1) as f64, last)).chain(l).collect())
                .collect();
            let series = [
                Series { label: "generated".into(), color: "firebrick", opacity: 0.3, lines: generated },
                Series { label: "observed".into(), color: "steelblue", opacity: 1.0, lines: lines(test.slice(s![..1, .., ..]), 0) },
            ];
            let svg_path = dir.join("paths.svg");
            write_text(&svg_path, &line_chart("Generated futures for one test past", &series))?;
            files.extend([csv_path, svg_path]);
            let pooled = generate_cond_grouped(gen, &model.rs, pasts.view(), 1, a.seed)?;
            (futures, pooled, gen.future_len)
        }
    };
    for t in [t_len / 2, t_len - 1] {
        let real = metrics::marginal(real_marg.view(), t, 0).to_vec();
        let fake = metrics::marginal(fake_marg.view(), t, 0).to_vec();
        match kde_figure(&dir, t, &real, &fake) {
            Ok(f) => files.extend(f),
            Err(e) => eprintln!("warning: no KDE for t={}: {e}", t + 1),
        }
    }
    let mut m = Manifest::new("plot", argv).with_config(&model.config).seed("seed", a.seed).input(&a.model)?;
    if let Some(p) = &a.data {
        m = m.input(p)?;
    }
    for f in &files {
        m = m.output(f)?;
    }
    m.write(&dir.join("manifest.json"))?;
    let _ = writeln!(std::io::stderr(), "wrote {} files to {}", files.len(), dir.display());
    Ok(())
}
