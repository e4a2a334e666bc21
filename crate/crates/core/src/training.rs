//! Gradient engine, Adam and the unconditional / conditional training loops.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::generator::{CondGeneratorParams, GenTrace, GeneratorParams, ParamKey, Trainable};
use crate::linalg;
use crate::rng;
use crate::signature::RsParams;

/// Batched randomised-signature pass with the activations kept for backprop.
struct RsTrace {
    paths: Array3<f64>,
    /// `σ(A₁ RS_{t−1} + ξ₁)` for `t = 1..T`.
    drift: Vec<Array2<f64>>,
    /// `σ(A₂ⁱ RS_{t−1} + ξ₂ⁱ)` per step and input coordinate.
    diff: Vec<Vec<Array2<f64>>>,
    delta: Array2<f64>,
}

impl RsTrace {
    fn forward(rs: &RsParams, paths: ArrayView3<f64>) -> Result<Self> {
        let (n, t_len, d) = paths.dim();
        if t_len != rs.horizon() || d != rs.in_dim() {
            return shape_err(format!(
                "paths of shape {:?} do not fit RS params (T={}, d={})",
                paths.dim(),
                rs.horizon(),
                rs.in_dim()
            ));
        }
        let act = rs.activation();
        let mut state = Array2::<f64>::zeros((n, rs.n_dim()));
        let mut drift = Vec::with_capacity(t_len);
        let mut diff = Vec::with_capacity(t_len);
        let mut delta = Array2::zeros((n, rs.n_dim()));
        for t in 0..t_len {
            let mut u = state.dot(&rs.a1().t());
            u += rs.xi1();
            u.mapv_inplace(|z| act.eval(z));
            let mut inc = u.clone();
            let mut v_t = Vec::with_capacity(d);
            for i in 0..d {
                let mut v = state.dot(&rs.a2()[i].t());
                v += &rs.xi2()[i];
                v.mapv_inplace(|z| act.eval(z));
                let x = paths.slice(s![.., t, i]);
                for (mut row, (&xi, vrow)) in inc.rows_mut().into_iter().zip(x.iter().zip(v.rows())) {
                    row.scaled_add(xi, &vrow);
                }
                v_t.push(v);
            }
            state += &inc;
            drift.push(u);
            diff.push(v_t);
            delta = inc;
        }
        Ok(Self { paths: paths.to_owned(), drift, diff, delta })
    }

    /// Pulls `∂L/∂ΔRS_T` (one row per path) back to `∂L/∂x`.
    fn backward(&self, rs: &RsParams, grad_delta: ArrayView2<f64>) -> Array3<f64> {
        let act = rs.activation();
        let (_, t_len, d) = self.paths.dim();
        let mut grad_x = Array3::zeros(self.paths.dim());
        // gradient flowing into the increment of step t
        let mut g = grad_delta.to_owned();
        for t in (0..t_len).rev() {
            // the increment at step t depends on RS_{t−1}; carry g to RS_{t−1}
            let mut g_state = if t + 1 == t_len { Array2::zeros(g.dim()) } else { g.clone() };
            let mut g_u = g.clone();
            g_u.zip_mut_with(&self.drift[t], |a, &y| *a *= act.derivative_from_output(y));
            g_state += &g_u.dot(rs.a1());
            for i in 0..d {
                let v = &self.diff[t][i];
                let x = self.paths.slice(s![.., t, i]);
                let gx = (&g * v).sum_axis(Axis(1));
                grad_x.slice_mut(s![.., t, i]).assign(&gx);
                let mut g_v = g.clone();
                for ((mut row, &xi), vrow) in g_v.rows_mut().into_iter().zip(x.iter()).zip(v.rows()) {
                    row.zip_mut_with(&vrow, |a, &y| *a *= xi * act.derivative_from_output(y));
                }
                g_state += &g_v.dot(&rs.a2()[i]);
            }
            // RS_{t−1} feeds the increment of step t−1 through the running sum
            g = g_state;
        }
        grad_x
    }
}

/// Gradients of a recorded loss, one tensor per trainable parameter.
///
/// Only trainable tensors have entries; the frozen reservoir weights never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    inner: Trainable,
}

impl Gradients {
    pub fn get(&self, key: ParamKey) -> Option<&[f64]> {
        Some(self.inner.tensor(key))
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> {
        ParamKey::ALL.into_iter()
    }

    pub fn as_trainable(&self) -> &Trainable {
        &self.inner
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }
}

/// A recorded loss evaluation; [`GradTape::backward`] may be called once.
pub struct GradTape<'a> {
    gen: &'a GeneratorParams,
    rs: RsParams,
    gen_trace: GenTrace,
    rs_trace: RsTrace,
    grad_delta: Array2<f64>,
    loss: f64,
    consumed: bool,
}

impl std::fmt::Debug for GradTape<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradTape")
            .field("loss", &self.loss)
            .field("batch", &self.grad_delta.nrows())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl GradTape<'_> {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn fake_paths(&self) -> &Array3<f64> {
        &self.gen_trace.paths
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn backward(&mut self) -> Result<Gradients> {
        if self.consumed {
            return Err(RsigError::State("gradient tape has already been consumed".into()));
        }
        self.consumed = true;
        let grad_paths = self.rs_trace.backward(&self.rs, self.grad_delta.view());
        let inner = self.gen.backward(&self.gen_trace, grad_paths.view())?;
        Ok(Gradients { inner })
    }
}

/// `‖mean(a) − mean(b)‖²` of ΔRS_T features.
pub fn squared_rs_w1(rs: &RsParams, a: ArrayView3<f64>, b: ArrayView3<f64>) -> Result<f64> {
    if a.len_of(Axis(0)) == 0 || b.len_of(Axis(0)) == 0 {
        return arg_err("sample sets must be nonempty");
    }
    let fa = rs.delta_terminal_batch(a)?.mean_axis(Axis(0)).expect("nonempty");
    let fb = rs.delta_terminal_batch(b)?.mean_axis(Axis(0)).expect("nonempty");
    let diff = fa - fb;
    Ok(diff.dot(&diff))
}

fn record_uncond<'a>(
    gen: &'a GeneratorParams,
    rs: &RsParams,
    real_mean: ArrayView1<f64>,
    batch: usize,
    noise_seed: u64,
) -> Result<GradTape<'a>> {
    let gen_trace = gen.generate_traced(batch, noise_seed)?;
    let rs_trace = RsTrace::forward(rs, gen_trace.paths.view())?;
    let fake_mean = rs_trace.delta.mean_axis(Axis(0)).expect("nonempty batch");
    let diff = &real_mean - &fake_mean;
    let loss = diff.dot(&diff);
    let row = diff.mapv(|v| -2.0 * v / batch as f64);
    let grad_delta = row.broadcast((batch, row.len())).expect("row broadcast").to_owned();
    Ok(GradTape { gen, rs: rs.clone(), gen_trace, rs_trace, grad_delta, loss, consumed: false })
}

/// Squared RS-W₁ between a real batch and an equally sized generated batch.
pub fn loss_uncond<'a>(
    gen: &'a GeneratorParams,
    rs: &RsParams,
    real_batch: ArrayView3<f64>,
    noise_seed: u64,
) -> Result<(f64, GradTape<'a>)> {
    let batch = real_batch.len_of(Axis(0));
    if batch == 0 {
        return arg_err("real batch is empty");
    }
    let real_mean = rs.delta_terminal_batch(real_batch)?.mean_axis(Axis(0)).expect("nonempty");
    let tape = record_uncond(gen, rs, real_mean.view(), batch, noise_seed)?;
    Ok((tape.loss, tape))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, shapes: &[usize]) -> Self {
        Self {
            hyper,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_trainable(hyper: AdamHyper, params: &Trainable) -> Self {
        let shapes: Vec<usize> = ParamKey::ALL.iter().map(|&k| params.tensor(k).len()).collect();
        Self::new(hyper, &shapes)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return shape_err(format!(
            "optimizer tracks {} tensors, got {} parameters and {} gradients",
            state.m.len(),
            params.len(),
            grads.len()
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[k].len() || g.len() != state.m[k].len() {
            return shape_err(format!("tensor {k} does not match its optimizer moments"));
        }
    }
    let h = state.hyper;
    state.step += 1;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for j in 0..p.len() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

fn apply_adam(state: &mut AdamState, gen: &mut GeneratorParams, grads: &Gradients) -> Result<()> {
    let g: Vec<&[f64]> = ParamKey::ALL.iter().map(|&k| grads.inner.tensor(k)).collect();
    let mut p = gen.trainable.tensors_mut();
    adam_step(state, &mut p, &g)?;
    gen.enforce_constraints();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamHyper,
    /// Seeds the batch selection.
    pub batch_seed: u64,
    /// Seeds the generator noise of every step.
    pub noise_seed: u64,
    /// Futures generated per past path in the conditional loop.
    pub mc_width: usize,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once the loss has not improved for this many steps.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2500,
            batch: 1500,
            adam: AdamHyper::default(),
            batch_seed: 0,
            noise_seed: 1,
            mc_width: 200,
            checkpoint_every: None,
            checkpoint_dir: None,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub final_report: Option<crate::metrics::MetricsReport>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Indices of one training batch; with replacement only when `batch > n`.
fn draw_batch(rng: &mut rand_chacha::ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch <= n {
        sample_indices(rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    }
}

struct EarlyStop {
    patience: Option<usize>,
    best: f64,
    since: usize,
}

impl EarlyStop {
    fn new(patience: Option<usize>) -> Self {
        Self { patience, best: f64::INFINITY, since: 0 }
    }

    fn should_stop(&mut self, loss: f64) -> bool {
        let Some(p) = self.patience else { return false };
        if loss < self.best {
            self.best = loss;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= p
    }
}

fn validate_train(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch == 0 {
        return arg_err("batch size must be at least 1");
    }
    if !(cfg.adam.learning_rate > 0.0) {
        return arg_err("learning rate must be positive");
    }
    if cfg.checkpoint_every == Some(0) {
        return arg_err("checkpoint interval must be positive");
    }
    Ok(())
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.json"))
}

/// Adam on the squared RS-W₁ objective with fresh batches every step.
pub fn train_uncond(
    cfg: &TrainConfig,
    mut gen: GeneratorParams,
    rs: &RsParams,
    dataset: ArrayView3<f64>,
) -> Result<(GeneratorParams, TrainHistory)> {
    validate_train(cfg)?;
    let n = dataset.len_of(Axis(0));
    if n == 0 {
        return arg_err("training dataset is empty");
    }
    let features = rs.delta_terminal_batch(dataset)?;
    let mut batch_rng = rng::stream(cfg.batch_seed, 20);
    let mut adam = AdamState::for_trainable(cfg.adam, &gen.trainable);
    let mut history = TrainHistory::default();
    let mut stop = EarlyStop::new(cfg.patience);
    let clock = Instant::now();
    for step in 0..cfg.steps {
        let idx = draw_batch(&mut batch_rng, n, cfg.batch);
        let real_mean = features.select(Axis(0), &idx).mean_axis(Axis(0)).expect("nonempty");
        let noise_seed = rng::derive_seed(cfg.noise_seed, step as u64);
        let grads = {
            let mut tape = record_uncond(&gen, rs, real_mean.view(), cfg.batch, noise_seed)?;
            let loss = tape.loss();
            if !loss.is_finite() {
                return Err(RsigError::State(format!("loss became non-finite at step {step}")));
            }
            history.records.push(StepRecord { step, loss, seconds: clock.elapsed().as_secs_f64() });
            tape.backward()?
        };
        apply_adam(&mut adam, &mut gen, &grads)?;
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if (step + 1) % every == 0 {
                gen.save_json(&checkpoint_path(dir, step + 1))?;
            }
        }
        if stop.should_stop(history.records[step].loss) {
            break;
        }
    }
    Ok((gen, history))
}

/// Affine map `ΔRS_p(past) ↦ α̂ + β̂·ΔRS_p(past)` predicting `E[ΔRS_q(future) | past]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub alpha_hat: Array1<f64>,
    pub beta_hat: Array2<f64>,
    pub residual_norm: f64,
    pub ridge: f64,
}

impl OlsFit {
    pub fn predict(&self, features: ArrayView1<f64>) -> Array1<f64> {
        self.beta_hat.dot(&features) + &self.alpha_hat
    }

    /// One prediction row per feature row.
    pub fn predict_batch(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = features.dot(&self.beta_hat.t());
        out += &self.alpha_hat;
        out
    }
}

/// Ridge-regularised least squares `Y ≈ α + X βᵀ` on feature rows (intercept unpenalised).
pub fn fit_ols_features(x: ArrayView2<f64>, y: ArrayView2<f64>, ridge: f64) -> Result<OlsFit> {
    let n = x.nrows();
    if n < 2 {
        return arg_err("regression needs at least 2 windows");
    }
    if y.nrows() != n {
        return shape_err(format!("{n} predictors but {} targets", y.nrows()));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return arg_err(format!("ridge must be a nonnegative number, got {ridge}"));
    }
    let x_mean = linalg::column_means(x);
    let y_mean = linalg::column_means(y);
    let xc = &x - &x_mean;
    let yc = &y - &y_mean;
    let w = linalg::ridge_solve(xc.view(), yc.view(), ridge)?;
    let beta_hat = w.t().to_owned();
    let alpha_hat = &y_mean - &beta_hat.dot(&x_mean);
    let fit = OlsFit { alpha_hat, beta_hat, residual_norm: 0.0, ridge };
    let resid = fit.predict_batch(x) - y;
    let residual_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(OlsFit { residual_norm, ..fit })
}

/// OLS pre-step: regress `ΔRS_q(future)` on `ΔRS_p(past)` over all windows.
pub fn fit_ols_cond(
    rs: &RsParams,
    pasts: ArrayView3<f64>,
    futures: ArrayView3<f64>,
    ridge: f64,
) -> Result<OlsFit> {
    if pasts.len_of(Axis(0)) != futures.len_of(Axis(0)) {
        return shape_err("pasts and futures must pair up");
    }
    let x = rs.with_horizon(pasts.len_of(Axis(1)))?.delta_terminal_batch(pasts)?;
    let y = rs.with_horizon(futures.len_of(Axis(1)))?.delta_terminal_batch(futures)?;
    fit_ols_features(x.view(), y.view(), ridge)
}

/// Conditional objective for one batch of past feature rows.
pub struct CondLoss<'a> {
    /// `Σ_j ‖α̂ + β̂ c_j − mean ΔRS_q‖²`, the optimised quantity.
    pub objective: f64,
    /// `Σ_j ‖α̂ + β̂ c_j − mean ΔRS_q‖`, the reported C-RS-W₁ sum.
    pub metric_sum: f64,
    pub tape: GradTape<'a>,
}

/// Generates `mc_width` futures per past feature row and records the loss.
pub fn loss_cond<'a>(
    gen: &'a CondGeneratorParams,
    rs: &RsParams,
    fit: &OlsFit,
    past_features: ArrayView2<f64>,
    mc_width: usize,
    noise_seed: u64,
) -> Result<CondLoss<'a>> {
    let k = past_features.nrows();
    if k == 0 || mc_width == 0 {
        return arg_err("conditional batch and Monte-Carlo width must be positive");
    }
    let rs_q = rs.with_horizon(gen.future_len)?;
    let targets = fit.predict_batch(past_features);
    let gen_trace = gen.generate_for_features(past_features, mc_width, noise_seed)?;
    let rs_trace = RsTrace::forward(&rs_q, gen_trace.paths.view())?;
    let n_dim = rs.n_dim();
    let mut grad_delta = Array2::zeros((k * mc_width, n_dim));
    let (mut objective, mut metric_sum) = (0.0, 0.0);
    for j in 0..k {
        let rows = s![j * mc_width..(j + 1) * mc_width, ..];
        let mean = rs_trace.delta.slice(rows).mean_axis(Axis(0)).expect("nonempty");
        let diff = &targets.row(j) - &mean;
        let sq = diff.dot(&diff);
        objective += sq;
        metric_sum += sq.sqrt();
        let g = diff.mapv(|v| -2.0 * v / mc_width as f64);
        grad_delta.slice_mut(rows).assign(&g.broadcast((mc_width, n_dim)).expect("row broadcast"));
    }
    let tape = GradTape {
        gen: &gen.core,
        rs: rs_q,
        gen_trace,
        rs_trace,
        grad_delta,
        loss: objective,
        consumed: false,
    };
    Ok(CondLoss { objective, metric_sum, tape })
}

/// Conditional training: OLS pre-step, then Adam on the summed C-RS-W₁ objective.
///
/// Each step draws `cfg.batch` past windows and `cfg.mc_width` generated futures
/// per past. Returns the fitted OLS map alongside the trained generator.
pub fn train_cond(
    cfg: &TrainConfig,
    mut gen: CondGeneratorParams,
    rs: &RsParams,
    pasts: ArrayView3<f64>,
    futures: ArrayView3<f64>,
    ridge: f64,
) -> Result<(CondGeneratorParams, OlsFit, TrainHistory)> {
    validate_train(cfg)?;
    if cfg.mc_width == 0 {
        return arg_err("Monte-Carlo width must be positive");
    }
    let n = pasts.len_of(Axis(0));
    if n == 0 {
        return arg_err("no training windows");
    }
    if pasts.len_of(Axis(1)) != gen.past_len || futures.len_of(Axis(1)) != gen.future_len {
        return shape_err("window lengths do not match the generator's p and q");
    }
    let fit = fit_ols_cond(rs, pasts, futures, ridge)?;
    let features = gen.condition_features(rs, pasts)?;
    let mut batch_rng = rng::stream(cfg.batch_seed, 21);
    let mut adam = AdamState::for_trainable(cfg.adam, &gen.core.trainable);
    let mut history = TrainHistory::default();
    let mut stop = EarlyStop::new(cfg.patience);
    let clock = Instant::now();
    for step in 0..cfg.steps {
        let idx = draw_batch(&mut batch_rng, n, cfg.batch);
        let batch_feats = features.select(Axis(0), &idx);
        let noise_seed = rng::derive_seed(cfg.noise_seed, step as u64);
        let grads = {
            let mut l = loss_cond(&gen, rs, &fit, batch_feats.view(), cfg.mc_width, noise_seed)?;
            if !l.objective.is_finite() {
                return Err(RsigError::State(format!("loss became non-finite at step {step}")));
            }
            history.records.push(StepRecord {
                step,
                loss: l.objective,
                seconds: clock.elapsed().as_secs_f64(),
            });
            l.tape.backward()?
        };
        apply_adam(&mut adam, &mut gen.core, &grads)?;
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if (step + 1) % every == 0 {
                gen.save_json(&checkpoint_path(dir, step + 1))?;
            }
        }
        if stop.should_stop(history.records[step].loss) {
            break;
        }
    }
    Ok((gen, fit, history))
}
