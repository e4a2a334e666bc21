//! Reservoir neural-SDE generators.
//!
//! A generator draws an initial state `R_1 = Ψ(V)` from Gaussian noise
//! through a small trainable network, then evolves
//!
//! ```text
//! R_t = R_{t-1} + σ(ρ₁B₁R_{t-1} + ρ₂λ₁) + Σ_i σ(ρ₃B₂ⁱR_{t-1} + ρ₄λ₂ⁱ)·ρ₅·ΔWⁱ_t
//! X_t = A_t R_t + β_t
//! ```
//!
//! with frozen random `B`, `λ` and trainable `Ψ`, `ρ`, `A_t`, `β_t`. The
//! conditional variant feeds `ΔRS_p(past)` into `Ψ` alongside the noise.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::rng;
use crate::signature::RsParams;

/// Index of each `ρ` coefficient inside [`Trainable::rho`].
pub const RHO_DRIFT_MAT: usize = 0;
pub const RHO_DRIFT_BIAS: usize = 1;
pub const RHO_DIFF_MAT: usize = 2;
pub const RHO_DIFF_BIAS: usize = 3;
pub const RHO_NOISE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Reservoir dimension `D`.
    pub reservoir_dim: usize,
    /// Output dimension `d`.
    pub out_dim: usize,
    /// Number of driving Brownian motions `n`.
    pub n_brownian: usize,
    /// Dimension `m` of the initial Gaussian noise `V`.
    pub noise_dim: usize,
    /// Extra conditioning inputs of `Ψ` (0 for the unconditional model).
    pub cond_dim: usize,
    /// Number of generated time steps.
    pub horizon: usize,
    /// Hidden width of `Ψ`.
    pub hidden: usize,
    /// Standard deviation of the frozen `B`, `λ` entries.
    pub fixed_std: f64,
    /// Drift/diffusion activation.
    pub activation: Activation,
    pub seed: u64,
    pub rho5_trainable: bool,
    pub proj_radius: Option<f64>,
}

impl GeneratorConfig {
    pub fn new(reservoir_dim: usize, out_dim: usize, noise_dim: usize, horizon: usize) -> Self {
        Self {
            reservoir_dim,
            out_dim,
            n_brownian: 1,
            noise_dim,
            cond_dim: 0,
            horizon,
            hidden: 64,
            fixed_std: 1.0,
            activation: Activation::Sigmoid,
            seed: 0,
            rho5_trainable: false,
            proj_radius: None,
        }
    }

    pub fn init_input_dim(&self) -> usize {
        self.noise_dim + self.cond_dim
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("D", self.reservoir_dim),
            ("d", self.out_dim),
            ("n", self.n_brownian),
            ("m", self.noise_dim),
            ("T", self.horizon),
            ("H", self.hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return arg_err(format!("generator dimension {name} must be positive"));
        }
        if !(self.fixed_std > 0.0 && self.fixed_std.is_finite()) {
            return arg_err(format!("fixed_std must be positive, got {}", self.fixed_std));
        }
        if let Some(r) = self.proj_radius {
            if !(r > 0.0) {
                return arg_err(format!("projection radius must be positive, got {r}"));
            }
        }
        Ok(())
    }
}

/// One-hidden-layer tanh network `Ψ` producing the initial reservoir state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitNet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl InitNet {
    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((output, hidden)),
            b2: Array1::zeros(output),
        }
    }

    /// Returns `(hidden activations, output)` for a batch of inputs.
    pub fn forward(&self, input: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = input.dot(&self.w1.t());
        hidden += &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let mut out = hidden.dot(&self.w2.t());
        out += &self.b2;
        (hidden, out)
    }
}

/// Trainable parameters `θ`; also used as the container for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    pub init_net: InitNet,
    /// `ρ₁ … ρ₅`.
    pub rho: Array1<f64>,
    /// Readout matrices `A_t`, shape `T × d × D`.
    pub readout_a: Array3<f64>,
    /// Readout biases `β_t`, shape `T × d`.
    pub readout_b: Array2<f64>,
}

/// Identity of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    InitW1,
    InitB1,
    InitW2,
    InitB2,
    Rho,
    ReadoutA,
    ReadoutB,
}

impl ParamKey {
    pub const ALL: [ParamKey; 7] = [
        ParamKey::InitW1,
        ParamKey::InitB1,
        ParamKey::InitW2,
        ParamKey::InitB2,
        ParamKey::Rho,
        ParamKey::ReadoutA,
        ParamKey::ReadoutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKey::InitW1 => "init_net.w1",
            ParamKey::InitB1 => "init_net.b1",
            ParamKey::InitW2 => "init_net.w2",
            ParamKey::InitB2 => "init_net.b2",
            ParamKey::Rho => "rho",
            ParamKey::ReadoutA => "readout_a",
            ParamKey::ReadoutB => "readout_b",
        }
    }
}

impl Trainable {
    pub fn zeros_like(other: &Trainable) -> Self {
        Self {
            init_net: InitNet::zeros(
                other.init_net.w1.ncols(),
                other.init_net.w1.nrows(),
                other.init_net.w2.nrows(),
            ),
            rho: Array1::zeros(other.rho.len()),
            readout_a: Array3::zeros(other.readout_a.dim()),
            readout_b: Array2::zeros(other.readout_b.dim()),
        }
    }

    pub fn tensor(&self, key: ParamKey) -> &[f64] {
        let slice = match key {
            ParamKey::InitW1 => self.init_net.w1.as_slice(),
            ParamKey::InitB1 => self.init_net.b1.as_slice(),
            ParamKey::InitW2 => self.init_net.w2.as_slice(),
            ParamKey::InitB2 => self.init_net.b2.as_slice(),
            ParamKey::Rho => self.rho.as_slice(),
            ParamKey::ReadoutA => self.readout_a.as_slice(),
            ParamKey::ReadoutB => self.readout_b.as_slice(),
        };
        slice.expect("trainable tensors are contiguous")
    }

    pub fn tensor_mut(&mut self, key: ParamKey) -> &mut [f64] {
        let slice = match key {
            ParamKey::InitW1 => self.init_net.w1.as_slice_mut(),
            ParamKey::InitB1 => self.init_net.b1.as_slice_mut(),
            ParamKey::InitW2 => self.init_net.w2.as_slice_mut(),
            ParamKey::InitB2 => self.init_net.b2.as_slice_mut(),
            ParamKey::Rho => self.rho.as_slice_mut(),
            ParamKey::ReadoutA => self.readout_a.as_slice_mut(),
            ParamKey::ReadoutB => self.readout_b.as_slice_mut(),
        };
        slice.expect("trainable tensors are contiguous")
    }

    /// All tensors in [`ParamKey::ALL`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Trainable { init_net, rho, readout_a, readout_b } = self;
        vec![
            init_net.w1.as_slice_mut().expect("contiguous"),
            init_net.b1.as_slice_mut().expect("contiguous"),
            init_net.w2.as_slice_mut().expect("contiguous"),
            init_net.b2.as_slice_mut().expect("contiguous"),
            rho.as_slice_mut().expect("contiguous"),
            readout_a.as_slice_mut().expect("contiguous"),
            readout_b.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn num_scalars(&self) -> usize {
        ParamKey::ALL.iter().map(|&k| self.tensor(k).len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        ParamKey::ALL.iter().all(|&k| self.tensor(k).iter().all(|v| v.is_finite()))
    }
}

/// Frozen random reservoir weights `B₁, B₂ⁱ, λ₁, λ₂ⁱ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedWeights {
    pub b1: Array2<f64>,
    pub b2: Vec<Array2<f64>>,
    pub lam1: Array1<f64>,
    pub lam2: Vec<Array1<f64>>,
}

/// Unconditional generator: configuration, frozen weights and `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    fixed: FixedWeights,
    pub trainable: Trainable,
}

/// Conditional generator; `Ψ` additionally sees `ΔRS_p` of the past window.
#[derive(Debug, Clone, PartialEq)]
pub struct CondGeneratorParams {
    pub core: GeneratorParams,
    pub past_len: usize,
    pub future_len: usize,
    pub rs_dim: usize,
}

/// Initial noise and Brownian increments for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    /// `B × m`.
    pub v: Array2<f64>,
    /// `B × (T−1) × n`.
    pub dw: Array3<f64>,
}

/// Draws noise for samples `first .. first + batch`; each sample index has its
/// own stream (first `V`, then increments step by step), so any sub-batch can
/// be regenerated independently of the rest.
pub fn draw_noise(
    noise_seed: u64,
    first: u64,
    batch: usize,
    noise_dim: usize,
    steps: usize,
    n_brownian: usize,
) -> NoiseBatch {
    let mut v = Array2::zeros((batch, noise_dim));
    let mut dw = Array3::zeros((batch, steps, n_brownian));
    for b in 0..batch {
        let mut r = rng::stream(noise_seed, first + b as u64);
        for j in 0..noise_dim {
            v[[b, j]] = rng::standard_normal(&mut r);
        }
        for t in 0..steps {
            for i in 0..n_brownian {
                dw[[b, t, i]] = rng::standard_normal(&mut r);
            }
        }
    }
    NoiseBatch { v, dw }
}

/// Intermediate quantities of one generator forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct GenTrace {
    pub init_input: Array2<f64>,
    pub hidden: Array2<f64>,
    /// `R_1 … R_T`, each `B × D`.
    pub states: Vec<Array2<f64>>,
    /// `B₁ R_{t−1}` for `t = 2..T`.
    pub drift_lin: Vec<Array2<f64>>,
    pub drift_act: Vec<Array2<f64>>,
    /// `B₂ⁱ R_{t−1}` per step and Brownian coordinate.
    pub diff_lin: Vec<Vec<Array2<f64>>>,
    pub diff_act: Vec<Vec<Array2<f64>>>,
    pub dw: Array3<f64>,
    /// Readouts before projection, `B × T × d`.
    pub raw: Array3<f64>,
    /// Generated paths, `B × T × d`.
    pub paths: Array3<f64>,
}

/// `x` if `‖x‖₂ ≤ r`, otherwise `r·x/‖x‖₂`.
pub fn project_ball(x: ArrayView1<f64>, r: f64) -> Result<Array1<f64>> {
    if !(r > 0.0) {
        return arg_err(format!("projection radius must be positive, got {r}"));
    }
    let norm = x.dot(&x).sqrt();
    Ok(if norm <= r { x.to_owned() } else { x.mapv(|v| r * v / norm) })
}

impl GeneratorParams {
    /// Samples the frozen weights from `Normal(0, fixed_std²)` and initialises `θ`:
    /// `ρ = 1`, Xavier-scaled `Ψ` with zero biases, `A_t ~ Normal(0, 1/D)`, `β_t = 0`.
    pub fn init(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let (dd, n, h, d, t) = (
            config.reservoir_dim,
            config.n_brownian,
            config.hidden,
            config.out_dim,
            config.horizon,
        );
        let std = config.fixed_std;
        let mut r = rng::stream(config.seed, 10);
        let b1 = rng::normal_matrix(&mut r, dd, dd, std);
        let lam1 = rng::normal_vector(&mut r, dd, std);
        let mut b2 = Vec::with_capacity(n);
        let mut lam2 = Vec::with_capacity(n);
        for _ in 0..n {
            b2.push(rng::normal_matrix(&mut r, dd, dd, std));
            lam2.push(rng::normal_vector(&mut r, dd, std));
        }
        let fixed = FixedWeights { b1, b2, lam1, lam2 };

        let input = config.init_input_dim();
        let mut r = rng::stream(config.seed, 11);
        let init_net = InitNet {
            w1: rng::normal_matrix(&mut r, h, input, (1.0 / input as f64).sqrt()),
            b1: Array1::zeros(h),
            w2: rng::normal_matrix(&mut r, dd, h, (1.0 / h as f64).sqrt()),
            b2: Array1::zeros(dd),
        };
        let a = rng::normal_matrix(&mut r, t * d, dd, (1.0 / dd as f64).sqrt());
        let trainable = Trainable {
            init_net,
            rho: Array1::ones(5),
            readout_a: a.into_shape_with_order((t, d, dd)).expect("matching element count"),
            readout_b: Array2::zeros((t, d)),
        };
        Ok(Self { config, fixed, trainable })
    }

    pub fn from_parts(config: GeneratorConfig, fixed: FixedWeights, trainable: Trainable) -> Result<Self> {
        config.validate()?;
        let (dd, n) = (config.reservoir_dim, config.n_brownian);
        let shapes_ok = fixed.b1.dim() == (dd, dd)
            && fixed.lam1.len() == dd
            && fixed.b2.len() == n
            && fixed.lam2.len() == n
            && fixed.b2.iter().all(|m| m.dim() == (dd, dd))
            && fixed.lam2.iter().all(|v| v.len() == dd);
        if !shapes_ok {
            return shape_err("fixed generator weights do not match the configuration");
        }
        let net = &trainable.init_net;
        let h = config.hidden;
        let net_ok = net.w1.dim() == (h, config.init_input_dim())
            && net.b1.len() == h
            && net.w2.dim() == (dd, h)
            && net.b2.len() == dd;
        let readout_ok = trainable.readout_a.dim() == (config.horizon, config.out_dim, dd)
            && trainable.readout_b.dim() == (config.horizon, config.out_dim)
            && trainable.rho.len() == 5;
        if !net_ok || !readout_ok {
            return shape_err("trainable generator weights do not match the configuration");
        }
        if !trainable.is_finite() {
            return arg_err("trainable generator weights must be finite");
        }
        let mut out = Self { config, fixed, trainable };
        out.enforce_constraints();
        Ok(out)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn fixed(&self) -> &FixedWeights {
        &self.fixed
    }

    /// Pins `ρ₅ = 1` unless it is declared trainable.
    pub fn enforce_constraints(&mut self) {
        if !self.config.rho5_trainable {
            self.trainable.rho[RHO_NOISE] = 1.0;
        }
    }

    /// Whether the optimizer may update the given tensor entry.
    pub fn is_trainable_entry(&self, key: ParamKey, index: usize) -> bool {
        !(key == ParamKey::Rho && index == RHO_NOISE && !self.config.rho5_trainable)
    }

    pub fn draw_noise(&self, batch: usize, noise_seed: u64) -> NoiseBatch {
        let c = &self.config;
        draw_noise(noise_seed, 0, batch, c.noise_dim, c.horizon - 1, c.n_brownian)
    }

    /// Runs the recursion for explicit `Ψ` inputs and Brownian increments.
    pub fn forward(&self, init_input: ArrayView2<f64>, dw: ArrayView3<f64>) -> Result<GenTrace> {
        let c = &self.config;
        let batch = init_input.nrows();
        if batch == 0 {
            return arg_err("batch size must be at least 1");
        }
        if init_input.ncols() != c.init_input_dim() {
            return shape_err(format!(
                "initial input has width {}, expected {}",
                init_input.ncols(),
                c.init_input_dim()
            ));
        }
        if dw.dim() != (batch, c.horizon - 1, c.n_brownian) {
            return shape_err(format!(
                "increments have shape {:?}, expected ({batch}, {}, {})",
                dw.dim(),
                c.horizon - 1,
                c.n_brownian
            ));
        }
        let act = c.activation;
        let th = &self.trainable;
        let rho = &th.rho;
        let (hidden, r1) = th.init_net.forward(init_input);

        let steps = c.horizon - 1;
        let mut states = Vec::with_capacity(c.horizon);
        let mut drift_lin = Vec::with_capacity(steps);
        let mut drift_act = Vec::with_capacity(steps);
        let mut diff_lin = Vec::with_capacity(steps);
        let mut diff_act = Vec::with_capacity(steps);
        states.push(r1);
        for t in 0..steps {
            let prev = &states[t];
            let p = prev.dot(&self.fixed.b1.t());
            let bias = &self.fixed.lam1 * rho[RHO_DRIFT_BIAS];
            let mut sd = &p * rho[RHO_DRIFT_MAT];
            sd += &bias;
            sd.mapv_inplace(|z| act.eval(z));
            let mut next = prev + &sd;
            let mut lin_i = Vec::with_capacity(c.n_brownian);
            let mut act_i = Vec::with_capacity(c.n_brownian);
            for i in 0..c.n_brownian {
                let q = prev.dot(&self.fixed.b2[i].t());
                let bias = &self.fixed.lam2[i] * rho[RHO_DIFF_BIAS];
                let mut si = &q * rho[RHO_DIFF_MAT];
                si += &bias;
                si.mapv_inplace(|z| act.eval(z));
                let scale = dw.slice(s![.., t, i]).mapv(|w| w * rho[RHO_NOISE]);
                for (mut row, (&w, srow)) in next.rows_mut().into_iter().zip(scale.iter().zip(si.rows())) {
                    row.scaled_add(w, &srow);
                }
                lin_i.push(q);
                act_i.push(si);
            }
            drift_lin.push(p);
            drift_act.push(sd);
            diff_lin.push(lin_i);
            diff_act.push(act_i);
            states.push(next);
        }

        let mut raw = Array3::zeros((batch, c.horizon, c.out_dim));
        for (t, state) in states.iter().enumerate() {
            let mut x = state.dot(&th.readout_a.slice(s![t, .., ..]).t());
            x += &th.readout_b.row(t);
            raw.slice_mut(s![.., t, ..]).assign(&x);
        }
        let paths = match c.proj_radius {
            None => raw.clone(),
            Some(r) => {
                let mut out = raw.clone();
                for mut sample in out.outer_iter_mut() {
                    for mut row in sample.rows_mut() {
                        let p = project_ball(row.view(), r)?;
                        row.assign(&p);
                    }
                }
                out
            }
        };
        Ok(GenTrace {
            init_input: init_input.to_owned(),
            hidden,
            states,
            drift_lin,
            drift_act,
            diff_lin,
            diff_act,
            dw: dw.to_owned(),
            raw,
            paths,
        })
    }

    /// Unconditional sampling with retained intermediates.
    pub fn generate_traced(&self, batch_size: usize, noise_seed: u64) -> Result<GenTrace> {
        if batch_size == 0 {
            return arg_err("batch size must be at least 1");
        }
        if self.config.cond_dim != 0 {
            return arg_err("conditional generator needs a past path");
        }
        let noise = self.draw_noise(batch_size, noise_seed);
        self.forward(noise.v.view(), noise.dw.view())
    }

    /// `batch × T × d` synthetic paths; deterministic in `noise_seed`.
    pub fn generate(&self, batch_size: usize, noise_seed: u64) -> Result<Array3<f64>> {
        Ok(self.generate_traced(batch_size, noise_seed)?.paths)
    }

    /// Reverse pass: gradients of `Σ grad_paths ⊙ paths` with respect to `θ`.
    pub fn backward(&self, trace: &GenTrace, grad_paths: ArrayView3<f64>) -> Result<Trainable> {
        let c = &self.config;
        if grad_paths.dim() != trace.paths.dim() {
            return shape_err("path gradient does not match the traced batch");
        }
        let act = c.activation;
        let th = &self.trainable;
        let rho = &th.rho;
        let mut grads = Trainable::zeros_like(th);

        let grad_raw = match c.proj_radius {
            None => grad_paths.to_owned(),
            Some(r) => {
                let mut g = grad_paths.to_owned();
                for (mut gs, xs) in g.outer_iter_mut().zip(trace.raw.outer_iter()) {
                    for (mut gr, xr) in gs.rows_mut().into_iter().zip(xs.rows()) {
                        let norm = xr.dot(&xr).sqrt();
                        if norm > r {
                            let proj = xr.dot(&gr) / (norm * norm);
                            let scale = r / norm;
                            gr.zip_mut_with(&xr, |gv, &xv| *gv = scale * (*gv - xv * proj));
                        }
                    }
                }
                g
            }
        };

        // readouts
        let mut grad_states: Vec<Array2<f64>> = Vec::with_capacity(c.horizon);
        for (t, state) in trace.states.iter().enumerate() {
            let gx = grad_raw.slice(s![.., t, ..]);
            grads.readout_a.slice_mut(s![t, .., ..]).assign(&gx.t().dot(state));
            grads.readout_b.row_mut(t).assign(&gx.sum_axis(Axis(0)));
            grad_states.push(gx.dot(&th.readout_a.slice(s![t, .., ..])));
        }

        // reservoir recursion, newest step first
        let mut g_rho = [0.0f64; 5];
        for t in (0..c.horizon - 1).rev() {
            let g_next = grad_states[t + 1].clone();
            let mut g_prev = g_next.clone();

            let mut g_pre = g_next.clone();
            g_pre.zip_mut_with(&trace.drift_act[t], |g, &y| *g *= act.derivative_from_output(y));
            g_rho[RHO_DRIFT_MAT] += (&g_pre * &trace.drift_lin[t]).sum();
            g_rho[RHO_DRIFT_BIAS] += g_pre.sum_axis(Axis(0)).dot(&self.fixed.lam1);
            g_prev.scaled_add(rho[RHO_DRIFT_MAT], &g_pre.dot(&self.fixed.b1));

            for i in 0..c.n_brownian {
                let dw = trace.dw.slice(s![.., t, i]);
                let si = &trace.diff_act[t][i];
                // ∂/∂S_i = g ⊙ ρ₅ΔW, ∂/∂ρ₅ = Σ g ⊙ S_i ΔW
                let mut g_s = g_next.clone();
                for (mut row, &w) in g_s.rows_mut().into_iter().zip(dw.iter()) {
                    row *= w;
                }
                g_rho[RHO_NOISE] += (&g_s * si).sum();
                g_s *= rho[RHO_NOISE];
                g_s.zip_mut_with(si, |g, &y| *g *= act.derivative_from_output(y));
                g_rho[RHO_DIFF_MAT] += (&g_s * &trace.diff_lin[t][i]).sum();
                g_rho[RHO_DIFF_BIAS] += g_s.sum_axis(Axis(0)).dot(&self.fixed.lam2[i]);
                g_prev.scaled_add(rho[RHO_DIFF_MAT], &g_s.dot(&self.fixed.b2[i]));
            }
            grad_states[t] += &g_prev;
        }
        if !c.rho5_trainable {
            g_rho[RHO_NOISE] = 0.0;
        }
        grads.rho = Array1::from(g_rho.to_vec());

        // initial network
        let g_r1 = &grad_states[0];
        let net = &th.init_net;
        grads.init_net.w2 = g_r1.t().dot(&trace.hidden);
        grads.init_net.b2 = g_r1.sum_axis(Axis(0));
        let mut g_hidden = g_r1.dot(&net.w2);
        g_hidden.zip_mut_with(&trace.hidden, |g, &h| *g *= 1.0 - h * h);
        grads.init_net.w1 = g_hidden.t().dot(&trace.init_input);
        grads.init_net.b1 = g_hidden.sum_axis(Axis(0));
        Ok(grads)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &GeneratorDoc::from(self))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: GeneratorDoc = serde_json::from_reader(std::io::BufReader::new(file))?;
        doc.try_into()
    }
}

impl CondGeneratorParams {
    /// `config.horizon` is taken as the future length `q`; `cond_dim` is set to `rs_dim`.
    pub fn init(mut config: GeneratorConfig, past_len: usize, rs_dim: usize) -> Result<Self> {
        if past_len == 0 || rs_dim == 0 {
            return arg_err("past length and RS dimension must be positive");
        }
        config.cond_dim = rs_dim;
        let future_len = config.horizon;
        Ok(Self { core: GeneratorParams::init(config)?, past_len, future_len, rs_dim })
    }

    pub fn from_core(core: GeneratorParams, past_len: usize) -> Result<Self> {
        let rs_dim = core.config().cond_dim;
        if rs_dim == 0 || past_len == 0 {
            return arg_err("conditional generator needs cond_dim > 0 and past_len > 0");
        }
        let future_len = core.config().horizon;
        Ok(Self { core, past_len, future_len, rs_dim })
    }

    fn check_rs(&self, rs: &RsParams) -> Result<()> {
        if rs.n_dim() != self.rs_dim || rs.in_dim() != self.core.config().out_dim {
            return shape_err(format!(
                "RS params (N={}, d={}) do not match generator (N={}, d={})",
                rs.n_dim(),
                rs.in_dim(),
                self.rs_dim,
                self.core.config().out_dim
            ));
        }
        Ok(())
    }

    /// `ΔRS_p` of each past window (`k × p × d`), one row per window.
    pub fn condition_features(&self, rs: &RsParams, pasts: ArrayView3<f64>) -> Result<Array2<f64>> {
        self.check_rs(rs)?;
        if pasts.len_of(Axis(1)) != self.past_len {
            return shape_err(format!(
                "past windows have length {}, expected p={}",
                pasts.len_of(Axis(1)),
                self.past_len
            ));
        }
        rs.with_horizon(self.past_len)?.delta_terminal_batch(pasts)
    }

    /// Forward pass for `per_past` futures of each conditioning row; sample
    /// `j·per_past + k` uses noise stream `first_stream + j·per_past + k`.
    pub fn generate_for_features(
        &self,
        features: ArrayView2<f64>,
        per_past: usize,
        noise_seed: u64,
    ) -> Result<GenTrace> {
        if per_past == 0 || features.nrows() == 0 {
            return arg_err("batch size must be at least 1");
        }
        if features.ncols() != self.rs_dim {
            return shape_err("conditioning features have the wrong width");
        }
        let c = self.core.config();
        let total = features.nrows() * per_past;
        let noise = draw_noise(noise_seed, 0, total, c.noise_dim, c.horizon - 1, c.n_brownian);
        let mut input = Array2::zeros((total, c.init_input_dim()));
        input.slice_mut(s![.., ..c.noise_dim]).assign(&noise.v);
        for (j, feat) in features.rows().into_iter().enumerate() {
            input
                .slice_mut(s![j * per_past..(j + 1) * per_past, c.noise_dim..])
                .assign(&feat.broadcast((per_past, self.rs_dim)).expect("row broadcast"));
        }
        self.core.forward(input.view(), noise.dw.view())
    }

    /// `batch × q × d` futures conditioned on one `p × d` past.
    pub fn generate(
        &self,
        rs: &RsParams,
        past: ArrayView2<f64>,
        batch_size: usize,
        noise_seed: u64,
    ) -> Result<Array3<f64>> {
        if past.nrows() != self.past_len {
            return shape_err(format!("past has {} rows, expected p={}", past.nrows(), self.past_len));
        }
        let feats = self.condition_features(rs, past.insert_axis(Axis(0)))?;
        Ok(self.generate_for_features(feats.view(), batch_size, noise_seed)?.paths)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let doc = CondGeneratorDoc { past_len: self.past_len, generator: GeneratorDoc::from(&self.core) };
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: CondGeneratorDoc = serde_json::from_reader(std::io::BufReader::new(file))?;
        CondGeneratorParams::from_core(doc.generator.try_into()?, doc.past_len)
    }
}

/// JSON model document: configuration, frozen and trainable weights, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorDoc {
    pub config: GeneratorConfig,
    pub fixed: FixedDoc,
    pub trainable: TrainableDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedDoc {
    pub b1: Vec<f64>,
    pub b2: Vec<Vec<f64>>,
    pub lam1: Vec<f64>,
    pub lam2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainableDoc {
    pub init_w1: Vec<f64>,
    pub init_b1: Vec<f64>,
    pub init_w2: Vec<f64>,
    pub init_b2: Vec<f64>,
    pub rho: Vec<f64>,
    pub readout_a: Vec<f64>,
    pub readout_b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondGeneratorDoc {
    pub past_len: usize,
    pub generator: GeneratorDoc,
}

impl From<&GeneratorParams> for GeneratorDoc {
    fn from(g: &GeneratorParams) -> Self {
        let flat = |a: &[f64]| a.to_vec();
        let th = &g.trainable;
        Self {
            config: g.config.clone(),
            fixed: FixedDoc {
                b1: g.fixed.b1.iter().copied().collect(),
                b2: g.fixed.b2.iter().map(|m| m.iter().copied().collect()).collect(),
                lam1: g.fixed.lam1.to_vec(),
                lam2: g.fixed.lam2.iter().map(|v| v.to_vec()).collect(),
            },
            trainable: TrainableDoc {
                init_w1: flat(th.tensor(ParamKey::InitW1)),
                init_b1: flat(th.tensor(ParamKey::InitB1)),
                init_w2: flat(th.tensor(ParamKey::InitW2)),
                init_b2: flat(th.tensor(ParamKey::InitB2)),
                rho: flat(th.tensor(ParamKey::Rho)),
                readout_a: flat(th.tensor(ParamKey::ReadoutA)),
                readout_b: flat(th.tensor(ParamKey::ReadoutB)),
            },
        }
    }
}

impl TryFrom<GeneratorDoc> for GeneratorParams {
    type Error = RsigError;

    fn try_from(doc: GeneratorDoc) -> Result<Self> {
        let c = doc.config;
        let (dd, h, d, t) = (c.reservoir_dim, c.hidden, c.out_dim, c.horizon);
        let bad = |what: &str| RsigError::Shape(format!("model field `{what}` has the wrong length"));
        let m2 = |v: Vec<f64>, r: usize, k: usize, what: &str| {
            Array2::from_shape_vec((r, k), v).map_err(|_| bad(what))
        };
        let fixed = FixedWeights {
            b1: m2(doc.fixed.b1, dd, dd, "b1")?,
            b2: doc.fixed.b2.into_iter().map(|v| m2(v, dd, dd, "b2")).collect::<Result<_>>()?,
            lam1: Array1::from(doc.fixed.lam1),
            lam2: doc.fixed.lam2.into_iter().map(Array1::from).collect(),
        };
        let tr = doc.trainable;
        let trainable = Trainable {
            init_net: InitNet {
                w1: m2(tr.init_w1, h, c.noise_dim + c.cond_dim, "init_w1")?,
                b1: Array1::from(tr.init_b1),
                w2: m2(tr.init_w2, dd, h, "init_w2")?,
                b2: Array1::from(tr.init_b2),
            },
            rho: Array1::from(tr.rho),
            readout_a: Array3::from_shape_vec((t, d, dd), tr.readout_a).map_err(|_| bad("readout_a"))?,
            readout_b: m2(tr.readout_b, t, d, "readout_b")?,
        };
        GeneratorParams::from_parts(c, fixed, trainable)
    }
}
