//! Block-structured reservoir sampling schemes and linear-readout experiments.
//!
//! Both schemes embed an injective encoding of the input prefix in the last
//! `T·d` reservoir coordinates: a strictly causal upper-triangular matrix `U`
//! shifts information one block down per step, while `σ(α_i)` writes the
//! current input into the first block. The leading `M` coordinates are then
//! random features of that encoding, so linear readouts of `ΔRS_T` can
//! approximate continuous functionals of the path.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::linalg;
use crate::rng;
use crate::signature::{RsParams, RsPath};

/// Shared lower part of both schemes: the causal encoder `(U, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEncoder {
    pub horizon: usize,
    pub in_dim: usize,
    /// `(T−1)d × (T−1)d`, zero below the diagonal.
    pub u: Array2<f64>,
    pub alphas: Array1<f64>,
    pub activation: Activation,
}

impl CausalEncoder {
    fn sample(
        rng: &mut rand_chacha::ChaCha8Rng,
        horizon: usize,
        in_dim: usize,
        std: f64,
        activation: Activation,
    ) -> Self {
        let k = (horizon - 1) * in_dim;
        let mut u = Array2::zeros((k, k));
        for r in 0..k {
            for c in r..k {
                u[[r, c]] = std * rng::standard_normal(rng);
            }
        }
        let alphas = rng::normal_vector(rng, in_dim, std);
        Self { horizon, in_dim, u, alphas, activation }
    }

    /// `A₁⁽²⁾`: `d` zero rows on top, then `[U | 0]`.
    pub fn a1_2(&self) -> Array2<f64> {
        let td = self.horizon * self.in_dim;
        let k = td - self.in_dim;
        let mut m = Array2::zeros((td, td));
        m.slice_mut(s![self.in_dim.., ..k]).assign(&self.u);
        m
    }

    /// Diagonal block `U_k` (1-based `k`).
    pub fn u_block(&self, k: usize) -> ArrayView2<'_, f64> {
        let d = self.in_dim;
        self.u.slice(s![(k - 1) * d..k * d, (k - 1) * d..k * d])
    }

    /// Off-diagonal block `B_{k,j}` (1-based), `j ≥ 1` blocks right of `U_k`.
    pub fn b_block(&self, k: usize, j: usize) -> ArrayView2<'_, f64> {
        let d = self.in_dim;
        self.u.slice(s![(k - 1) * d..k * d, (k - 1 + j) * d..(k + j) * d])
    }

    /// `G_t(x_1, …, x_t)` built from the component recursion
    /// `g_{t+1}^{(k)} = g_t^{(k)} + σ(U_{k−1} g_t^{(k−1)} + Σ_j B_{k−1,j} g_t^{(j+k−1)})`.
    pub fn g_recursion(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (t, d) = x.dim();
        if t == 0 || t > self.horizon {
            return arg_err(format!("prefix length {t} outside 1..={}", self.horizon));
        }
        if d != self.in_dim {
            return shape_err(format!("prefix has dimension {d}, expected {}", self.in_dim));
        }
        let act = self.activation;
        let sig_alpha = self.alphas.mapv(|a| act.eval(a));
        let mut g: Vec<Array1<f64>> = vec![&sig_alpha * &x.row(0)];
        for step in 1..t {
            let cur = g.len();
            let mut next = Vec::with_capacity(cur + 1);
            next.push(&g[0] + &(&sig_alpha * &x.row(step)));
            for k in 2..=cur {
                let mut arg = self.u_block(k - 1).dot(&g[k - 2]);
                for j in 1..=(cur + 1 - k) {
                    arg += &self.b_block(k - 1, j).dot(&g[j + k - 2]);
                }
                next.push(&g[k - 1] + &arg.mapv(|z| act.eval(z)));
            }
            next.push(self.u_block(cur).dot(&g[cur - 1]).mapv(|z| act.eval(z)));
            g = next;
        }
        let mut out = Array1::zeros(self.horizon * d);
        for (k, block) in g.iter().enumerate() {
            out.slice_mut(s![k * d..(k + 1) * d]).assign(block);
        }
        Ok(out)
    }
}

/// Reservoir weights laid out per the first sampling scheme (`N = M + T·d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme1Params {
    pub m_dim: usize,
    pub horizon: usize,
    pub in_dim: usize,
    pub base: RsParams,
    pub a1_1: Array2<f64>,
    pub a1_2: Array2<f64>,
    pub xi1_1: Array1<f64>,
    pub encoder: CausalEncoder,
}

/// Reservoir weights laid out per the second sampling scheme
/// (`N = M + M_1 + … + M_d + T·d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme2Params {
    pub m_dim: usize,
    pub m_dims: Vec<usize>,
    pub horizon: usize,
    pub in_dim: usize,
    pub base: RsParams,
    pub a1_1: Array2<f64>,
    pub a1_2: Array2<f64>,
    pub xi1_tilde: Array1<f64>,
    pub a2_tilde: Vec<Array2<f64>>,
    pub xi2_tilde: Vec<Array1<f64>>,
    pub encoder: CausalEncoder,
}

/// Common view over both sampling schemes.
pub trait BlockScheme {
    fn base(&self) -> &RsParams;
    fn encoder(&self) -> &CausalEncoder;
    /// Coordinate ranges of the named state blocks, in order; the last one is the encoder block.
    fn block_ranges(&self) -> Vec<Range<usize>>;

    fn encoder_range(&self) -> Range<usize> {
        self.block_ranges().pop().expect("schemes always have an encoder block")
    }
}

impl BlockScheme for Scheme1Params {
    fn base(&self) -> &RsParams {
        &self.base
    }
    fn encoder(&self) -> &CausalEncoder {
        &self.encoder
    }
    fn block_ranges(&self) -> Vec<Range<usize>> {
        let n = self.base.n_dim();
        vec![0..self.m_dim, self.m_dim..n]
    }
}

impl BlockScheme for Scheme2Params {
    fn base(&self) -> &RsParams {
        &self.base
    }
    fn encoder(&self) -> &CausalEncoder {
        &self.encoder
    }
    fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![0..self.m_dim];
        let mut start = self.m_dim;
        for &mi in &self.m_dims {
            out.push(start..start + mi);
            start += mi;
        }
        out.push(start..self.base.n_dim());
        out
    }
}

fn check_scheme_args(dims: &[usize], std: f64, activation: Activation) -> Result<()> {
    if dims.iter().any(|&v| v == 0) {
        return arg_err("scheme dimensions must be positive");
    }
    if !(std > 0.0 && std.is_finite()) {
        return arg_err(format!("distribution std must be positive, got {std}"));
    }
    if !activation.satisfies_assumption1() {
        return arg_err(format!(
            "block schemes need an activation with σ(0)=0; {} does not qualify",
            activation.name()
        ));
    }
    Ok(())
}

pub fn sample_scheme1(
    m_dim: usize,
    horizon: usize,
    in_dim: usize,
    dist_std: f64,
    activation: Activation,
    seed: u64,
) -> Result<Scheme1Params> {
    check_scheme_args(&[m_dim, horizon, in_dim], dist_std, activation)?;
    let td = horizon * in_dim;
    let n = m_dim + td;
    let mut rng = rng::stream(seed, 1);
    let a1_1 = rng::normal_matrix(&mut rng, m_dim, td, dist_std);
    let xi1_1 = rng::normal_vector(&mut rng, m_dim, dist_std);
    let encoder = CausalEncoder::sample(&mut rng, horizon, in_dim, dist_std, activation);
    let a1_2 = encoder.a1_2();

    let mut a1 = Array2::zeros((n, n));
    a1.slice_mut(s![..m_dim, m_dim..]).assign(&a1_1);
    a1.slice_mut(s![m_dim.., m_dim..]).assign(&a1_2);
    let mut xi1 = Array1::zeros(n);
    xi1.slice_mut(s![..m_dim]).assign(&xi1_1);
    let a2 = vec![Array2::zeros((n, n)); in_dim];
    let xi2 = (0..in_dim)
        .map(|i| {
            let mut v = Array1::zeros(n);
            v[m_dim + i] = encoder.alphas[i];
            v
        })
        .collect();
    let base = RsParams::from_parts(horizon, a1, xi1, a2, xi2, activation, seed)?;
    Ok(Scheme1Params { m_dim, horizon, in_dim, base, a1_1, a1_2, xi1_1, encoder })
}

pub fn sample_scheme2(
    m_dim: usize,
    m_dims: &[usize],
    horizon: usize,
    in_dim: usize,
    dist_std: f64,
    activation: Activation,
    seed: u64,
) -> Result<Scheme2Params> {
    check_scheme_args(&[m_dim, horizon, in_dim], dist_std, activation)?;
    if m_dims.len() != in_dim {
        return arg_err(format!("{} block sizes given for d={in_dim}", m_dims.len()));
    }
    check_scheme_args(m_dims, dist_std, activation)?;
    let td = horizon * in_dim;
    let m_tot: usize = m_dims.iter().sum();
    let n = m_dim + m_tot + td;
    let enc_start = m_dim + m_tot;

    let mut rng = rng::stream(seed, 2);
    let a1_1 = rng::normal_matrix(&mut rng, m_dim, td, dist_std);
    let xi1_tilde = rng::normal_vector(&mut rng, m_dim, dist_std);
    let mut a2_tilde = Vec::with_capacity(in_dim);
    let mut xi2_tilde = Vec::with_capacity(in_dim);
    for &mi in m_dims {
        a2_tilde.push(rng::normal_matrix(&mut rng, mi, td, dist_std));
        xi2_tilde.push(rng::normal_vector(&mut rng, mi, dist_std));
    }
    let encoder = CausalEncoder::sample(&mut rng, horizon, in_dim, dist_std, activation);
    let a1_2 = encoder.a1_2();

    let mut a1 = Array2::zeros((n, n));
    a1.slice_mut(s![..m_dim, enc_start..]).assign(&a1_1);
    a1.slice_mut(s![enc_start.., enc_start..]).assign(&a1_2);
    let mut xi1 = Array1::zeros(n);
    xi1.slice_mut(s![..m_dim]).assign(&xi1_tilde);

    let mut a2 = Vec::with_capacity(in_dim);
    let mut xi2 = Vec::with_capacity(in_dim);
    let mut start = m_dim;
    for i in 0..in_dim {
        let rows = start..start + m_dims[i];
        let mut m = Array2::zeros((n, n));
        m.slice_mut(s![rows.clone(), enc_start..]).assign(&a2_tilde[i]);
        let mut v = Array1::zeros(n);
        v.slice_mut(s![rows]).assign(&xi2_tilde[i]);
        v[enc_start + i] = encoder.alphas[i];
        a2.push(m);
        xi2.push(v);
        start += m_dims[i];
    }
    let base = RsParams::from_parts(horizon, a1, xi1, a2, xi2, activation, seed)?;
    Ok(Scheme2Params {
        m_dim,
        m_dims: m_dims.to_vec(),
        horizon,
        in_dim,
        base,
        a1_1,
        a1_2,
        xi1_tilde,
        a2_tilde,
        xi2_tilde,
        encoder,
    })
}

/// Slices `RS_t` into the scheme's named blocks.
pub fn block_states<S: BlockScheme + ?Sized>(scheme: &S, path: &RsPath, t: usize) -> Result<Vec<Array1<f64>>> {
    if t > path.horizon() {
        return arg_err(format!("t={t} beyond horizon {}", path.horizon()));
    }
    if path.states.ncols() != scheme.base().n_dim() {
        return shape_err("path does not belong to this scheme's reservoir");
    }
    let row = path.states.row(t);
    Ok(scheme
        .block_ranges()
        .into_iter()
        .map(|r| row.slice(s![r]).to_owned())
        .collect())
}

/// Evaluates the encoder block `G_t(x_1..x_t)` without running the reservoir.
pub fn g_recursion_eval<S: BlockScheme + ?Sized>(scheme: &S, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    scheme.encoder().g_recursion(x)
}

/// Smallest `‖G_T(x) − G_T(y)‖₂` over random distinct input pairs drawn
/// uniformly from `[−b, b]^{T×d}`.
pub fn injectivity_probe<S: BlockScheme + ?Sized>(
    scheme: &S,
    n_pairs: usize,
    domain_bound: f64,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return arg_err("n_pairs must be at least 1");
    }
    if !(domain_bound > 0.0 && domain_bound.is_finite()) {
        return arg_err(format!("domain bound must be positive, got {domain_bound}"));
    }
    let enc = scheme.encoder();
    let shape = (enc.horizon, enc.in_dim);
    let mut rng = rng::stream(seed, 3);
    let mut min_sep = f64::INFINITY;
    let mut done = 0;
    while done < n_pairs {
        let x = Array2::from_shape_simple_fn(shape, || rng.random_range(-domain_bound..=domain_bound));
        let y = Array2::from_shape_simple_fn(shape, || rng.random_range(-domain_bound..=domain_bound));
        if x == y {
            continue;
        }
        let gx = enc.g_recursion(x.view())?;
        let gy = enc.g_recursion(y.view())?;
        let sep = (&gx - &gy).mapv(|v| v * v).sum().sqrt();
        min_sep = min_sep.min(sep);
        done += 1;
    }
    Ok(min_sep)
}

/// Ridge readout `w` fitted on reservoir features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutFit {
    pub weights: Array1<f64>,
    pub ridge: f64,
    pub train_rmse: f64,
    pub test_sup_error: f64,
}

impl ReadoutFit {
    pub fn predict(&self, features: ArrayView2<f64>) -> Array1<f64> {
        features.dot(&self.weights)
    }
}

/// Solves `min_w ‖F w − y‖² + λ‖w‖²` and reports train RMSE and test sup-error.
pub fn fit_readout(
    features: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    ridge: f64,
    test_features: ArrayView2<f64>,
    test_targets: ArrayView1<f64>,
) -> Result<ReadoutFit> {
    let n = features.nrows();
    if n == 0 {
        return arg_err("fit_readout needs at least one sample");
    }
    if !(ridge >= 0.0) {
        return arg_err(format!("ridge must be non-negative, got {ridge}"));
    }
    if targets.len() != n {
        return shape_err(format!("{n} feature rows but {} targets", targets.len()));
    }
    if test_features.ncols() != features.ncols() || test_features.nrows() != test_targets.len() {
        return shape_err("test features/targets do not match the training layout");
    }
    let y = targets.to_owned().insert_axis(ndarray::Axis(1));
    let w = linalg::ridge_solve(features, y.view(), ridge)?.column(0).to_owned();
    let resid = &features.dot(&w) - &targets;
    let train_rmse = (resid.mapv(|v| v * v).sum() / n as f64).sqrt();
    let test_sup_error = (&test_features.dot(&w) - &test_targets)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ReadoutFit { weights: w, ridge, train_rmse, test_sup_error })
}

/// Path functionals used as regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFn {
    /// `sin(Σ x)` over the first `T−1` observations.
    SinSum,
    /// Largest component among the first `T−1` observations.
    MaxComponent,
}

impl TargetFn {
    pub fn eval(self, x: ArrayView2<f64>) -> f64 {
        let prefix = x.slice(s![..x.nrows() - 1, ..]);
        match self {
            TargetFn::SinSum => prefix.sum().sin(),
            TargetFn::MaxComponent => prefix.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayConfig {
    pub target: TargetFn,
    pub horizon: usize,
    pub in_dim: usize,
    pub m_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub ridge: f64,
    pub dist_std: f64,
    pub activation: Activation,
    /// Half-width of the input cube `K = [−b, b]`.
    pub domain_bound: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            target: TargetFn::SinSum,
            horizon: 10,
            in_dim: 1,
            m_grid: vec![20, 80, 320],
            seeds: (0..5).collect(),
            n_train: 20_000,
            n_test: 5_000,
            ridge: 1e-8,
            dist_std: 1.0,
            activation: Activation::ShiftedSigmoid,
            domain_bound: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub train_rmse: f64,
    pub test_sup_error: f64,
}

/// `ΔRS⁽¹⁾_T` features (leading `M` coordinates) of a Scheme-1 reservoir.
///
/// Uses the block recursion directly: only the encoder block has to be
/// propagated, the feature block is a read-out of `RS⁽²⁾_{T−1}`.
pub fn scheme1_features(scheme: &Scheme1Params, inputs: &Array3<f64>) -> Result<Array2<f64>> {
    let (n, t_len, d) = inputs.dim();
    if t_len != scheme.horizon || d != scheme.in_dim {
        return shape_err("inputs do not match the scheme's horizon/dimension");
    }
    let act = scheme.base.activation();
    let sig_alpha = scheme.encoder.alphas.mapv(|a| act.eval(a));
    let mut enc = Array2::<f64>::zeros((n, t_len * d));
    for t in 0..t_len - 1 {
        let mut inc = enc.dot(&scheme.a1_2.t());
        inc.mapv_inplace(|z| act.eval(z));
        for i in 0..d {
            let mut col = inc.column_mut(i);
            col.zip_mut_with(&inputs.slice(s![.., t, i]), |c, &x| *c += sig_alpha[i] * x);
        }
        enc += &inc;
    }
    let mut feats = enc.dot(&scheme.a1_1.t());
    feats += &scheme.xi1_1;
    feats.mapv_inplace(|z| act.eval(z));
    Ok(feats)
}

/// Test sup-error of ridge readouts as the feature count `M` grows.
pub fn error_decay_experiment(cfg: &DecayConfig) -> Result<Vec<DecayRecord>> {
    if cfg.horizon < 2 {
        return arg_err("error-decay experiment needs T >= 2");
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let mut rng = rng::stream(seed, 4);
        let b = cfg.domain_bound;
        let shape = |n| (n, cfg.horizon, cfg.in_dim);
        let x_train = Array3::from_shape_simple_fn(shape(cfg.n_train), || rng.random_range(-b..=b));
        let x_test = Array3::from_shape_simple_fn(shape(cfg.n_test), || rng.random_range(-b..=b));
        let targets = |x: &Array3<f64>| -> Array1<f64> {
            x.outer_iter().map(|p| cfg.target.eval(p)).collect()
        };
        let y_train = targets(&x_train);
        let y_test = targets(&x_test);
        for &m in &cfg.m_grid {
            let scheme = sample_scheme1(m, cfg.horizon, cfg.in_dim, cfg.dist_std, cfg.activation, seed)?;
            let f_train = scheme1_features(&scheme, &x_train)?;
            let f_test = scheme1_features(&scheme, &x_test)?;
            let fit = fit_readout(f_train.view(), y_train.view(), cfg.ridge, f_test.view(), y_test.view())?;
            out.push(DecayRecord { m, seed, train_rmse: fit.train_rmse, test_sup_error: fit.test_sup_error });
        }
    }
    Ok(out)
}

/// Median test sup-error per `M`, in grid order.
pub fn median_sup_error_by_m(records: &[DecayRecord], m_grid: &[usize]) -> Vec<(usize, f64)> {
    m_grid
        .iter()
        .map(|&m| {
            let mut v: Vec<f64> = records.iter().filter(|r| r.m == m).map(|r| r.test_sup_error).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let med = if v.is_empty() {
                f64::NAN
            } else if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
            };
            (m, med)
        })
        .collect()
}

pub fn write_decay_csv(records: &[DecayRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(RsigError::from)?;
    Ok(())
}

/// Writes the same CSV to any sink (used by the CLI for stdout).
pub fn write_decay_csv_to<W: Write>(records: &[DecayRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(RsigError::from)?;
    Ok(())
}
