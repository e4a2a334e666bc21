//! Discrete-time randomised signature of a datastream.
//!
//! The reservoir state evolves as
//!
//! ```text
//! RS_t = RS_{t-1} + σ(A₁ RS_{t-1} + ξ₁) + Σ_i σ(A₂ⁱ RS_{t-1} + ξ₂ⁱ) x_tⁱ,   RS_0 = 0,
//! ```
//!
//! with weights sampled once and then frozen. The terminal increment
//! `ΔRS_T = RS_T − RS_{T−1}` is the feature vector used by every metric in
//! this crate.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::rng;

/// Frozen random weights of a randomised-signature reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct RsParams {
    n_dim: usize,
    in_dim: usize,
    horizon: usize,
    a1: Array2<f64>,
    xi1: Array1<f64>,
    a2: Vec<Array2<f64>>,
    xi2: Vec<Array1<f64>>,
    activation: Activation,
    seed: u64,
}

/// States `RS_0, …, RS_T` stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct RsPath {
    pub states: Array2<f64>,
}

impl RsPath {
    pub fn horizon(&self) -> usize {
        self.states.nrows().saturating_sub(1)
    }

    pub fn state(&self, t: usize) -> ArrayView1<'_, f64> {
        self.states.row(t)
    }
}

/// Draws every weight i.i.d. from `Normal(0, weight_std²)`.
pub fn sample_rs_params(
    n_dim: usize,
    in_dim: usize,
    horizon: usize,
    weight_std: f64,
    activation: Activation,
    seed: u64,
) -> Result<RsParams> {
    if n_dim == 0 || in_dim == 0 || horizon == 0 {
        return arg_err(format!(
            "reservoir dimensions must be positive (N={n_dim}, d={in_dim}, T={horizon})"
        ));
    }
    if !(weight_std > 0.0 && weight_std.is_finite()) {
        return arg_err(format!("weight_std must be positive, got {weight_std}"));
    }
    let mut rng = rng::stream(seed, 0);
    let a1 = rng::normal_matrix(&mut rng, n_dim, n_dim, weight_std);
    let xi1 = rng::normal_vector(&mut rng, n_dim, weight_std);
    let mut a2 = Vec::with_capacity(in_dim);
    let mut xi2 = Vec::with_capacity(in_dim);
    for _ in 0..in_dim {
        a2.push(rng::normal_matrix(&mut rng, n_dim, n_dim, weight_std));
        xi2.push(rng::normal_vector(&mut rng, n_dim, weight_std));
    }
    RsParams::from_parts(horizon, a1, xi1, a2, xi2, activation, seed)
}

impl RsParams {
    /// Assembles params from explicit weights, validating every shape.
    pub fn from_parts(
        horizon: usize,
        a1: Array2<f64>,
        xi1: Array1<f64>,
        a2: Vec<Array2<f64>>,
        xi2: Vec<Array1<f64>>,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let n = a1.nrows();
        if n == 0 || horizon == 0 || a2.is_empty() {
            return arg_err("reservoir dimensions must be positive");
        }
        if a1.ncols() != n || xi1.len() != n {
            return shape_err(format!(
                "a1 is {:?} and xi1 has length {}, expected {n}x{n} and {n}",
                a1.dim(),
                xi1.len()
            ));
        }
        if a2.len() != xi2.len() {
            return shape_err(format!("{} a2 blocks but {} xi2 vectors", a2.len(), xi2.len()));
        }
        for (i, (m, v)) in a2.iter().zip(&xi2).enumerate() {
            if m.dim() != (n, n) || v.len() != n {
                return shape_err(format!("a2[{i}] / xi2[{i}] do not match N={n}"));
            }
        }
        let in_dim = a2.len();
        Ok(Self {
            n_dim: n,
            in_dim,
            horizon,
            a1: a1.as_standard_layout().into_owned(),
            xi1,
            a2: a2.into_iter().map(|m| m.as_standard_layout().into_owned()).collect(),
            xi2,
            activation,
            seed,
        })
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn a1(&self) -> &Array2<f64> {
        &self.a1
    }
    pub fn xi1(&self) -> &Array1<f64> {
        &self.xi1
    }
    pub fn a2(&self) -> &[Array2<f64>] {
        &self.a2
    }
    pub fn xi2(&self) -> &[Array1<f64>] {
        &self.xi2
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same weights, different declared path length.
    ///
    /// The dense weights do not depend on `T`, so one reservoir can featurise
    /// both the `p`-step past and the `q`-step future of a conditional window.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return arg_err("horizon must be positive");
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    /// One reservoir update from `state` driven by the input `x_t`.
    pub fn step(&self, state: ArrayView1<f64>, x_t: ArrayView1<f64>) -> Result<Array1<f64>> {
        if state.len() != self.n_dim {
            return shape_err(format!("state has length {}, expected {}", state.len(), self.n_dim));
        }
        if x_t.len() != self.in_dim {
            return shape_err(format!("input has length {}, expected {}", x_t.len(), self.in_dim));
        }
        Ok(self.step_unchecked(state, x_t))
    }

    fn step_unchecked(&self, state: ArrayView1<f64>, x_t: ArrayView1<f64>) -> Array1<f64> {
        let act = self.activation;
        let mut out = state.to_owned();
        let drift = self.a1.dot(&state) + &self.xi1;
        out.zip_mut_with(&drift, |o, &z| *o += act.eval(z));
        for (i, (a2, xi2)) in self.a2.iter().zip(&self.xi2).enumerate() {
            let u = x_t[i];
            let pre = a2.dot(&state) + xi2;
            out.zip_mut_with(&pre, |o, &z| *o += act.eval(z) * u);
        }
        out
    }

    /// Full state trajectory for a `T × d` input stream.
    pub fn path(&self, x: ArrayView2<f64>) -> Result<RsPath> {
        if x.nrows() != self.horizon {
            return arg_err(format!("input has {} rows, expected T={}", x.nrows(), self.horizon));
        }
        if x.ncols() != self.in_dim {
            return shape_err(format!("input has {} columns, expected d={}", x.ncols(), self.in_dim));
        }
        let mut states = Array2::zeros((self.horizon + 1, self.n_dim));
        for t in 1..=self.horizon {
            let next = self.step_unchecked(states.row(t - 1), x.row(t - 1));
            states.row_mut(t).assign(&next);
        }
        Ok(RsPath { states })
    }

    /// `ΔRS_T` for a single `T × d` path.
    pub fn delta_terminal(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        delta_rs_terminal(&self.path(x)?)
    }

    /// `ΔRS_T` for every path of an `n × T × d` batch, one feature row per path.
    ///
    /// Evaluates the recursion with matrix-matrix products over the batch;
    /// numerically equivalent to calling [`RsParams::delta_terminal`] per path.
    pub fn delta_terminal_batch(&self, paths: ArrayView3<f64>) -> Result<Array2<f64>> {
        let (n, t_len, d) = paths.dim();
        if t_len != self.horizon {
            return arg_err(format!("paths have length {t_len}, expected T={}", self.horizon));
        }
        if d != self.in_dim {
            return shape_err(format!("paths have dimension {d}, expected {}", self.in_dim));
        }
        let mut state = Array2::<f64>::zeros((n, self.n_dim));
        let mut delta = Array2::<f64>::zeros((n, self.n_dim));
        for t in 0..t_len {
            delta = self.increment_batch(state.view(), paths.slice(s![.., t, ..]));
            state += &delta;
        }
        Ok(delta)
    }

    /// Batched increment `RS_t − RS_{t−1}` for rows of `state` and inputs `x_t` (`n × d`).
    pub(crate) fn increment_batch(&self, state: ArrayView2<f64>, x_t: ArrayView2<f64>) -> Array2<f64> {
        let act = self.activation;
        let mut inc = state.dot(&self.a1.t());
        inc += &self.xi1;
        inc.mapv_inplace(|z| act.eval(z));
        for (i, (a2, xi2)) in self.a2.iter().zip(&self.xi2).enumerate() {
            let mut pre = state.dot(&a2.t());
            pre += xi2;
            let u = x_t.column(i);
            for (mut row, (&ui, pre_row)) in inc.rows_mut().into_iter().zip(u.iter().zip(pre.rows())) {
                row.zip_mut_with(&pre_row, |o, &z| *o += act.eval(z) * ui);
            }
        }
        inc
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &RsParamsDoc::from(self))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: RsParamsDoc = serde_json::from_reader(std::io::BufReader::new(file))?;
        doc.try_into()
    }
}

/// `RS_T − RS_{T−1}` of a computed path.
pub fn delta_rs_terminal(path: &RsPath) -> Result<Array1<f64>> {
    let rows = path.states.nrows();
    if rows < 2 {
        return arg_err("terminal increment needs a path with T >= 1");
    }
    Ok(&path.states.row(rows - 1) - &path.states.row(rows - 2))
}

/// Portable JSON form: shape metadata plus row-major weight arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RsParamsDoc {
    pub n_dim: usize,
    pub in_dim: usize,
    pub horizon: usize,
    pub activation: Activation,
    pub seed: u64,
    pub a1: Vec<f64>,
    pub xi1: Vec<f64>,
    pub a2: Vec<Vec<f64>>,
    pub xi2: Vec<Vec<f64>>,
}

impl From<&RsParams> for RsParamsDoc {
    fn from(p: &RsParams) -> Self {
        Self {
            n_dim: p.n_dim,
            in_dim: p.in_dim,
            horizon: p.horizon,
            activation: p.activation,
            seed: p.seed,
            a1: p.a1.iter().copied().collect(),
            xi1: p.xi1.to_vec(),
            a2: p.a2.iter().map(|m| m.iter().copied().collect()).collect(),
            xi2: p.xi2.iter().map(|v| v.to_vec()).collect(),
        }
    }
}

impl TryFrom<RsParamsDoc> for RsParams {
    type Error = RsigError;

    fn try_from(doc: RsParamsDoc) -> Result<Self> {
        let n = doc.n_dim;
        let mat = |v: Vec<f64>, what: &str| {
            Array2::from_shape_vec((n, n), v)
                .map_err(|_| RsigError::Shape(format!("{what} is not {n}x{n}")))
        };
        let a1 = mat(doc.a1, "a1")?;
        let a2 = doc
            .a2
            .into_iter()
            .map(|v| mat(v, "a2"))
            .collect::<Result<Vec<_>>>()?;
        if a2.len() != doc.in_dim {
            return shape_err(format!("{} a2 blocks for in_dim {}", a2.len(), doc.in_dim));
        }
        RsParams::from_parts(
            doc.horizon,
            a1,
            Array1::from(doc.xi1),
            a2,
            doc.xi2.into_iter().map(Array1::from).collect(),
            doc.activation,
            doc.seed,
        )
    }
}
