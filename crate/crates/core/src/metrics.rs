//! Evaluation metrics: RS-W₁, C-RS-W₁, covariance and autocorrelation
//! distances, the Shapiro–Wilk test and Gaussian KDE curves.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::signature::RsParams;
use crate::training::OlsFit;

/// `‖mean ΔRS_T(a) − mean ΔRS_T(b)‖₂`.
pub fn rs_w1_empirical(rs: &RsParams, samples_a: ArrayView3<f64>, samples_b: ArrayView3<f64>) -> Result<f64> {
    if samples_a.len_of(Axis(0)) == 0 || samples_b.len_of(Axis(0)) == 0 {
        return arg_err("RS-W1 needs nonempty sample sets");
    }
    let ma = rs.delta_terminal_batch(samples_a)?.mean_axis(Axis(0)).expect("nonempty");
    let mb = rs.delta_terminal_batch(samples_b)?.mean_axis(Axis(0)).expect("nonempty");
    Ok(euclidean(ma.view(), mb.view()))
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖α̂ + β̂·ΔRS_p(past) − mean ΔRS_q(fake)‖₂` for one past window.
pub fn c_rs_w1_supervised(
    fit: &OlsFit,
    rs: &RsParams,
    past: ArrayView2<f64>,
    fake_futures: ArrayView3<f64>,
) -> Result<f64> {
    if fake_futures.len_of(Axis(0)) == 0 {
        return arg_err("C-RS-W1 needs at least one generated future");
    }
    if fit.alpha_hat.len() != rs.n_dim() || fit.beta_hat.dim() != (rs.n_dim(), rs.n_dim()) {
        return shape_err("OLS fit does not match the RS dimension");
    }
    let feat = rs.with_horizon(past.nrows())?.delta_terminal(past)?;
    let target = fit.predict(feat.view());
    let fake = rs
        .with_horizon(fake_futures.len_of(Axis(1)))?
        .delta_terminal_batch(fake_futures)?
        .mean_axis(Axis(0))
        .expect("nonempty");
    Ok(euclidean(target.view(), fake.view()))
}

/// `(n, T·d)` matrix with column index `t·d + j`.
fn flatten(samples: ArrayView3<f64>) -> Array2<f64> {
    let (n, t, d) = samples.dim();
    Array2::from_shape_vec((n, t * d), samples.iter().copied().collect()).expect("element count matches")
}

/// Empirical covariance with the `1/M` normalisation.
fn biased_cov(x: &Array2<f64>) -> Array2<f64> {
    let m = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let c = x - &mean;
    c.t().dot(&c) / m
}

/// Root-sum-square difference of all cross-time, cross-dimension covariances.
pub fn cov_dist(samples_a: ArrayView3<f64>, samples_b: ArrayView3<f64>) -> Result<f64> {
    if samples_a.len_of(Axis(0)) < 2 || samples_b.len_of(Axis(0)) < 2 {
        return arg_err("covariance distance needs at least 2 samples per set");
    }
    if samples_a.dim().1 != samples_b.dim().1 || samples_a.dim().2 != samples_b.dim().2 {
        return shape_err("sample sets have different path shapes");
    }
    let ca = biased_cov(&flatten(samples_a));
    let cb = biased_cov(&flatten(samples_b));
    Ok((ca - cb).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Pooled autocovariance estimates `ρ̂(k)` for `k = 0..=max_lag` of coordinate `j`.
pub fn pooled_autocov(samples: ArrayView3<f64>, j: usize, max_lag: usize) -> Vec<f64> {
    let (m, t_len, _) = samples.dim();
    let x = samples.slice(s![.., .., j]);
    (0..=max_lag)
        .map(|k| {
            let cnt = (m * (t_len - k)) as f64;
            let head = x.slice(s![.., ..t_len - k]);
            let tail = x.slice(s![.., k..]);
            let cross = (&head * &tail).sum();
            cross / cnt - head.sum() * tail.sum() / (cnt * cnt)
        })
        .collect()
}

fn normalized_acf(samples: ArrayView3<f64>, j: usize, max_lag: usize) -> Result<Vec<f64>> {
    let rho = pooled_autocov(samples, j, max_lag);
    let x = samples.slice(s![.., .., j]);
    let scale = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(rho[0] > f64::EPSILON * scale.max(f64::MIN_POSITIVE)) {
        return Err(RsigError::Degenerate(format!(
            "coordinate {j} is constant, lag-0 autocovariance is {:e}",
            rho[0]
        )));
    }
    Ok(rho[1..].iter().map(|r| r / rho[0]).collect())
}

/// Root-sum-square difference of normalised autocorrelations over lags `1..=⌊T/2⌋`.
pub fn acf_dist(samples_a: ArrayView3<f64>, samples_b: ArrayView3<f64>) -> Result<f64> {
    let (na, t_len, d) = samples_a.dim();
    if na == 0 || samples_b.len_of(Axis(0)) == 0 {
        return arg_err("ACF distance needs nonempty sample sets");
    }
    if t_len < 2 {
        return arg_err("ACF distance needs paths with T >= 2");
    }
    if samples_b.dim().1 != t_len || samples_b.dim().2 != d {
        return shape_err("sample sets have different path shapes");
    }
    let lags = t_len / 2;
    let mut total = 0.0;
    for j in 0..d {
        let ra = normalized_acf(samples_a, j, lags)?;
        let rb = normalized_acf(samples_b, j, lags)?;
        total += ra.iter().zip(&rb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Royston's (1995) AS R94 approximation of the Shapiro–Wilk test, `3 ≤ n ≤ 5000`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<ShapiroWilk> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return arg_err(format!("Shapiro-Wilk needs 3 <= n <= 5000, got {n}"));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return arg_err("Shapiro-Wilk sample contains non-finite values");
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range > 1e-19 * x[n - 1].abs().max(x[0].abs()).max(1.0)) {
        return Err(RsigError::Degenerate("Shapiro-Wilk sample has zero variance".into()));
    }

    // coefficients for the lower half, positive, largest first
    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let m: Vec<f64> = (1..=half).map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            ((1), ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // correlation form: W = (Σ aᵢ x₍ᵢ₎)² / (Σ aᵢ² · Σ (x − x̄)²)
    let mean = x.iter().sum::<f64>() / an;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let norm_a = 2.0 * a.iter().map(|v| v * v).sum::<f64>();
    let w = (num * num / (norm_a * ss)).min(1.0);

    if n == 3 {
        let w = w.max(0.75);
        let p = (1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos()).clamp(0.0, 1.0);
        return Ok(ShapiroWilk { w, p_value: p });
    }
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let y = (1.0 - w).ln();
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            1e-19
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            1.0 - std_normal.cdf((y - m) / s)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        1.0 - std_normal.cdf((y - m) / s)
    };
    Ok(ShapiroWilk { w, p_value: if w >= 1.0 { 1.0 } else { p.clamp(0.0, 1.0) } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "density"])?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            w.write_record([x.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^{−1/5}`.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return arg_err("bandwidth needs at least 2 points");
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let sd = (sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(RsigError::Degenerate("KDE sample has zero spread".into()));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian-kernel density on `grid_size` points spanning the data ±5 bandwidths.
pub fn kde(sample: &[f64], bandwidth: Option<f64>, grid_size: usize) -> Result<KdeCurve> {
    if sample.len() < 2 {
        return arg_err("KDE needs at least 2 points");
    }
    if grid_size < 2 {
        return arg_err("KDE grid needs at least 2 points");
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return arg_err(format!("bandwidth must be positive, got {h}")),
        None => silverman_bandwidth(sample)?,
    };
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * h;
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
    let grid = kde_grid(lo, hi, grid_size);
    let density = kde_eval(sample, h, &grid);
    Ok(KdeCurve { grid, density, bandwidth: h })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn kde_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    let step = (hi - lo) / (size - 1) as f64;
    (0..size).map(|i| lo + step * i as f64).collect()
}

/// Gaussian KDE with bandwidth `h` evaluated at `grid`.
pub fn kde_eval(sample: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| norm * sample.iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwCount {
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub train_metric: f64,
    pub cov_dist: Option<f64>,
    pub acf_dist: f64,
    pub sw_passed: Option<SwCount>,
    pub sw_p_values: Option<Vec<f64>>,
    pub config_fingerprint: String,
}

impl MetricsReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub expect_normal: bool,
    pub sw_alpha: f64,
    pub fingerprint: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { expect_normal: false, sw_alpha: 0.05, fingerprint: String::new() }
    }
}

/// FNV-1a digest as 16 hex digits.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Shapiro–Wilk on every time marginal of `generated` whose counterpart in
/// `reference` is not deterministic. Uses at most the first 5000 samples.
pub fn sw_marginals(generated: ArrayView3<f64>, reference: ArrayView3<f64>, alpha: f64) -> Result<(SwCount, Vec<f64>)> {
    let (n, t_len, d) = generated.dim();
    let take = n.min(5000);
    let mut p_values = Vec::new();
    for t in 0..t_len {
        for j in 0..d {
            let r = reference.slice(s![.., t, j]);
            let first = r[0];
            if r.iter().all(|&v| v == first) {
                continue;
            }
            let col: Vec<f64> = generated.slice(s![..take, t, j]).to_vec();
            let p = match shapiro_wilk(&col) {
                Ok(sw) => sw.p_value,
                Err(RsigError::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            };
            p_values.push(p);
        }
    }
    let passed = p_values.iter().filter(|&&p| p > alpha).count();
    Ok((SwCount { passed, total: p_values.len() }, p_values))
}

/// Unconditional report: RS-W₁, Cov, ACF and optional SW counts on held-out data.
pub fn evaluate_uncond(
    rs: &RsParams,
    generated: ArrayView3<f64>,
    test: ArrayView3<f64>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let train_metric = rs_w1_empirical(rs, test, generated)?;
    let cov = cov_dist(test, generated)?;
    let acf = acf_dist(test, generated)?;
    let (sw_passed, sw_p_values) = if cfg.expect_normal {
        let (c, p) = sw_marginals(generated, test, cfg.sw_alpha)?;
        (Some(c), Some(p))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        train_metric,
        cov_dist: Some(cov),
        acf_dist: acf,
        sw_passed,
        sw_p_values,
        config_fingerprint: cfg.fingerprint.clone(),
    })
}

/// Conditional report. `generated` holds `per_past` futures for each test past,
/// grouped by past. The train metric is the mean C-RS-W₁ over test pasts; ACF
/// and SW compare the first generated future of every past against the real
/// futures, pooled over pasts. No covariance distance is reported.
pub fn evaluate_cond(
    fit: &OlsFit,
    rs: &RsParams,
    pasts: ArrayView3<f64>,
    real_futures: ArrayView3<f64>,
    generated: ArrayView3<f64>,
    per_past: usize,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let k = pasts.len_of(Axis(0));
    if k == 0 || per_past == 0 {
        return arg_err("conditional evaluation needs test windows and generated futures");
    }
    if real_futures.len_of(Axis(0)) != k || generated.len_of(Axis(0)) != k * per_past {
        return shape_err("generated futures must be grouped per test past");
    }
    let mut total = 0.0;
    for j in 0..k {
        let group = generated.slice(s![j * per_past..(j + 1) * per_past, .., ..]);
        total += c_rs_w1_supervised(fit, rs, pasts.index_axis(Axis(0), j), group)?;
    }
    let firsts = generated.slice(s![..;per_past, .., ..]);
    let acf = acf_dist(real_futures, firsts)?;
    let (sw_passed, sw_p_values) = if cfg.expect_normal {
        let (c, p) = sw_marginals(firsts, real_futures, cfg.sw_alpha)?;
        (Some(c), Some(p))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        train_metric: total / k as f64,
        cov_dist: None,
        acf_dist: acf,
        sw_passed,
        sw_p_values,
        config_fingerprint: cfg.fingerprint.clone(),
    })
}

/// Marginal values of coordinate `j` at time `t`, for KDE plots.
pub fn marginal(samples: ArrayView3<f64>, t: usize, j: usize) -> Array1<f64> {
    samples.slice(s![.., t, j]).to_owned()
}
