//! Synthetic simulators, price ingestion, windowing and dataset files.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result, RsigError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetKind {
    Unconditional,
    Windowed { past: usize, future: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `n × T × d` sample tensor with its kind, optional split and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Array3<f64>,
    pub kind: DatasetKind,
    pub split: Option<Split>,
    pub provenance: String,
    pub notes: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Array3<f64>, kind: DatasetKind, provenance: impl Into<String>) -> Result<Self> {
        if let DatasetKind::Windowed { past, future } = kind {
            if samples.len_of(Axis(1)) != past + future {
                return shape_err(format!(
                    "windowed samples have length {}, expected p+q={}",
                    samples.len_of(Axis(1)),
                    past + future
                ));
            }
        }
        Ok(Self { samples, kind, split: None, provenance: provenance.into(), notes: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.samples.len_of(Axis(1))
    }

    pub fn dim(&self) -> usize {
        self.samples.len_of(Axis(2))
    }

    fn part(&self, pick: impl Fn(&Split) -> &Vec<usize>) -> Array3<f64> {
        match &self.split {
            Some(sp) => self.samples.select(Axis(0), pick(sp)),
            None => self.samples.clone(),
        }
    }

    /// Training samples, or all samples when no split is set.
    pub fn train(&self) -> Array3<f64> {
        self.part(|s| &s.train)
    }

    /// Test samples, or all samples when no split is set.
    pub fn test(&self) -> Array3<f64> {
        self.part(|s| &s.test)
    }

    /// Splits windowed samples into `(pasts, futures)`.
    pub fn past_future(samples: &Array3<f64>, past: usize) -> Result<(Array3<f64>, Array3<f64>)> {
        if past == 0 || past >= samples.len_of(Axis(1)) {
            return arg_err(format!("cannot split windows of length {} at p={past}", samples.len_of(Axis(1))));
        }
        Ok((samples.slice(s![.., ..past, ..]).to_owned(), samples.slice(s![.., past.., ..]).to_owned()))
    }

    /// Writes `path` (JSON header) and a sibling `.csv` with one sample per row.
    pub fn save(&self, path: &Path) -> Result<()> {
        let csv_path = path.with_extension("csv");
        let data_file = csv_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .ok_or_else(|| RsigError::Argument(format!("invalid dataset path {}", path.display())))?;
        let (n, t, d) = self.samples.dim();
        let header = DatasetHeader {
            kind: self.kind,
            shape: [n, t, d],
            split: self.split.clone(),
            provenance: self.provenance.clone(),
            notes: self.notes.clone(),
            data_file,
        };
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
        for sample in self.samples.outer_iter() {
            w.write_record(sample.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &header)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let header: DatasetHeader = serde_json::from_reader(std::io::BufReader::new(file))?;
        let csv_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
        let [n, t, d] = header.shape;
        let mut values = Vec::with_capacity(n * t * d);
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&csv_path)?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != t * d {
                return shape_err(format!("dataset row has {} values, expected {}", rec.len(), t * d));
            }
            for field in rec.iter() {
                values.push(field.parse::<f64>().map_err(|e| RsigError::Parse(format!("{field:?}: {e}")))?);
            }
        }
        let samples = Array3::from_shape_vec((n, t, d), values)
            .map_err(|_| RsigError::Shape(format!("dataset file does not hold {n} samples")))?;
        let mut ds = Dataset::new(samples, header.kind, header.provenance)?;
        if let Some(sp) = &header.split {
            if sp.train.iter().chain(&sp.test).any(|&i| i >= n) {
                return shape_err("split indices exceed the sample count");
            }
        }
        ds.split = header.split;
        ds.notes = header.notes;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    kind: DatasetKind,
    shape: [usize; 3],
    split: Option<Split>,
    provenance: String,
    notes: Vec<String>,
    data_file: String,
}

/// Paths `W₁ = 0`, `W_t = W_{t−1} + μ + σZ_t`.
pub fn simulate_bm(mu: f64, sigma: f64, horizon: usize, n_paths: usize, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
        return arg_err(format!("need finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"));
    }
    if horizon == 0 || n_paths == 0 {
        return arg_err("horizon and path count must be positive");
    }
    let mut samples = Array3::zeros((n_paths, horizon, 1));
    for (i, mut path) in samples.outer_iter_mut().enumerate() {
        let mut r = rng::stream(seed, i as u64);
        for t in 1..horizon {
            path[[t, 0]] = path[[t - 1, 0]] + mu + sigma * rng::standard_normal(&mut r);
        }
    }
    Dataset::new(samples, DatasetKind::Unconditional, format!("bm mu={mu} sigma={sigma} seed={seed}"))
}

/// Whether all roots of `1 − φ₁x − … − φ_p x^p` lie outside the unit disc,
/// decided by the step-down recursion on the partial autocorrelations.
pub fn ar_is_stationary(phis: &[f64]) -> bool {
    let mut a = phis.to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m - 1).map(|j| (a[j] + k * a[m - 2 - j]) / denom).collect();
        a = next;
    }
    true
}

/// AR(p) paths simulated from zero initial values; the first `burn_in` steps are dropped.
pub fn simulate_ar(
    phis: &[f64],
    sigma: f64,
    horizon: usize,
    burn_in: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return arg_err(format!("sigma must be positive, got {sigma}"));
    }
    if phis.is_empty() || phis.iter().any(|p| !p.is_finite()) {
        return arg_err("AR coefficients must be finite and nonempty");
    }
    if horizon == 0 || n_paths == 0 {
        return arg_err("horizon and path count must be positive");
    }
    let p = phis.len();
    let total = burn_in + horizon;
    let mut samples = Array3::zeros((n_paths, horizon, 1));
    let mut buf = vec![0.0; p + total];
    for (i, mut path) in samples.outer_iter_mut().enumerate() {
        let mut r = rng::stream(seed, i as u64);
        buf.iter_mut().for_each(|v| *v = 0.0);
        for t in p..p + total {
            let ar: f64 = phis.iter().enumerate().map(|(j, phi)| phi * buf[t - 1 - j]).sum();
            buf[t] = ar + sigma * rng::standard_normal(&mut r);
        }
        for t in 0..horizon {
            path[[t, 0]] = buf[p + burn_in + t];
        }
    }
    let mut ds = Dataset::new(
        samples,
        DatasetKind::Unconditional,
        format!("ar phis={phis:?} sigma={sigma} burn_in={burn_in} seed={seed}"),
    )?;
    if !ar_is_stationary(phis) {
        ds.notes.push("non-stationary AR coefficients".into());
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub close: Vec<f64>,
    pub skipped: usize,
}

/// Reads a `date,close` CSV (extra columns ignored), skipping unparseable rows.
pub fn load_close_prices(path: &Path) -> Result<PriceSeries> {
    let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(di), Some(ci)) = (col("date"), col("close")) else {
        return Err(RsigError::Parse(format!("{} lacks `date` and `close` columns", path.display())));
    };
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in r.records() {
        let rec = rec?;
        let date = rec.get(di).and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok());
        let close = rec.get(ci).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (date, close) {
            (Some(d), Some(c)) => rows.push((d, c)),
            _ => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(RsigError::Parse(format!("{} holds no usable price rows", path.display())));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, close) = rows.into_iter().unzip();
    Ok(PriceSeries { dates, close, skipped })
}

/// `r_t = ln(P_{t+1} / P_t)`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return arg_err("log returns need at least 2 prices");
    }
    if let Some(p) = prices.iter().find(|&&p| !(p > 0.0)) {
        return arg_err(format!("prices must be positive, found {p}"));
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Overlapping windows of length `window_len` taken every `stride` rows.
pub fn rolling_windows(series: ArrayView2<f64>, window_len: usize, stride: usize) -> Result<Dataset> {
    let len = series.nrows();
    if window_len == 0 || stride == 0 {
        return arg_err("window length and stride must be positive");
    }
    if len < window_len {
        return arg_err(format!("series of length {len} is shorter than the window {window_len}"));
    }
    let count = (len - window_len) / stride + 1;
    let d = series.ncols();
    let mut samples = Array3::zeros((count, window_len, d));
    for (w, mut out) in samples.outer_iter_mut().enumerate() {
        out.assign(&series.slice(s![w * stride..w * stride + window_len, ..]));
    }
    Dataset::new(samples, DatasetKind::Unconditional, format!("rolling windows T={window_len} stride={stride}"))
}

/// Windows `x_{i−p+1..i}` (past) followed by `x_{i+1..i+q}` (future), `i = p..L−q`.
pub fn past_future_windows(series: ArrayView2<f64>, past: usize, future: usize) -> Result<Dataset> {
    if past == 0 || future == 0 {
        return arg_err("past and future lengths must be positive");
    }
    let mut ds = rolling_windows(series, past + future, 1)?;
    ds.kind = DatasetKind::Windowed { past, future };
    ds.provenance = format!("past/future windows p={past} q={future}");
    Ok(ds)
}

/// Shuffled partition with `⌊n·train_frac⌋` training samples.
pub fn train_test_split(mut dataset: Dataset, train_frac: f64, shuffle_seed: u64) -> Result<Dataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return arg_err(format!("train fraction must lie in (0, 1), got {train_frac}"));
    }
    let n = dataset.len();
    if n < 2 {
        return arg_err("splitting needs at least 2 samples");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(shuffle_seed, 30));
    let n_train = (n as f64 * train_frac).floor() as usize;
    let test = idx.split_off(n_train);
    dataset.split = Some(Split { train: idx, test });
    Ok(dataset)
}

/// Converts a univariate series to an `L × 1` matrix.
pub fn column(series: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((series.len(), 1), series.to_vec()).expect("length matches")
}
