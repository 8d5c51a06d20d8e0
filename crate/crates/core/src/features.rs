//! Feature estimators: Welch PSD with baseline subtraction, Pearson
//! correlation, phase-locking value and binned transfer entropy, plus
//! assembly of pairwise connectivity matrices.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signalcore::{instantaneous_phase, BandDefinition, BandSegment, SignalError};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("zero-variance input")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("subwindow of {subwin} samples is longer than the {len}-sample segment")]
    SubwindowTooLong { subwin: usize, len: usize },
    #[error("no spectral bins fall inside band {0}")]
    EmptyBand(String),
    #[error("no baseline segments supplied")]
    MissingBaseline,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("entry ({row}, {col}): {source}")]
    Entry {
        row: usize,
        col: usize,
        #[source]
        source: Box<FeatureError>,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Hann,
    Hamming,
    Rectangular,
}

impl Taper {
    fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        // periodic form, as used for spectral estimation
        (0..n)
            .map(|k| {
                let c = (2.0 * PI * k as f64 / n as f64).cos();
                match self {
                    Taper::Hann => 0.5 - 0.5 * c,
                    Taper::Hamming => 0.54 - 0.46 * c,
                    Taper::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub subwin_s: f64,
    pub overlap_frac: f64,
    pub window_fn: Taper,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { subwin_s: 1.0, overlap_frac: 0.5, window_fn: Taper::Hann }
    }
}

/// One-sided power spectral density on the grid `k * fs / n`, `k = 0..=n/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    pub fn integrated_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }
}

/// Welch's averaged, tapered periodogram. Each subwindow has its mean
/// removed; the result is a density (power per Hz).
pub fn welch_psd(x: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Spectrum, FeatureError> {
    if !(0.0..1.0).contains(&cfg.overlap_frac) {
        return Err(FeatureError::InvalidArgument(format!(
            "overlap fraction {} outside [0, 1)",
            cfg.overlap_frac
        )));
    }
    let n = (cfg.subwin_s * fs).round() as usize;
    if n < 2 {
        return Err(FeatureError::InvalidArgument(format!(
            "subwindow of {} s is under two samples",
            cfg.subwin_s
        )));
    }
    if n > x.len() {
        return Err(FeatureError::SubwindowTooLong { subwin: n, len: x.len() });
    }
    let hop = ((n as f64 * (1.0 - cfg.overlap_frac)).round() as usize).max(1);
    let w = cfg.window_fn.coefficients(n);
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let n_bins = n / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        let win = &x[start..start + n];
        let mean = win.iter().sum::<f64>() / n as f64;
        for ((b, &v), &c) in buf.iter_mut().zip(win).zip(&w) {
            *b = Complex64::new((v - mean) * c, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            one_sided * s / (count as f64 * fs * w2)
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Spectrum { freqs, power })
}

/// Mean PSD over the non-DC bins whose frequency lies in `[lo, hi]`.
pub fn band_power(spectrum: &Spectrum, band: &BandDefinition) -> Result<f64, FeatureError> {
    let tol = 1e-9;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&f, &p) in spectrum.freqs.iter().zip(&spectrum.power) {
        if f > 0.0 && f >= band.lo - tol && f <= band.hi + tol {
            sum += p;
            n += 1;
        }
    }
    if n == 0 {
        return Err(FeatureError::EmptyBand(band.name.clone()));
    }
    Ok(sum / n as f64)
}

/// Baseline-subtracted band power of one channel, in linear units.
pub fn psd_feature(
    segment: &[f64],
    baseline_segments: &[&[f64]],
    band: &BandDefinition,
    fs: f64,
    cfg: &WelchConfig,
) -> Result<f64, FeatureError> {
    if baseline_segments.is_empty() {
        return Err(FeatureError::MissingBaseline);
    }
    let trial = band_power(&welch_psd(segment, fs, cfg)?, band)?;
    let mut base = 0.0;
    for b in baseline_segments {
        base += band_power(&welch_psd(b, fs, cfg)?, band)?;
    }
    Ok(trial - base / baseline_segments.len() as f64)
}

/// Per-channel band power, baseline-subtracted.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdVector {
    pub values: Vec<f64>,
    pub band: BandDefinition,
}

pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(FeatureError::TooShort { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FeatureError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Magnitude of the mean unit phasor of the per-sample phase difference.
pub fn plv(phase_x: &[f64], phase_y: &[f64]) -> Result<f64, FeatureError> {
    if phase_x.len() != phase_y.len() {
        return Err(FeatureError::LengthMismatch(phase_x.len(), phase_y.len()));
    }
    if phase_x.is_empty() {
        return Err(FeatureError::TooShort { needed: 1, got: 0 });
    }
    let sum: Complex64 = phase_x
        .iter()
        .zip(phase_y)
        .map(|(a, b)| Complex64::from_polar(1.0, a - b))
        .sum();
    Ok((sum.norm() / phase_x.len() as f64).min(1.0))
}

/// PLV where each window of `win` samples first contributes the unit
/// phasor of its circular-mean phase difference.
pub fn plv_windowed(phase_x: &[f64], phase_y: &[f64], win: usize) -> Result<f64, FeatureError> {
    if phase_x.len() != phase_y.len() {
        return Err(FeatureError::LengthMismatch(phase_x.len(), phase_y.len()));
    }
    if win == 0 || phase_x.len() < win {
        return Err(FeatureError::TooShort { needed: win.max(1), got: phase_x.len() });
    }
    let mut total = Complex64::new(0.0, 0.0);
    let mut m = 0usize;
    for (cx, cy) in phase_x.chunks_exact(win).zip(phase_y.chunks_exact(win)) {
        let s: Complex64 = cx.iter().zip(cy).map(|(a, b)| Complex64::from_polar(1.0, a - b)).sum();
        if s.norm() > 0.0 {
            total += s / s.norm();
        }
        m += 1;
    }
    Ok((total.norm() / m as f64).min(1.0))
}

/// How PLV treats the phase-difference index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlvMode {
    PerSample,
    /// Average within subwindows of this many samples first.
    PerSubwindow(usize),
}

/// Result of a transfer-entropy estimate. Degenerate inputs (a constant
/// series, or source identical to target) report zero bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeEstimate {
    pub bits: f64,
    pub degenerate: bool,
}

/// Equiprobable binning by mid-rank; tied values share a bin.
pub fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mid_rank = 0.5 * (i + j) as f64;
        let b = (((mid_rank + 0.5) * bins as f64 / n as f64) as usize).min(bins - 1);
        for &k in &order[i..=j] {
            out[k] = b;
        }
        i = j + 1;
    }
    out
}

/// Plug-in transfer entropy from `source` to `target` (both symbol series
/// over `0..n_states`), history length one, in bits.
pub fn transfer_entropy_discrete(
    source: &[usize],
    target: &[usize],
    n_states: usize,
) -> Result<f64, FeatureError> {
    if source.len() != target.len() {
        return Err(FeatureError::LengthMismatch(source.len(), target.len()));
    }
    if source.len() < 2 {
        return Err(FeatureError::TooShort { needed: 2, got: source.len() });
    }
    if let Some(&s) = source.iter().chain(target).find(|&&s| s >= n_states) {
        return Err(FeatureError::InvalidArgument(format!("symbol {s} >= {n_states} states")));
    }
    let b = n_states;
    // counts indexed [next][cur][src]
    let mut joint = vec![0u32; b * b * b];
    let mut cur_src = vec![0u32; b * b];
    let mut next_cur = vec![0u32; b * b];
    let mut cur = vec![0u32; b];
    for t in 0..target.len() - 1 {
        let (x1, x0, y0) = (target[t + 1], target[t], source[t]);
        joint[(x1 * b + x0) * b + y0] += 1;
        cur_src[x0 * b + y0] += 1;
        next_cur[x1 * b + x0] += 1;
        cur[x0] += 1;
    }
    let n = (target.len() - 1) as f64;
    let mut te = 0.0;
    for x1 in 0..b {
        for x0 in 0..b {
            for y0 in 0..b {
                let c = joint[(x1 * b + x0) * b + y0];
                if c == 0 {
                    continue;
                }
                let c = c as f64;
                let ratio = c * cur[x0] as f64
                    / (cur_src[x0 * b + y0] as f64 * next_cur[x1 * b + x0] as f64);
                te += c / n * ratio.log2();
            }
        }
    }
    Ok(te.max(0.0))
}

/// Binned plug-in transfer entropy from `y` to `x`.
pub fn transfer_entropy(
    y: &[f64],
    x: &[f64],
    bins: usize,
    history: usize,
) -> Result<TeEstimate, FeatureError> {
    if y.len() != x.len() {
        return Err(FeatureError::LengthMismatch(y.len(), x.len()));
    }
    if bins < 2 {
        return Err(FeatureError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if history != 1 {
        return Err(FeatureError::InvalidArgument(format!(
            "only history length 1 is supported, got {history}"
        )));
    }
    let needed = 10 * bins * bins;
    if x.len() < needed {
        return Err(FeatureError::TooShort { needed, got: x.len() });
    }
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if constant(x) || constant(y) || x == y {
        return Ok(TeEstimate { bits: 0.0, degenerate: true });
    }
    let bits = transfer_entropy_discrete(&quantile_bins(y, bins), &quantile_bins(x, bins), bins)?;
    Ok(TeEstimate { bits, degenerate: false })
}

/// Largest bin count the length guard admits for `len` samples, capped at
/// `requested`.
pub fn admissible_bins(len: usize, requested: usize) -> usize {
    let fit = ((len as f64 / 10.0).sqrt().floor() as usize).max(2);
    requested.min(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectivityKind {
    Pcc,
    Plv,
    Te,
}

impl ConnectivityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConnectivityKind::Pcc => "pcc",
            ConnectivityKind::Plv => "plv",
            ConnectivityKind::Te => "te",
        }
    }
}

impl fmt::Display for ConnectivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Square matrix of pairwise feature values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub n: usize,
    pub values: Vec<f64>,
    pub kind: ConnectivityKind,
    pub band: BandDefinition,
}

impl ConnectivityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityConfig {
    pub te_bins: usize,
    pub plv_mode: PlvMode,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self { te_bins: 8, plv_mode: PlvMode::PerSample }
    }
}

fn entry_err(row: usize, col: usize) -> impl Fn(FeatureError) -> FeatureError {
    move |e| FeatureError::Entry { row, col, source: Box::new(e) }
}

/// Pairwise matrix for one band segment. PCC and PLV are symmetric with a
/// unit diagonal; TE entry `(i, j)` is the flow from channel `j` into channel
/// `i`, with a zero diagonal.
pub fn connectivity_matrix(
    segment: &BandSegment,
    kind: ConnectivityKind,
    cfg: &ConnectivityConfig,
) -> Result<ConnectivityMatrix, FeatureError> {
    let n = segment.n_channels();
    if n < 2 {
        return Err(FeatureError::TooShort { needed: 2, got: n });
    }
    let mut values = vec![0.0; n * n];
    match kind {
        ConnectivityKind::Pcc | ConnectivityKind::Plv => {
            let phases = if kind == ConnectivityKind::Plv {
                segment
                    .data
                    .iter()
                    .enumerate()
                    .map(|(c, ch)| instantaneous_phase(ch).map_err(|e| entry_err(c, c)(e.into())))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                Vec::new()
            };
            for i in 0..n {
                values[i * n + i] = 1.0;
                for j in 0..i {
                    let v = match kind {
                        ConnectivityKind::Pcc => pcc(&segment.data[i], &segment.data[j]),
                        _ => match cfg.plv_mode {
                            PlvMode::PerSample => plv(&phases[i], &phases[j]),
                            PlvMode::PerSubwindow(w) => plv_windowed(&phases[i], &phases[j], w),
                        },
                    }
                    .map_err(entry_err(i, j))?;
                    values[i * n + j] = v;
                    values[j * n + i] = v;
                }
            }
        }
        ConnectivityKind::Te => {
            let len = segment.n_samples();
            let bins = admissible_bins(len, cfg.te_bins);
            let needed = 10 * bins * bins;
            if len < needed {
                return Err(FeatureError::TooShort { needed, got: len });
            }
            let binned: Vec<Vec<usize>> =
                segment.data.iter().map(|ch| quantile_bins(ch, bins)).collect();
            let constant: Vec<bool> =
                segment.data.iter().map(|ch| ch.iter().all(|&v| v == ch[0])).collect();
            for i in 0..n {
                for j in 0..n {
                    // same degenerate cases as the scalar estimator
                    if i == j || constant[i] || constant[j] || segment.data[i] == segment.data[j] {
                        continue;
                    }
                    values[i * n + j] = transfer_entropy_discrete(&binned[j], &binned[i], bins)
                        .map_err(entry_err(i, j))?;
                }
            }
        }
    }
    Ok(ConnectivityMatrix { n, values, kind, band: segment.band.clone() })
}
