//! Time-series primitives: recordings, segmentation, zero-phase band-pass
//! filtering and analytic-signal phase.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("trial too short: {available_s:.3} s available, window needs {window_s:.3} s")]
    TooShort { available_s: f64, window_s: f64 },
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("band {name} ({lo}-{hi} Hz) is not valid at fs = {fs} Hz")]
    InvalidBand { name: String, lo: f64, hi: f64, fs: f64 },
    #[error("signal too short for phase extraction: {0} samples (need at least 8)")]
    PhaseTooShort(usize),
    #[error("phase undefined for an all-zero signal")]
    ZeroSignal,
}

/// One raw EEG trial. `data[c]` holds the samples of channel `c`; the first
/// `baseline_samples` samples are the pre-stimulus baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelRecording {
    data: Vec<Vec<f64>>,
    fs: f64,
    baseline_samples: usize,
    channel_names: Vec<String>,
}

impl MultichannelRecording {
    pub fn new(
        data: Vec<Vec<f64>>,
        fs: f64,
        baseline_samples: usize,
        channel_names: Vec<String>,
    ) -> Result<Self, SignalError> {
        let bad = |m: String| Err(SignalError::InvalidRecording(m));
        if data.len() < 2 {
            return bad(format!("need at least 2 channels, got {}", data.len()));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return bad(format!("sampling rate must be positive, got {fs}"));
        }
        let n = data[0].len();
        if let Some(c) = data.iter().position(|ch| ch.len() != n) {
            return bad(format!("channel {c} has {} samples, expected {n}", data[c].len()));
        }
        if baseline_samples >= n {
            return bad(format!("baseline of {baseline_samples} samples leaves no trial in {n}"));
        }
        if channel_names.len() != data.len() {
            return bad(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.len()
            ));
        }
        let mut sorted: Vec<&String> = channel_names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate channel name {}", w[0]));
        }
        Ok(Self { data, fs, baseline_samples, channel_names })
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn baseline_samples(&self) -> usize {
        self.baseline_samples
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data[0].len()
    }

    /// Post-baseline duration in seconds.
    pub fn trial_duration_s(&self) -> f64 {
        (self.n_samples() - self.baseline_samples) as f64 / self.fs
    }

    pub fn baseline_duration_s(&self) -> f64 {
        self.baseline_samples as f64 / self.fs
    }
}

/// A named frequency band in Hz. `lo == 0` means low-pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl BandDefinition {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), lo, hi }
    }

    pub fn validate(&self, fs: f64) -> Result<(), SignalError> {
        if self.lo >= 0.0 && self.lo < self.hi && self.hi < fs / 2.0 {
            Ok(())
        } else {
            Err(SignalError::InvalidBand {
                name: self.name.clone(),
                lo: self.lo,
                hi: self.hi,
                fs,
            })
        }
    }

    pub fn is_lowpass(&self) -> bool {
        self.lo == 0.0
    }

    pub fn center(&self) -> f64 {
        if self.is_lowpass() {
            0.0
        } else {
            0.5 * (self.lo + self.hi)
        }
    }

    /// The ten bands features are computed for, in tensor-slice order.
    pub fn standard_bands() -> Vec<BandDefinition> {
        [
            ("delta", 0.0, 3.0),
            ("theta", 4.0, 7.0),
            ("low_alpha", 8.0, 9.5),
            ("high_alpha", 10.5, 12.0),
            ("alpha", 8.0, 12.0),
            ("low_beta", 13.0, 16.0),
            ("mid_beta", 17.0, 20.0),
            ("high_beta", 21.0, 29.0),
            ("beta", 13.0, 29.0),
            ("gamma", 30.0, 50.0),
        ]
        .into_iter()
        .map(|(n, lo, hi)| BandDefinition::new(n, lo, hi))
        .collect()
    }

    pub fn standard(name: &str) -> Option<BandDefinition> {
        Self::standard_bands().into_iter().find(|b| b.name == name)
    }
}

/// Where a segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentOrigin {
    pub trial: usize,
    pub index: usize,
}

/// One band-filtered, fixed-length, multichannel window.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSegment {
    pub data: Vec<Vec<f64>>,
    pub band: BandDefinition,
    pub fs: f64,
    pub origin: SegmentOrigin,
}

impl BandSegment {
    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

/// Window starts over `len` samples beginning at `offset`.
pub fn segment_ranges(offset: usize, len: usize, win: usize, hop: usize) -> Vec<Range<usize>> {
    if win == 0 || hop == 0 || len < win {
        return Vec::new();
    }
    let count = (len - win) / hop + 1;
    (0..count)
        .map(|k| {
            let start = offset + k * hop;
            start..start + win
        })
        .collect()
}

fn seconds_to_samples(s: f64, fs: f64) -> usize {
    (s * fs).round() as usize
}

fn check_window(win_s: f64, hop_s: f64, fs: f64) -> Result<(usize, usize), SignalError> {
    if !(win_s > 0.0) || !(hop_s > 0.0) || hop_s > win_s {
        return Err(SignalError::InvalidSegmentation(format!(
            "need win > 0 and 0 < hop <= win, got win {win_s} s, hop {hop_s} s"
        )));
    }
    let win = seconds_to_samples(win_s, fs);
    let hop = seconds_to_samples(hop_s, fs);
    if win == 0 || hop == 0 {
        return Err(SignalError::InvalidSegmentation(format!(
            "window {win_s} s / hop {hop_s} s round to zero samples at {fs} Hz"
        )));
    }
    Ok((win, hop))
}

/// Sliding windows over the post-baseline portion of a recording.
pub fn segment(
    rec: &MultichannelRecording,
    win_s: f64,
    hop_s: f64,
) -> Result<Vec<Range<usize>>, SignalError> {
    let (win, hop) = check_window(win_s, hop_s, rec.fs)?;
    let len = rec.n_samples() - rec.baseline_samples;
    if len < win {
        return Err(SignalError::TooShort {
            available_s: rec.trial_duration_s(),
            window_s: win_s,
        });
    }
    Ok(segment_ranges(rec.baseline_samples, len, win, hop))
}

/// Sliding windows over the baseline span only.
pub fn segment_baseline(
    rec: &MultichannelRecording,
    win_s: f64,
    hop_s: f64,
) -> Result<Vec<Range<usize>>, SignalError> {
    let (win, hop) = check_window(win_s, hop_s, rec.fs)?;
    if rec.baseline_samples < win {
        return Err(SignalError::TooShort {
            available_s: rec.baseline_duration_s(),
            window_s: win_s,
        });
    }
    Ok(segment_ranges(0, rec.baseline_samples, win, hop))
}

/// Linear-phase FIR band-pass (or low-pass) filter, Hamming-windowed sinc.
#[derive(Debug, Clone, PartialEq)]
pub struct Fir {
    taps: Vec<f64>,
    fs: f64,
}

impl Fir {
    /// Taps are odd in number and symmetric; the gain at the band centre
    /// (DC for low-pass) is normalised to one.
    pub fn design(band: &BandDefinition, fs: f64) -> Result<Self, SignalError> {
        band.validate(fs)?;
        let edge = if band.is_lowpass() { band.hi } else { band.lo };
        let tw = (0.25 * edge).max(2.0);
        let mut n = (3.0 * fs / tw).ceil() as usize;
        n |= 1;
        let cap = {
            let f = fs.floor() as usize;
            if f % 2 == 1 { f } else { f.saturating_sub(1) }
        };
        n = n.min(cap.max(3));

        let mid = (n - 1) as f64 / 2.0;
        let lowpass = |fc: f64, k: usize| {
            let x = k as f64 - mid;
            let r = 2.0 * fc / fs;
            r * sinc(r * x)
        };
        let mut taps: Vec<f64> = (0..n)
            .map(|k| {
                let w = 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
                let h = if band.is_lowpass() {
                    lowpass(band.hi, k)
                } else {
                    lowpass(band.hi, k) - lowpass(band.lo, k)
                };
                h * w
            })
            .collect();
        let fir = Fir { taps: taps.clone(), fs };
        let g = fir.gain_at(band.center());
        for t in &mut taps {
            *t /= g;
        }
        Ok(Fir { taps, fs })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn half_length(&self) -> usize {
        self.taps.len() / 2
    }

    /// Width of the transition band implied by the tap count, in Hz.
    pub fn transition_width_hz(&self) -> f64 {
        3.0 * self.fs / self.taps.len() as f64
    }

    /// Magnitude of the frequency response at `f` Hz.
    pub fn gain_at(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.fs;
        self.taps
            .iter()
            .enumerate()
            .map(|(k, &h)| Complex64::from_polar(h, -w * k as f64))
            .sum::<Complex64>()
            .norm()
    }

    /// Zero-phase application: full linear convolution (zero padding at the
    /// ends) cropped so that output sample `t` is centred on input sample `t`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let m = self.taps.len();
        let half = m / 2;
        if n * m <= 1 << 16 {
            return (0..n)
                .map(|t| {
                    let mut acc = 0.0;
                    for (k, &h) in self.taps.iter().enumerate() {
                        let idx = t as isize + half as isize - k as isize;
                        if idx >= 0 && (idx as usize) < n {
                            acc += h * x[idx as usize];
                        }
                    }
                    acc
                })
                .collect();
        }
        let size = (n + m - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        a.resize(size, Complex64::new(0.0, 0.0));
        let mut b: Vec<Complex64> = self.taps.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        b.resize(size, Complex64::new(0.0, 0.0));
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p *= q;
        }
        inv.process(&mut a);
        let scale = 1.0 / size as f64;
        a[half..half + n].iter().map(|c| c.re * scale).collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zero-phase band-pass of one channel. Low-pass bands have their mean
/// removed first.
pub fn bandpass(x: &[f64], band: &BandDefinition, fs: f64) -> Result<Vec<f64>, SignalError> {
    let fir = Fir::design(band, fs)?;
    Ok(bandpass_with(&fir, band, x))
}

pub(crate) fn bandpass_with(fir: &Fir, band: &BandDefinition, x: &[f64]) -> Vec<f64> {
    if band.is_lowpass() && !x.is_empty() {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
        fir.apply(&centred)
    } else {
        fir.apply(x)
    }
}

/// Band-pass every channel of a recording. Also returns the number of samples
/// at each end corrupted by filter transients.
pub fn bandpass_recording(
    rec: &MultichannelRecording,
    band: &BandDefinition,
) -> Result<(Vec<Vec<f64>>, usize), SignalError> {
    let fir = Fir::design(band, rec.fs)?;
    let out = rec.data.iter().map(|ch| bandpass_with(&fir, band, ch)).collect();
    Ok((out, fir.half_length()))
}

/// Analytic signal via the FFT: negative frequencies zeroed, positive ones
/// doubled.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Instantaneous phase in (-pi, pi], not unwrapped.
pub fn instantaneous_phase(x: &[f64]) -> Result<Vec<f64>, SignalError> {
    if x.len() < 8 {
        return Err(SignalError::PhaseTooShort(x.len()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(SignalError::ZeroSignal);
    }
    Ok(analytic_signal(x)
        .into_iter()
        .map(|z| {
            let p = z.arg();
            if p <= -PI {
                PI
            } else {
                p
            }
        })
        .collect())
}
