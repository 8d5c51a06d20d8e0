//! Synthetic EEG corpus with planted, class-dependent connectivity.
//!
//! Every channel carries 1/f background noise. A designated subset carries
//! narrowband oscillators with a slowly wandering frequency. In coupled
//! trials the subset shares one phase walk (plus small independent phase
//! jitter) and a source/sink pair gets a lag-1 directed coupling; the
//! amplitude envelopes can optionally be mixed with a common envelope.
//! Uncoupled trials use independent walks with the same jitter and envelope
//! statistics, so per-band power does not depend on the class.
//!
//! The carrier sits in the middle of a wide band. Locked oscillators share
//! their realised spectrum, so a carrier near a band edge would make the
//! power split between neighbouring bands co-vary across the subset. A
//! common envelope does the same to the carrier band itself, which is why
//! envelope mixing is off by default.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{label, Class, DatasetError, TrialRecord};
use crate::layout::ElectrodeMontage;
use crate::signalcore::{BandDefinition, MultichannelRecording};

pub const MAX_PLV_TARGET: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Like trials get the `like` coupling, dislike trials the `dislike` one.
    Classes,
    /// Coupling grows linearly with the score.
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    /// Pairwise phase-locking target within the coupled subset; 0 means
    /// independent phase walks.
    pub plv_target: f64,
    /// Weight of the shared amplitude envelope.
    pub pcc_mixing: f64,
    /// Lag-1 gain from the source channel into the sink channel.
    pub te_gain: f64,
}

impl CouplingSpec {
    pub const NONE: CouplingSpec = CouplingSpec { plv_target: 0.0, pcc_mixing: 0.0, te_gain: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisPlan {
    pub n_subjects: u32,
    pub n_videos: u32,
    pub fs: f64,
    pub baseline_s: f64,
    pub stimulus_s: f64,
    /// Share of trials scored in the dislike range.
    pub dislike_fraction: f64,
    pub profile: Profile,
    pub like: CouplingSpec,
    pub dislike: CouplingSpec,
    /// PLV targets at scores 1 and 9 for the graded profile.
    pub graded_plv: [f64; 2],
    pub carrier_band: BandDefinition,
    pub carrier_hz: f64,
    /// Per-subject carrier shift is uniform in +-this.
    pub carrier_spread_hz: f64,
    /// Slow carrier frequency wander: standard deviation and correlation time.
    pub freq_sd_hz: f64,
    pub freq_tau_s: f64,
    pub oscillator_rms: f64,
    pub noise_rms: f64,
    pub jitter_tau_s: f64,
    pub envelope_tau_s: f64,
    pub envelope_depth: f64,
    pub onset_ramp_s: f64,
    pub channels: Vec<String>,
    pub coupled: Vec<String>,
    pub te_source: String,
    pub te_sink: String,
    pub seed: u64,
}

impl Default for SynthesisPlan {
    fn default() -> Self {
        Self {
            n_subjects: 32,
            n_videos: 40,
            fs: 128.0,
            baseline_s: 5.0,
            stimulus_s: 60.0,
            dislike_fraction: 0.335,
            profile: Profile::Classes,
            like: CouplingSpec { plv_target: 0.9, pcc_mixing: 0.0, te_gain: 0.6 },
            dislike: CouplingSpec::NONE,
            graded_plv: [0.1, 0.9],
            carrier_band: BandDefinition::new("high_beta", 21.0, 29.0),
            carrier_hz: 25.0,
            carrier_spread_hz: 0.5,
            freq_sd_hz: 0.3,
            freq_tau_s: 1.0,
            oscillator_rms: 2.0,
            noise_rms: 1.0,
            jitter_tau_s: 0.05,
            envelope_tau_s: 0.5,
            envelope_depth: 0.3,
            onset_ramp_s: 0.5,
            channels: ElectrodeMontage::deap32().labels(),
            coupled: ["F3", "F4", "C3", "C4", "P3", "P4", "Fz", "Cz"].map(String::from).to_vec(),
            te_source: "O1".into(),
            te_sink: "P7".into(),
            seed: 1,
        }
    }
}

/// Ratings drawn for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScores {
    pub score: f64,
    pub valence: f64,
    pub arousal: f64,
}

impl SynthesisPlan {
    pub fn n_trials(&self) -> usize {
        self.n_subjects as usize * self.n_videos as usize
    }

    pub fn baseline_samples(&self) -> usize {
        (self.baseline_s * self.fs).round() as usize
    }

    pub fn stimulus_samples(&self) -> usize {
        (self.stimulus_s * self.fs).round() as usize
    }

    fn channel(&self, name: &str) -> Result<usize, DatasetError> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DatasetError::InvalidPlan(format!("unknown channel {name}")))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidPlan(m));
        if self.n_subjects == 0 || self.n_videos == 0 {
            return bad("need at least one subject and one video".into());
        }
        if !(self.fs > 0.0 && self.baseline_s > 0.0 && self.stimulus_s > 0.0) {
            return bad("fs, baseline and stimulus durations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dislike_fraction) {
            return bad(format!("dislike fraction {} outside [0, 1]", self.dislike_fraction));
        }
        for c in [self.like, self.dislike] {
            for v in [c.plv_target, c.pcc_mixing, c.te_gain] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("coupling level {v} outside [0, 1]"));
                }
            }
        }
        for v in self.graded_plv {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("coupling level {v} outside [0, 1]"));
            }
        }
        let worst = [self.like.plv_target, self.dislike.plv_target, self.graded_plv[0], self.graded_plv[1]]
            .into_iter()
            .fold(0.0, f64::max);
        if worst > MAX_PLV_TARGET {
            return Err(DatasetError::InfeasibleCoupling(worst));
        }
        self.carrier_band.validate(self.fs)?;
        let top = self.carrier_hz + self.carrier_spread_hz + 3.0 * self.freq_sd_hz;
        if self.carrier_hz - self.carrier_spread_hz <= 0.0 || top >= self.fs / 2.0 {
            return bad(format!("carrier {} Hz does not fit below Nyquist", self.carrier_hz));
        }
        if self.channels.len() < 2 {
            return bad("need at least two channels".into());
        }
        if self.coupled.len() < 2 {
            return bad("need at least two coupled channels".into());
        }
        let mut coupled = Vec::new();
        for c in &self.coupled {
            coupled.push(self.channel(c)?);
        }
        let (src, sink) = (self.channel(&self.te_source)?, self.channel(&self.te_sink)?);
        if src == sink || coupled.contains(&src) || coupled.contains(&sink) {
            return bad("TE source and sink must be distinct and outside the coupled subset".into());
        }
        for (name, v) in [
            ("jitter_tau_s", self.jitter_tau_s),
            ("envelope_tau_s", self.envelope_tau_s),
            ("freq_tau_s", self.freq_tau_s),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.oscillator_rms < 0.0 || self.noise_rms < 0.0 || self.freq_sd_hz < 0.0 || self.envelope_depth < 0.0 || self.onset_ramp_s < 0.0 {
            return bad("amplitudes, depth and ramp must be non-negative".into());
        }
        Ok(())
    }

    /// Coupling used for a trial with the given score.
    pub fn coupling_for(&self, score: f64) -> Result<CouplingSpec, DatasetError> {
        Ok(match self.profile {
            Profile::Classes => match label(score)? {
                Class::Like => self.like,
                Class::Dislike => self.dislike,
            },
            Profile::Graded => {
                let f = (score - 1.0) / 8.0;
                CouplingSpec {
                    plv_target: self.graded_plv[0] + f * (self.graded_plv[1] - self.graded_plv[0]),
                    pcc_mixing: f * self.like.pcc_mixing,
                    te_gain: f * self.like.te_gain,
                }
            }
        })
    }
}

fn jitter_var(plv_target: f64) -> f64 {
    if plv_target > 0.0 {
        -plv_target.ln()
    } else {
        0.0
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SCORE_STREAM: u64 = 0;
const SUBJECT_STREAM: u64 = 1 << 40;

/// Ratings of every trial, subject-major. Exactly
/// `round(dislike_fraction * n_trials)` trials fall in the dislike range.
pub fn trial_scores(plan: &SynthesisPlan) -> Vec<TrialScores> {
    let n = plan.n_trials();
    let n_dislike = (plan.dislike_fraction * n as f64).round() as usize;
    let mut rng = stream_rng(plan.seed, SCORE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut dislike = vec![false; n];
    for &i in &order[..n_dislike] {
        dislike[i] = true;
    }
    dislike
        .into_iter()
        .map(|d| {
            let u: f64 = rng.gen();
            // dislike in [1, 5], like in (5, 9]
            let score = if d { 1.0 + 4.0 * u } else { 9.0 - 4.0 * u };
            let noise: f64 = rng.sample(StandardNormal);
            let valence = (score + noise).clamp(1.0, 9.0);
            let arousal = 1.0 + 8.0 * rng.gen::<f64>();
            TrialScores { score, valence, arousal }
        })
        .collect()
}

/// Unit-variance pink (1/f power) noise.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let f_min = 0.5;
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        if kk == 0 {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        let f = kk as f64 * fs / n as f64;
        *c /= f.max(f_min).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Stationary Ornstein-Uhlenbeck path with the given variance.
fn ou_path(rng: &mut ChaCha8Rng, n: usize, dt: f64, tau: f64, var: f64) -> Vec<f64> {
    let rho = (-dt / tau).exp();
    let kick = (var * (1.0 - rho * rho)).sqrt();
    let mut x = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    (0..n)
        .map(|_| {
            let v = x;
            x = rho * x + kick * rng.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

/// Phase of an oscillator whose frequency wanders as an OU process around
/// `f0`. Unlike Brownian phase noise this keeps the spectrum compact, so the
/// power split between neighbouring bands does not reveal shared phase.
fn phase_walk(rng: &mut ChaCha8Rng, n: usize, fs: f64, f0: f64, sd_hz: f64, tau: f64) -> Vec<f64> {
    let wander = ou_path(rng, n, 1.0 / fs, tau, 1.0);
    let mut p = 2.0 * PI * rng.gen::<f64>();
    wander
        .into_iter()
        .map(|u| {
            let v = p;
            p += 2.0 * PI * (f0 + sd_hz * u) / fs;
            v
        })
        .collect()
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

/// One trial of the corpus.
pub fn synthesize_trial(plan: &SynthesisPlan, subject: u32, video: u32) -> Result<TrialRecord, DatasetError> {
    plan.validate()?;
    if subject >= plan.n_subjects || video >= plan.n_videos {
        return Err(DatasetError::InvalidPlan(format!("no trial s{subject} v{video} in plan")));
    }
    let idx = subject as usize * plan.n_videos as usize + video as usize;
    let scores = trial_scores(plan)[idx];
    generate(plan, subject, video, scores)
}

fn generate(plan: &SynthesisPlan, subject: u32, video: u32, scores: TrialScores) -> Result<TrialRecord, DatasetError> {
    let coupling = plan.coupling_for(scores.score)?;
    let jitter = match plan.profile {
        // both classes share the like-class jitter so spectra match
        Profile::Classes => jitter_var(plan.like.plv_target),
        Profile::Graded => jitter_var(coupling.plv_target),
    };
    let shared = coupling.plv_target > 0.0;
    let fs = plan.fs;
    let dt = 1.0 / fs;
    let n0 = plan.baseline_samples();
    let n = n0 + plan.stimulus_samples();
    let trial = subject as u64 * plan.n_videos as u64 + video as u64;
    let mut srng = stream_rng(plan.seed, SUBJECT_STREAM + subject as u64);
    let f0 = plan.carrier_hz + plan.carrier_spread_hz * (2.0 * srng.gen::<f64>() - 1.0);
    let mut rng = stream_rng(plan.seed, 1 + trial);
    let mut planner = FftPlanner::new();

    let mut data: Vec<Vec<f64>> = (0..plan.channels.len())
        .map(|_| pink_noise(&mut rng, n, fs, &mut planner).into_iter().map(|v| v * plan.noise_rms).collect())
        .collect();

    let common_phase = phase_walk(&mut rng, n, fs, f0, plan.freq_sd_hz, plan.freq_tau_s);
    let common_env = ou_path(&mut rng, n, dt, plan.envelope_tau_s, 1.0);
    let ramp = (plan.onset_ramp_s * fs).round().max(1.0);
    let s = plan.envelope_depth;
    let amp = plan.oscillator_rms * 2f64.sqrt();
    let mix = coupling.pcc_mixing;
    let own_w = (1.0 - mix * mix).sqrt();
    for name in &plan.coupled {
        let c = plan.channel(name)?;
        let own_phase = phase_walk(&mut rng, n, fs, f0, plan.freq_sd_hz, plan.freq_tau_s);
        let jit = ou_path(&mut rng, n, dt, plan.jitter_tau_s, jitter);
        let own_env = ou_path(&mut rng, n, dt, plan.envelope_tau_s, 1.0);
        let offset = wrap(own_phase[n0] + jit[n0] - common_phase[n0]);
        for t in 0..n {
            let (phase, u) = if t < n0 {
                (own_phase[t] + jit[t], own_env[t])
            } else {
                let u = own_w * own_env[t] + mix * common_env[t];
                if shared {
                    let fade = (1.0 - (t - n0) as f64 / ramp).max(0.0);
                    (common_phase[t] + jit[t] + offset * fade, u)
                } else {
                    (own_phase[t] + jit[t], u)
                }
            };
            // log-normal envelope with unit mean square
            data[c][t] += amp * (s * u - s * s).exp() * phase.cos();
        }
    }

    let g = coupling.te_gain;
    if g > 0.0 {
        let (src, sink) = (plan.channel(&plan.te_source)?, plan.channel(&plan.te_sink)?);
        let keep = (1.0 - g * g).sqrt();
        let source = data[src].clone();
        for t in n0.max(1)..n {
            data[sink][t] = keep * data[sink][t] + g * source[t - 1];
        }
    }

    let recording = MultichannelRecording::new(data, fs, n0, plan.channels.clone())?;
    Ok(TrialRecord {
        recording,
        subject,
        video,
        score: scores.score,
        valence: Some(scores.valence),
        arousal: Some(scores.arousal),
    })
}

/// Calls `f` on every trial in subject-major order, generating in parallel
/// batches of `chunk` trials to bound memory.
pub fn for_each_trial<F>(plan: &SynthesisPlan, chunk: usize, mut f: F) -> Result<(), DatasetError>
where
    F: FnMut(TrialRecord) -> Result<(), DatasetError>,
{
    plan.validate()?;
    let scores = trial_scores(plan);
    let ids: Vec<(u32, u32)> =
        (0..plan.n_subjects).flat_map(|s| (0..plan.n_videos).map(move |v| (s, v))).collect();
    for part in ids.chunks(chunk.max(1)) {
        let trials: Vec<Result<TrialRecord, DatasetError>> = part
            .par_iter()
            .map(|&(s, v)| generate(plan, s, v, scores[s as usize * plan.n_videos as usize + v as usize]))
            .collect();
        for t in trials {
            f(t?)?;
        }
    }
    Ok(())
}

/// The whole corpus in memory, subject-major.
pub fn synthesize(plan: &SynthesisPlan) -> Result<Vec<TrialRecord>, DatasetError> {
    let mut out = Vec::with_capacity(plan.n_trials());
    for_each_trial(plan, 64, |t| {
        out.push(t);
        Ok(())
    })?;
    Ok(out)
}
