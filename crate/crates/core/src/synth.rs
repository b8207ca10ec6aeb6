//! Measurement-stream synthesizer.
//!
//! Injections follow p_j[k] = p⁰_j[k] + σ₁ p⁰_j[k] η₁ + σ₂ η₂ with
//! η₁ ~ 𝒩(0, σ₁), η₂ ~ 𝒩(0, σ₂) drawn fresh per bus and step. Flows are
//! produced through the DC sensitivity model: Δf_k = H_k Δp_k + e_k + o_k.
//!
//! Everything is scaled by `power_base` on output, so streams are in MW when
//! the network's nominal injections are per-unit on a 100 MVA base.
//!
//! Each stochastic ingredient (injections, flow noise, outliers, mask) draws
//! from its own ChaCha8 stream under the scenario seed, so switching one of
//! them on or off leaves the others unchanged.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeasurementWindow, Network, SensitivityMatrix};
use crate::ptdf::compute_dc_ptdf;

const STREAM_INJECTIONS: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_OUTLIERS: u64 = 2;
const STREAM_MASK: u64 = 3;

fn default_sigma() -> f64 {
    0.1
}

fn default_power_base() -> f64 {
    100.0
}

/// A change applied to the system from a given step onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// Multiplies the reactance of the branch with this external id.
    ScaleReactance { branch: u32, factor: f64 },
    /// Multiplies the nominal injection of a 1-based bus.
    RescaleNominalInjections { bus: usize, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub step: usize,
    #[serde(flatten)]
    pub event: Event,
}

/// Lines measured only every `period` steps (steps k with k % period == 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicMask {
    /// 1-based line indices.
    pub lines: Vec<usize>,
    pub period: usize,
}

/// Sinusoidal drift of the nominal operating point:
/// p⁰_j[k] = p⁰_j · (1 + amplitude · sin(2πk/period + 2πj/n)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub amplitude: f64,
    pub period: f64,
}

/// Everything needed to reproduce a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Number of samples (Δp_k, Δf_k), k = 1..=steps.
    pub steps: usize,
    #[serde(default = "default_sigma")]
    pub sigma_n1: f64,
    #[serde(default = "default_sigma")]
    pub sigma_n2: f64,
    /// Standard deviation of additive flow noise, in output units.
    #[serde(default)]
    pub flow_noise_sd: f64,
    /// Probability that any single flow entry carries an outlier.
    #[serde(default)]
    pub outlier_rate: f64,
    /// Outlier magnitudes are uniform in this range, with a random sign.
    #[serde(default)]
    pub outlier_amplitude: (f64, f64),
    /// Probability that any single flow entry is unavailable.
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub periodic_mask: Option<PeriodicMask>,
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    #[serde(default)]
    pub drift: Option<Drift>,
    #[serde(default = "default_power_base")]
    pub power_base: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    /// Injection fluctuations only; no noise, outliers, mask or events.
    pub fn new(steps: usize, seed: u64) -> Self {
        ScenarioSpec {
            steps,
            sigma_n1: default_sigma(),
            sigma_n2: default_sigma(),
            flow_noise_sd: 0.0,
            outlier_rate: 0.0,
            outlier_amplitude: (0.0, 0.0),
            missing_rate: 0.0,
            periodic_mask: None,
            events: Vec::new(),
            drift: None,
            power_base: default_power_base(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        rate(self.outlier_rate, "outlier_rate")?;
        rate(self.missing_rate, "missing_rate")?;
        for (v, name) in [
            (self.sigma_n1, "sigma_n1"),
            (self.sigma_n2, "sigma_n2"),
            (self.flow_noise_sd, "flow_noise_sd"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        let (lo, hi) = self.outlier_amplitude;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "outlier_amplitude must satisfy 0 ≤ lo ≤ hi, got ({lo}, {hi})"
            )));
        }
        if !(self.power_base > 0.0 && self.power_base.is_finite()) {
            return Err(Error::Config("power_base must be > 0".into()));
        }
        if self.events.windows(2).any(|w| w[0].step > w[1].step) {
            return Err(Error::Config("events must be sorted by step".into()));
        }
        if let Some(pm) = &self.periodic_mask {
            if pm.period == 0 {
                return Err(Error::Config("periodic_mask.period must be ≥ 1".into()));
            }
        }
        if let Some(d) = &self.drift {
            if !(d.period > 0.0 && d.amplitude.is_finite()) {
                return Err(Error::Config("drift needs a positive period".into()));
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// What produces H along the stream.
#[derive(Debug, Clone)]
pub enum StreamSource {
    /// H is the DC sensitivity of the network, recomputed at reactance events.
    Network(Network),
    /// A fixed H with explicit nominal injections (per-unit). Reactance
    /// events are rejected.
    Fixed {
        h: SensitivityMatrix<f64>,
        nominal_injections: Vec<f64>,
    },
}

impl StreamSource {
    fn nominal(&self) -> Vec<f64> {
        match self {
            StreamSource::Network(net) => net.nominal_injections().to_vec(),
            StreamSource::Fixed { nominal_injections, .. } => nominal_injections.clone(),
        }
    }
}

/// Nominal injections p⁰[k] for k = 0..=steps (per-unit), applying drift and
/// injection-rescaling events.
fn nominal_trajectory(base: &[f64], spec: &ScenarioSpec) -> Result<DMatrix<f64>> {
    let n = base.len();
    let mut p0 = base.to_vec();
    let mut out = DMatrix::zeros(n, spec.steps + 1);
    let mut events = spec.events.iter().peekable();
    for k in 0..=spec.steps {
        while let Some(ev) = events.next_if(|e| e.step <= k) {
            if let Event::RescaleNominalInjections { bus, factor } = ev.event {
                if bus == 0 || bus > n {
                    return Err(Error::Config(format!("event bus {bus} out of range 1..={n}")));
                }
                p0[bus - 1] *= factor;
            }
        }
        for j in 0..n {
            let drift = spec.drift.as_ref().map_or(1.0, |d| {
                let phase = 2.0 * std::f64::consts::PI * (k as f64 / d.period + j as f64 / n as f64);
                1.0 + d.amplitude * phase.sin()
            });
            out[(j, k)] = p0[j] * drift;
        }
    }
    Ok(out)
}

/// Injections p[k] for k = 0..=steps, one column per step, scaled by
/// `power_base`. Column 0 is the state before the first sample.
pub fn simulate_injections(nominal: &[f64], spec: &ScenarioSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let p0 = nominal_trajectory(nominal, spec)?;
    let mut rng = spec.rng(STREAM_INJECTIONS);
    let eta1 = normal(spec.sigma_n1)?;
    let eta2 = normal(spec.sigma_n2)?;
    let mut p = p0.clone();
    for k in 0..p.ncols() {
        for j in 0..p.nrows() {
            let base = p0[(j, k)];
            let e1 = eta1.sample(&mut rng);
            let e2 = eta2.sample(&mut rng);
            p[(j, k)] = (base + spec.sigma_n1 * base * e1 + spec.sigma_n2 * e2) * spec.power_base;
        }
    }
    Ok(p)
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(format!("normal({sd}): {e}")))
}

/// H in force from `start` (1-based step) onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSegment {
    pub start: usize,
    /// Row-major l×n.
    pub h: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRecord {
    pub step: usize,
    /// 1-based.
    pub line: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRecord {
    pub step: usize,
    /// 1-based.
    pub line: usize,
}

/// Ground truth for a synthesized stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub steps: usize,
    pub segments: Vec<HSegment>,
    pub outliers: Vec<OutlierRecord>,
    pub missing: Vec<MissingRecord>,
    pub seed: u64,
}

pub(crate) fn to_rows(h: &DMatrix<f64>) -> Vec<Vec<f64>> {
    h.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl TruthLog {
    /// H in force at 1-based `step`.
    pub fn h_at(&self, step: usize) -> Result<SensitivityMatrix<f64>> {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.start <= step)
            .or(self.segments.first())
            .ok_or_else(|| Error::Stream("truth log has no H segments".into()))?;
        SensitivityMatrix::new(from_rows(&seg.h)?)
    }

    /// Outlier matrix for samples `start..start + len` (1-based `start`).
    pub fn outlier_matrix(&self, lines: usize, start: usize, len: usize) -> DMatrix<f64> {
        let mut o = DMatrix::zeros(lines, len);
        for rec in &self.outliers {
            if rec.step >= start && rec.step < start + len && rec.line >= 1 && rec.line <= lines {
                o[(rec.line - 1, rec.step - start)] = rec.amplitude;
            }
        }
        o
    }

    /// Steps at which H changes (excluding the initial segment).
    pub fn change_steps(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

/// A measurement stream: column k−1 holds sample k.
///
/// Unavailable flow entries hold 0 and are marked false in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStream {
    pub delta_p: DMatrix<f64>,
    pub delta_f: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl MeasurementStream {
    pub fn new(delta_p: DMatrix<f64>, delta_f: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if delta_p.ncols() != delta_f.ncols() || mask.shape() != delta_f.shape() {
            return Err(Error::Dimension("stream matrices disagree on shape".into()));
        }
        Ok(MeasurementStream { delta_p, delta_f, mask })
    }

    pub fn steps(&self) -> usize {
        self.delta_f.ncols()
    }

    pub fn lines(&self) -> usize {
        self.delta_f.nrows()
    }

    pub fn buses(&self) -> usize {
        self.delta_p.nrows()
    }

    /// Sample at 1-based step `k`: (Δp_k, Δf_k, availability).
    pub fn sample(&self, k: usize) -> (DVector<f64>, DVector<f64>, Vec<bool>) {
        let c = k - 1;
        (
            self.delta_p.column(c).into_owned(),
            self.delta_f.column(c).into_owned(),
            self.mask.column(c).iter().copied().collect(),
        )
    }

    /// Samples `start..start + len` (1-based `start`) as a window.
    pub fn window(&self, start: usize, len: usize) -> Result<MeasurementWindow<f64>> {
        if start == 0 || start + len > self.steps() + 1 {
            return Err(Error::Dimension(format!(
                "window {start}..{} outside stream of {} steps",
                start + len,
                self.steps()
            )));
        }
        MeasurementWindow::with_mask(
            self.delta_f.columns(start - 1, len).into_owned(),
            self.delta_p.columns(start - 1, len).into_owned(),
            self.mask.columns(start - 1, len).into_owned(),
        )
    }
}

/// Synthesizes a stream and its ground-truth log.
pub fn generate_stream(source: &StreamSource, spec: &ScenarioSpec) -> Result<(MeasurementStream, TruthLog)> {
    spec.validate()?;
    let nominal = source.nominal();
    let p = simulate_injections(&nominal, spec)?;
    let n = p.nrows();

    let (mut net, mut h) = match source {
        StreamSource::Network(net) => {
            let h = compute_dc_ptdf::<f64>(net)?.into_inner();
            (Some(net.clone()), h)
        }
        StreamSource::Fixed { h, .. } => {
            if spec.events.iter().any(|e| matches!(e.event, Event::ScaleReactance { .. })) {
                return Err(Error::Config(
                    "reactance events need a network source, not a fixed H".into(),
                ));
            }
            (None, h.as_matrix().clone())
        }
    };
    if h.ncols() != n {
        return Err(Error::Dimension(format!(
            "H has {} bus columns but {} nominal injections were given",
            h.ncols(),
            n
        )));
    }
    let l = h.nrows();

    if let Some(pm) = &spec.periodic_mask {
        if let Some(&bad) = pm.lines.iter().find(|&&i| i == 0 || i > l) {
            return Err(Error::Config(format!("periodic_mask line {bad} out of range 1..={l}")));
        }
    }

    let steps = spec.steps;
    let mut noise_rng = spec.rng(STREAM_NOISE);
    let mut outlier_rng = spec.rng(STREAM_OUTLIERS);
    let mut mask_rng = spec.rng(STREAM_MASK);
    let noise = normal(spec.flow_noise_sd)?;

    let mut delta_p = DMatrix::zeros(n, steps);
    let mut delta_f = DMatrix::zeros(l, steps);
    let mut mask = DMatrix::from_element(l, steps, true);
    let mut log = TruthLog {
        steps,
        segments: vec![HSegment { start: 1, h: to_rows(&h) }],
        outliers: Vec::new(),
        missing: Vec::new(),
        seed: spec.seed,
    };
    let mut events = spec.events.iter().peekable();

    for k in 1..=steps {
        let mut changed = false;
        while let Some(ev) = events.next_if(|e| e.step <= k) {
            if let (Event::ScaleReactance { branch, factor }, Some(net)) = (&ev.event, net.as_mut()) {
                net.scale_reactance(*branch, *factor)?;
                changed = true;
            }
        }
        if changed {
            let net = net.as_ref().expect("reactance events require a network");
            h = compute_dc_ptdf::<f64>(net)?.into_inner();
            log.segments.push(HSegment { start: k, h: to_rows(&h) });
        }

        let dp = p.column(k) - p.column(k - 1);
        let df = &h * &dp;
        delta_p.set_column(k - 1, &dp);
        for i in 0..l {
            let mut v = df[i];
            if spec.flow_noise_sd > 0.0 {
                v += noise.sample(&mut noise_rng);
            }
            if outlier_rng.random::<f64>() < spec.outlier_rate {
                let (lo, hi) = spec.outlier_amplitude;
                let mag = if hi > lo { outlier_rng.random_range(lo..=hi) } else { lo };
                let amp = if outlier_rng.random::<bool>() { mag } else { -mag };
                v += amp;
                log.outliers.push(OutlierRecord { step: k, line: i + 1, amplitude: amp });
            }
            let mut available = mask_rng.random::<f64>() >= spec.missing_rate;
            if let Some(pm) = &spec.periodic_mask {
                if pm.lines.contains(&(i + 1)) && k % pm.period != 0 {
                    available = false;
                }
            }
            if available {
                delta_f[(i, k - 1)] = v;
            } else {
                mask[(i, k - 1)] = false;
                log.missing.push(MissingRecord { step: k, line: i + 1 });
            }
        }
    }

    Ok((MeasurementStream { delta_p, delta_f, mask }, log))
}
