//! Online proximal-gradient tracking over a sliding measurement window.
//!
//! Every arrival (Δp_k, Δf_k) shifts the window of the last m samples and
//! applies exactly one gradient step and one proximal step to the current
//! iterate. Estimation starts once the window is full. The step size is fixed
//! from the first full window.
//!
//! [`run_stream`] drives a whole stream and, given the ground truth, records
//! per-step relative errors and the dynamic regret against a per-step batch
//! comparator x_k*.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{
    batch_estimate_from, objective, prepare_window, prox_grad_step, step_size, StepParams, Variant,
};
use crate::metrics::relative_errors_raw;
use crate::model::{EstimatorConfig, MeasurementWindow, StepSize};
use crate::prox::StackedIterate;
use crate::scalar::{lit, to_f64, Scalar};
use crate::synth::{MeasurementStream, TruthLog};

/// How often and how accurately the regret comparator is solved.
///
/// The comparator minimizes the same cost as the online iterate, but with
/// [`StepSize::BlockLipschitz`] steps so that tight tolerances are reachable.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorConfig {
    /// Solve every `every`-th estimation step; costs in between are
    /// interpolated linearly and flagged.
    pub every: usize,
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        ComparatorConfig {
            every: 1,
            rel_tol: 1e-10,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig<T: Scalar> {
    /// Window length m.
    pub window: usize,
    pub variant: Variant,
    /// λ, γ, boxes, prox mode and step policy. Unset λ/γ are resolved from the
    /// first full window and then held constant.
    pub estimator: EstimatorConfig<T>,
    /// Multiplier on α = 1/L; values below 1 are more conservative.
    pub step_scale: T,
    /// Regret comparator; `None` skips regret bookkeeping.
    pub comparator: Option<ComparatorConfig>,
    /// 0-based bus whose RE is averaged over time in reports.
    pub tracked_bus: usize,
}

impl<T: Scalar> Default for OnlineConfig<T> {
    fn default() -> Self {
        OnlineConfig {
            window: 18,
            variant: Variant::Robust,
            estimator: EstimatorConfig::default(),
            step_scale: T::one(),
            comparator: None,
            tracked_bus: 1,
        }
    }
}

/// Sliding-window state of the online estimator.
#[derive(Debug, Clone)]
pub struct OnlineState<T: Scalar> {
    cfg: OnlineConfig<T>,
    buffer: VecDeque<(DVector<T>, DVector<T>, Vec<bool>)>,
    /// 1-based time of the newest sample in the buffer.
    newest: usize,
    x: Option<StackedIterate<T>>,
    params: Option<StepParams<T>>,
    gradient_evaluations: usize,
    prox_evaluations: usize,
}

impl<T: Scalar> OnlineState<T> {
    pub fn new(cfg: OnlineConfig<T>) -> Result<Self> {
        if cfg.window == 0 {
            return Err(Error::Config("window length must be ≥ 1".into()));
        }
        if !(cfg.step_scale > T::zero()) {
            return Err(Error::Config("step scale must be > 0".into()));
        }
        cfg.estimator.validate()?;
        Ok(OnlineState {
            buffer: VecDeque::with_capacity(cfg.window + 1),
            cfg,
            newest: 0,
            x: None,
            params: None,
            gradient_evaluations: 0,
            prox_evaluations: 0,
        })
    }

    pub fn config(&self) -> &OnlineConfig<T> {
        &self.cfg
    }

    /// Current iterate, once estimation has started.
    pub fn iterate(&self) -> Option<&StackedIterate<T>> {
        self.x.as_ref()
    }

    /// Step size α, fixed at the first full window.
    pub fn alpha(&self) -> Option<T> {
        self.params.as_ref().map(|p| p.alpha)
    }

    /// (λ, γ) in force, fixed at the first full window.
    pub fn weights(&self) -> Option<(T, T)> {
        self.params.as_ref().map(|p| (p.lambda, p.gamma))
    }

    pub fn gradient_evaluations(&self) -> usize {
        self.gradient_evaluations
    }

    pub fn prox_evaluations(&self) -> usize {
        self.prox_evaluations
    }

    /// 1-based time of the newest sample received.
    pub fn time(&self) -> usize {
        self.newest
    }

    /// Times covered by the buffer, oldest first.
    pub fn buffered_times(&self) -> std::ops::RangeInclusive<usize> {
        (self.newest + 1 - self.buffer.len())..=self.newest
    }

    /// The buffered samples as a window (oldest column first).
    pub fn window(&self) -> Result<MeasurementWindow<T>> {
        let m = self.buffer.len();
        if m == 0 {
            return Err(Error::EmptyWindow);
        }
        let (n, l) = (self.buffer[0].0.len(), self.buffer[0].1.len());
        let mut dp = DMatrix::zeros(n, m);
        let mut df = DMatrix::zeros(l, m);
        let mut mask = DMatrix::from_element(l, m, true);
        for (t, (p, f, a)) in self.buffer.iter().enumerate() {
            dp.set_column(t, p);
            df.set_column(t, f);
            for (i, &avail) in a.iter().enumerate() {
                mask[(i, t)] = avail;
            }
        }
        MeasurementWindow::with_mask(df, dp, mask)
    }

    /// Drops the current estimate and step size; the buffer is kept.
    pub fn reset(&mut self) {
        self.x = None;
        self.params = None;
    }

    /// Ingests one sample. Returns `true` when an estimation step was taken,
    /// `false` while the window is still filling.
    pub fn step(&mut self, delta_p: DVector<T>, delta_f: DVector<T>, available: Vec<bool>) -> Result<bool> {
        if available.len() != delta_f.len() {
            return Err(Error::Stream(format!(
                "availability has {} entries for {} flows",
                available.len(),
                delta_f.len()
            )));
        }
        if let Some((p0, f0, _)) = self.buffer.front() {
            if p0.len() != delta_p.len() || f0.len() != delta_f.len() {
                return Err(Error::Stream(format!(
                    "sample {} has {} injections and {} flows, stream started with {} and {}",
                    self.newest + 1,
                    delta_p.len(),
                    delta_f.len(),
                    p0.len(),
                    f0.len()
                )));
            }
        }
        self.buffer.push_back((delta_p, delta_f, available));
        self.newest += 1;
        let slid = self.buffer.len() > self.cfg.window;
        if slid {
            self.buffer.pop_front();
        }
        if self.buffer.len() < self.cfg.window {
            return Ok(false);
        }

        let w = self.window()?;
        prepare_window(&w, self.cfg.variant)?;
        if self.params.is_none() {
            let (lambda, gamma) = self.cfg.estimator.weights(&w);
            let (a_h, a_o) = step_size(&w, &self.cfg.estimator)?;
            self.params = Some(StepParams {
                variant: self.cfg.variant,
                alpha: self.cfg.step_scale * a_h,
                alpha_o: self.cfg.step_scale * a_o,
                lambda,
                gamma,
                config: self.cfg.estimator.clone(),
            });
        }
        let mut x = match self.x.take() {
            Some(mut x) => {
                if slid {
                    x.slide_outliers();
                }
                x
            }
            None => StackedIterate::zeros(w.lines(), w.buses(), w.samples()),
        };
        let params = self.params.as_ref().expect("set above");
        x = prox_grad_step(&x, &w, params)?;
        self.gradient_evaluations += 1;
        self.prox_evaluations += 1;
        if x.h.iter().chain(x.o.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: self.newest });
        }
        self.x = Some(x);
        Ok(true)
    }

    /// Cost of the current window at `x`.
    pub fn cost(&self, x: &StackedIterate<T>) -> Result<T> {
        let p = self
            .params
            .as_ref()
            .ok_or_else(|| Error::Stream("estimation has not started".into()))?;
        objective(self.cfg.variant, x, &self.window()?, p.lambda, p.gamma)
    }
}

/// One estimation step of a [`RunReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based arrival time.
    pub k: usize,
    /// Per-bus RE against the truth in force at k; `None` for zero columns.
    pub re: Vec<Option<f64>>,
    pub re_tracked: Option<f64>,
    /// Running mean of `re_tracked` over estimation steps so far.
    pub re_tracked_avg: Option<f64>,
    /// f_k(x_k).
    pub cost: f64,
    /// f_k(x_k*), when regret is tracked.
    pub comparator_cost: Option<f64>,
    /// The comparator cost was interpolated rather than solved.
    pub interpolated: bool,
    /// ‖x_k* − x_{k−1}*‖ with the previous O aligned to the slid window;
    /// `None` at the first comparator step and at interpolated steps.
    pub omega: Option<f64>,
}

/// Regret bookkeeping series, aligned with [`RunReport::steps`].
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RegretMetrics {
    pub k: Vec<usize>,
    pub gap: Vec<f64>,
    pub regret: Vec<f64>,
    /// Reg_k divided by the number of estimation steps so far.
    pub regret_avg: Vec<f64>,
    /// Ω_k = Σ ω_i.
    pub path_length: Vec<f64>,
    /// Ω̄_k = Σ ω_i².
    pub path_length_sq: Vec<f64>,
    pub interpolated_steps: usize,
}

/// Output of [`run_stream`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub window: usize,
    pub variant: String,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tracked_bus: usize,
    pub gradient_evaluations: usize,
    pub prox_evaluations: usize,
    pub steps: Vec<StepRecord>,
    pub regret: Option<RegretMetrics>,
    /// Final estimate, row-major.
    pub final_h: Vec<Vec<f64>>,
}

impl RunReport {
    /// Running-average RE of the tracked bus, keyed by k.
    pub fn tracked_average(&self) -> Vec<(usize, f64)> {
        self.steps
            .iter()
            .filter_map(|s| s.re_tracked_avg.map(|v| (s.k, v)))
            .collect()
    }
}

fn to_t<T: Scalar>(v: &DVector<f64>) -> DVector<T> {
    v.map(lit::<T>)
}

/// Best of the warm-started batch solve and the online iterate itself.
fn comparator<T: Scalar>(
    w: &MeasurementWindow<T>,
    params: &StepParams<T>,
    cc: &ComparatorConfig,
    warm: StackedIterate<T>,
    online: &StackedIterate<T>,
    online_cost: T,
) -> Result<(StackedIterate<T>, T)> {
    let cfg = EstimatorConfig {
        lambda: Some(params.lambda),
        gamma: Some(params.gamma),
        step: StepSize::BlockLipschitz,
        rel_tol: lit(cc.rel_tol),
        max_iters: cc.max_iters,
        ..params.config.clone()
    };
    let est = batch_estimate_from(w, &cfg, params.variant, Some(warm))?;
    let x = est.iterate();
    let f = objective(params.variant, &x, w, params.lambda, params.gamma)?;
    if online_cost < f {
        Ok((online.clone(), online_cost))
    } else {
        Ok((x, f))
    }
}

/// Drives `stream` through an [`OnlineState`], recording errors against
/// `truth` and, when configured, dynamic regret.
pub fn run_stream<T: Scalar>(
    stream: &MeasurementStream,
    cfg: &OnlineConfig<T>,
    truth: Option<&TruthLog>,
) -> Result<RunReport> {
    let mut state = OnlineState::new(cfg.clone())?;
    let mut steps = Vec::new();
    let mut re_sum = 0.0;
    let mut re_count = 0usize;
    let mut prev_star: Option<StackedIterate<T>> = None;
    let mut estimation_index = 0usize;
    let mut omegas: Vec<Option<f64>> = Vec::new();

    for k in 1..=stream.steps() {
        let (p, f, a) = stream.sample(k);
        if !state.step(to_t(&p), to_t(&f), a)? {
            continue;
        }
        let x = state.iterate().expect("estimation step taken").clone();
        let cost = state.cost(&x)?;

        let (re, re_tracked) = match truth {
            Some(t) => {
                let h_true = t.h_at(k)?.into_inner().map(lit::<T>);
                let re = relative_errors_raw(&x.h, &h_true);
                let tracked = re.get(cfg.tracked_bus).copied().flatten();
                (re, tracked)
            }
            None => (Vec::new(), None),
        };
        if let Some(v) = re_tracked {
            re_sum += v;
            re_count += 1;
        }

        let mut comparator_cost = None;
        let mut omega = None;
        if let Some(cc) = &cfg.comparator {
            if estimation_index.is_multiple_of(cc.every.max(1)) || k == stream.steps() {
                let w = state.window()?;
                let params = state.params.as_ref().expect("estimation started");
                let warm = match prev_star.take() {
                    Some(mut p) => {
                        p.slide_outliers();
                        p
                    }
                    None => x.clone(),
                };
                let aligned_prev = if steps.iter().any(|s: &StepRecord| s.comparator_cost.is_some()) {
                    Some(warm.clone())
                } else {
                    None
                };
                let (star, f_star) = comparator(&w, params, cc, warm, &x, cost)?;
                if let Some(prev) = aligned_prev {
                    omega = Some(to_f64(star.distance(&prev)));
                }
                comparator_cost = Some(to_f64(f_star));
                prev_star = Some(star);
            } else if let Some(p) = prev_star.as_mut() {
                p.slide_outliers();
            }
        }
        omegas.push(omega);

        steps.push(StepRecord {
            k,
            re,
            re_tracked,
            re_tracked_avg: (re_count > 0).then(|| re_sum / re_count as f64),
            cost: to_f64(cost),
            comparator_cost,
            interpolated: false,
            omega,
        });
        estimation_index += 1;
    }

    let regret = if cfg.comparator.is_some() {
        Some(fill_comparator(&mut steps))
    } else {
        None
    };
    let params = state.params.as_ref();
    Ok(RunReport {
        window: cfg.window,
        variant: cfg.variant.name().to_string(),
        alpha: params.map_or(f64::NAN, |p| to_f64(p.alpha)),
        lambda: params.map_or(f64::NAN, |p| to_f64(p.lambda)),
        gamma: params.map_or(f64::NAN, |p| to_f64(p.gamma)),
        tracked_bus: cfg.tracked_bus,
        gradient_evaluations: state.gradient_evaluations,
        prox_evaluations: state.prox_evaluations,
        steps,
        regret,
        final_h: state
            .iterate()
            .map(|x| x.h.row_iter().map(|r| r.iter().map(|&v| to_f64(v)).collect()).collect())
            .unwrap_or_default(),
    })
}

/// Interpolates missing comparator costs and accumulates the regret series.
fn fill_comparator(steps: &mut [StepRecord]) -> RegretMetrics {
    let known: Vec<usize> = (0..steps.len()).filter(|&i| steps[i].comparator_cost.is_some()).collect();
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (fa, fb) = (steps[a].comparator_cost.unwrap(), steps[b].comparator_cost.unwrap());
        for (i, s) in steps.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / (b - a) as f64;
            s.comparator_cost = Some(fa + t * (fb - fa));
            s.interpolated = true;
        }
    }
    regret_metrics(steps)
}

/// Accumulates Reg_k, (1/k)Reg_k, Ω_k and Ω̄_k from step records with
/// comparator costs. Steps without a comparator cost are skipped.
pub fn regret_metrics(steps: &[StepRecord]) -> RegretMetrics {
    let mut m = RegretMetrics::default();
    let (mut reg, mut path, mut path_sq) = (0.0, 0.0, 0.0);
    for s in steps {
        let Some(f_star) = s.comparator_cost else { continue };
        let gap = s.cost - f_star;
        reg += gap;
        if let Some(w) = s.omega {
            path += w;
            path_sq += w * w;
        }
        if s.interpolated {
            m.interpolated_steps += 1;
        }
        m.k.push(s.k);
        m.gap.push(gap);
        m.regret.push(reg);
        m.regret_avg.push(reg / m.k.len() as f64);
        m.path_length.push(path);
        m.path_length_sq.push(path_sq);
    }
    m
}
