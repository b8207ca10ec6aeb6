//! Shared data types and the linear flow/injection model.
//!
//! Matrices are dense `nalgebra` matrices. `nalgebra` stores column-major,
//! which is also the `vec(·)` convention used throughout: columns stacked in
//! order. Bus and line indices are 0-based here; the file and CLI boundary
//! converts from the 1-based numbering used in data files exactly once.
//!
//! Units: the library is unit-agnostic. Network reactances are per-unit;
//! synthesized measurement streams are in MW on the scenario's power base
//! (see [`crate::synth::ScenarioSpec::power_base`]).

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// A transmission branch. `from`/`to` are 0-based bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// External identifier, as written in the network file.
    pub id: u32,
    pub from: usize,
    pub to: usize,
    /// Series reactance, per-unit.
    pub reactance: f64,
}

/// Bus/branch topology with per-branch reactances.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n_buses: usize,
    branches: Vec<Branch>,
    slack: usize,
    nominal_injections: Vec<f64>,
}

impl Network {
    /// Builds a network after checking endpoint, reactance and id invariants.
    ///
    /// Connectivity is only checked when the sensitivity matrix is computed.
    pub fn new(n_buses: usize, branches: Vec<Branch>, slack: usize) -> Result<Self> {
        if n_buses < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 buses, got {n_buses}"
            )));
        }
        if slack >= n_buses {
            return Err(Error::InvalidNetwork(format!(
                "slack bus {} out of range 1..={n_buses}",
                slack + 1
            )));
        }
        if branches.is_empty() {
            return Err(Error::InvalidNetwork("network has no branches".into()));
        }
        let mut ids = HashSet::new();
        for b in &branches {
            if !ids.insert(b.id) {
                return Err(Error::InvalidNetwork(format!("duplicate branch id {}", b.id)));
            }
            if b.from >= n_buses || b.to >= n_buses {
                return Err(Error::InvalidNetwork(format!(
                    "branch {} connects bus {} to bus {}, outside 1..={n_buses}",
                    b.id,
                    b.from + 1,
                    b.to + 1
                )));
            }
            if b.from == b.to {
                return Err(Error::InvalidNetwork(format!(
                    "branch {} is a self-loop at bus {}",
                    b.id,
                    b.from + 1
                )));
            }
            if !b.reactance.is_finite() || b.reactance == 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "branch {} has invalid reactance {}",
                    b.id, b.reactance
                )));
            }
        }
        Ok(Network {
            n_buses,
            branches,
            slack,
            nominal_injections: vec![0.0; n_buses],
        })
    }

    /// Attaches per-bus nominal injections (per-unit), used by the synthesizer.
    pub fn with_nominal_injections(mut self, injections: Vec<f64>) -> Result<Self> {
        if injections.len() != self.n_buses {
            return Err(Error::Dimension(format!(
                "{} nominal injections for {} buses",
                injections.len(),
                self.n_buses
            )));
        }
        if let Some(j) = injections.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidNetwork(format!(
                "nominal injection at bus {} is not finite",
                j + 1
            )));
        }
        self.nominal_injections = injections;
        Ok(self)
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn n_lines(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// 0-based slack bus index.
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn nominal_injections(&self) -> &[f64] {
        &self.nominal_injections
    }

    /// Position of the branch with external id `id`.
    pub fn branch_index(&self, id: u32) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Multiplies the reactance of branch `id` by `factor`.
    pub fn scale_reactance(&mut self, id: u32, factor: f64) -> Result<()> {
        let idx = self
            .branch_index(id)
            .ok_or_else(|| Error::InvalidNetwork(format!("no branch with id {id}")))?;
        let x = self.branches[idx].reactance * factor;
        if !x.is_finite() || x == 0.0 {
            return Err(Error::InvalidNetwork(format!(
                "scaling branch {id} by {factor} gives invalid reactance {x}"
            )));
        }
        self.branches[idx].reactance = x;
        Ok(())
    }

    /// Multiplies the nominal injection of 0-based `bus` by `factor`.
    pub fn rescale_nominal_injection(&mut self, bus: usize, factor: f64) -> Result<()> {
        let p = self.nominal_injections.get_mut(bus).ok_or_else(|| {
            Error::InvalidNetwork(format!("bus {} out of range", bus + 1))
        })?;
        *p *= factor;
        Ok(())
    }
}

/// The l×n sensitivity matrix H (lines × buses).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix<T: Scalar>(DMatrix<T>);

impl<T: Scalar> SensitivityMatrix<T> {
    pub fn new(h: DMatrix<T>) -> Result<Self> {
        if let Some((i, _)) = h.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "sensitivity entry (line {}, bus {}) is not finite",
                i % h.nrows() + 1,
                i / h.nrows() + 1
            )));
        }
        Ok(SensitivityMatrix(h))
    }

    pub fn lines(&self) -> usize {
        self.0.nrows()
    }

    pub fn buses(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    /// Whether every entry lies in `[lo, hi]`.
    pub fn within_box(&self, lo: T, hi: T) -> bool {
        self.0.iter().all(|&v| v >= lo && v <= hi)
    }
}

/// The l×m matrix of outlier amplitudes O.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierMatrix<T: Scalar>(DMatrix<T>);

impl<T: Scalar> OutlierMatrix<T> {
    pub fn new(o: DMatrix<T>) -> Self {
        OutlierMatrix(o)
    }

    pub fn zeros(lines: usize, samples: usize) -> Self {
        OutlierMatrix(DMatrix::zeros(lines, samples))
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    /// Entries whose magnitude exceeds `threshold`, as (line, sample), 0-based.
    pub fn support(&self, threshold: T) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.0.ncols() {
            for i in 0..self.0.nrows() {
                if self.0[(i, j)].abs() > threshold {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Paired flow-change and injection-change blocks over m samples.
///
/// Masked-out flow entries (`mask[(i, t)] == false`) carry no information;
/// their value in `delta_f` is never read by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow<T: Scalar> {
    pub delta_f: DMatrix<T>,
    pub delta_p: DMatrix<T>,
    pub mask: DMatrix<bool>,
    /// Ground-truth outliers, evaluation only.
    pub true_outliers: Option<DMatrix<T>>,
}

impl<T: Scalar> MeasurementWindow<T> {
    /// A fully observed window.
    pub fn new(delta_f: DMatrix<T>, delta_p: DMatrix<T>) -> Result<Self> {
        let mask = DMatrix::from_element(delta_f.nrows(), delta_f.ncols(), true);
        Self::with_mask(delta_f, delta_p, mask)
    }

    pub fn with_mask(delta_f: DMatrix<T>, delta_p: DMatrix<T>, mask: DMatrix<bool>) -> Result<Self> {
        if delta_f.ncols() != delta_p.ncols() {
            return Err(Error::Dimension(format!(
                "ΔF has {} samples but ΔP has {}",
                delta_f.ncols(),
                delta_p.ncols()
            )));
        }
        if mask.shape() != delta_f.shape() {
            return Err(Error::Dimension(format!(
                "mask is {}×{} but ΔF is {}×{}",
                mask.nrows(),
                mask.ncols(),
                delta_f.nrows(),
                delta_f.ncols()
            )));
        }
        Ok(MeasurementWindow {
            delta_f,
            delta_p,
            mask,
            true_outliers: None,
        })
    }

    pub fn lines(&self) -> usize {
        self.delta_f.nrows()
    }

    pub fn buses(&self) -> usize {
        self.delta_p.nrows()
    }

    pub fn samples(&self) -> usize {
        self.delta_f.ncols()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// Columns `range` of this window.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples() {
            return Err(Error::Dimension(format!(
                "window slice {}..{} exceeds {} samples",
                start,
                start + len,
                self.samples()
            )));
        }
        Ok(MeasurementWindow {
            delta_f: self.delta_f.columns(start, len).into_owned(),
            delta_p: self.delta_p.columns(start, len).into_owned(),
            mask: self.mask.columns(start, len).into_owned(),
            true_outliers: self
                .true_outliers
                .as_ref()
                .map(|o| o.columns(start, len).into_owned()),
        })
    }

    /// Frobenius norm of the observed part of ΔF.
    pub fn observed_flow_norm(&self) -> T {
        self.delta_f
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .fold(T::zero(), |acc, (&v, _)| acc + v * v)
            .sqrt()
    }
}

/// Step-size policy for proximal-gradient iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize<T> {
    /// α = 1/L with L from [`crate::estimators::lipschitz_constant`].
    InverseLipschitz,
    /// Separate steps α_H = 1/(4σ_max(ΔP)²) and α_O = 1/4, from the bound
    /// 2AᵀA ≼ 4·diag(σ_max² I, I). Much faster than 1/L when σ_max(ΔP) is far
    /// from 1, since the H and O blocks are then scaled very differently.
    BlockLipschitz,
    Fixed(T),
}

/// How the prox of λ‖·‖_* + ι_ℋ is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuclearProxMode {
    /// Singular value thresholding followed by an entrywise clip. Cheap, but
    /// only approximates the composite prox when the box binds.
    SvtThenClip,
    /// Proximal Dykstra splitting between SVT and the box; converges to the
    /// exact composite prox.
    Dykstra { inner_iters: usize },
}

/// Regularization weights, box bounds and stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig<T: Scalar> {
    /// Nuclear-norm weight λ. `None` uses 0.01·‖ΔF‖_F of the window.
    pub lambda: Option<T>,
    /// ℓ1 weight γ. `None` uses 0.1 times the default λ.
    pub gamma: Option<T>,
    pub h_min: T,
    pub h_max: T,
    pub o_min: T,
    pub o_max: T,
    pub step: StepSize<T>,
    pub max_iters: usize,
    pub rel_tol: T,
    pub nuclear_prox: NuclearProxMode,
}

impl<T: Scalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        EstimatorConfig {
            lambda: None,
            gamma: None,
            h_min: lit(-1.0),
            h_max: lit(1.0),
            o_min: lit(-1000.0),
            o_max: lit(1000.0),
            step: StepSize::InverseLipschitz,
            max_iters: 5000,
            rel_tol: lit(1e-8),
            nuclear_prox: NuclearProxMode::SvtThenClip,
        }
    }
}

impl<T: Scalar> EstimatorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: Option<T>, name: &str| match v {
            Some(x) if !(x >= T::zero()) => Err(Error::Config(format!("{name} must be ≥ 0"))),
            _ => Ok(()),
        };
        nonneg(self.lambda, "lambda")?;
        nonneg(self.gamma, "gamma")?;
        if !(self.h_min < self.h_max) {
            return Err(Error::Config("h_min must be < h_max".into()));
        }
        if !(self.o_min < self.o_max) {
            return Err(Error::Config("o_min must be < o_max".into()));
        }
        if let StepSize::Fixed(a) = self.step {
            if !(a > T::zero()) {
                return Err(Error::Config("fixed step size must be > 0".into()));
            }
        }
        if !(self.rel_tol >= T::zero()) {
            return Err(Error::Config("rel_tol must be ≥ 0".into()));
        }
        if let NuclearProxMode::Dykstra { inner_iters: 0 } = self.nuclear_prox {
            return Err(Error::Config("dykstra needs at least one inner iteration".into()));
        }
        Ok(())
    }

    /// Resolves (λ, γ) against a window, applying the data-driven defaults.
    pub fn weights(&self, w: &MeasurementWindow<T>) -> (T, T) {
        let lambda0 = lit::<T>(0.01) * w.observed_flow_norm();
        let lambda = self.lambda.unwrap_or(lambda0);
        let gamma = self.gamma.unwrap_or(lit::<T>(0.1) * lambda0);
        (lambda, gamma)
    }
}

/// ΔF = H ΔP + O + E with E i.i.d. 𝒩(0, noise_sd²); E = 0 when `noise_sd == 0`.
pub fn forward_model<T: Scalar, R: Rng + ?Sized>(
    h: &SensitivityMatrix<T>,
    delta_p: &DMatrix<T>,
    o: Option<&OutlierMatrix<T>>,
    noise_sd: T,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    if h.buses() != delta_p.nrows() {
        return Err(Error::Dimension(format!(
            "H has {} bus columns but ΔP has {} rows",
            h.buses(),
            delta_p.nrows()
        )));
    }
    if !(noise_sd >= T::zero()) {
        return Err(Error::Config("noise_sd must be ≥ 0".into()));
    }
    let mut f = h.as_matrix() * delta_p;
    if let Some(o) = o {
        if o.as_matrix().shape() != f.shape() {
            return Err(Error::Dimension(format!(
                "O is {}×{} but HΔP is {}×{}",
                o.as_matrix().nrows(),
                o.as_matrix().ncols(),
                f.nrows(),
                f.ncols()
            )));
        }
        f += o.as_matrix();
    }
    if noise_sd > T::zero() {
        let normal = Normal::new(0.0, to_f64(noise_sd))
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for v in f.iter_mut() {
            *v += lit::<T>(normal.sample(rng));
        }
    }
    Ok(f)
}

/// Numerical rank: singular values above max(r, c)·ε·σ_max.
pub fn numerical_rank<T: Scalar>(a: &DMatrix<T>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let Ok(sv) = crate::prox::singular_values(a) else {
        return 0;
    };
    let smax = sv.first().copied().unwrap_or(T::zero());
    if smax == T::zero() {
        return 0;
    }
    let dim = lit::<T>(a.nrows().max(a.ncols()) as f64);
    let tol = dim * T::default_epsilon() * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// A non-finite entry, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonFiniteEntry {
    pub matrix: &'static str,
    pub row: usize,
    pub sample: usize,
}

/// Result of [`validate_window`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowDiagnostics {
    pub lines: usize,
    pub buses: usize,
    pub samples: usize,
    pub dimensions_consistent: bool,
    pub non_finite: Vec<NonFiniteEntry>,
    /// Fraction of ΔF entries marked available.
    pub mask_coverage: f64,
    pub delta_p_rank: usize,
    pub underdetermined: bool,
    pub warnings: Vec<String>,
}

impl WindowDiagnostics {
    pub fn ok(&self) -> bool {
        self.dimensions_consistent && self.non_finite.is_empty()
    }
}

/// Reports dimension consistency, non-finite entries, mask coverage and
/// rank(ΔP). Never fails.
pub fn validate_window<T: Scalar>(w: &MeasurementWindow<T>) -> WindowDiagnostics {
    let (l, m) = w.delta_f.shape();
    let n = w.delta_p.nrows();
    let mut warnings = Vec::new();
    let dimensions_consistent = w.delta_p.ncols() == m && w.mask.shape() == (l, m);
    if w.delta_p.ncols() != m {
        warnings.push(format!("ΔF has {m} samples but ΔP has {}", w.delta_p.ncols()));
    }
    if w.mask.shape() != (l, m) {
        warnings.push(format!(
            "mask is {}×{} but ΔF is {l}×{m}",
            w.mask.nrows(),
            w.mask.ncols()
        ));
    }

    let mut non_finite = Vec::new();
    for (name, mat) in [("delta_f", &w.delta_f), ("delta_p", &w.delta_p)] {
        for t in 0..mat.ncols() {
            for i in 0..mat.nrows() {
                let observed = name != "delta_f" || w.mask.get((i, t)).copied().unwrap_or(true);
                if observed && !mat[(i, t)].is_finite() {
                    non_finite.push(NonFiniteEntry {
                        matrix: name,
                        row: i + 1,
                        sample: t + 1,
                    });
                }
            }
        }
    }
    for e in &non_finite {
        warnings.push(format!(
            "non-finite {} entry at ({}, {})",
            e.matrix, e.row, e.sample
        ));
    }

    let total = w.mask.len();
    let mask_coverage = if total == 0 {
        0.0
    } else {
        w.mask.iter().filter(|&&b| b).count() as f64 / total as f64
    };

    let delta_p_rank = if w.delta_p.iter().all(|v| v.is_finite()) {
        numerical_rank(&w.delta_p)
    } else {
        0
    };
    let underdetermined = delta_p_rank < n;
    if underdetermined {
        warnings.push(format!(
            "underdetermined: rank ≤ {} < {n}",
            delta_p_rank.min(m)
        ));
    }

    WindowDiagnostics {
        lines: l,
        buses: n,
        samples: m,
        dimensions_consistent,
        non_finite,
        mask_coverage,
        delta_p_rank,
        underdetermined,
        warnings,
    }
}
