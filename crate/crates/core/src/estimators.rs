//! Batch estimators: box-constrained least squares and proximal-gradient
//! solvers for the nuclear-norm, robust and robust-with-missing-data problems.
//!
//! All proximal-gradient variants minimize
//!
//! ```text
//! ‖Ω ∘ (ΔF − HΔP − O)‖²_F + λ‖H‖_* + γ‖vec(O)‖₁ + ι_ℋ(H) + ι_ℳ(O)
//! ```
//!
//! with O fixed at zero for [`Variant::Nuclear`] and Ω all-true except for
//! [`Variant::RobustMissing`]. Iterates start at H = 0, O = 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::{defined, median, relative_errors};
use crate::model::{
    numerical_rank, EstimatorConfig, MeasurementWindow, OutlierMatrix, SensitivityMatrix, StepSize,
};
use crate::prox::{
    clip, grad_s, nuclear_norm, prox_nuclear_box, smooth_loss, soft_threshold_box, spectral_norm,
    StackedIterate,
};
use crate::scalar::{lit, to_f64, Scalar};

/// Which convex program a batch solve targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Least squares plus nuclear norm; no outlier term.
    Nuclear,
    /// Adds the ℓ1-penalized outlier matrix O.
    Robust,
    /// Robust, with unavailable flow entries dropped from the fit.
    RobustMissing,
}

impl Variant {
    pub fn estimates_outliers(self) -> bool {
        !matches!(self, Variant::Nuclear)
    }

    pub fn honors_mask(self) -> bool {
        matches!(self, Variant::RobustMissing)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nuclear => "nuclear",
            Variant::Robust => "robust",
            Variant::RobustMissing => "robust-missing",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nuclear" => Ok(Variant::Nuclear),
            "robust" => Ok(Variant::Robust),
            "robust-missing" | "robust_missing" => Ok(Variant::RobustMissing),
            other => Err(Error::Config(format!("unknown estimator variant {other:?}"))),
        }
    }
}

/// L = 2(σ_max(ΔP)² + 1), a Lipschitz constant of ∇s for the stacked
/// operator [ΔPᵀ ⊗ I, I].
pub fn lipschitz_constant<T: Scalar>(w: &MeasurementWindow<T>) -> Result<T> {
    let s = spectral_norm(&w.delta_p)?;
    Ok(lit::<T>(2.0) * (s * s + T::one()))
}

/// Per-iteration objective values; entry 0 is the objective at the start point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveTrace<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> ObjectiveTrace<T> {
    /// Largest increase between consecutive entries, relative to max(1, |f|).
    pub fn max_relative_increase(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| {
                let (a, b) = (to_f64(w[0]), to_f64(w[1]));
                (b - a) / a.abs().max(1.0)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last(&self) -> Option<T> {
        self.values.last().copied()
    }
}

/// Full cost of `variant` at `x`.
pub fn objective<T: Scalar>(
    variant: Variant,
    x: &StackedIterate<T>,
    w: &MeasurementWindow<T>,
    lambda: T,
    gamma: T,
) -> Result<T> {
    let mut f = smooth_loss(x, w)?;
    if lambda != T::zero() {
        f += lambda * nuclear_norm(&x.h)?;
    }
    if variant.estimates_outliers() && gamma != T::zero() {
        f += gamma * x.o.iter().fold(T::zero(), |a, v| a + v.abs());
    }
    Ok(f)
}

/// Everything one proximal-gradient step needs besides the iterate.
#[derive(Debug, Clone)]
pub struct StepParams<T: Scalar> {
    pub variant: Variant,
    /// Step on the H block.
    pub alpha: T,
    /// Step on the O block; equal to `alpha` except under
    /// [`StepSize::BlockLipschitz`].
    pub alpha_o: T,
    pub lambda: T,
    pub gamma: T,
    pub config: EstimatorConfig<T>,
}

/// y = x − α∇s(x), then H ← prox_{αλ‖·‖_* + ι_ℋ}(Y_H), O ← [S_{αγ}(Y_O)] clipped to ℳ.
pub fn prox_grad_step<T: Scalar>(
    x: &StackedIterate<T>,
    w: &MeasurementWindow<T>,
    p: &StepParams<T>,
) -> Result<StackedIterate<T>> {
    let g = grad_s(x, w)?;
    let y_h = &x.h - &g.h * p.alpha;
    let h = prox_nuclear_box(&y_h, p.alpha * p.lambda, p.config.h_min, p.config.h_max, p.config.nuclear_prox)?;
    let o = if p.variant.estimates_outliers() {
        let y_o = &x.o - &g.o * p.alpha_o;
        soft_threshold_box(&y_o, p.alpha_o * p.gamma, p.config.o_min, p.config.o_max)
    } else {
        DMatrix::zeros(x.o.nrows(), x.o.ncols())
    };
    Ok(StackedIterate { h, o })
}

/// Restricts the window to what `variant` may read.
///
/// Variants other than [`Variant::RobustMissing`] require a fully observed
/// window; they never silently read masked-out entries.
pub fn prepare_window<T: Scalar>(w: &MeasurementWindow<T>, variant: Variant) -> Result<()> {
    if w.samples() == 0 {
        return Err(Error::EmptyWindow);
    }
    if !variant.honors_mask() && !w.is_fully_observed() {
        return Err(Error::Config(format!(
            "the {variant} estimator needs a fully observed window; use robust-missing for masked data"
        )));
    }
    Ok(())
}

/// Resolves the step sizes (α_H, α_O) for a window.
pub fn step_size<T: Scalar>(w: &MeasurementWindow<T>, cfg: &EstimatorConfig<T>) -> Result<(T, T)> {
    match cfg.step {
        StepSize::InverseLipschitz => {
            let a = T::one() / lipschitz_constant(w)?;
            Ok((a, a))
        }
        StepSize::BlockLipschitz => {
            let s = spectral_norm(&w.delta_p)?;
            let four = lit::<T>(4.0);
            let a_h = if s > T::zero() { T::one() / (four * s * s) } else { T::one() / four };
            Ok((a_h, T::one() / four))
        }
        StepSize::Fixed(a) => Ok((a, a)),
    }
}

/// Output of [`batch_estimate`].
#[derive(Debug, Clone)]
pub struct BatchEstimate<T: Scalar> {
    pub h: SensitivityMatrix<T>,
    pub o: OutlierMatrix<T>,
    pub trace: ObjectiveTrace<T>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: T,
    pub gamma: T,
    /// H-block step size.
    pub alpha: T,
}

impl<T: Scalar> BatchEstimate<T> {
    pub fn iterate(&self) -> StackedIterate<T> {
        StackedIterate {
            h: self.h.as_matrix().clone(),
            o: self.o.as_matrix().clone(),
        }
    }
}

/// Proximal-gradient solve from H = 0, O = 0.
pub fn batch_estimate<T: Scalar>(
    w: &MeasurementWindow<T>,
    cfg: &EstimatorConfig<T>,
    variant: Variant,
) -> Result<BatchEstimate<T>> {
    batch_estimate_from(w, cfg, variant, None)
}

/// Proximal-gradient solve from `init` (or zero).
///
/// Stops when |f_k − f_{k−1}| ≤ rel_tol·|f_{k−1}| or after `max_iters`.
pub fn batch_estimate_from<T: Scalar>(
    w: &MeasurementWindow<T>,
    cfg: &EstimatorConfig<T>,
    variant: Variant,
    init: Option<StackedIterate<T>>,
) -> Result<BatchEstimate<T>> {
    cfg.validate()?;
    prepare_window(w, variant)?;
    let (lambda, gamma) = cfg.weights(w);
    let (alpha, alpha_o) = step_size(w, cfg)?;
    let params = StepParams {
        variant,
        alpha,
        alpha_o,
        lambda,
        gamma,
        config: cfg.clone(),
    };

    let (l, n, m) = (w.lines(), w.buses(), w.samples());
    let mut x = match init {
        Some(x) => {
            if x.h.shape() != (l, n) || x.o.shape() != (l, m) {
                return Err(Error::Dimension("initial iterate does not match the window".into()));
            }
            let mut x = x;
            if !variant.estimates_outliers() {
                x.o.fill(T::zero());
            }
            x
        }
        None => StackedIterate::zeros(l, n, m),
    };

    let mut f_prev = objective(variant, &x, w, lambda, gamma)?;
    if !f_prev.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut trace = ObjectiveTrace { values: vec![f_prev] };
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iters {
        x = prox_grad_step(&x, w, &params)?;
        let f = objective(variant, &x, w, lambda, gamma)?;
        if !f.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        trace.values.push(f);
        iterations = it;
        if (f_prev - f).abs() <= cfg.rel_tol * f_prev.abs() {
            converged = true;
            break;
        }
        f_prev = f;
    }

    Ok(BatchEstimate {
        h: SensitivityMatrix::new(x.h)?,
        o: OutlierMatrix::new(x.o),
        trace,
        iterations,
        converged,
        lambda,
        gamma,
        alpha,
    })
}

/// Output of [`least_squares_estimate`].
#[derive(Debug, Clone)]
pub struct LeastSquaresEstimate<T: Scalar> {
    pub h: SensitivityMatrix<T>,
    pub rank: usize,
    pub underdetermined: bool,
    /// Projected-gradient iterations spent enforcing the box (0 when the
    /// unconstrained solution is already feasible).
    pub iterations: usize,
}

/// ΔF ΔP⁺ via the SVD, with singular values below max(n, m)·ε·σ_max dropped.
pub fn min_norm_solution<T: Scalar>(delta_f: &DMatrix<T>, delta_p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let svd = crate::prox::thin_svd(delta_p)?;
    let smax = svd.s.first().copied().unwrap_or(T::zero());
    let tol = lit::<T>(delta_p.nrows().max(delta_p.ncols()) as f64) * T::default_epsilon() * smax;
    let inv = svd.recompose_with(|s| if s > tol { T::one() / s } else { T::zero() });
    let pinv = inv.transpose();
    Ok(delta_f * pinv)
}

/// Box-constrained least squares min_{H ∈ ℋ} ‖ΔF − HΔP‖²_F.
///
/// With rank(ΔP) = n the minimizer is unique and is found by projected
/// gradient from the clipped unconstrained solution. Otherwise the
/// minimum-Frobenius-norm solution ΔF ΔP⁺ is clipped to the box and the
/// result is flagged as underdetermined.
pub fn least_squares_estimate<T: Scalar>(
    w: &MeasurementWindow<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<LeastSquaresEstimate<T>> {
    cfg.validate()?;
    if w.samples() == 0 {
        return Err(Error::EmptyWindow);
    }
    if !w.is_fully_observed() {
        return Err(Error::Config(
            "least squares needs a fully observed window; use robust-missing for masked data".into(),
        ));
    }
    let n = w.buses();
    let rank = numerical_rank(&w.delta_p);
    let unconstrained = min_norm_solution(&w.delta_f, &w.delta_p)?;
    let mut h = clip(&unconstrained, cfg.h_min, cfg.h_max);
    let underdetermined = rank < n;
    let mut iterations = 0;

    if !underdetermined && h != unconstrained {
        let s = spectral_norm(&w.delta_p)?;
        let alpha = T::one() / (lit::<T>(2.0) * s * s);
        let pp = &w.delta_p * w.delta_p.transpose();
        let fp = &w.delta_f * w.delta_p.transpose();
        let loss = |h: &DMatrix<T>| (&w.delta_f - h * &w.delta_p).norm_squared();
        let mut f_prev = loss(&h);
        for it in 1..=cfg.max_iters {
            let grad = (&h * &pp - &fp) * lit::<T>(2.0);
            h = clip(&(&h - grad * alpha), cfg.h_min, cfg.h_max);
            let f = loss(&h);
            iterations = it;
            if (f_prev - f).abs() <= cfg.rel_tol * f_prev.abs() {
                break;
            }
            f_prev = f;
        }
    }

    Ok(LeastSquaresEstimate {
        h: SensitivityMatrix::new(h)?,
        rank,
        underdetermined,
        iterations,
    })
}

/// `center`·10^k for k in `[-below, above]`, `per_decade` points per decade.
pub fn log_grid<T: Scalar>(center: T, below: i32, above: i32, per_decade: usize) -> Vec<T> {
    let per = per_decade.max(1) as i32;
    (-below * per..=above * per)
        .map(|k| center * lit::<T>(10f64.powf(k as f64 / per as f64)))
        .collect()
}

/// One cell of a regularization sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub lambda: T,
    pub gamma: T,
    pub median_re: f64,
}

/// Output of [`sweep_regularization`].
#[derive(Debug, Clone)]
pub struct Sweep<T: Scalar> {
    pub best: SweepPoint<T>,
    pub best_estimate: BatchEstimate<T>,
    pub table: Vec<SweepPoint<T>>,
}

/// Grid search over (λ, γ), scoring each pair by the median per-bus RE
/// against `truth`. γ is ignored for [`Variant::Nuclear`].
pub fn sweep_regularization<T: Scalar>(
    w: &MeasurementWindow<T>,
    cfg: &EstimatorConfig<T>,
    variant: Variant,
    truth: &SensitivityMatrix<T>,
    lambdas: &[T],
    gammas: &[T],
) -> Result<Sweep<T>> {
    if lambdas.is_empty() || (variant.estimates_outliers() && gammas.is_empty()) {
        return Err(Error::Config("empty regularization grid".into()));
    }
    let gammas: Vec<T> = if variant.estimates_outliers() {
        gammas.to_vec()
    } else {
        vec![T::zero()]
    };
    let mut best: Option<(SweepPoint<T>, BatchEstimate<T>)> = None;
    let mut table = Vec::with_capacity(lambdas.len() * gammas.len());
    for &lambda in lambdas {
        for &gamma in &gammas {
            let c = EstimatorConfig {
                lambda: Some(lambda),
                gamma: Some(gamma),
                ..cfg.clone()
            };
            let est = batch_estimate(w, &c, variant)?;
            let score = median(&defined(&relative_errors(&est.h, truth)));
            let point = SweepPoint { lambda, gamma, median_re: score };
            table.push(point.clone());
            if best.as_ref().is_none_or(|(b, _)| score < b.median_re) {
                best = Some((point, est));
            }
        }
    }
    let (best, best_estimate) = best.expect("non-empty grid");
    Ok(Sweep { best, best_estimate, table })
}

/// Default sweep grids around the data-driven λ₀ = 0.01‖ΔF‖_F:
/// λ ∈ λ₀·10^[−3, 1] and γ ∈ λ₀·10^[−1, 3], one point per decade.
pub fn default_grids<T: Scalar>(w: &MeasurementWindow<T>) -> (Vec<T>, Vec<T>) {
    let lambda0 = lit::<T>(0.01) * w.observed_flow_norm();
    (log_grid(lambda0, 3, 1, 1), log_grid(lambda0, 1, 3, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NuclearProxMode;

    fn window(df: DMatrix<f64>, dp: DMatrix<f64>) -> MeasurementWindow<f64> {
        MeasurementWindow::new(df, dp).unwrap()
    }

    #[test]
    fn lipschitz_examples() {
        let w = window(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3));
        assert_eq!(lipschitz_constant(&w).unwrap(), 2.0);
        let w = window(DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        assert!((lipschitz_constant(&w).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_identity_recovery() {
        let w = window(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let ls = least_squares_estimate(&w, &EstimatorConfig::default()).unwrap();
        assert!((ls.h.as_matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        assert!(!ls.underdetermined);
        assert_eq!(ls.rank, 2);
    }

    #[test]
    fn least_squares_enforces_box() {
        // Unconstrained solution has an entry at 2; the box pulls it to 1.
        let h = DMatrix::from_row_slice(1, 2, &[2.0, 0.5]);
        let dp = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let w = window(&h * &dp, dp);
        let ls = least_squares_estimate(&w, &EstimatorConfig::default()).unwrap();
        assert!(ls.h.within_box(-1.0, 1.0));
        assert!(ls.iterations > 0);
        assert!((ls.h.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_rejects_empty_and_masked() {
        let w = window(DMatrix::zeros(2, 0), DMatrix::zeros(2, 0));
        assert!(matches!(
            least_squares_estimate(&w, &EstimatorConfig::default()),
            Err(Error::EmptyWindow)
        ));
        let mut mask = DMatrix::from_element(2, 2, true);
        mask[(0, 0)] = false;
        let w = MeasurementWindow::<f64>::with_mask(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), mask).unwrap();
        assert!(least_squares_estimate(&w, &EstimatorConfig::default()).is_err());
        assert!(batch_estimate(&w, &EstimatorConfig::default(), Variant::Robust).is_err());
        assert!(batch_estimate(&w, &EstimatorConfig::default(), Variant::RobustMissing).is_ok());
    }

    #[test]
    fn zero_data_stays_at_zero() {
        let w = window(DMatrix::zeros(3, 4), DMatrix::from_element(2, 4, 1.0));
        let est = batch_estimate(&w, &EstimatorConfig::default(), Variant::Robust).unwrap();
        assert!(est.converged);
        assert_eq!(est.h.as_matrix().amax(), 0.0);
        assert_eq!(est.o.as_matrix().amax(), 0.0);
    }

    #[test]
    fn huge_fixed_step_diverges() {
        let dp = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 2.0]);
        let w = window(DMatrix::from_element(2, 2, 1.0), dp);
        let cfg = EstimatorConfig {
            step: StepSize::Fixed(1e3),
            lambda: Some(0.0),
            gamma: Some(0.0),
            h_min: -1e300,
            h_max: 1e300,
            o_min: -1e300,
            o_max: 1e300,
            max_iters: 10_000,
            ..EstimatorConfig::default()
        };
        match batch_estimate(&w, &cfg, Variant::Robust) {
            Err(Error::Divergence { iteration }) => assert!(iteration > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_is_monotone_with_inverse_lipschitz_step() {
        let dp = DMatrix::from_row_slice(3, 4, &[1.0, 0.2, -0.5, 0.3, 0.1, 1.1, 0.4, -0.2, -0.3, 0.5, 0.9, 1.2]);
        let h = DMatrix::from_row_slice(2, 3, &[0.5, -0.25, 0.1, 0.3, 0.2, -0.6]);
        let mut df = &h * &dp;
        df[(1, 2)] += 3.0;
        let w = window(df, dp);
        for variant in [Variant::Nuclear, Variant::Robust, Variant::RobustMissing] {
            let cfg = EstimatorConfig {
                lambda: Some(0.05),
                gamma: Some(0.2),
                nuclear_prox: NuclearProxMode::Dykstra { inner_iters: 200 },
                ..EstimatorConfig::default()
            };
            let est = batch_estimate(&w, &cfg, variant).unwrap();
            assert!(est.trace.max_relative_increase() <= 1e-12, "{variant}");
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("robust-missing".parse::<Variant>().unwrap(), Variant::RobustMissing);
        assert_eq!("nuclear".parse::<Variant>().unwrap(), Variant::Nuclear);
        assert!("lasso".parse::<Variant>().is_err());
    }

    #[test]
    fn log_grid_spans_decades() {
        let g = log_grid(1.0f64, 2, 1, 1);
        let expected = [0.01, 0.1, 1.0, 10.0];
        assert_eq!(g.len(), expected.len());
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12 * b);
        }
    }
}
