//! Gradient of the least-squares term and the closed-form proximal maps.
//!
//! The smooth term is s(H, O) = ‖Ω ∘ (ΔF − HΔP − O)‖²_F. Its gradient is
//! evaluated in matrix form (∇_H = 2RΔPᵀ, ∇_O = 2R with R the masked
//! residual HΔP + O − ΔF); the Kronecker operator ΔPᵀ ⊗ I is never built.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{MeasurementWindow, NuclearProxMode};
use crate::scalar::{lit, Scalar};

const SVD_MAX_ITERS: usize = 10_000;

/// The stacked iterate x = (vec(H), vec(O)).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedIterate<T: Scalar> {
    pub h: DMatrix<T>,
    pub o: DMatrix<T>,
}

impl<T: Scalar> StackedIterate<T> {
    pub fn zeros(lines: usize, buses: usize, samples: usize) -> Self {
        StackedIterate {
            h: DMatrix::zeros(lines, buses),
            o: DMatrix::zeros(lines, samples),
        }
    }

    /// Euclidean norm of the stacked vector.
    pub fn norm(&self) -> T {
        (self.h.norm_squared() + self.o.norm_squared()).sqrt()
    }

    /// ‖self − other‖ over the stacked vector.
    pub fn distance(&self, other: &Self) -> T {
        ((&self.h - &other.h).norm_squared() + (&self.o - &other.o).norm_squared()).sqrt()
    }

    /// Drops the oldest outlier column and appends a zero column.
    pub fn slide_outliers(&mut self) {
        let (l, m) = self.o.shape();
        if m == 0 {
            return;
        }
        let mut next = DMatrix::zeros(l, m);
        next.columns_mut(0, m - 1).copy_from(&self.o.columns(1, m - 1));
        self.o = next;
    }
}

fn check_dims<T: Scalar>(x: &StackedIterate<T>, w: &MeasurementWindow<T>) -> Result<()> {
    let (l, m, n) = (w.lines(), w.samples(), w.buses());
    if x.h.shape() != (l, n) || x.o.shape() != (l, m) || w.delta_p.ncols() != m {
        return Err(Error::Dimension(format!(
            "iterate H {}×{}, O {}×{} does not match window with l={l}, n={n}, m={m}",
            x.h.nrows(),
            x.h.ncols(),
            x.o.nrows(),
            x.o.ncols()
        )));
    }
    Ok(())
}

/// Masked residual R = Ω ∘ (HΔP + O − ΔF).
pub fn residual<T: Scalar>(x: &StackedIterate<T>, w: &MeasurementWindow<T>) -> Result<DMatrix<T>> {
    check_dims(x, w)?;
    let mut r = &x.h * &w.delta_p + &x.o;
    for ((r, &f), &m) in r.iter_mut().zip(w.delta_f.iter()).zip(w.mask.iter()) {
        *r = if m { *r - f } else { T::zero() };
    }
    Ok(r)
}

/// s(x) = ‖Ω ∘ (ΔF − HΔP − O)‖²_F.
pub fn smooth_loss<T: Scalar>(x: &StackedIterate<T>, w: &MeasurementWindow<T>) -> Result<T> {
    Ok(residual(x, w)?.norm_squared())
}

/// (∇_H s, ∇_O s) = (2RΔPᵀ, 2R).
pub fn grad_s<T: Scalar>(x: &StackedIterate<T>, w: &MeasurementWindow<T>) -> Result<StackedIterate<T>> {
    let r = residual(x, w)? * lit::<T>(2.0);
    Ok(StackedIterate {
        h: &r * w.delta_p.transpose(),
        o: r,
    })
}

/// Entrywise sign(y)·max(|y| − t, 0), then clipped to `[lo, hi]`.
pub fn soft_threshold_box<T: Scalar>(y: &DMatrix<T>, threshold: T, lo: T, hi: T) -> DMatrix<T> {
    y.map(|v| {
        let shrunk = (v.abs() - threshold).max(T::zero());
        let s = if v < T::zero() { -shrunk } else { shrunk };
        s.max(lo).min(hi)
    })
}

/// Entrywise clip to `[lo, hi]`.
pub fn clip<T: Scalar>(y: &DMatrix<T>, lo: T, hi: T) -> DMatrix<T> {
    y.map(|v| v.max(lo).min(hi))
}

/// Thin SVD y = U·diag(s)·Vᵀ, singular values in decreasing order.
pub(crate) struct ThinSvd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub v_t: DMatrix<T>,
}

impl<T: Scalar> ThinSvd<T> {
    /// U·diag(f(s))·Vᵀ.
    pub fn recompose_with(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(f(s));
        }
        us * &self.v_t
    }
}

fn to_faer<T: Scalar>(y: &DMatrix<T>) -> faer::Mat<T> {
    faer::Mat::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)])
}

/// Thin SVD, computed by nalgebra and checked by reconstruction. The
/// nalgebra iteration occasionally stops on an inaccurate factorization
/// (errors up to 5e-2 observed); those inputs are redone with faer.
pub(crate) fn thin_svd<T: Scalar>(y: &DMatrix<T>) -> Result<ThinSvd<T>> {
    if !y.iter().all(|v| v.is_finite()) {
        return Err(svd_failure(y));
    }
    if let Some(svd) = nalgebra::SVD::try_new(y.clone(), true, true, T::default_epsilon(), SVD_MAX_ITERS) {
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let (u, v_t) = (svd.u.as_ref().expect("requested"), svd.v_t.as_ref().expect("requested"));
        let out = ThinSvd {
            u: u.select_columns(&order),
            s: order.iter().map(|&i| svd.singular_values[i]).collect(),
            v_t: v_t.select_rows(&order),
        };
        if (out.recompose_with(|s| s) - y).amax() <= accuracy(y) {
            return Ok(out);
        }
    }
    faer_thin_svd(y)
}

fn faer_thin_svd<T: Scalar>(y: &DMatrix<T>) -> Result<ThinSvd<T>> {
    let svd = to_faer(y).thin_svd().map_err(|_| svd_failure(y))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S());
    let k = y.nrows().min(y.ncols());
    Ok(ThinSvd {
        u: DMatrix::from_fn(y.nrows(), k, |i, j| u[(i, j)]),
        s: (0..k).map(|i| s[i]).collect(),
        v_t: DMatrix::from_fn(k, y.ncols(), |i, j| v[(j, i)]),
    })
}

/// Tolerated entrywise reconstruction error: √ε·max(1, max|y|).
fn accuracy<T: Scalar>(y: &DMatrix<T>) -> T {
    T::default_epsilon().sqrt() * y.amax().max(T::one())
}

fn svd_failure<T: Scalar>(y: &DMatrix<T>) -> Error {
    let finite = y.iter().all(|v| v.is_finite());
    Error::Numerical(format!(
        "SVD of {}×{} matrix did not converge (finite entries: {finite}, max |entry|: {})",
        y.nrows(),
        y.ncols(),
        y.amax()
    ))
}

/// Singular values of `y`, in decreasing order.
pub fn singular_values<T: Scalar>(y: &DMatrix<T>) -> Result<Vec<T>> {
    if y.is_empty() {
        return Ok(Vec::new());
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(svd_failure(y));
    }
    // Σσ² = ‖y‖²_F is a cheap consistency check on the nalgebra values.
    if let Some(svd) = nalgebra::SVD::try_new(y.clone(), false, false, T::default_epsilon(), SVD_MAX_ITERS) {
        let mut s: Vec<T> = svd.singular_values.iter().copied().collect();
        let energy = s.iter().fold(T::zero(), |a, &v| a + v * v);
        let frob = y.norm_squared();
        if (energy - frob).abs() <= T::default_epsilon().sqrt() * frob.max(T::one()) {
            s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            return Ok(s);
        }
    }
    to_faer(y).singular_values().map_err(|_| svd_failure(y))
}

/// Nuclear norm ‖y‖_*.
pub fn nuclear_norm<T: Scalar>(y: &DMatrix<T>) -> Result<T> {
    Ok(singular_values(y)?.into_iter().fold(T::zero(), |a, s| a + s))
}

/// Largest singular value (spectral norm).
pub fn spectral_norm<T: Scalar>(y: &DMatrix<T>) -> Result<T> {
    Ok(singular_values(y)?.first().copied().unwrap_or(T::zero()))
}

/// U·max(Σ − t, 0)·Vᵀ: the prox of t‖·‖_*.
pub fn svt<T: Scalar>(y: &DMatrix<T>, threshold: T) -> Result<DMatrix<T>> {
    if y.is_empty() {
        return Ok(y.clone());
    }
    if threshold == T::zero() {
        return Ok(y.clone());
    }
    Ok(thin_svd(y)?.recompose_with(|s| (s - threshold).max(T::zero())))
}

/// Prox of t‖·‖_* + ι_{[lo,hi]}.
///
/// [`NuclearProxMode::SvtThenClip`] applies SVT and then clips, which is exact
/// only when the box does not bind. [`NuclearProxMode::Dykstra`] runs proximal
/// Dykstra splitting and returns a point inside the box.
pub fn prox_nuclear_box<T: Scalar>(
    y: &DMatrix<T>,
    threshold: T,
    lo: T,
    hi: T,
    mode: NuclearProxMode,
) -> Result<DMatrix<T>> {
    match mode {
        NuclearProxMode::SvtThenClip => Ok(clip(&svt(y, threshold)?, lo, hi)),
        NuclearProxMode::Dykstra { inner_iters } => {
            let (r, c) = y.shape();
            let mut x = y.clone();
            let mut p = DMatrix::zeros(r, c);
            let mut q = DMatrix::zeros(r, c);
            for _ in 0..inner_iters {
                let z = svt(&(&x + &p), threshold)?;
                p = &x + &p - &z;
                let next = clip(&(&z + &q), lo, hi);
                q = &z + &q - &next;
                let moved = (&next - &x).amax();
                x = next;
                if moved <= T::default_epsilon() * (T::one() + x.amax()) {
                    break;
                }
            }
            Ok(x)
        }
    }
}
