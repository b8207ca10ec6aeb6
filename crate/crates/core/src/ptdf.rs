//! Model-based sensitivity matrix from the DC power-flow approximation.
//!
//! Sign convention: the flow on branch `from → to` is `(θ_from − θ_to) / x`.
//! Injecting one unit at bus j and withdrawing it at the slack produces
//! column j of H; the slack column is identically zero.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Network, SensitivityMatrix};
use crate::scalar::{lit, Scalar};

/// l×n branch-bus incidence: +1 at `from`, −1 at `to`.
pub fn build_incidence<T: Scalar>(net: &Network) -> DMatrix<T> {
    let mut a = DMatrix::zeros(net.n_lines(), net.n_buses());
    for (row, b) in net.branches().iter().enumerate() {
        a[(row, b.from)] = T::one();
        a[(row, b.to)] = -T::one();
    }
    a
}

/// Buses not reachable from the slack, 0-based and sorted.
pub fn unreachable_buses(net: &Network) -> Vec<usize> {
    let n = net.n_buses();
    let mut adj = vec![Vec::new(); n];
    for b in net.branches() {
        adj[b.from].push(b.to);
        adj[b.to].push(b.from);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([net.slack()]);
    seen[net.slack()] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    (0..n).filter(|&j| !seen[j]).collect()
}

/// Bus susceptance matrix B = Aᵀ X⁻¹ A with X = diag(x).
pub fn susceptance<T: Scalar>(net: &Network) -> DMatrix<T> {
    let n = net.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for br in net.branches() {
        let y = T::one() / lit::<T>(br.reactance);
        b[(br.from, br.from)] += y;
        b[(br.to, br.to)] += y;
        b[(br.from, br.to)] -= y;
        b[(br.to, br.from)] -= y;
    }
    b
}

/// `B` with the slack row and column removed.
pub fn reduced_susceptance<T: Scalar>(net: &Network) -> DMatrix<T> {
    susceptance::<T>(net)
        .remove_row(net.slack())
        .remove_column(net.slack())
}

/// H = [0  X⁻¹ A_r B_r⁻¹], with the zero column at the slack position.
///
/// B_r⁻¹ is applied through an LU solve against the identity rather than an
/// explicit inverse.
pub fn compute_dc_ptdf<T: Scalar>(net: &Network) -> Result<SensitivityMatrix<T>> {
    let unreachable = unreachable_buses(net);
    if !unreachable.is_empty() {
        return Err(Error::Disconnected {
            slack: net.slack() + 1,
            buses: unreachable.into_iter().map(|j| j + 1).collect(),
        });
    }

    let n = net.n_buses();
    let slack = net.slack();
    let b_r = reduced_susceptance::<T>(net);
    let lu = b_r.lu();
    let theta = lu
        .solve(&DMatrix::identity(n - 1, n - 1))
        .ok_or_else(|| Error::Numerical("reduced susceptance matrix is singular".into()))?;

    // X⁻¹ A_r θ, row by row: flow = (θ_from − θ_to)/x with θ_slack = 0.
    let mut h = DMatrix::zeros(net.n_lines(), n);
    let reduced = |bus: usize| if bus < slack { Some(bus) } else if bus > slack { Some(bus - 1) } else { None };
    for (row, br) in net.branches().iter().enumerate() {
        let inv_x = T::one() / lit::<T>(br.reactance);
        for col in 0..n - 1 {
            let th_from = reduced(br.from).map_or(T::zero(), |r| theta[(r, col)]);
            let th_to = reduced(br.to).map_or(T::zero(), |r| theta[(r, col)]);
            let full_col = if col < slack { col } else { col + 1 };
            h[(row, full_col)] = (th_from - th_to) * inv_x;
        }
    }
    SensitivityMatrix::new(h)
}
