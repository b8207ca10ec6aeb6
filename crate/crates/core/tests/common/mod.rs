#![allow(dead_code)]

use gridsens::nalgebra::{DMatrix, DVector};
use gridsens::{Branch, MeasurementWindow, Network, StackedIterate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn br(id: u32, from: usize, to: usize, x: f64) -> Branch {
    Branch { id, from, to, reactance: x }
}

/// Buses 1-2-3 in a ring, unit reactances, slack bus 1.
pub fn ring3() -> Network {
    Network::new(3, vec![br(1, 0, 1, 1.0), br(2, 1, 2, 1.0), br(3, 0, 2, 1.0)], 0).unwrap()
}

/// Entries uniform in [-1, 1].
pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random connected network: a random spanning tree plus `extra` chords.
pub fn random_network(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Network {
    let mut branches = Vec::new();
    let mut id = 1;
    for j in 1..n {
        let parent = rng.random_range(0..j);
        let (a, b) = if rng.random::<bool>() { (parent, j) } else { (j, parent) };
        branches.push(br(id, a, b, rng.random_range(0.02..0.5)));
        id += 1;
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        branches.push(br(id, a, b, rng.random_range(0.02..0.5)));
        id += 1;
    }
    let slack = rng.random_range(0..n);
    Network::new(n, branches, slack).unwrap()
}

/// Solves B_r θ = e_j by Gaussian elimination with partial pivoting for every
/// non-slack bus and maps angles to flows branch by branch.
pub fn brute_force_ptdf(net: &Network) -> DMatrix<f64> {
    let n = net.n_buses();
    let s = net.slack();
    let others: Vec<usize> = (0..n).filter(|&j| j != s).collect();
    let pos = |bus: usize| others.iter().position(|&b| b == bus);
    let k = others.len();
    let mut b = vec![vec![0.0; k]; k];
    for br in net.branches() {
        let y = 1.0 / br.reactance;
        let (pf, pt) = (pos(br.from), pos(br.to));
        if let Some(i) = pf {
            b[i][i] += y;
        }
        if let Some(i) = pt {
            b[i][i] += y;
        }
        if let (Some(i), Some(j)) = (pf, pt) {
            b[i][j] -= y;
            b[j][i] -= y;
        }
    }
    let mut h = DMatrix::zeros(net.n_lines(), n);
    for (col, &bus) in others.iter().enumerate() {
        let mut a = b.clone();
        let mut rhs = vec![0.0; k];
        rhs[col] = 1.0;
        for c in 0..k {
            let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            rhs.swap(c, piv);
            let pivot = a[c].clone();
            for r in c + 1..k {
                let f = a[r][c] / pivot[c];
                for (x, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * p;
                }
                rhs[r] -= f * rhs[c];
            }
        }
        let mut theta = vec![0.0; k];
        for r in (0..k).rev() {
            let tail: f64 = (r + 1..k).map(|c| a[r][c] * theta[c]).sum();
            theta[r] = (rhs[r] - tail) / a[r][r];
        }
        let angle = |bus: usize| pos(bus).map_or(0.0, |i| theta[i]);
        for (row, br) in net.branches().iter().enumerate() {
            h[(row, bus)] = (angle(br.from) - angle(br.to)) / br.reactance;
        }
    }
    h
}

/// Explicit stacked operator A = [ΔPᵀ ⊗ I_l, I_{lm}] acting on
/// [vec(H); vec(O)], with masked rows zeroed.
pub fn kronecker_operator(dp: &DMatrix<f64>, l: usize, mask: &DMatrix<bool>) -> DMatrix<f64> {
    let (n, m) = dp.shape();
    let mut a = DMatrix::zeros(l * m, l * n + l * m);
    for t in 0..m {
        for i in 0..l {
            let row = t * l + i;
            if !mask[(i, t)] {
                continue;
            }
            for j in 0..n {
                a[(row, j * l + i)] = dp[(j, t)];
            }
            a[(row, l * n + row)] = 1.0;
        }
    }
    a
}

pub fn stack(x: &StackedIterate<f64>) -> DVector<f64> {
    DVector::from_iterator(x.h.len() + x.o.len(), x.h.iter().chain(x.o.iter()).copied())
}

pub fn unstack(v: &DVector<f64>, l: usize, n: usize, m: usize) -> StackedIterate<f64> {
    StackedIterate {
        h: DMatrix::from_column_slice(l, n, &v.as_slice()[..l * n]),
        o: DMatrix::from_column_slice(l, m, &v.as_slice()[l * n..]),
    }
}

pub fn random_instance(seed: u64, l: usize, n: usize, m: usize, missing: f64) -> (StackedIterate<f64>, MeasurementWindow<f64>) {
    let mut r = rng(seed);
    let x = StackedIterate { h: uniform(&mut r, l, n), o: uniform(&mut r, l, m) };
    let df = uniform(&mut r, l, m) * 3.0;
    let dp = uniform(&mut r, n, m) * 2.0;
    let mask = DMatrix::from_fn(l, m, |_, _| r.random::<f64>() >= missing);
    (x, MeasurementWindow::with_mask(df, dp, mask).unwrap())
}
