//! Full matrix-valued processes and symmetric eigensolvers.
//!
//! The matrix simulations give an independent check of the particle SDEs:
//! entries are advanced by their exact Gaussian transitions and the spectrum
//! is extracted with cyclic Jacobi.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{CounterRng, Domain, ReplicaKey};
use crate::sde::{StepStats, Trajectory};

/// Largest dimension the dense eigensolver accepts.
pub const MAX_DIM: usize = 512;
const MAX_SWEEPS: usize = 100;

/// Symmetric matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    lower: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, lower: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a full row-major matrix, reading only the lower triangle.
    pub fn from_full(n: usize, full: &[f64]) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, full[i * n + j]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.lower[Self::idx(i, j)] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    pub fn to_full(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = self.get(i, j);
            }
        }
        a
    }
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Eigenvalues (ascending) by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    if n > MAX_DIM {
        return Err(Error::TooLarge(n, MAX_DIM));
    }
    if m.lower.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("matrix has non-finite entries".into()));
    }
    let mut a = m.to_full();
    let norm = m.frobenius();
    let tol = 1e-12 * norm;
    let mut sweeps = 0;
    while off_norm(&a, n) >= tol && norm > 0.0 {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigenvalues (ascending) of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples `i` and `i + 1`), by the
/// implicit QL method.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    if off.len() + 1 != n {
        return Err(Error::InvalidParams("off-diagonal must have length n - 1".into()));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence(iter));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence(0));
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    SymmetricBM,
    Wishart,
    OU,
}

/// Settings of one matrix simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub kind: MatrixKind,
    pub n: usize,
    /// Wishart degrees of freedom.
    pub p: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Record only these times (plus 0) instead of the whole `dt` grid.
    pub checkpoints: Option<Vec<f64>>,
    /// Initial spectrum, embedded as a diagonal matrix. `None` starts at zero.
    pub init: Option<Vec<f64>>,
}

fn stamps(run: &MatrixRun) -> Vec<f64> {
    let mut g = vec![0.0];
    match &run.checkpoints {
        Some(cp) => {
            let mut cp: Vec<f64> = cp.iter().copied().filter(|&t| t > 0.0 && t <= run.horizon).collect();
            cp.sort_by(f64::total_cmp);
            cp.dedup();
            g.extend(cp);
        }
        None => {
            if run.horizon > 0.0 {
                let steps = ((run.horizon / run.dt) - 1e-9).ceil().max(1.0) as usize;
                for k in 1..steps {
                    g.push(k as f64 * run.dt);
                }
                g.push(run.horizon);
            }
        }
    }
    g
}

/// Simulates the matrix process entrywise and returns its sorted spectrum at
/// every stamp.
pub fn simulate_matrix(run: &MatrixRun, key: impl Into<ReplicaKey>) -> Result<Trajectory> {
    let key = key.into();
    let n = run.n;
    if n == 0 {
        return Err(Error::InvalidParams("n must be >= 1".into()));
    }
    if n > MAX_DIM {
        return Err(Error::TooLarge(n, MAX_DIM));
    }
    if !(run.dt > 0.0) || !(run.horizon >= 0.0) {
        return Err(Error::InvalidParams("dt must be positive and horizon nonnegative".into()));
    }
    if run.kind == MatrixKind::Wishart && run.p < n {
        return Err(Error::InvalidParams(format!("P = {} must exceed N - 1 = {}", run.p, n - 1)));
    }
    let init = run.init.clone().unwrap_or_else(|| vec![0.0; n]);
    if init.len() != n {
        return Err(Error::InvalidParams("initial spectrum has wrong length".into()));
    }
    if run.kind == MatrixKind::Wishart && init.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParams("Wishart initial spectrum must be nonnegative".into()));
    }
    let grid = stamps(run);
    let nf = n as f64;
    let mut rng = key.stream(Domain::MatrixNoise, 0);
    let mut positions = Vec::with_capacity(grid.len() * n);
    let mut sorted = init.clone();
    sorted.sort_by(f64::total_cmp);
    positions.extend_from_slice(&sorted);

    match run.kind {
        MatrixKind::SymmetricBM => {
            // X = diag(init) + (B^T + B)/sqrt(2N); keep B's symmetric part.
            let mut s = SymMatrix::zeros(n);
            for w in grid.windows(2) {
                let sh = (w[1] - w[0]).sqrt();
                for i in 0..n {
                    for j in 0..=i {
                        let inc = if i == j {
                            2.0 * sh * rng.normal()
                        } else {
                            sh * (rng.normal() + rng.normal())
                        };
                        s.set(i, j, s.get(i, j) + inc);
                    }
                }
                let mut x = s.clone();
                let scale = 1.0 / (2.0 * nf).sqrt();
                for i in 0..n {
                    for j in 0..=i {
                        let d = if i == j { init[i] } else { 0.0 };
                        x.set(i, j, d + scale * s.get(i, j));
                    }
                }
                positions.extend(jacobi_eigenvalues(&x)?);
            }
        }
        MatrixKind::Wishart => {
            // B is P x N with B(0)^T B(0) / N = diag(init).
            let p = run.p;
            let mut b = vec![0.0; p * n];
            for (i, &v) in init.iter().enumerate() {
                b[i * n + i] = (nf * v).sqrt();
            }
            for w in grid.windows(2) {
                let sh = (w[1] - w[0]).sqrt();
                for v in &mut b {
                    *v += sh * rng.normal();
                }
                let mut x = SymMatrix::zeros(n);
                for i in 0..n {
                    for j in 0..=i {
                        let mut acc = 0.0;
                        for r in 0..p {
                            acc += b[r * n + i] * b[r * n + j];
                        }
                        x.set(i, j, acc / nf);
                    }
                }
                positions.extend(jacobi_eigenvalues(&x)?);
            }
        }
        MatrixKind::OU => {
            let mut x = SymMatrix::from_diagonal(&init);
            for w in grid.windows(2) {
                let h = w[1] - w[0];
                let decay = (-0.5 * h).exp();
                let spread = (1.0 - (-h).exp()).sqrt();
                for i in 0..n {
                    for j in 0..=i {
                        let sigma = if i == j { 1.0 / nf.sqrt() } else { 1.0 / (2.0 * nf).sqrt() };
                        let v = decay * x.get(i, j) + sigma * spread * rng.normal();
                        x.set(i, j, v);
                    }
                }
                positions.extend(jacobi_eigenvalues(&x)?);
            }
        }
    }
    Ok(Trajectory { n, grid, positions, noise: None, seed: key.seed, replica: key.replica, stats: StepStats::default() })
}

/// Standard normal entries for a dense `rows x cols` matrix.
pub(crate) fn gaussian_matrix(rows: usize, cols: usize, rng: &mut CounterRng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.normal()).collect()
}
