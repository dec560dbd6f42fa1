//! Stationary ensembles and initial conditions.
//!
//! The dense samplers diagonalize a full Gaussian matrix. The tridiagonal
//! samplers draw the same eigenvalue laws from the chi-distributed
//! tridiagonal (GOE) and bidiagonal (Laguerre) models and are used where a
//! fresh sample is needed for every replica.

use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gaussian_matrix, jacobi_eigenvalues, tridiagonal_eigenvalues, SymMatrix};
use crate::models::{ModelKind, ModelSpec};
use crate::rng::{CounterRng, Domain, ReplicaKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnsembleKind {
    ScaledLaguerre(usize),
    ScaledGOE,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSample {
    pub positions: Vec<f64>,
    pub kind: EnsembleKind,
}

impl EnsembleSample {
    pub fn to_csv(&self) -> String {
        let v: Vec<String> = self.positions.iter().map(|x| format!("{x:?}")).collect();
        v.join(",") + "\n"
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Dense,
    #[default]
    Tridiagonal,
}

fn chi(rng: &mut CounterRng, k: usize) -> f64 {
    ChiSquared::new(k as f64).expect("positive degrees of freedom").sample(rng).sqrt()
}

fn check_laguerre(n: usize, p: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be >= 1".into()));
    }
    if p < n {
        return Err(Error::InvalidParams(format!("P = {p} must exceed N - 1 = {}", n - 1)));
    }
    Ok(())
}

/// Eigenvalues of `G^T G / N` for a `P x N` standard Gaussian `G`.
pub fn sample_scaled_laguerre(n: usize, p: usize, key: impl Into<ReplicaKey>) -> Result<EnsembleSample> {
    check_laguerre(n, p)?;
    let mut rng = key.into().stream(Domain::Ensemble, 0);
    let g = gaussian_matrix(p, n, &mut rng);
    let nf = n as f64;
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..p).map(|r| g[r * n + i] * g[r * n + j]).sum();
            m.set(i, j, s / nf);
        }
    }
    let mut positions = jacobi_eigenvalues(&m)?;
    for v in &mut positions {
        *v = v.max(0.0);
    }
    Ok(EnsembleSample { positions, kind: EnsembleKind::ScaledLaguerre(p) })
}

/// Eigenvalues of a symmetric matrix with off-diagonal variance `1/N` and
/// diagonal variance `2/N`.
pub fn sample_scaled_goe(n: usize, key: impl Into<ReplicaKey>) -> Result<EnsembleSample> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be >= 1".into()));
    }
    let mut rng = key.into().stream(Domain::Ensemble, 0);
    let nf = n as f64;
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let sd = if i == j { (2.0 / nf).sqrt() } else { (1.0 / nf).sqrt() };
            m.set(i, j, sd * rng.normal());
        }
    }
    let positions = jacobi_eigenvalues(&m)?;
    Ok(EnsembleSample { positions, kind: EnsembleKind::ScaledGOE })
}

/// Same law as [`sample_scaled_goe`] from the tridiagonal model.
pub fn sample_scaled_goe_tridiagonal(n: usize, key: impl Into<ReplicaKey>) -> Result<EnsembleSample> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be >= 1".into()));
    }
    let mut rng = key.into().stream(Domain::Ensemble, 1);
    let nf = n as f64;
    let diag: Vec<f64> = (0..n).map(|_| (2.0 / nf).sqrt() * rng.normal()).collect();
    let off: Vec<f64> = (1..n).map(|k| chi(&mut rng, n - k) / nf.sqrt()).collect();
    let positions = tridiagonal_eigenvalues(&diag, &off)?;
    Ok(EnsembleSample { positions, kind: EnsembleKind::ScaledGOE })
}

/// Same law as [`sample_scaled_laguerre`] from the bidiagonal model.
pub fn sample_scaled_laguerre_tridiagonal(n: usize, p: usize, key: impl Into<ReplicaKey>) -> Result<EnsembleSample> {
    check_laguerre(n, p)?;
    let mut rng = key.into().stream(Domain::Ensemble, 1);
    let nf = n as f64;
    // Lower bidiagonal B: B_ii = chi_{P-i}, B_{i+1,i} = chi_{N-1-i}.
    let d: Vec<f64> = (0..n).map(|i| chi(&mut rng, p - i)).collect();
    let e: Vec<f64> = (0..n.saturating_sub(1)).map(|i| chi(&mut rng, n - 1 - i)).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| (d[i] * d[i] + if i > 0 { e[i - 1] * e[i - 1] } else { 0.0 }) / nf)
        .collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| d[i] * e[i] / nf).collect();
    let mut positions = tridiagonal_eigenvalues(&diag, &off)?;
    for v in &mut positions {
        *v = v.max(0.0);
    }
    Ok(EnsembleSample { positions, kind: EnsembleKind::ScaledLaguerre(p) })
}

pub fn sample(kind: EnsembleKind, n: usize, sampler: Sampler, key: impl Into<ReplicaKey>) -> Result<EnsembleSample> {
    match (kind, sampler) {
        (EnsembleKind::ScaledGOE, Sampler::Dense) => sample_scaled_goe(n, key),
        (EnsembleKind::ScaledGOE, Sampler::Tridiagonal) => sample_scaled_goe_tridiagonal(n, key),
        (EnsembleKind::ScaledLaguerre(p), Sampler::Dense) => sample_scaled_laguerre(n, p, key),
        (EnsembleKind::ScaledLaguerre(p), Sampler::Tridiagonal) => sample_scaled_laguerre_tridiagonal(n, p, key),
    }
}

/// The stationary ensemble matching a model: Laguerre with the model's `P`
/// (rounded from `cN`) for Wishart kinds, GOE otherwise.
pub fn ensemble_for(spec: &ModelSpec) -> EnsembleKind {
    if spec.kind.is_wishart_like() {
        let p = spec.params.p.map(|p| p as usize).unwrap_or_else(|| {
            let c = spec.limit().b0;
            ((c * spec.n_particles as f64).round() as usize).max(spec.n_particles)
        });
        EnsembleKind::ScaledLaguerre(p)
    } else {
        EnsembleKind::ScaledGOE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitKind {
    Zero,
    Ensemble,
    DominatedEnsemble { a: f64, b: f64 },
    Explicit(Vec<f64>),
}

/// Builds a sorted initial state.
///
/// `DominatedEnsemble` gives `sqrt(a) xi + u`, `u ~ U[-b, b]`, for Dyson and OU
/// kinds and `a xi u`, `u ~ U[0, 1]`, for Wishart kinds, where `xi` is a fresh
/// ensemble sample.
pub fn make_initial(kind: &InitKind, spec: &ModelSpec, sampler: Sampler, key: impl Into<ReplicaKey>) -> Result<Vec<f64>> {
    let key = key.into();
    let n = spec.n_particles;
    let mut v = match kind {
        InitKind::Zero => vec![0.0; n],
        InitKind::Ensemble => sample(ensemble_for(spec), n, sampler, key)?.positions,
        InitKind::DominatedEnsemble { a, b } => {
            if !(*a > 0.0) || !(*b >= 0.0) {
                return Err(Error::InvalidParams("dominated ensemble needs a > 0 and b >= 0".into()));
            }
            let xi = sample(ensemble_for(spec), n, sampler, key)?.positions;
            let mut rng = key.stream(Domain::InitialBand, 0);
            if spec.kind.is_wishart_like() {
                xi.iter().map(|x| a * x * rng.uniform()).collect()
            } else if *b == 0.0 {
                xi.iter().map(|x| a.sqrt() * x).collect()
            } else {
                xi.iter().map(|x| a.sqrt() * x + b * (2.0 * rng.uniform() - 1.0)).collect()
            }
        }
        InitKind::Explicit(x) => {
            if x.len() != n {
                return Err(Error::InvalidParams(format!("explicit init has {} entries, expected {n}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams("explicit init is not finite".into()));
            }
            x.clone()
        }
    };
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Exact law at time `t` of a system started with every particle at zero:
/// a rescaled ensemble sample, shifted by `c t` for drifted kinds. The sine
/// perturbation of drifted kinds is ignored (it is `O(N^{-3/2})`).
pub fn entrance_state(spec: &ModelSpec, t: f64, sampler: Sampler, key: impl Into<ReplicaKey>) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidInit("entrance time must be positive".into()));
    }
    let n = spec.n_particles;
    let c = spec.limit().b0;
    let (scale, shift) = match spec.kind {
        ModelKind::Dyson => (t.sqrt(), 0.0),
        ModelKind::DysonDrifted => (t.sqrt(), c * t),
        ModelKind::Wishart | ModelKind::WishartDrifted => (t, 0.0),
        // For OU the shift is the mean of dx = (c - x/2) dt from 0.
        ModelKind::OrnsteinUhlenbeck => (((1.0 - (-t).exp()) / 2.0).sqrt(), 0.0),
        ModelKind::OUDrifted => (((1.0 - (-t).exp()) / 2.0).sqrt(), 2.0 * c * (1.0 - (-0.5 * t).exp())),
        k => return Err(Error::InvalidInit(format!("no exact zero-start law for {k}"))),
    };
    let xi = sample(ensemble_for(spec), n, sampler, key)?.positions;
    Ok(xi.iter().map(|x| scale * x + shift).collect())
}
