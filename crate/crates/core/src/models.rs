//! Coefficient functions of the supported particle systems.
//!
//! Every built-in model has an affine drift (plus an optional bounded sine
//! perturbation), a squared diffusion affine in the position and an affine
//! interaction kernel. That closed form is shared by the integrator, the
//! moment hierarchy and the fluctuation recursion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    GeneralizedWishart,
    ParticleSystem,
    Wishart,
    WishartDrifted,
    Dyson,
    DysonDrifted,
    #[serde(alias = "OU")]
    OrnsteinUhlenbeck,
    OUDrifted,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::GeneralizedWishart,
        ModelKind::ParticleSystem,
        ModelKind::Wishart,
        ModelKind::WishartDrifted,
        ModelKind::Dyson,
        ModelKind::DysonDrifted,
        ModelKind::OrnsteinUhlenbeck,
        ModelKind::OUDrifted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GeneralizedWishart => "GeneralizedWishart",
            ModelKind::ParticleSystem => "ParticleSystem",
            ModelKind::Wishart => "Wishart",
            ModelKind::WishartDrifted => "WishartDrifted",
            ModelKind::Dyson => "Dyson",
            ModelKind::DysonDrifted => "DysonDrifted",
            ModelKind::OrnsteinUhlenbeck => "OrnsteinUhlenbeck",
            ModelKind::OUDrifted => "OUDrifted",
        }
    }

    pub fn is_wishart_like(self) -> bool {
        matches!(self, ModelKind::Wishart | ModelKind::WishartDrifted)
    }

    pub fn is_dyson_like(self) -> bool {
        matches!(self, ModelKind::Dyson | ModelKind::DysonDrifted)
    }

    pub fn is_ou_like(self) -> bool {
        matches!(self, ModelKind::OrnsteinUhlenbeck | ModelKind::OUDrifted)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "OU" {
            return Ok(ModelKind::OrnsteinUhlenbeck);
        }
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Model parameters. Which fields are read depends on the kind; unused
/// fields are ignored.
///
/// * Wishart: `p` (degrees of freedom) or `c` (ratio P/N).
/// * Drifted variants: `c` (drift target) and `eps` (perturbation size).
/// * GeneralizedWishart: `a`, `b` with `(g h)^2 = (a + b x)/N`, drift `b0 + b1 x`.
/// * ParticleSystem: `s` with `sigma = s/sqrt(N)`, drift `b0 + b1 x`,
///   kernel `H = (h0 + h1 (x + y))/N`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    #[serde(skip_serializing_if = "Option::is_none", rename = "P", alias = "p")]
    pub p: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
}

impl ModelParams {
    pub fn with_p(p: u64) -> Self {
        Self { p: Some(p), ..Self::default() }
    }

    pub fn with_c(c: f64) -> Self {
        Self { c: Some(c), ..Self::default() }
    }
}

/// Default size of the sine perturbation carried by drifted variants.
pub const DEFAULT_EPS: f64 = 1.0;

/// Coefficients of one system at a fixed time:
/// drift `b0 + b1 x + eps sin(freq x)`, diffusion `sqrt(max(d0 + d1 x, 0))`,
/// interaction `k0 + k1 (x + y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coefficients {
    pub b0: f64,
    pub b1: f64,
    pub eps: f64,
    pub freq: f64,
    pub d0: f64,
    pub d1: f64,
    pub k0: f64,
    pub k1: f64,
}

impl Coefficients {
    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        let mut v = self.b0 + self.b1 * x;
        if self.eps != 0.0 {
            v += self.eps * (self.freq * x).sin();
        }
        v
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        (self.d0 + self.d1 * x).max(0.0).sqrt()
    }

    #[inline]
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        self.k0 + self.k1 * (x + y)
    }

    /// True when both systems share diffusion and interaction.
    pub fn same_noise_and_kernel(&self, other: &Coefficients) -> bool {
        self.d0 == other.d0 && self.d1 == other.d1 && self.k0 == other.k0 && self.k1 == other.k1
    }
}

/// High-dimensional limits of the coefficients.
///
/// Limit drift `b(x) = b0 + b1 x`, limit interaction `G(x,y) = g0 + g1 (x+y)`,
/// and `sigma_tilde` (constant) for particle systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitKernels {
    pub b0: f64,
    pub b1: f64,
    pub g0: f64,
    pub g1: f64,
    pub sigma_tilde: f64,
    pub cov_multiplier: f64,
    pub particle_system: bool,
}

impl LimitKernels {
    pub fn b(&self, x: f64) -> f64 {
        self.b0 + self.b1 * x
    }

    #[allow(non_snake_case)]
    pub fn G(&self, x: f64, y: f64) -> f64 {
        self.g0 + self.g1 * (x + y)
    }

    pub fn sigma_tilde(&self, _x: f64) -> f64 {
        if self.particle_system {
            self.sigma_tilde
        } else {
            0.0
        }
    }

    /// Coefficients `(w0, w1)` of the covariance weight `w0 + w1 x`, to be
    /// multiplied by `cov_multiplier`: `G(x,x)` for eigenvalue systems and
    /// `sigma_tilde^2` for particle systems.
    pub fn covariance_weight(&self) -> (f64, f64) {
        if self.particle_system {
            (self.sigma_tilde * self.sigma_tilde, 0.0)
        } else {
            (self.g0, 2.0 * self.g1)
        }
    }

    /// Coefficients `(e0, e1)` of the order-1/N diagonal term `e0 + e1 x` that
    /// appears with a factor `f''/2` in the fluctuation drift.
    pub fn diagonal_correction(&self) -> (f64, f64) {
        if self.particle_system {
            (self.sigma_tilde * self.sigma_tilde - self.g0, -2.0 * self.g1)
        } else {
            (self.g0, 2.0 * self.g1)
        }
    }
}

/// Anything the integrator can advance: coefficients may depend on time.
pub trait Dynamics: Send + Sync {
    fn n_particles(&self) -> usize;
    fn coefficients_at(&self, t: f64) -> Coefficients;
    fn clamp_nonnegative(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_particles: usize,
    pub params: ModelParams,
    coeffs: Coefficients,
    limit: LimitKernels,
}

fn get(v: Option<f64>, default: f64, name: &str) -> Result<f64> {
    let x = v.unwrap_or(default);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidParams(format!("{name} must be finite")))
    }
}

/// Resolves Wishart `P`/`c` to the drift constant `P/N`.
fn wishart_ratio(n: usize, params: &ModelParams) -> Result<f64> {
    let nf = n as f64;
    match (params.p, params.c) {
        (Some(p), _) => {
            if p as f64 <= nf - 1.0 {
                return Err(Error::InvalidParams(format!("P = {p} must exceed N - 1 = {}", n - 1)));
            }
            Ok(p as f64 / nf)
        }
        (None, Some(c)) => {
            if !c.is_finite() || c < 1.0 {
                return Err(Error::InvalidParams(format!("c = {c} must be >= 1")));
            }
            Ok(c)
        }
        (None, None) => Err(Error::InvalidParams("Wishart needs P or c".into())),
    }
}

pub fn build_model(kind: ModelKind, n_particles: usize, params: ModelParams) -> Result<ModelSpec> {
    if n_particles == 0 {
        return Err(Error::InvalidParams("n_particles must be >= 1".into()));
    }
    let nf = n_particles as f64;
    let pert = |eps: f64| eps / nf.powf(1.5);
    let (coeffs, limit) = match kind {
        ModelKind::Dyson => (
            Coefficients { d0: 2.0 / nf, k0: 1.0 / nf, ..Default::default() },
            eigen_limit(0.0, 0.0, 1.0, 0.0),
        ),
        ModelKind::DysonDrifted => {
            let c = get(params.c, 0.0, "c")?;
            let eps = get(params.eps, DEFAULT_EPS, "eps")?;
            (
                Coefficients { b0: c, eps: pert(eps), freq: 1.0, d0: 2.0 / nf, k0: 1.0 / nf, ..Default::default() },
                eigen_limit(c, 0.0, 1.0, 0.0),
            )
        }
        ModelKind::Wishart => {
            let c = wishart_ratio(n_particles, &params)?;
            (
                Coefficients { b0: c, d1: 4.0 / nf, k1: 1.0 / nf, ..Default::default() },
                eigen_limit(c, 0.0, 0.0, 1.0),
            )
        }
        ModelKind::WishartDrifted => {
            let c = get(params.c, 1.0, "c")?;
            if c < 1.0 {
                return Err(Error::InvalidParams(format!("c = {c} must be >= 1")));
            }
            let eps = get(params.eps, DEFAULT_EPS, "eps")?;
            if eps.abs() / nf.powf(1.5) >= c {
                return Err(Error::InvalidParams("eps too large: drift must stay positive".into()));
            }
            (
                Coefficients { b0: c, eps: pert(eps), freq: 1.0, d1: 4.0 / nf, k1: 1.0 / nf, ..Default::default() },
                eigen_limit(c, 0.0, 0.0, 1.0),
            )
        }
        ModelKind::OrnsteinUhlenbeck => (
            Coefficients { b1: -0.5, d0: 1.0 / nf, k0: 0.5 / nf, ..Default::default() },
            eigen_limit(0.0, -0.5, 0.5, 0.0),
        ),
        ModelKind::OUDrifted => {
            let c = get(params.c, 0.0, "c")?;
            let eps = get(params.eps, DEFAULT_EPS, "eps")?;
            (
                Coefficients { b0: c, b1: -0.5, eps: pert(eps), freq: 1.0, d0: 1.0 / nf, k0: 0.5 / nf, ..Default::default() },
                eigen_limit(c, -0.5, 0.5, 0.0),
            )
        }
        ModelKind::GeneralizedWishart => {
            let a = get(params.a, 0.5, "a")?;
            let b = get(params.b, 0.0, "b")?;
            let b0 = get(params.b0, 0.0, "b0")?;
            let b1 = get(params.b1, 0.0, "b1")?;
            if a < 0.0 || b < 0.0 {
                return Err(Error::InvalidParams("a and b must be nonnegative".into()));
            }
            (
                Coefficients { b0, b1, d0: 4.0 * a / nf, d1: 4.0 * b / nf, k0: 2.0 * a / nf, k1: b / nf, ..Default::default() },
                eigen_limit(b0, b1, 2.0 * a, b),
            )
        }
        ModelKind::ParticleSystem => {
            let s = get(params.s, 0.0, "s")?;
            let b0 = get(params.b0, 0.0, "b0")?;
            let b1 = get(params.b1, 0.0, "b1")?;
            let h0 = get(params.h0, 0.0, "h0")?;
            let h1 = get(params.h1, 0.0, "h1")?;
            (
                Coefficients { b0, b1, d0: s * s / nf, k0: h0 / nf, k1: h1 / nf, ..Default::default() },
                LimitKernels { b0, b1, g0: h0, g1: h1, sigma_tilde: s, cov_multiplier: 1.0, particle_system: true },
            )
        }
    };
    Ok(ModelSpec { kind, n_particles, params, coeffs, limit })
}

fn eigen_limit(b0: f64, b1: f64, g0: f64, g1: f64) -> LimitKernels {
    LimitKernels { b0, b1, g0, g1, sigma_tilde: 0.0, cov_multiplier: 2.0, particle_system: false }
}

pub fn limit_kernels(spec: &ModelSpec) -> LimitKernels {
    spec.limit
}

impl ModelSpec {
    pub fn coefficients(&self) -> Coefficients {
        self.coeffs
    }

    pub fn limit(&self) -> LimitKernels {
        self.limit
    }

    pub fn diffusion_per_particle(&self, x: f64) -> f64 {
        self.coeffs.diffusion(x)
    }

    pub fn drift_b(&self, x: f64) -> f64 {
        self.coeffs.drift(x)
    }

    pub fn interaction_kernel(&self, x: f64, y: f64) -> f64 {
        self.coeffs.kernel(x, y)
    }

    /// Full drift of every particle. Positions must be strictly increasing.
    pub fn eval_drift(&self, positions: &[f64]) -> Result<Vec<f64>> {
        for (i, w) in positions.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::CollidingState(i, i + 1));
            }
        }
        let mut out = vec![0.0; positions.len()];
        pair_drift(&self.coeffs, positions, 0.0, &mut out);
        Ok(out)
    }
}

impl Dynamics for ModelSpec {
    fn n_particles(&self) -> usize {
        self.n_particles
    }

    fn coefficients_at(&self, _t: f64) -> Coefficients {
        self.coeffs
    }

    fn clamp_nonnegative(&self) -> bool {
        self.kind.is_wishart_like() || (self.coeffs.d0 == 0.0 && self.coeffs.d1 > 0.0)
    }
}

/// Writes `b(x_i) + sum_{j != i} K(x_i, x_j)/(x_i - x_j)` into `out` for a
/// sorted state. Gaps are floored at `floor` (pass 0 for the exact drift).
pub(crate) fn pair_drift(c: &Coefficients, x: &[f64], floor: f64, out: &mut [f64]) {
    const LANES: usize = 8;
    let n = x.len();
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = c.drift(xi);
    }
    let (k0, k1) = (c.k0, c.k1);
    for i in 0..n {
        let xi = x[i];
        let (head, tail) = out.split_at_mut(i + 1);
        let xs = &x[i + 1..];
        // Lane-wise partial sums keep the loop vectorizable.
        let mut lanes = [0.0f64; LANES];
        let mut xc = xs.chunks_exact(LANES);
        let mut oc = tail.chunks_exact_mut(LANES);
        for (xb, ob) in (&mut xc).zip(&mut oc) {
            for l in 0..LANES {
                let xj = xb[l];
                let r = (k0 + k1 * (xi + xj)) / (xj - xi).max(floor);
                lanes[l] -= r;
                ob[l] += r;
            }
        }
        for (&xj, oj) in xc.remainder().iter().zip(oc.into_remainder()) {
            let r = (k0 + k1 * (xi + xj)) / (xj - xi).max(floor);
            lanes[0] -= r;
            *oj += r;
        }
        let s4 = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
        head[i] += (s4[0] + s4[2]) + (s4[1] + s4[3]);
    }
}

/// Time-rescaled version `u(t) = x(t) / (t + a)^alpha` of a system.
///
/// With `s = (t + a)^alpha` the rescaled coefficients are
/// drift `b(s u)/s - alpha u/(t + a)`, kernel `K(s u, s v)/s^2` and squared
/// diffusion `D(s u)/s^2`. `alpha = 1` gives the Wishart scaling, `alpha = 1/2`
/// the Dyson one.
#[derive(Debug, Clone)]
pub struct TimeScaled {
    pub base: ModelSpec,
    pub a: f64,
    pub alpha: f64,
}

impl TimeScaled {
    pub fn new(base: ModelSpec, a: f64, alpha: f64) -> Result<Self> {
        if !(a > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParams("time scaling needs a > 0".into()));
        }
        Ok(Self { base, a, alpha })
    }

    /// The scaling used for a model kind (1 for Wishart kinds, 1/2 otherwise).
    pub fn natural(base: ModelSpec, a: f64) -> Result<Self> {
        let alpha = if base.kind.is_wishart_like() { 1.0 } else { 0.5 };
        Self::new(base, a, alpha)
    }

    pub fn scale(&self, t: f64) -> f64 {
        (t + self.a).powf(self.alpha)
    }
}

impl Dynamics for TimeScaled {
    fn n_particles(&self) -> usize {
        self.base.n_particles
    }

    fn coefficients_at(&self, t: f64) -> Coefficients {
        let c = self.base.coeffs;
        let s = self.scale(t);
        Coefficients {
            b0: c.b0 / s,
            b1: c.b1 - self.alpha / (t + self.a),
            eps: c.eps / s,
            freq: c.freq * s,
            d0: c.d0 / (s * s),
            d1: c.d1 / s,
            k0: c.k0 / (s * s),
            k1: c.k1 / s,
        }
    }

    fn clamp_nonnegative(&self) -> bool {
        self.base.clamp_nonnegative()
    }
}
