//! Euler–Maruyama integration of the particle SDEs.
//!
//! A proposed step is accepted only if it keeps the particles ordered with
//! every gap at least `min_gap` (and, for nonnegative systems, the lowest
//! particle at or above zero). Otherwise the step is split in two with a
//! Brownian bridge, so the realized path is still driven by the same
//! Brownian motion. Once `max_substeps` halvings are exhausted the step is
//! taken with the pair interaction saturated at `|K| / min_gap`, then
//! clamped and sorted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{pair_drift, Coefficients, Dynamics};
use crate::rng::{CounterRng, Domain, ReplicaKey};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub time: f64,
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub dt: f64,
    /// Collision guard; `None` means `1e-8 * (1 + spread of the initial state)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
    pub max_substeps: usize,
    /// `None` follows the model (on for Wishart kinds).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_nonnegative: Option<bool>,
    /// Take a saturated step instead of failing when halving is exhausted.
    pub saturate: bool,
    /// Also reject steps whose drift alone would move two neighbours by
    /// more than this fraction of their gap. Zero disables the check.
    pub drift_ratio: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { dt: 1e-3, min_gap: None, max_substeps: 20, clamp_nonnegative: None, saturate: true, drift_ratio: 0.0 }
    }
}

impl StepControl {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams("dt must be positive".into()));
        }
        if let Some(g) = self.min_gap {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParams("min_gap must be positive".into()));
            }
        }
        if self.max_substeps < 1 {
            return Err(Error::InvalidParams("max_substeps must be >= 1".into()));
        }
        if !(self.drift_ratio >= 0.0 && self.drift_ratio.is_finite()) {
            return Err(Error::InvalidParams("drift_ratio must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn resolved_min_gap(&self, init: &[f64]) -> f64 {
        self.min_gap.unwrap_or_else(|| {
            let spread = match (init.first(), init.last()) {
                (Some(a), Some(b)) => b - a,
                _ => 0.0,
            };
            1e-8 * (1.0 + spread.abs())
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub steps: u64,
    pub halvings: u64,
    pub saturated: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub grid: Vec<f64>,
    /// Row-major: state `k` occupies `positions[k*n..(k+1)*n]`.
    pub positions: Vec<f64>,
    /// Increment of step `k` (from `grid[k]` to `grid[k+1]`) at `noise[k*n..]`.
    pub noise: Option<Vec<f64>>,
    pub seed: u64,
    pub replica: u64,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.positions[k * self.n..(k + 1) * self.n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.n.max(1))
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn increment(&self, k: usize) -> Option<&[f64]> {
        self.noise.as_ref().map(|w| &w[k * self.n..(k + 1) * self.n])
    }

    /// Index of the last stamp not after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        match self.grid.partition_point(|&s| s <= t + 1e-12) {
            0 => 0,
            k => k - 1,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.n {
            s.push_str(&format!(",x{i}"));
        }
        s.push('\n');
        for (k, t) in self.grid.iter().enumerate() {
            s.push_str(&format!("{t:?}"));
            for x in self.state(k) {
                s.push_str(&format!(",{x:?}"));
            }
            s.push('\n');
        }
        s
    }
}

/// One raw Euler–Maruyama step followed by the optional clamp and a sort.
pub fn step(model: &dyn Dynamics, state: &ParticleState, dt: f64, noise: &[f64]) -> Result<ParticleState> {
    let x = &state.positions;
    if noise.len() != x.len() {
        return Err(Error::InvalidParams("noise length must equal N".into()));
    }
    for (i, w) in x.windows(2).enumerate() {
        if w[1] - w[0] <= 0.0 {
            return Err(Error::CollidingState(i, i + 1));
        }
    }
    let c = model.coefficients_at(state.time);
    let mut drift = vec![0.0; x.len()];
    pair_drift(&c, x, 0.0, &mut drift);
    let mut y: Vec<f64> = x
        .iter()
        .zip(&drift)
        .zip(noise)
        .map(|((&xi, &di), &wi)| xi + di * dt + c.diffusion(xi) * wi)
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(state.time));
    }
    if model.clamp_nonnegative() {
        for v in &mut y {
            *v = v.max(0.0);
        }
    }
    y.sort_by(f64::total_cmp);
    Ok(ParticleState { time: state.time + dt, positions: y })
}

fn validate_init(model: &dyn Dynamics, init: &[f64], clamp: bool) -> Result<()> {
    if init.len() != model.n_particles() {
        return Err(Error::InvalidInit(format!("expected {} positions, got {}", model.n_particles(), init.len())));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInit("non-finite position".into()));
    }
    let c = model.coefficients_at(0.0);
    let interacting = c.k0 != 0.0 || c.k1 != 0.0;
    for (i, w) in init.windows(2).enumerate() {
        if w[1] < w[0] || (interacting && w[1] == w[0]) {
            return Err(Error::InvalidInit(format!("positions {i} and {} are not strictly increasing", i + 1)));
        }
    }
    if clamp && init.first().is_some_and(|&v| v < 0.0) {
        return Err(Error::InvalidInit("negative position for a nonnegative system".into()));
    }
    Ok(())
}

struct System<'a> {
    model: &'a dyn Dynamics,
    clamp: bool,
    x: Vec<f64>,
    coeffs: Coefficients,
    drift: Vec<f64>,
    proposal: Vec<f64>,
    positions: Vec<f64>,
    noise: Option<Vec<f64>>,
}

struct Engine<'a> {
    systems: Vec<System<'a>>,
    streams: Vec<CounterRng>,
    grid: Vec<f64>,
    min_gap: f64,
    control: StepControl,
    stats: StepStats,
}

impl<'a> Engine<'a> {
    fn new(
        pairs: Vec<(&'a dyn Dynamics, &[f64])>,
        t0: f64,
        control: &StepControl,
        key: ReplicaKey,
        record_noise: bool,
        capacity: usize,
    ) -> Result<Self> {
        control.validate()?;
        let n = pairs[0].0.n_particles();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut systems = Vec::with_capacity(pairs.len());
        for (model, init) in pairs {
            let clamp = control.clamp_nonnegative.unwrap_or_else(|| model.clamp_nonnegative());
            validate_init(model, init, clamp)?;
            if let (Some(&a), Some(&b)) = (init.first(), init.last()) {
                lo = lo.min(a);
                hi = hi.max(b);
            }
            let mut positions = Vec::with_capacity(capacity * n);
            positions.extend_from_slice(init);
            systems.push(System {
                model,
                clamp,
                x: init.to_vec(),
                coeffs: Coefficients::default(),
                drift: vec![0.0; n],
                proposal: vec![0.0; n],
                positions,
                noise: record_noise.then(|| Vec::with_capacity(capacity * n)),
            });
        }
        let min_gap = control.resolved_min_gap(&if lo.is_finite() { vec![lo, hi] } else { vec![] });
        let streams = (0..n as u64).map(|i| key.stream(Domain::ParticleNoise, i)).collect();
        let mut grid = Vec::with_capacity(capacity);
        grid.push(t0);
        Ok(Self { systems, streams, grid, min_gap, control: control.clone(), stats: StepStats::default() })
    }

    fn compute_drifts(&mut self, t: f64) {
        let floor = self.min_gap;
        for s in &mut self.systems {
            s.coeffs = s.model.coefficients_at(t);
            pair_drift(&s.coeffs, &s.x, floor, &mut s.drift);
        }
    }

    /// Fills every proposal and reports whether all of them pass the guard.
    fn propose(&mut self, h: f64, dw: &[f64]) -> bool {
        let min_gap = self.min_gap;
        let ratio = self.control.drift_ratio;
        let mut ok = true;
        for s in &mut self.systems {
            if ok && ratio > 0.0 {
                ok = (1..s.x.len()).all(|i| h * (s.drift[i] - s.drift[i - 1]).abs() <= ratio * (s.x[i] - s.x[i - 1]));
            }
            let c = s.coeffs;
            for i in 0..s.x.len() {
                let xi = s.x[i];
                s.proposal[i] = xi + s.drift[i] * h + c.diffusion(xi) * dw[i];
            }
            if !ok {
                continue;
            }
            let y = &s.proposal;
            if y.iter().any(|v| !v.is_finite()) || (s.clamp && y.first().is_some_and(|&v| v < 0.0)) {
                ok = false;
                continue;
            }
            for i in 1..y.len() {
                let gap = y[i] - y[i - 1];
                if gap < min_gap {
                    ok = false;
                    break;
                }
            }
        }
        ok
    }

    fn accept(&mut self, t: f64, dw: &[f64]) {
        self.grid.push(t);
        for s in &mut self.systems {
            std::mem::swap(&mut s.x, &mut s.proposal);
            s.positions.extend_from_slice(&s.x);
            if let Some(noise) = &mut s.noise {
                noise.extend_from_slice(dw);
            }
        }
        self.stats.steps += 1;
    }

    /// Advances every system from `t` to `t + h` with increments `dw`.
    /// Drifts must already be evaluated at the current states.
    fn advance(&mut self, t: f64, h: f64, dw: &[f64], level: usize) -> Result<()> {
        if self.propose(h, dw) {
            self.accept(t + h, dw);
            return Ok(());
        }
        if level < self.control.max_substeps {
            self.stats.halvings += 1;
            let q = (h / 4.0).sqrt();
            let mut first = Vec::with_capacity(dw.len());
            let mut second = Vec::with_capacity(dw.len());
            for (w, r) in dw.iter().zip(&mut self.streams) {
                let a = 0.5 * w + q * r.normal();
                first.push(a);
                second.push(w - a);
            }
            let mid = t + 0.5 * h;
            self.advance(t, 0.5 * h, &first, level + 1)?;
            self.compute_drifts(mid);
            return self.advance(mid, 0.5 * h, &second, level + 1);
        }
        if !self.control.saturate {
            return Err(Error::MaxSubstepsExceeded(level, t));
        }
        // Gaps in the drift are already floored at min_gap, which caps each
        // pair term at |K| / min_gap.
        self.stats.saturated += 1;
        for s in &mut self.systems {
            if s.proposal.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t));
            }
            if s.clamp {
                for v in &mut s.proposal {
                    *v = v.max(0.0);
                }
            }
            s.proposal.sort_by(f64::total_cmp);
        }
        self.accept(t + h, dw);
        Ok(())
    }

    fn run(&mut self, t0: f64, horizon: f64) -> Result<()> {
        let dt = self.control.dt;
        let span = horizon - t0;
        if span <= 0.0 {
            return Ok(());
        }
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as u64;
        let mut dw = vec![0.0; self.streams.len()];
        for k in 0..steps {
            let t = t0 + k as f64 * dt;
            let t_next = if k + 1 == steps { horizon } else { t0 + (k + 1) as f64 * dt };
            let h = t_next - t;
            let sh = h.sqrt();
            for (w, r) in dw.iter_mut().zip(&mut self.streams) {
                *w = sh * r.normal();
            }
            self.compute_drifts(t);
            self.advance(t, h, &dw, 0)?;
            // Land exactly on the base grid despite rounding in the halving.
            if let Some(last) = self.grid.last_mut() {
                *last = t_next;
            }
        }
        Ok(())
    }

    fn finish(self, key: ReplicaKey) -> Vec<Trajectory> {
        let n = self.streams.len();
        let grid = self.grid;
        let stats = self.stats;
        self.systems
            .into_iter()
            .map(|s| Trajectory {
                n,
                grid: grid.clone(),
                positions: s.positions,
                noise: s.noise,
                seed: key.seed,
                replica: key.replica,
                stats,
            })
            .collect()
    }
}

fn capacity_hint(t0: f64, horizon: f64, dt: f64) -> usize {
    (((horizon - t0) / dt).max(0.0) as usize).saturating_add(2).min(1 << 22)
}

/// Simulates one replica on `[0, horizon]`.
pub fn simulate(
    model: &dyn Dynamics,
    init: &[f64],
    horizon: f64,
    control: &StepControl,
    key: impl Into<ReplicaKey>,
    record_noise: bool,
) -> Result<Trajectory> {
    simulate_from(model, init, 0.0, horizon, control, key, record_noise)
}

/// Simulates one replica on `[t0, horizon]`; coefficients see absolute time.
pub fn simulate_from(
    model: &dyn Dynamics,
    init: &[f64],
    t0: f64,
    horizon: f64,
    control: &StepControl,
    key: impl Into<ReplicaKey>,
    record_noise: bool,
) -> Result<Trajectory> {
    let key = key.into();
    if !(horizon >= t0) || !t0.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidParams(format!("horizon {horizon} precedes start {t0}")));
    }
    let cap = capacity_hint(t0, horizon, control.dt);
    let mut e = Engine::new(vec![(model, init)], t0, control, key, record_noise, cap)?;
    e.run(t0, horizon)?;
    Ok(e.finish(key).pop().expect("one system"))
}

/// Runs two systems on the same Brownian increments and the same realized
/// grid. Both must share diffusion and interaction.
#[allow(clippy::too_many_arguments)]
pub fn coupled_simulate(
    low: &dyn Dynamics,
    high: &dyn Dynamics,
    init_low: &[f64],
    init_high: &[f64],
    t0: f64,
    horizon: f64,
    control: &StepControl,
    key: impl Into<ReplicaKey>,
) -> Result<(Trajectory, Trajectory)> {
    let key = key.into();
    if low.n_particles() != high.n_particles() {
        return Err(Error::MismatchedModels("particle counts differ".into()));
    }
    for t in [t0, 0.5 * (t0 + horizon), horizon] {
        if !low.coefficients_at(t).same_noise_and_kernel(&high.coefficients_at(t)) {
            return Err(Error::MismatchedModels(format!("diffusion or interaction differ at t = {t}")));
        }
    }
    let cap = capacity_hint(t0, horizon, control.dt);
    let mut e = Engine::new(vec![(low, init_low), (high, init_high)], t0, control, key, false, cap)?;
    e.run(t0, horizon)?;
    let mut v = e.finish(key);
    let hi = v.pop().expect("two systems");
    let lo = v.pop().expect("two systems");
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub fraction: f64,
    pub compared: usize,
    /// `(time, particle index)` of the first `low > high` pair.
    pub first_violation: Option<(f64, usize)>,
}

impl OrderingReport {
    pub fn clean(&self) -> bool {
        self.first_violation.is_none()
    }
}

pub fn check_ordering(low: &Trajectory, high: &Trajectory) -> Result<OrderingReport> {
    if low.grid != high.grid || low.n != high.n {
        return Err(Error::GridMismatch);
    }
    let mut good = 0usize;
    let mut first = None;
    for (k, t) in low.grid.iter().enumerate() {
        for (i, (a, b)) in low.state(k).iter().zip(high.state(k)).enumerate() {
            if a <= b {
                good += 1;
            } else if first.is_none() {
                first = Some((*t, i));
            }
        }
    }
    let total = low.grid.len() * low.n;
    Ok(OrderingReport {
        fraction: if total == 0 { 1.0 } else { good as f64 / total as f64 },
        compared: total,
        first_violation: first,
    })
}
