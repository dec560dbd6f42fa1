//! Moment curves of the limiting measure.
//!
//! With drift `b0 + b1 x` and interaction `g0 + g1 (x + y)` the limit equation
//! closes degree by degree:
//!
//! ```text
//! dm_k/dt = k (b0 m_{k-1} + b1 m_k)
//!         + k/2 sum_{j=0}^{k-2} [ g0 m_j m_{k-2-j} + g1 (m_{j+1} m_{k-2-j} + m_j m_{k-1-j}) ]
//! ```
//!
//! which is integrated with classical RK4.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::LimitKernels;

/// Largest supported degree.
pub const MAX_DEGREE: usize = 12;
pub const DEFAULT_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    HierarchyODE,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub max_degree: usize,
    pub grid: Vec<f64>,
    /// `values[s][k]` is `m_k(grid[s])`.
    pub values: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl MomentCurve {
    /// `m_k(t)`, linear between stamps and constant outside the grid.
    pub fn at(&self, k: usize, t: f64) -> Result<f64> {
        if k > self.max_degree {
            return Err(Error::DegreeMissing(k));
        }
        let g = &self.grid;
        if t <= g[0] {
            return Ok(self.values[0][k]);
        }
        let last = g.len() - 1;
        if t >= g[last] {
            return Ok(self.values[last][k]);
        }
        let i = g.partition_point(|&s| s <= t) - 1;
        let w = (t - g[i]) / (g[i + 1] - g[i]);
        Ok((1.0 - w) * self.values[i][k] + w * self.values[i + 1][k])
    }

    /// All degrees `0..=max_degree` at time `t`.
    pub fn moments_at(&self, t: f64) -> Vec<f64> {
        (0..=self.max_degree).map(|k| self.at(k, t).expect("degree in range")).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for k in 0..=self.max_degree {
            s.push_str(&format!(",m{k}"));
        }
        s.push('\n');
        for (t, row) in self.grid.iter().zip(&self.values) {
            s.push_str(&format!("{t:?}"));
            for v in row {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Right-hand side of the hierarchy for degrees `0..=K`.
pub fn hierarchy_rhs(l: &LimitKernels, m: &[f64], out: &mut [f64]) {
    let kmax = m.len() - 1;
    out[0] = 0.0;
    for k in 1..=kmax {
        let kf = k as f64;
        let mut v = kf * (l.b0 * m[k - 1] + l.b1 * m[k]);
        if k >= 2 {
            let mut s = 0.0;
            for j in 0..=k - 2 {
                s += l.g0 * m[j] * m[k - 2 - j] + l.g1 * (m[j + 1] * m[k - 2 - j] + m[j] * m[k - 1 - j]);
            }
            v += 0.5 * kf * s;
        }
        out[k] = v;
    }
}

/// Integrates the hierarchy for degrees `0..=k_max` from `init` (which must
/// supply `m_0..=m_{k_max}`) on `[0, horizon]`.
pub fn evolve_moments(l: &LimitKernels, init: &[f64], horizon: f64, resolution: f64, k_max: usize) -> Result<MomentCurve> {
    if k_max > MAX_DEGREE {
        return Err(Error::DegreeMissing(k_max));
    }
    if init.len() < k_max + 1 {
        return Err(Error::DegreeOverflow { needed: k_max + 1, given: init.len() });
    }
    if !(resolution > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidParams("resolution must be positive and horizon nonnegative".into()));
    }
    let dim = k_max + 1;
    let mut m = init[..dim].to_vec();
    m[0] = 1.0;
    let steps = if horizon == 0.0 { 0 } else { ((horizon / resolution) - 1e-9).ceil().max(1.0) as usize };
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    grid.push(0.0);
    values.push(m.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for s in 0..steps {
        let t = s as f64 * resolution;
        let t_next = if s + 1 == steps { horizon } else { (s + 1) as f64 * resolution };
        let h = t_next - t;
        hierarchy_rhs(l, &m, &mut k1);
        for i in 0..dim {
            tmp[i] = m[i] + 0.5 * h * k1[i];
        }
        hierarchy_rhs(l, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = m[i] + 0.5 * h * k2[i];
        }
        hierarchy_rhs(l, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = m[i] + h * k3[i];
        }
        hierarchy_rhs(l, &tmp, &mut k4);
        for i in 0..dim {
            m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        grid.push(t_next);
        values.push(m.clone());
    }
    Ok(MomentCurve { max_degree: k_max, grid, values, provenance: Provenance::HierarchyODE })
}

/// `m_0..=m_k_max` of the empirical measure of `positions`.
pub fn empirical_moment_vector(positions: &[f64], k_max: usize) -> Vec<f64> {
    let n = positions.len() as f64;
    let mut out = vec![0.0; k_max + 1];
    for &x in positions {
        let mut p = 1.0;
        for o in out.iter_mut() {
            *o += p;
            p *= x;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn catalan(j: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..j {
        c = c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64;
    }
    c
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Moments of the semicircle law with variance `t`.
pub fn semicircle_moments(k_max: usize, t: f64) -> Vec<f64> {
    (0..=k_max)
        .map(|k| if k % 2 == 1 { 0.0 } else { catalan(k / 2) * t.powi((k / 2) as i32) })
        .collect()
}

/// Moments of the Marchenko–Pastur law with ratio `c`, dilated by `t`.
pub fn mp_moments(k_max: usize, c: f64, t: f64) -> Vec<f64> {
    (0..=k_max)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            let s: f64 = (0..k).map(|r| binom(k, r) * binom(k - 1, r) * c.powi(r as i32 + 1) / (r as f64 + 1.0)).sum();
            t.powi(k as i32) * s
        })
        .collect()
}

/// A curve from a closed form evaluated on a grid.
pub fn closed_form_curve(grid: &[f64], k_max: usize, f: impl Fn(f64) -> Vec<f64>) -> MomentCurve {
    MomentCurve {
        max_degree: k_max,
        grid: grid.to_vec(),
        values: grid.iter().map(|&t| f(t)).collect(),
        provenance: Provenance::ClosedForm,
    }
}
