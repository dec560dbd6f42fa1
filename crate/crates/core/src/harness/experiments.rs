//! The seven experiment kinds.

use std::time::Instant;

use serde_json::{json, Value};

use super::config::{Experiment, ExperimentConfig, InitSection};
use super::report::{Check, RunReport, Timing};
use crate::ensembles::{ensemble_for, entrance_state, make_initial, sample, EnsembleKind};
use crate::error::{Error, Result};
use crate::fluctuations::{
    centered_process, covariance_kernel, family_covariance, fluctuation_table, martingale_part, recursion_map,
    synthesize_gaussian_family, FLUCTUATION_CSV_HEADER,
};
use crate::limits::{empirical_moment_vector, evolve_moments, mp_moments, semicircle_moments, MomentCurve};
use crate::matrix::{simulate_matrix, MatrixKind, MatrixRun};
use crate::models::{build_model, Dynamics, ModelKind, ModelSpec, TimeScaled};
use crate::par::map_replicas;
use crate::rng::{Domain, ReplicaKey};
use crate::sde::{check_ordering, coupled_simulate, simulate_from, StepStats, Trajectory};
use crate::stats::{estimate_covariance, ks_normal, ks_two_sample, mean, pairwise_sum, std_error_of_mean, variance, TestReport};

/// Tolerance, in standard errors, of every mean and covariance check.
pub const SE_TOLERANCE: f64 = 3.0;
/// Tolerance of closed-form moment comparisons.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-6;

/// A finished run: the report plus named text outputs relative to the
/// output directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub files: Vec<(String, String)>,
}

impl RunArtifacts {
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        for (name, contents) in &self.files {
            super::report::write_file(dir, name, contents)?;
        }
        self.report.write(dir)
    }
}

struct Outcome {
    checks: Vec<Check>,
    summary: Value,
    files: Vec<(String, String)>,
    replicas: usize,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let started = Instant::now();
    let out = match config.experiment {
        Experiment::Simulate => run_simulate(config)?,
        Experiment::Moments => run_moments(config)?,
        Experiment::Clt => run_clt(config)?,
        Experiment::Compare => run_compare(config)?,
        Experiment::Stationarity => run_stationarity(config)?,
        Experiment::Identity => run_identity(config)?,
        Experiment::OracleMatch => run_oracle(config)?,
    };
    let wall = started.elapsed().as_secs_f64();
    let timing = Timing { wall_seconds: wall, replicas_per_second: if wall > 0.0 { out.replicas as f64 / wall } else { 0.0 } };
    let report = RunReport::new(config.clone(), out.checks, out.summary, timing);
    Ok(RunArtifacts { report, files: out.files })
}

fn tag(config: &ExperimentConfig, replica: u64) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Replica { replica, seed: config.seed, source: Box::new(e) }
}

/// Start time and state of one replica.
fn start_state(config: &ExperimentConfig, spec: &ModelSpec, key: ReplicaKey) -> Result<(f64, Vec<f64>)> {
    let n = &config.numerics;
    match &config.init {
        InitSection::Zero => Ok((n.entrance_time, entrance_state(spec, n.entrance_time, n.sampler, key)?)),
        other => Ok((0.0, make_initial(&other.to_kind(), spec, n.sampler, key)?)),
    }
}

fn ratio_of(spec: &ModelSpec) -> Option<f64> {
    match ensemble_for(spec) {
        EnsembleKind::ScaledLaguerre(p) => Some(p as f64 / spec.n_particles as f64),
        EnsembleKind::ScaledGOE => None,
    }
}

/// Initial moments `m_0..=m_k` of the limit measure.
fn initial_moments(config: &ExperimentConfig, spec: &ModelSpec, k: usize) -> Result<Vec<f64>> {
    Ok(match &config.init {
        InitSection::Zero => {
            let mut m = vec![0.0; k + 1];
            m[0] = 1.0;
            m
        }
        InitSection::Ensemble => match ratio_of(spec) {
            Some(c) => mp_moments(k, c, 1.0),
            None => semicircle_moments(k, 1.0),
        },
        other => {
            let x = make_initial(&other.to_kind(), spec, config.numerics.sampler, ReplicaKey::new(config.seed, 0))?;
            empirical_moment_vector(&x, k)
        }
    })
}

/// Closed-form moments at time `t` where they are known.
fn closed_form(config: &ExperimentConfig, spec: &ModelSpec, k: usize) -> Option<Box<dyn Fn(f64) -> Vec<f64>>> {
    let start = match config.init {
        InitSection::Zero => 0.0,
        InitSection::Ensemble => 1.0,
        _ => return None,
    };
    match spec.kind {
        ModelKind::Dyson => Some(Box::new(move |t| semicircle_moments(k, start + t))),
        ModelKind::Wishart => {
            let c = spec.limit().b0;
            Some(Box::new(move |t| mp_moments(k, c, start + t)))
        }
        ModelKind::OrnsteinUhlenbeck => Some(Box::new(move |t| {
            let decay = (-t).exp();
            semicircle_moments(k, start * decay + 0.5 * (1.0 - decay))
        })),
        _ => None,
    }
}

fn limit_curve(config: &ExperimentConfig, spec: &ModelSpec, k: usize) -> Result<MomentCurve> {
    let init = initial_moments(config, spec, k)?;
    evolve_moments(&spec.limit(), &init, config.numerics.horizon, config.numerics.resolution, k)
}

fn stats_json(s: &StepStats) -> Value {
    json!({"steps": s.steps, "halvings": s.halvings, "saturated": s.saturated})
}

fn add_stats(total: &mut StepStats, s: &StepStats) {
    total.steps += s.steps;
    total.halvings += s.halvings;
    total.saturated += s.saturated;
}

fn moments_of(x: &[f64], k: usize) -> Vec<f64> {
    empirical_moment_vector(x, k)
}

fn run_simulate(config: &ExperimentConfig) -> Result<Outcome> {
    let spec = config.model.build()?;
    let control = config.numerics.step_control();
    let runs = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, r);
        let (t0, init) = start_state(config, &spec, key).map_err(tag(config, r))?;
        let traj = simulate_from(&spec, &init, t0, config.numerics.horizon, &control, key, false).map_err(tag(config, r))?;
        Ok((traj.to_csv(), traj.stats))
    })?;
    let mut total = StepStats::default();
    let mut files = Vec::with_capacity(runs.len());
    for (r, (csv, stats)) in runs.into_iter().enumerate() {
        add_stats(&mut total, &stats);
        files.push((format!("trajectories/replica_{r:05}.csv"), csv));
    }
    let check = TestReport::flag("completed", config.replicas as f64, true, "all replicas finished");
    Ok(Outcome { checks: vec![Check::mandatory(check)], summary: json!({"steps": stats_json(&total)}), files, replicas: config.replicas })
}

fn run_moments(config: &ExperimentConfig) -> Result<Outcome> {
    let spec = config.model.build()?;
    let k = config.numerics.max_degree().max(1);
    let curve = limit_curve(config, &spec, k)?;
    let mut checks = vec![Check::mandatory(TestReport::flag(
        "finite",
        curve.values.len() as f64,
        curve.values.iter().flatten().all(|v| v.is_finite()),
        "every moment is finite",
    ))];
    let mut summary = json!({"final": curve.moments_at(config.numerics.horizon)});
    if let Some(f) = closed_form(config, &spec, k) {
        let err = curve
            .grid
            .iter()
            .zip(&curve.values)
            .flat_map(|(&t, row)| row.iter().zip(f(t)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        checks.push(Check::mandatory(TestReport::flag(
            "closed_form",
            err,
            err <= CLOSED_FORM_TOLERANCE,
            format!("max abs deviation from closed form, tolerance {CLOSED_FORM_TOLERANCE:e}"),
        )));
        summary["closed_form_error"] = json!(err);
    }
    Ok(Outcome { checks, summary, files: vec![("moments.csv".into(), curve.to_csv())], replicas: 0 })
}

struct CltReplica {
    l0: Vec<f64>,
    lt: Vec<f64>,
    csv: String,
    stats: StepStats,
}

fn run_clt(config: &ExperimentConfig) -> Result<Outcome> {
    let spec = config.model.build()?;
    let lk = spec.limit();
    let num = &config.numerics;
    let degrees = num.degrees.clone();
    let k = num.max_degree();
    let curve = limit_curve(config, &spec, 2 * k)?;
    let control = num.step_control();
    let centered = config.clt.centered;
    let checkpoints = num.checkpoint_times();

    let runs = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, r);
        let one = || -> Result<CltReplica> {
            let (t0, init) = start_state(config, &spec, key)?;
            let traj = simulate_from(&spec, &init, t0, num.horizon, &control, key, centered)?;
            let table = fluctuation_table(&traj, &curve, k)?;
            let last = traj.len() - 1;
            let stamps: Vec<usize> = checkpoints.iter().filter(|&&t| t >= t0).map(|&t| traj.index_at(t)).collect();
            let mut csv = String::new();
            let qm: Vec<Option<(Vec<f64>, Vec<f64>)>> = degrees
                .iter()
                .map(|&d| {
                    if centered {
                        Ok(Some((centered_process(&traj, &curve, &lk, d)?, martingale_part(&traj, &spec, d)?)))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            for (di, &d) in degrees.iter().enumerate() {
                for &s in &stamps {
                    let (q, m) = match &qm[di] {
                        Some((q, m)) => (format!("{:?}", q[s]), format!("{:?}", m[s])),
                        None => (String::new(), String::new()),
                    };
                    csv.push_str(&format!("{r},{d},{:?},{:?},{q},{m}\n", traj.grid[s], table[s][d]));
                }
            }
            Ok(CltReplica { l0: table[0].clone(), lt: degrees.iter().map(|&d| table[last][d]).collect(), csv, stats: traj.stats })
        };
        one().map_err(tag(config, r))
    })?;

    let m = runs.len();
    let mut total = StepStats::default();
    let mut csv = String::from(FLUCTUATION_CSV_HEADER);
    for run in &runs {
        add_stats(&mut total, &run.stats);
        csv.push_str(&run.csv);
    }
    let samples: Vec<Vec<f64>> = runs.iter().map(|r| r.lt.clone()).collect();

    // Prediction: the limit recursion from time 0, as an affine map of the
    // Gaussian family and of the initial fluctuation.
    let intervals = config.clt.synth_intervals;
    let grid: Vec<f64> = (0..=intervals).map(|i| num.horizon * i as f64 / intervals as f64).collect();
    let fam_degrees: Vec<usize> = (1..=k).collect();
    let kernel = covariance_kernel(&lk, &curve);
    let fam_cov = family_covariance(&kernel, &fam_degrees, &grid)?;
    let map = recursion_map(&lk, &curve, &grid, k)?;
    let zero_init = config.init == InitSection::Zero;
    let l0s: Vec<Vec<f64>> = runs.iter().map(|r| r.l0.clone()).collect();
    let l0_mean: Vec<f64> = (0..=k).map(|j| mean(&l0s.iter().map(|v| v[j]).collect::<Vec<_>>())).collect();
    let l0_cov = if zero_init || m < 2 { None } else { Some(estimate_covariance(&l0s, config.seed)?.cov) };
    let predicted = map.covariance(&fam_cov, l0_cov.as_deref(), &degrees);
    let predicted_mean: Vec<f64> = degrees
        .iter()
        .map(|&d| map.offset[d] + if zero_init { 0.0 } else { map.gain_l0[d].iter().zip(&l0_mean).map(|(a, b)| a * b).sum() })
        .collect();

    let mut checks = Vec::new();
    let est = estimate_covariance(&samples, ReplicaKey::new(config.seed, 0).derive_seed(Domain::Bootstrap as u64))?;
    for (i, &a) in degrees.iter().enumerate() {
        for (j, &b) in degrees.iter().enumerate().skip(i) {
            let name = if i == j { format!("var_L{a}") } else { format!("cov_L{a}_L{b}") };
            checks.push(Check::mandatory(TestReport::z_check(name, est.cov[i][j], predicted[i][j], est.se[i][j], SE_TOLERANCE, m)));
        }
    }
    let columns: Vec<Vec<f64>> = (0..degrees.len()).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    for (i, &d) in degrees.iter().enumerate() {
        let col = &columns[i];
        let mut ks = ks_normal(col, mean(col), variance(col).sqrt())?;
        ks.name = format!("gaussian_L{d}");
        checks.push(Check::mandatory(ks.with_note("standardized by the sample mean and deviation")));
    }
    // Synthesized limit draws through the recursion.
    let draws = config.clt.synth_draws;
    let fam = synthesize_gaussian_family(&kernel, &fam_degrees, &grid, draws, ReplicaKey::new(config.seed, 0).derive_seed(Domain::Gaussian as u64))?;
    let mut pick = ReplicaKey::new(config.seed, 0).stream(Domain::Bootstrap, 1);
    let zero_l0 = vec![0.0; k + 1];
    let synth: Vec<Vec<f64>> = fam
        .samples
        .iter()
        .map(|g| {
            let l0 = if zero_init { &zero_l0 } else { &l0s[((pick.uniform() * m as f64) as usize).min(m - 1)] };
            map.apply(g, l0)
        })
        .collect();
    if draws >= 20 {
        for (i, &d) in degrees.iter().enumerate() {
            let s: Vec<f64> = synth.iter().map(|v| v[d]).collect();
            let mut ks = ks_two_sample(&s, &columns[i])?;
            ks.name = format!("recursion_L{d}");
            checks.push(Check::mandatory(ks));
        }
    }
    for (i, &d) in degrees.iter().enumerate() {
        let col = &columns[i];
        checks.push(Check::advisory(TestReport::z_check(format!("mean_L{d}"), mean(col), predicted_mean[i], std_error_of_mean(col), SE_TOLERANCE, m)));
    }
    let summary = json!({
        "degrees": degrees,
        "predicted_covariance": predicted,
        "estimated_covariance": est.cov,
        "bootstrap_se": est.se,
        "predicted_mean": predicted_mean,
        "sample_mean": columns.iter().map(|c| mean(c)).collect::<Vec<_>>(),
        "steps": stats_json(&total),
    });
    Ok(Outcome { checks, summary, files: vec![("fluctuations.csv".into(), csv), ("moments.csv".into(), curve.to_csv())], replicas: m })
}

fn run_compare(config: &ExperimentConfig) -> Result<Outcome> {
    let low = config.model.build()?;
    let high_kind = config.compare.high_kind.unwrap_or(low.kind);
    let high = build_model(high_kind, low.n_particles, config.compare.high_params.clone())?;
    let (cl, ch) = (low.coefficients(), high.coefficients());
    let equal_drifts = cl.b0 == ch.b0 && cl.b1 == ch.b1 && cl.eps == ch.eps && cl.freq == ch.freq;
    let base = config.numerics.step_control();
    let refined = crate::sde::StepControl { dt: config.compare.refine_dt, ..base.clone() };
    let horizon = config.numerics.horizon;
    let runs = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, r);
        let one = || -> Result<(f64, bool, Option<bool>)> {
            let (t0, init) = start_state(config, &low, key)?;
            let (a, b) = coupled_simulate(&low, &high, &init, &init, t0, horizon, &base, key)?;
            let rep = check_ordering(&a, &b)?;
            if rep.clean() {
                return Ok((rep.fraction, true, None));
            }
            let (a, b) = coupled_simulate(&low, &high, &init, &init, t0, horizon, &refined, key)?;
            Ok((rep.fraction, false, Some(check_ordering(&a, &b)?.clean())))
        };
        one().map_err(tag(config, r))
    })?;
    let m = runs.len();
    let clean = runs.iter().filter(|r| r.1).count();
    let needed = (config.compare.clean_fraction * m as f64 - 1e-9).ceil() as usize;
    let violating: Vec<usize> = runs.iter().enumerate().filter(|(_, r)| !r.1).map(|(i, _)| i).collect();
    let fixed = runs.iter().filter(|r| r.2 == Some(true)).count();
    let min_fraction = runs.iter().map(|r| r.0).fold(1.0, f64::min);
    let mut first = TestReport::flag("ordered_seeds", clean as f64 / m as f64, clean >= needed, format!("{clean} of {m} seeds ordered throughout, need {needed}"));
    if equal_drifts {
        first = first.with_note("degenerate: equal drifts");
    }
    let second = TestReport::flag(
        "refined_ordering",
        fixed as f64,
        fixed == violating.len(),
        format!("{fixed} of {} violating seeds ordered at dt = {}", violating.len(), config.compare.refine_dt),
    );
    let summary = json!({
        "min_ordering_fraction": min_fraction,
        "violating_seeds": violating,
        "equal_drifts": equal_drifts,
    });
    Ok(Outcome { checks: vec![Check::mandatory(first), Check::mandatory(second)], summary, files: vec![], replicas: m })
}

fn run_stationarity(config: &ExperimentConfig) -> Result<Outcome> {
    let spec = config.model.build()?;
    let opts = &config.stationarity;
    let kmax = opts.max_degree;
    let control = config.numerics.step_control();
    let ou = spec.kind.is_ou_like();
    let scaled = TimeScaled::natural(spec.clone(), opts.offset)?;
    let dynamics: &dyn Dynamics = if ou { &spec } else { &scaled };
    let c = spec.limit().b0;
    let horizon = opts.times.iter().copied().fold(0.0, f64::max);
    let runs = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, r);
        let one = || -> Result<Vec<Vec<f64>>> {
            let mut init = sample(ensemble_for(&spec), spec.n_particles, config.numerics.sampler, key)?.positions;
            if ou {
                // The OU stationary law: GOE with half the variance, centered at 2c.
                init.iter_mut().for_each(|x| *x = *x * 0.5f64.sqrt() + 2.0 * c);
            }
            let traj = simulate_from(dynamics, &init, 0.0, horizon, &control, key, false)?;
            let m0 = moments_of(traj.state(0), kmax);
            Ok(opts
                .times
                .iter()
                .map(|&t| moments_of(traj.state(traj.index_at(t)), kmax).iter().zip(&m0).map(|(a, b)| a - b).collect())
                .collect())
        };
        one().map_err(tag(config, r))
    })?;
    let m = runs.len();
    let mut checks = Vec::new();
    let mut drift = Vec::new();
    for (ti, &t) in opts.times.iter().enumerate() {
        for k in 1..=kmax {
            let d: Vec<f64> = runs.iter().map(|r| r[ti][k]).collect();
            let (mu, se) = (mean(&d), std_error_of_mean(&d));
            drift.push(json!({"t": t, "degree": k, "drift": mu, "se": se}));
            checks.push(Check::mandatory(TestReport::z_check(format!("m{k}_t{t}"), mu, 0.0, se, SE_TOLERANCE, m)));
        }
    }
    Ok(Outcome { checks, summary: json!({"moment_drift": drift}), files: vec![], replicas: m })
}

fn top_at(traj: &Trajectory, t: f64) -> f64 {
    *traj.state(traj.index_at(t)).last().expect("non-empty state")
}

fn run_identity(config: &ExperimentConfig) -> Result<Outcome> {
    let opts = &config.identity;
    let num = &config.numerics;
    let control = num.step_control();
    let n = config.model.n_particles;
    let m = config.replicas as u64;
    let zero_start = |spec: &ModelSpec, key: ReplicaKey, horizon: f64| -> Result<Trajectory> {
        let init = entrance_state(spec, num.entrance_time, num.sampler, key)?;
        simulate_from(spec, &init, num.entrance_time, horizon, &control, key, false)
    };
    let mut checks = Vec::new();
    let mut summary = json!({});
    if opts.self_similarity {
        let spec = config.model.build()?;
        let alpha = if spec.kind.is_wishart_like() { 1.0 } else { 0.5 };
        let factor = (opts.early_time / num.horizon).powf(alpha);
        let early = map_replicas(config.replicas, |r| {
            let key = ReplicaKey::new(config.seed, r);
            zero_start(&spec, key, opts.early_time).map(|t| top_at(&t, opts.early_time)).map_err(tag(config, r))
        })?;
        let late = map_replicas(config.replicas, |r| {
            let key = ReplicaKey::new(config.seed, m + r);
            zero_start(&spec, key, num.horizon).map(|t| factor * top_at(&t, num.horizon)).map_err(tag(config, m + r))
        })?;
        let mut ks = ks_two_sample(&early, &late)?;
        ks.name = "self_similarity".into();
        checks.push(Check::mandatory(ks.with_note(format!("top particle at {} vs {factor:.6} x top at {}", opts.early_time, num.horizon))));
        summary["self_similarity"] = json!({"mean_early": mean(&early), "mean_scaled_late": mean(&late)});
    }
    if opts.time_change {
        let ou = build_model(ModelKind::OrnsteinUhlenbeck, n, Default::default())?;
        let dyson = build_model(ModelKind::Dyson, n, Default::default())?;
        let t = opts.ou_time;
        let td = t.exp() - 1.0;
        let scale = 2f64.sqrt() * (0.5 * t).exp();
        if !(num.entrance_time < t.min(td)) {
            return Err(Error::config("numerics.entrance_time", "must precede both identity times"));
        }
        let a = map_replicas(config.replicas, |r| {
            let key = ReplicaKey::new(config.seed, 2 * m + r);
            zero_start(&ou, key, t).map(|tr| scale * top_at(&tr, t)).map_err(tag(config, 2 * m + r))
        })?;
        let b = map_replicas(config.replicas, |r| {
            let key = ReplicaKey::new(config.seed, 3 * m + r);
            zero_start(&dyson, key, td).map(|tr| top_at(&tr, td)).map_err(tag(config, 3 * m + r))
        })?;
        let mut ks = ks_two_sample(&a, &b)?;
        ks.name = "time_change".into();
        checks.push(Check::mandatory(ks.with_note(format!("sqrt(2) e^(t/2) x OU top at {t} vs Dyson top at {td:.6}"))));
        summary["time_change"] = json!({"mean_ou_scaled": mean(&a), "mean_dyson": mean(&b)});
    }
    Ok(Outcome { checks, summary, files: vec![], replicas: 4 * config.replicas })
}

fn run_oracle(config: &ExperimentConfig) -> Result<Outcome> {
    let spec = config.model.build()?;
    let num = &config.numerics;
    let kmax = config.oracle.max_degree;
    let cps: Vec<f64> = num.checkpoints.clone().unwrap_or_else(|| {
        let c = config.oracle.checkpoints;
        (1..=c).map(|i| num.horizon * i as f64 / c as f64).collect()
    });
    let zero = config.init == InitSection::Zero;
    if zero && cps.iter().any(|&t| t < num.entrance_time) {
        return Err(Error::config("numerics.checkpoints", "checkpoints must follow the entrance time"));
    }
    let kind = match spec.kind {
        ModelKind::Dyson => MatrixKind::SymmetricBM,
        ModelKind::Wishart => MatrixKind::Wishart,
        _ => MatrixKind::OU,
    };
    let p = match ensemble_for(&spec) {
        EnsembleKind::ScaledLaguerre(p) => p,
        EnsembleKind::ScaledGOE => 0,
    };
    let control = num.step_control();
    let m = config.replicas as u64;
    let particle = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, r);
        let one = || -> Result<Vec<Vec<f64>>> {
            let (t0, init) = start_state(config, &spec, key)?;
            let traj = simulate_from(&spec, &init, t0, num.horizon, &control, key, false)?;
            Ok(cps.iter().map(|&t| moments_of(traj.state(traj.index_at(t)), kmax)).collect())
        };
        one().map_err(tag(config, r))
    })?;
    let matrix = map_replicas(config.replicas, |r| {
        let key = ReplicaKey::new(config.seed, m + r);
        let one = || -> Result<Vec<Vec<f64>>> {
            let init = if zero { None } else { Some(start_state(config, &spec, key)?.1) };
            let run = MatrixRun { kind, n: spec.n_particles, p, horizon: num.horizon, dt: num.dt, checkpoints: Some(cps.clone()), init };
            let traj = simulate_matrix(&run, key)?;
            Ok(cps.iter().map(|&t| moments_of(traj.state(traj.index_at(t)), kmax)).collect())
        };
        one().map_err(tag(config, m + r))
    })?;
    let mut checks = Vec::new();
    let mut table = Vec::new();
    for (ci, &t) in cps.iter().enumerate() {
        for k in 1..=kmax {
            let a: Vec<f64> = particle.iter().map(|v| v[ci][k]).collect();
            let b: Vec<f64> = matrix.iter().map(|v| v[ci][k]).collect();
            let se = (std_error_of_mean(&a).powi(2) + std_error_of_mean(&b).powi(2)).sqrt();
            let diff = pairwise_sum(&a) / a.len() as f64 - pairwise_sum(&b) / b.len() as f64;
            table.push(json!({"t": t, "degree": k, "particle": mean(&a), "matrix": mean(&b), "se": se}));
            checks.push(Check::mandatory(TestReport::z_check(format!("m{k}_t{t}"), diff, 0.0, se, SE_TOLERANCE, a.len())));
        }
    }
    Ok(Outcome { checks, summary: json!({"moments": table}), files: vec![], replicas: 2 * config.replicas })
}
