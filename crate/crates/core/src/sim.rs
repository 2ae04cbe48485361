//! Monte Carlo simulation of the controlled wealth equation
//!
//! ```text
//! dX = pi^T mu dt + pi^T sigma dW + sum_j int pi^T beta_j(e) N~_j(dt, de)
//! ```
//!
//! Jump times are sampled exactly from the piecewise-constant intensity;
//! only the diffusion part is Euler-discretized. The compensator enters the
//! drift as `pi^T (mu - sum weight beta)`, and the portfolio applied at a
//! jump is evaluated at the pre-jump wealth.
//!
//! Each path owns a ChaCha8 stream selected by its index, and per-path
//! results are reduced in index order, so statistics do not depend on the
//! thread count.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::policy::{lagrangian_value, PolicySpec};
use crate::riccati::RiccatiSolution;

/// Wealth beyond this magnitude marks a path as diverged.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Number of leading paths whose full trajectory is kept.
    pub record_paths: usize,
    /// 1 runs on the calling thread, 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, dt: 1e-3, seed: 0, record_paths: 0, threads: 1 }
    }
}

impl SimConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Domain("need at least one path".into()));
        }
        if !(self.dt > 0.0 && self.dt <= horizon) {
            return Err(Error::Domain(format!("time step {} must lie in (0, {horizon}]", self.dt)));
        }
        Ok(())
    }

    fn steps(&self, horizon: f64) -> usize {
        ((horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// A portfolio rule: amounts held in each asset at time `t` given the
/// pre-jump wealth `x`.
pub trait Feedback: Sync {
    fn position(&self, t: f64, x: f64, out: &mut [f64]);
}

impl<F> Feedback for F
where
    F: Fn(f64, f64, &mut [f64]) + Sync,
{
    fn position(&self, t: f64, x: f64, out: &mut [f64]) {
        self(t, x, out)
    }
}

/// Holds nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFeedback;

impl Feedback for ZeroFeedback {
    fn position(&self, _t: f64, _x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// The optimal feedback `vhat+ (x - d)^+ + vhat- (x - d)^-` with the
/// minimizers tabulated on the simulation grid and held constant over each
/// step, as an Euler scheme evaluates coefficients at the left endpoint.
#[derive(Debug, Clone)]
pub struct TabulatedFeedback {
    dt: f64,
    vertex: f64,
    vhat_plus: Vec<Vec<f64>>,
    vhat_minus: Vec<Vec<f64>>,
}

impl TabulatedFeedback {
    pub fn new(sol: &RiccatiSolution, vertex: f64, dt: f64) -> Result<Self> {
        let horizon = sol.horizon();
        if !(dt > 0.0 && dt <= horizon) {
            return Err(Error::Domain(format!("time step {dt} must lie in (0, {horizon}]")));
        }
        let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        let mut vhat_plus = Vec::with_capacity(steps + 1);
        let mut vhat_minus = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = (i as f64 * dt).min(horizon);
            let point = sol.interpolate(t)?;
            vhat_plus.push(point.vhat_plus);
            vhat_minus.push(point.vhat_minus);
        }
        Ok(Self { dt, vertex, vhat_plus, vhat_minus })
    }

    pub fn for_policy(policy: &PolicySpec, dt: f64) -> Result<Self> {
        Self::new(policy.solution(), policy.d_star(), dt)
    }

    /// Multiplies the tabulated minimizers, for optimality-gap experiments.
    pub fn scaled(mut self, plus: f64, minus: f64) -> Self {
        self.vhat_plus.iter_mut().flatten().for_each(|v| *v *= plus);
        self.vhat_minus.iter_mut().flatten().for_each(|v| *v *= minus);
        self
    }

    pub fn vertex(&self) -> f64 {
        self.vertex
    }

    fn index(&self, t: f64) -> usize {
        ((t / self.dt + 1e-9).floor() as usize).min(self.vhat_plus.len() - 1)
    }

    pub fn vhat_plus_at(&self, t: f64) -> &[f64] {
        &self.vhat_plus[self.index(t)]
    }

    pub fn vhat_minus_at(&self, t: f64) -> &[f64] {
        &self.vhat_minus[self.index(t)]
    }
}

impl Feedback for TabulatedFeedback {
    fn position(&self, t: f64, x: f64, out: &mut [f64]) {
        let i = self.index(t);
        let pos = (x - self.vertex).max(0.0);
        let neg = (self.vertex - x).max(0.0);
        for ((o, up), down) in out.iter_mut().zip(&self.vhat_plus[i]).zip(&self.vhat_minus[i]) {
            *o = up * pos + down * neg;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub x: f64,
    /// True for the post-jump state at a Poisson arrival.
    pub is_jump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrement {
    pub t0: f64,
    pub t1: f64,
    pub dw: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathRecord {
    pub path_id: usize,
    pub points: Vec<PathPoint>,
    pub increments: Vec<BrownianIncrement>,
    pub arrivals: Vec<f64>,
}

/// Crossings of the vertex, split by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SignCounts {
    pub sign_changes: u64,
    pub sign_changes_at_jumps: u64,
    pub arrivals: u64,
    pub arrivals_flipping: u64,
    /// Arrivals at which the portfolio was zero, so wealth did not move.
    pub inert_arrivals: u64,
}

impl SignCounts {
    fn merge(&mut self, other: &SignCounts) {
        self.sign_changes += other.sign_changes;
        self.sign_changes_at_jumps += other.sign_changes_at_jumps;
        self.arrivals += other.arrivals;
        self.arrivals_flipping += other.arrivals_flipping;
        self.inert_arrivals += other.inert_arrivals;
    }

    pub fn sign_changes_off_jumps(&self) -> u64 {
        self.sign_changes - self.sign_changes_at_jumps
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value - target| / se`, with `0/0 = 0`.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.value - target).abs();
        if diff == 0.0 {
            0.0
        } else if self.se == 0.0 {
            f64::INFINITY
        } else {
            diff / self.se
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationStats {
    pub n_paths: usize,
    pub n_used: usize,
    pub overflow_paths: usize,
    pub vertex: f64,
    pub mean: Estimate,
    pub variance: Estimate,
    /// `E[(X_T - vertex)^2]`.
    pub second_moment: Estimate,
    pub jump_count_mean: f64,
    pub signs: SignCounts,
    pub paths: Vec<PathRecord>,
}

impl SimulationStats {
    /// Flat `key=value` listing with 17 significant digits.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        let f = |x: f64| format!("{x:.16e}");
        put("n_paths", self.n_paths.to_string());
        put("n_used", self.n_used.to_string());
        put("overflow_paths", self.overflow_paths.to_string());
        put("vertex", f(self.vertex));
        put("mean_XT", f(self.mean.value));
        put("mean_XT_se", f(self.mean.se));
        put("var_XT", f(self.variance.value));
        put("var_XT_se", f(self.variance.se));
        put("second_moment_about_d", f(self.second_moment.value));
        put("second_moment_about_d_se", f(self.second_moment.se));
        put("jump_count_mean", f(self.jump_count_mean));
        put("sign_changes", self.signs.sign_changes.to_string());
        put("sign_changes_at_jumps", self.signs.sign_changes_at_jumps.to_string());
        put("arrivals", self.signs.arrivals.to_string());
        put("arrivals_flipping", self.signs.arrivals_flipping.to_string());
        put("inert_arrivals", self.signs.inert_arrivals.to_string());
        out
    }

    /// `path_id,t,X,is_jump` rows for the recorded paths.
    pub fn paths_csv(&self) -> String {
        let mut out = String::from("path_id,t,X,is_jump\n");
        for record in &self.paths {
            for p in &record.points {
                let _ = writeln!(out, "{},{:.16e},{:.16e},{}", record.path_id, p.t, p.x, u8::from(p.is_jump));
            }
        }
        out
    }
}

struct PathOutput {
    terminal: f64,
    arrivals: u32,
    overflow: bool,
    signs: SignCounts,
    record: Option<PathRecord>,
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

struct SignTracker {
    vertex: f64,
    last: i8,
    counts: SignCounts,
}

impl SignTracker {
    /// Returns whether `x` is on the opposite side of the last nonzero sign.
    fn observe(&mut self, x: f64) -> bool {
        let s = sign_of(x - self.vertex);
        if s == 0 {
            return false;
        }
        let flipped = self.last != 0 && s != self.last;
        self.last = s;
        if flipped {
            self.counts.sign_changes += 1;
        }
        flipped
    }
}

/// Next Poisson arrival after `t`, drawing a fresh exponential clock at
/// every knot.
fn next_arrival<R: Rng>(model: &MarketModel, mut t: f64, rng: &mut R) -> f64 {
    let horizon = model.horizon();
    while t < horizon {
        let boundary = model.next_knot_after(t);
        let rate = model.knot_for_interval(t, boundary).total_rate();
        if rate > 0.0 {
            let e: f64 = rng.sample(Exp1);
            let candidate = t + e / rate;
            if candidate < boundary {
                return candidate;
            }
        }
        t = boundary;
    }
    f64::INFINITY
}

struct PathRunner<'a, F: Feedback + ?Sized> {
    model: &'a MarketModel,
    feedback: &'a F,
    dt: f64,
    steps: usize,
    vertex: f64,
}

impl<F: Feedback + ?Sized> PathRunner<'_, F> {
    fn run<R: Rng>(&self, x0: f64, rng: &mut R, mut record: Option<PathRecord>) -> PathOutput {
        let model = self.model;
        let m = model.assets();
        let n = model.factors();
        let horizon = model.horizon();
        let mut pos = vec![0.0; m];
        let mut dw = vec![0.0; n];
        let mut tracker = SignTracker { vertex: self.vertex, last: 0, counts: SignCounts::default() };
        tracker.observe(x0);

        let mut t = 0.0;
        let mut x = x0;
        let mut arrivals = 0u32;
        let mut overflow = false;
        if let Some(r) = record.as_mut() {
            r.points.push(PathPoint { t, x, is_jump: false });
        }
        let mut arrival = next_arrival(model, 0.0, rng);

        'steps: for i in 0..self.steps {
            let step_end = if i + 1 == self.steps { horizon } else { (i + 1) as f64 * self.dt };
            while t < step_end {
                let target = step_end.min(model.next_knot_after(t));
                let end = if arrival <= target { arrival } else { target };

                let h = end - t;
                if h > 0.0 {
                    let knot = model.knot_for_interval(t, end);
                    self.feedback.position(t, x, &mut pos);
                    let sqrt_h = h.sqrt();
                    for w in dw.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *w = sqrt_h * z;
                    }
                    let mut dx = 0.0;
                    for a in 0..m {
                        if pos[a] == 0.0 {
                            continue;
                        }
                        let drift = knot.mu()[a] - knot.compensator[a];
                        let noise: f64 = knot.sigma()[a].iter().zip(&dw).map(|(s, w)| s * w).sum();
                        dx += pos[a] * (drift * h + noise);
                    }
                    x += dx;
                    t = end;
                    if let Some(r) = record.as_mut() {
                        r.increments.push(BrownianIncrement { t0: end - h, t1: end, dw: dw.clone() });
                        r.points.push(PathPoint { t, x, is_jump: false });
                    }
                    tracker.observe(x);
                } else {
                    t = end;
                }

                if end == arrival {
                    let knot = model.knot_at(t).expect("arrival inside the horizon");
                    let u: f64 = rng.random::<f64>() * knot.total_rate();
                    let mut acc = 0.0;
                    let mut chosen = knot.marks.len() - 1;
                    for (k, mark) in knot.marks.iter().enumerate() {
                        acc += mark.weight;
                        if u < acc {
                            chosen = k;
                            break;
                        }
                    }
                    self.feedback.position(t, x, &mut pos);
                    let jump: f64 = pos.iter().zip(&knot.marks[chosen].beta).map(|(p, b)| p * b).sum();
                    arrivals += 1;
                    tracker.counts.arrivals += 1;
                    if jump == 0.0 {
                        tracker.counts.inert_arrivals += 1;
                    }
                    x += jump;
                    if tracker.observe(x) {
                        tracker.counts.sign_changes_at_jumps += 1;
                        tracker.counts.arrivals_flipping += 1;
                    }
                    if let Some(r) = record.as_mut() {
                        r.arrivals.push(t);
                        r.points.push(PathPoint { t, x, is_jump: true });
                    }
                    arrival = next_arrival(model, t, rng);
                }

                if !x.is_finite() || x.abs() > OVERFLOW_LIMIT {
                    overflow = true;
                    break 'steps;
                }
            }
        }

        PathOutput { terminal: x, arrivals, overflow, signs: tracker.counts, record }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates `cfg.n_paths` paths from `x0` under `feedback`; `vertex` is the
/// reference level for the second moment and the sign bookkeeping.
pub fn simulate<F: Feedback + ?Sized>(
    model: &MarketModel,
    feedback: &F,
    x0: f64,
    vertex: f64,
    cfg: &SimConfig,
) -> Result<SimulationStats> {
    cfg.validate(model.horizon())?;
    let runner = PathRunner { model, feedback, dt: cfg.dt, steps: cfg.steps(model.horizon()), vertex };
    let run_one = |path: usize| {
        let mut rng = path_rng(cfg.seed, path);
        let record = (path < cfg.record_paths).then(|| PathRecord { path_id: path, ..PathRecord::default() });
        runner.run(x0, &mut rng, record)
    };

    let outputs: Vec<PathOutput> = match cfg.threads {
        1 => (0..cfg.n_paths).map(run_one).collect(),
        0 => (0..cfg.n_paths).into_par_iter().map(run_one).collect(),
        threads => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?
            .install(|| (0..cfg.n_paths).into_par_iter().map(run_one).collect()),
    };

    Ok(aggregate(outputs, cfg.n_paths, vertex))
}

fn aggregate(outputs: Vec<PathOutput>, n_paths: usize, vertex: f64) -> SimulationStats {
    let mut signs = SignCounts::default();
    let mut paths = Vec::new();
    let mut terminals = Vec::with_capacity(outputs.len());
    let mut overflow_paths = 0;
    let mut jumps = 0u64;
    for out in outputs {
        if let Some(r) = out.record {
            paths.push(r);
        }
        if out.overflow {
            overflow_paths += 1;
            continue;
        }
        signs.merge(&out.signs);
        jumps += u64::from(out.arrivals);
        terminals.push(out.terminal);
    }
    let n = terminals.len();
    let nf = n as f64;
    let mean = terminals.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    let mut sq = Vec::with_capacity(n);
    for &x in &terminals {
        let c = x - mean;
        m2 += c * c;
        m4 += c * c * c * c;
        sq.push((x - vertex) * (x - vertex));
    }
    m2 /= nf;
    m4 /= nf;
    let sample_var = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let sq_mean = sq.iter().sum::<f64>() / nf;
    let sq_var = if n > 1 {
        sq.iter().map(|y| (y - sq_mean) * (y - sq_mean)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };

    SimulationStats {
        n_paths,
        n_used: n,
        overflow_paths,
        vertex,
        mean: Estimate { value: mean, se: (sample_var / nf).sqrt() },
        variance: Estimate { value: sample_var, se: ((m4 - m2 * m2).max(0.0) / nf).sqrt() },
        second_moment: Estimate { value: sq_mean, se: (sq_var / nf).sqrt() },
        jump_count_mean: jumps as f64 / nf,
        signs,
        paths,
    }
}

/// Simulates the optimal mean-variance policy.
pub fn simulate_policy(policy: &PolicySpec, cfg: &SimConfig) -> Result<SimulationStats> {
    let feedback = TabulatedFeedback::for_policy(policy, cfg.dt)?;
    simulate(policy.solution().model(), &feedback, policy.x0(), policy.d_star(), cfg)
}

#[derive(Debug, Clone)]
pub struct ValueCheck {
    pub estimate: Estimate,
    pub target: f64,
    pub z_score: f64,
    pub stats: SimulationStats,
}

/// Compares the simulated `E[(X_T - d)^2]` under the optimal feedback for
/// vertex `d` with `P+(0) ((x0-d)^+)^2 + P-(0) ((x0-d)^-)^2`.
pub fn verify_value(sol: &RiccatiSolution, d: f64, x0: f64, cfg: &SimConfig) -> Result<ValueCheck> {
    let feedback = TabulatedFeedback::new(sol, d, cfg.dt)?;
    verify_value_with(sol, &feedback, d, x0, cfg)
}

/// As [`verify_value`] with a caller-supplied feedback rule.
pub fn verify_value_with<F: Feedback + ?Sized>(
    sol: &RiccatiSolution,
    feedback: &F,
    d: f64,
    x0: f64,
    cfg: &SimConfig,
) -> Result<ValueCheck> {
    let stats = simulate(sol.model(), feedback, x0, d, cfg)?;
    let target = lagrangian_value(x0, d, sol);
    Ok(ValueCheck {
        estimate: stats.second_moment,
        target,
        z_score: stats.second_moment.z_score(target),
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct FrontierCheck {
    pub d_star: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub mean_z: f64,
    pub variance_z: f64,
    pub stats: SimulationStats,
}

/// Checks the budget `E[X_T] = z` and the frontier variance.
pub fn verify_frontier(sol: &std::sync::Arc<RiccatiSolution>, x0: f64, z: f64, cfg: &SimConfig) -> Result<FrontierCheck> {
    let policy = PolicySpec::new(x0, z, sol.clone())?;
    let stats = simulate_policy(&policy, cfg)?;
    let target_variance = policy.variance();
    Ok(FrontierCheck {
        d_star: policy.d_star(),
        target_mean: z,
        target_variance,
        mean_z: stats.mean.z_score(z),
        variance_z: stats.variance.z_score(target_variance),
        stats,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub paths: usize,
    pub sign_changes: u64,
    pub sign_changes_at_jumps: u64,
    pub arrivals: u64,
    pub arrivals_flipping: u64,
    pub inert_arrivals: u64,
}

impl AuditReport {
    pub fn sign_changes_off_jumps(&self) -> u64 {
        self.sign_changes - self.sign_changes_at_jumps
    }

    pub fn arrivals_not_flipping(&self) -> u64 {
        self.arrivals - self.arrivals_flipping
    }
}

/// Re-derives crossings of `d_star` from recorded trajectories.
pub fn sign_change_audit(records: &[PathRecord], d_star: f64) -> AuditReport {
    let mut report = AuditReport { paths: records.len(), ..AuditReport::default() };
    for record in records {
        let mut last = 0i8;
        let mut prev_x = f64::NAN;
        for p in &record.points {
            let s = sign_of(p.x - d_star);
            let flipped = s != 0 && last != 0 && s != last;
            if s != 0 {
                last = s;
            }
            if p.is_jump {
                report.arrivals += 1;
                if p.x == prev_x {
                    report.inert_arrivals += 1;
                }
                if flipped {
                    report.arrivals_flipping += 1;
                    report.sign_changes_at_jumps += 1;
                }
            }
            if flipped {
                report.sign_changes += 1;
            }
            prev_x = p.x;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{JumpMark, JumpSource};

    fn one_asset(mu: f64, sigma: f64, marks: &[(f64, f64)]) -> MarketModel {
        let sources = if marks.is_empty() {
            vec![]
        } else {
            vec![JumpSource::new(marks.iter().map(|&(b, w)| JumpMark::new(vec![b], w)).collect())]
        };
        MarketModel::time_invariant(1.0, vec![mu], vec![vec![sigma]], sources).unwrap()
    }

    #[test]
    fn zero_policy_keeps_wealth() {
        let model = one_asset(0.2, 0.3, &[(0.4, 1.0)]);
        let cfg = SimConfig { n_paths: 200, dt: 0.01, seed: 7, record_paths: 3, threads: 1 };
        let stats = simulate(&model, &ZeroFeedback, 1.5, 2.0, &cfg).unwrap();
        assert_eq!(stats.mean.value, 1.5);
        assert_eq!(stats.variance.value, 0.0);
        assert_eq!(stats.second_moment.value, 0.25);
        assert_eq!(stats.signs.inert_arrivals, stats.signs.arrivals);
        assert_eq!(stats.paths.len(), 3);
        assert!(stats.paths.iter().all(|p| p.points.iter().all(|q| q.x == 1.5)));
    }

    #[test]
    fn config_errors() {
        let model = one_asset(0.2, 0.3, &[]);
        for cfg in [
            SimConfig { n_paths: 0, ..SimConfig::default() },
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { dt: 2.0, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate(&model, &ZeroFeedback, 0.0, 0.0, &cfg), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn arrival_rate_matches_intensity() {
        let model = one_asset(0.2, 0.3, &[(0.4, 1.5), (-0.2, 0.5)]);
        let cfg = SimConfig { n_paths: 20_000, dt: 0.05, seed: 3, record_paths: 0, threads: 1 };
        let stats = simulate(&model, &ZeroFeedback, 0.0, 0.0, &cfg).unwrap();
        // Poisson(2): sd of the mean is sqrt(2 / n) = 0.01
        assert!((stats.jump_count_mean - 2.0).abs() < 0.04, "{}", stats.jump_count_mean);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let model = one_asset(0.15, 0.25, &[(0.4, 0.5), (-0.4, 0.5)]);
        let feedback = |_t: f64, x: f64, out: &mut [f64]| out[0] = 0.8 * (1.0 - x).abs();
        let base = SimConfig { n_paths: 2_000, dt: 0.01, seed: 11, record_paths: 0, threads: 1 };
        let a = simulate(&model, &feedback, 0.0, 1.0, &base).unwrap();
        let b = simulate(&model, &feedback, 0.0, 1.0, &SimConfig { threads: 4, ..base }).unwrap();
        let c = simulate(&model, &feedback, 0.0, 1.0, &base).unwrap();
        assert_eq!(a.to_key_value(), b.to_key_value());
        assert_eq!(a.to_key_value(), c.to_key_value());
        let d = simulate(&model, &feedback, 0.0, 1.0, &SimConfig { seed: 12, ..base }).unwrap();
        assert_ne!(a.mean.value, d.mean.value);
    }

    #[test]
    fn linear_feedback_is_martingale_without_drift() {
        // with mu = 0 the compensated wealth is a martingale for any bounded exposure
        let model = one_asset(0.0, 0.3, &[(0.5, 0.7), (-0.6, 0.4)]);
        let feedback = |_t: f64, x: f64, out: &mut [f64]| out[0] = 0.9 * (x - 2.0);
        let cfg = SimConfig { n_paths: 40_000, dt: 0.01, seed: 5, record_paths: 0, threads: 0 };
        let stats = simulate(&model, &feedback, 0.5, 2.0, &cfg).unwrap();
        assert!(stats.mean.z_score(0.5) < 3.0, "mean {:?}", stats.mean);
    }

    #[test]
    fn standard_errors_shrink_with_paths() {
        let model = one_asset(0.1, 0.3, &[(0.3, 1.0)]);
        let feedback = |_t: f64, _x: f64, out: &mut [f64]| out[0] = 1.0;
        let small = SimConfig { n_paths: 5_000, dt: 0.02, seed: 1, record_paths: 0, threads: 0 };
        let large = SimConfig { n_paths: 20_000, ..small };
        let a = simulate(&model, &feedback, 0.0, 0.0, &small).unwrap();
        let b = simulate(&model, &feedback, 0.0, 0.0, &large).unwrap();
        let ratio = a.mean.se / b.mean.se;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
        let ratio = a.second_moment.se / b.second_moment.se;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn audit_counts_from_records() {
        let mk = |pts: &[(f64, f64, bool)]| PathRecord {
            path_id: 0,
            points: pts.iter().map(|&(t, x, is_jump)| PathPoint { t, x, is_jump }).collect(),
            ..PathRecord::default()
        };
        let records = vec![
            mk(&[(0.0, -1.0, false), (0.1, -0.9, false), (0.1, 0.5, true), (0.2, 0.5, false), (0.3, 0.5, true)]),
            mk(&[(0.0, -1.0, false), (0.1, 0.2, false)]),
        ];
        let report = sign_change_audit(&records, 0.0);
        assert_eq!(report.sign_changes, 2);
        assert_eq!(report.sign_changes_at_jumps, 1);
        assert_eq!(report.sign_changes_off_jumps(), 1);
        assert_eq!(report.arrivals, 2);
        assert_eq!(report.arrivals_flipping, 1);
        assert_eq!(report.inert_arrivals, 1);
    }

    #[test]
    fn key_value_and_csv_layout() {
        let model = one_asset(0.2, 0.3, &[]);
        let cfg = SimConfig { n_paths: 4, dt: 0.25, seed: 0, record_paths: 1, threads: 1 };
        let stats = simulate(&model, &ZeroFeedback, 1.0, 1.0, &cfg).unwrap();
        let kv = stats.to_key_value();
        assert!(kv.contains("mean_XT=1.0000000000000000e0\n"));
        assert!(kv.lines().all(|l| l.contains('=')));
        let csv = stats.paths_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("path_id,t,X,is_jump"));
        assert_eq!(lines.count(), 5);
    }
}
