//! Monte Carlo estimators of the boosted approximations and sample allocation.
//!
//! The order-2 estimator is `E f(X0) + n E[f(X1) - f(X0)]`. The two
//! expectations can be estimated from disjoint samples (independent mode)
//! or with the first `min(M1, M2)` coupled samples feeding both sums
//! (dependent mode), which saves simulating `X0` twice.

use std::ops::Range;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grids::{estimator_terms, GridDraw, Model, RunStreams, Simulator};

/// Samples per work unit. Fixed so that results do not depend on the
/// number of workers.
pub const CHUNK: u64 = 1 << 12;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums and cross-products of a `D`-vector observed per sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments<const D: usize> {
    pub count: u64,
    sums: [CompensatedSum; D],
    cross: [[CompensatedSum; D]; D],
}

impl<const D: usize> Default for Moments<D> {
    fn default() -> Self {
        Self { count: 0, sums: [CompensatedSum::default(); D], cross: [[CompensatedSum::default(); D]; D] }
    }
}

impl<const D: usize> Moments<D> {
    #[inline]
    pub fn push(&mut self, v: &[f64; D]) {
        self.count += 1;
        for i in 0..D {
            self.sums[i].add(v[i]);
            for j in i..D {
                self.cross[i][j].add(v[i] * v[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for i in 0..D {
            self.sums[i].merge(&other.sums[i]);
            for j in i..D {
                self.cross[i][j].merge(&other.cross[i][j]);
            }
        }
    }

    fn cross_value(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.cross[a][b].value()
    }

    /// Sums of the linear combination `sum_i w_i v_i`.
    pub fn project(&self, w: &[f64; D]) -> ScalarSums {
        let mut s = 0.0;
        let mut ss = 0.0;
        for i in 0..D {
            s += w[i] * self.sums[i].value();
            for j in 0..D {
                ss += w[i] * w[j] * self.cross_value(i, j);
            }
        }
        ScalarSums { count: self.count, sum: s, sum_sq: ss }
    }

    /// Sample covariance of `u . v` and `w . v`.
    pub fn covariance(&self, u: &[f64; D], w: &[f64; D]) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let (mut su, mut sw, mut suw) = (0.0, 0.0, 0.0);
        for i in 0..D {
            su += u[i] * self.sums[i].value();
            sw += w[i] * self.sums[i].value();
            for (j, wj) in w.iter().enumerate() {
                suw += u[i] * wj * self.cross_value(i, j);
            }
        }
        (suw - su * sw / n) / (n - 1.0)
    }
}

/// Count, sum and sum of squares of a scalar sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScalarSums {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ScalarSums {
    pub fn combine(self, o: ScalarSums) -> ScalarSums {
        ScalarSums { count: self.count + o.count, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance, clamped at zero.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }
}

/// Applies `f` to fixed-size chunks of `0..total` on `workers` threads and
/// returns the results in chunk order.
pub fn map_chunks<T: Send>(total: u64, workers: usize, f: impl Fn(Range<u64>) -> T + Sync) -> Vec<T> {
    let chunks = total.div_ceil(CHUNK);
    let range = |c: u64| c * CHUNK..((c + 1) * CHUNK).min(total);
    #[cfg(feature = "parallel")]
    if workers > 1 && chunks > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        return pool.install(|| (0..chunks).into_par_iter().map(|c| f(range(c))).collect());
    }
    let _ = workers;
    (0..chunks).map(|c| f(range(c))).collect()
}

/// Power sums of a scalar sample up to the fourth, for variance estimates
/// with their own standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PowerSums {
    pub count: u64,
    sums: [CompensatedSum; 4],
}

impl PowerSums {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let mut p = v;
        for s in &mut self.sums {
            s.add(p);
            p *= v;
        }
    }

    pub fn merge(&mut self, o: &PowerSums) {
        self.count += o.count;
        for (a, b) in self.sums.iter_mut().zip(&o.sums) {
            a.merge(b);
        }
    }

    pub fn mean(&self) -> f64 {
        self.sums[0].value() / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let s = self.sums[0].value();
        ((self.sums[1].value() - s * s / n) / (n - 1.0)).max(0.0)
    }

    /// Large-sample standard error of [`variance`](Self::variance),
    /// `sqrt((mu4 - sigma^4) / M)`.
    pub fn variance_se(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        let [_, r2, r3, r4] = self.sums.map(|s| s.value() / n);
        let mu2 = r2 - m * m;
        let mu4 = r4 - 4.0 * m * r3 + 6.0 * m * m * r2 - 3.0 * m.powi(4);
        ((mu4 - mu2 * mu2).max(0.0) / n).sqrt()
    }
}

/// A model, a payoff and a grid size.
pub struct Problem<M: Model, F> {
    pub model: M,
    pub payoff: F,
    pub n: usize,
    pub horizon: f64,
}

impl<M, F> Problem<M, F>
where
    M: Model + Clone,
    F: Fn(&M::State) -> f64 + Sync,
{
    pub fn new(model: M, payoff: F, n: usize, horizon: f64) -> Result<Self> {
        if n < 2 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("need n >= 2 and T > 0, got n={n} T={horizon}")));
        }
        Ok(Self { model, payoff, n, horizon })
    }

    pub fn simulator(&self) -> Simulator<M> {
        Simulator::new(self.model.clone(), self.n, self.horizon)
    }

    /// `f(X0)` for sample `i`.
    pub fn base_sample(&self, sim: &mut Simulator<M>, streams: &RunStreams, i: u64) -> f64 {
        let (mut rng, aux) = streams.sample(i);
        (self.payoff)(&sim.simulate_base(&mut rng, &aux))
    }

    /// Estimator terms of `order` for sample `i`.
    pub fn coupled_sample(&self, sim: &mut Simulator<M>, order: usize, streams: &RunStreams, i: u64) -> [f64; 4] {
        let (mut rng, aux) = streams.sample(i);
        let grid = GridDraw::sample(order, self.n, &mut rng);
        let paths = sim.simulate_coupled(order, &grid, &mut rng, &aux);
        estimator_terms(order, &self.payoff, &paths, self.n)
    }

    /// Samples `0..max(m_base, m_corr)`: the first `min` are coupled and feed
    /// both sums, the rest feed only the sum that still needs them.
    pub fn run_mixed(
        &self,
        order: usize,
        m_base: u64,
        m_corr: u64,
        streams: &RunStreams,
        workers: usize,
    ) -> MixedStats {
        let start = Instant::now();
        let total = m_base.max(m_corr);
        let parts = map_chunks(total, workers, |range| {
            let mut sim = self.simulator();
            let mut part = MixedStats::default();
            for i in range {
                if i < m_corr {
                    let t = self.coupled_sample(&mut sim, order, streams, i);
                    if i < m_base {
                        part.joint.push(&t);
                    } else {
                        part.corr.push(&t);
                    }
                } else {
                    part.base.push(&[self.base_sample(&mut sim, streams, i)]);
                }
            }
            part
        });
        let mut out = MixedStats::default();
        for p in &parts {
            out.merge(p);
        }
        out.seconds = start.elapsed().as_secs_f64();
        out
    }

    /// Power sums of the order-2 correction `n (f(X1) - f(X0))` over `m` samples.
    pub fn correction_power_sums(&self, m: u64, streams: &RunStreams, workers: usize) -> PowerSums {
        let parts = map_chunks(m, workers, |range| {
            let mut sim = self.simulator();
            let mut acc = PowerSums::default();
            for i in range {
                acc.push(self.coupled_sample(&mut sim, 2, streams, i)[1]);
            }
            acc
        });
        let mut out = PowerSums::default();
        for p in &parts {
            out.merge(p);
        }
        out
    }
}

/// Accumulated terms of a mixed run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MixedStats {
    /// Coupled samples used in both sums.
    pub joint: Moments<4>,
    /// Samples used only in the base sum.
    pub base: Moments<1>,
    /// Coupled samples used only in the correction sum.
    pub corr: Moments<4>,
    pub seconds: f64,
}

const F0: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// Weights selecting the correction of the order-`order` estimator.
pub fn correction_weights(order: usize) -> [f64; 4] {
    match order {
        1 => [0.0; 4],
        2 => [0.0, 1.0, 0.0, 0.0],
        _ => [0.0, 1.0, 1.0, 1.0],
    }
}

/// Point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub m1: u64,
    pub m2: u64,
}

impl MixedStats {
    pub fn merge(&mut self, o: &MixedStats) {
        self.joint.merge(&o.joint);
        self.base.merge(&o.base);
        self.corr.merge(&o.corr);
        self.seconds += o.seconds;
    }

    pub fn base_sums(&self) -> ScalarSums {
        self.joint.project(&F0).combine(self.base.project(&[1.0]))
    }

    pub fn correction_sums(&self, w: &[f64; 4]) -> ScalarSums {
        self.joint.project(w).combine(self.corr.project(w))
    }

    /// Estimate of the order-`order` approximation, with the variance
    /// `s2^2/M1 + s4^2/M2 + 2 Gamma/max(M1, M2)`.
    pub fn estimate(&self, order: usize) -> Estimate {
        let b = self.base_sums();
        let w = correction_weights(order);
        let m1 = b.count;
        if order == 1 {
            return Estimate { value: b.mean(), se: (b.variance() / m1 as f64).sqrt(), m1, m2: 0 };
        }
        let c = self.correction_sums(&w);
        let m2 = c.count;
        let cov = self.joint.covariance(&F0, &w);
        let var = b.variance() / m1 as f64 + c.variance() / m2 as f64 + 2.0 * cov / m1.max(m2) as f64;
        Estimate { value: b.mean() + c.mean(), se: var.max(0.0).sqrt(), m1, m2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Independent,
    Dependent,
}

/// Inputs to an allocation: pilot variances, covariance and cost ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PilotStats {
    pub sigma2_sq: f64,
    pub sigma4_sq: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub m_pilot: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    M1AtLeastM2,
    M1BelowM2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorPlan {
    pub m1: u64,
    pub m2: u64,
    pub mode: Mode,
    pub target_eps: f64,
    pub branch: Option<Branch>,
    pub warning: Option<String>,
}

fn ceil_count(v: f64) -> u64 {
    if v.is_finite() {
        (v.ceil() as u64).max(1)
    } else {
        u64::MAX
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")))
    }
}

/// Continuous optimum for disjoint samples, scaled by `1/eps^2`.
fn independent_counts(s: &PilotStats) -> (f64, f64) {
    let (s2, s4) = (s.sigma2_sq.sqrt(), s.sigma4_sq.sqrt());
    let rz = s.zeta.sqrt();
    (s.sigma2_sq + rz * s2 * s4, s.sigma4_sq + s2 * s4 / rz)
}

/// Minimises `M1 t1 + M2 t2` subject to `s2^2/M1 + s4^2/M2 <= eps^2`.
pub fn allocate_independent(stats: &PilotStats, eps: f64) -> Result<(u64, u64)> {
    check_eps(eps)?;
    let (a, b) = independent_counts(stats);
    let e2 = eps * eps;
    Ok((ceil_count(a / e2), ceil_count(b / e2)))
}

/// Continuous dependent-mode optimum scaled by `1/eps^2`.
///
/// For `M1 >= M2` the cost is `M1 t1 + M2 (t2 - t1)` and the variance
/// `(s2^2 + 2 Gamma)/M1 + s4^2/M2`; the Lagrange conditions give the
/// closed forms below. For `M1 < M2` the cost `M2 t2` does not depend on
/// `M1` while the variance decreases in it, so the optimum sits on the
/// boundary `M1 = M2 = (s2^2 + s4^2 + 2 Gamma)/eps^2`. The same boundary is
/// used when the `M1 >= M2` formulas land on the wrong side of it.
fn dependent_counts(s: &PilotStats) -> (f64, f64, Option<Branch>, Option<String>) {
    let a = s.sigma2_sq + 2.0 * s.gamma;
    if a < 0.0 {
        let (m1, m2) = independent_counts(s);
        let msg = format!("s2^2 + 2 Gamma = {a:.3e} < 0; using the independent allocation");
        return (m1, m2, None, Some(msg));
    }
    let equal = s.sigma2_sq + s.sigma4_sq + 2.0 * s.gamma;
    let prefer_m1 = s.zeta > 1.0 && s.zeta * a >= s.sigma4_sq + 2.0 * s.gamma;
    if !prefer_m1 {
        return (equal, equal, Some(Branch::M1BelowM2), None);
    }
    let z1 = s.zeta - 1.0;
    let m1 = a + (a * s.sigma4_sq * z1).sqrt();
    let m2 = s.sigma4_sq + (a * s.sigma4_sq / z1).sqrt();
    if m1 < m2 {
        return (equal, equal, Some(Branch::M1AtLeastM2), None);
    }
    (m1, m2, Some(Branch::M1AtLeastM2), None)
}

/// Minimises the dependent-mode cost at variance `eps^2`.
pub fn allocate_dependent(stats: &PilotStats, eps: f64) -> Result<EstimatorPlan> {
    check_eps(eps)?;
    let (a, b, branch, warning) = dependent_counts(stats);
    let e2 = eps * eps;
    let mode = if branch.is_none() { Mode::Independent } else { Mode::Dependent };
    Ok(EstimatorPlan { m1: ceil_count(a / e2), m2: ceil_count(b / e2), mode, target_eps: eps, branch, warning })
}

/// Dependent allocation rescaled so that `M1` equals `m1`.
pub fn allocate_dependent_for_m1(stats: &PilotStats, m1: u64) -> EstimatorPlan {
    let (a, b, branch, warning) = dependent_counts(stats);
    let m2 = if a > 0.0 { ceil_count(b / a * m1 as f64) } else { m1 };
    let mode = if branch.is_none() { Mode::Independent } else { Mode::Dependent };
    let eps = if a > 0.0 { (a / m1 as f64).sqrt() } else { 0.0 };
    EstimatorPlan { m1, m2, mode, target_eps: eps, branch, warning }
}

/// `Var(Theta)` predicted from pilot statistics.
pub fn predicted_variance(mode: Mode, s: &PilotStats, m1: u64, m2: u64) -> f64 {
    let (m1, m2) = (m1 as f64, m2 as f64);
    let base = s.sigma2_sq / m1 + s.sigma4_sq / m2;
    match mode {
        Mode::Independent => base,
        Mode::Dependent => base + 2.0 * s.gamma / m1.max(m2),
    }
}

/// Cost in units of one base sample.
pub fn predicted_cost(mode: Mode, s: &PilotStats, m1: u64, m2: u64) -> f64 {
    let (m1, m2) = (m1 as f64, m2 as f64);
    match mode {
        Mode::Independent => m1 + m2 * s.zeta,
        Mode::Dependent if m1 >= m2 => (m1 - m2) + m2 * s.zeta,
        Mode::Dependent => m2 * s.zeta,
    }
}

/// Result of one estimator run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaReport {
    pub mode: Mode,
    pub estimate: f64,
    pub se: f64,
    pub variance: f64,
    pub seconds: f64,
    pub m1: u64,
    pub m2: u64,
}

pub const PURPOSE_PILOT: u64 = 1;
pub const PURPOSE_DEPENDENT: u64 = 2;
pub const PURPOSE_INDEPENDENT_BASE: u64 = 3;
pub const PURPOSE_INDEPENDENT_CORR: u64 = 4;

/// Runs `Theta_I` or `Theta_D` for the order-2 estimator.
pub fn run_theta<M, F>(mode: Mode, m1: u64, m2: u64, problem: &Problem<M, F>, seed: u64, workers: usize) -> ThetaReport
where
    M: Model + Clone,
    F: Fn(&M::State) -> f64 + Sync,
{
    let stats = match mode {
        Mode::Dependent => problem.run_mixed(2, m1, m2, &RunStreams::new(seed, PURPOSE_DEPENDENT), workers),
        Mode::Independent => {
            let mut a = problem.run_mixed(2, m1, 0, &RunStreams::new(seed, PURPOSE_INDEPENDENT_BASE), workers);
            let b = problem.run_mixed(2, 0, m2, &RunStreams::new(seed, PURPOSE_INDEPENDENT_CORR), workers);
            a.merge(&b);
            a
        }
    };
    let e = stats.estimate(2);
    ThetaReport { mode, estimate: e.value, se: e.se, variance: e.se * e.se, seconds: stats.seconds, m1, m2 }
}

/// Median seconds per sample of the base and the coupled order-2 kernels,
/// timed single-threaded over interleaved batches.
pub fn measure_kernel_times<M, F>(problem: &Problem<M, F>, batches: usize, batch: u64, seed: u64) -> (f64, f64)
where
    M: Model + Clone,
    F: Fn(&M::State) -> f64 + Sync,
{
    let streams = RunStreams::new(seed, PURPOSE_PILOT + 100);
    let mut sim = problem.simulator();
    let mut sink = 0.0;
    let mut t1 = Vec::with_capacity(batches);
    let mut t2 = Vec::with_capacity(batches);
    // warm-up
    for i in 0..batch.min(1000) {
        sink += problem.base_sample(&mut sim, &streams, i) + problem.coupled_sample(&mut sim, 2, &streams, i)[1];
    }
    for b in 0..batches as u64 {
        let off = b * batch;
        let start = Instant::now();
        for i in off..off + batch {
            sink += problem.base_sample(&mut sim, &streams, i);
        }
        t1.push(start.elapsed().as_secs_f64() / batch as f64);
        let start = Instant::now();
        for i in off..off + batch {
            sink += problem.coupled_sample(&mut sim, 2, &streams, i)[1];
        }
        t2.push(start.elapsed().as_secs_f64() / batch as f64);
    }
    std::hint::black_box(sink);
    (median(&mut t1), median(&mut t2))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pilot variances, covariance and measured cost ratio.
pub fn pilot<M, F>(problem: &Problem<M, F>, m_pilot: u64, seed: u64, workers: usize) -> Result<PilotStats>
where
    M: Model + Clone,
    F: Fn(&M::State) -> f64 + Sync,
{
    pilot_with(problem, m_pilot, seed, workers, None)
}

/// As [`pilot`], taking `zeta` as given instead of timing the kernels when set.
pub fn pilot_with<M, F>(
    problem: &Problem<M, F>,
    m_pilot: u64,
    seed: u64,
    workers: usize,
    zeta: Option<f64>,
) -> Result<PilotStats>
where
    M: Model + Clone,
    F: Fn(&M::State) -> f64 + Sync,
{
    if m_pilot < 100 {
        return Err(Error::InvalidParameter(format!("pilot needs at least 100 samples, got {m_pilot}")));
    }
    let stats = problem.run_mixed(2, m_pilot, m_pilot, &RunStreams::new(seed, PURPOSE_PILOT), workers);
    let w = correction_weights(2);
    let zeta = match zeta {
        Some(z) => z,
        None => {
            let (t1, t2) = measure_kernel_times(problem, 21, 2000, seed);
            t2 / t1
        }
    };
    Ok(PilotStats {
        sigma2_sq: stats.base_sums().variance(),
        sigma4_sq: stats.correction_sums(&w).variance(),
        gamma: stats.joint.covariance(&F0, &w),
        zeta,
        m_pilot,
    })
}
