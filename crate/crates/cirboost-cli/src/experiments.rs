//! The experiment commands.

use std::time::Instant;

use cirboost::estimators::{
    allocate_dependent, allocate_dependent_for_m1, allocate_independent, measure_kernel_times, pilot_with,
    predicted_cost, run_theta, EstimatorPlan, MixedStats, Mode, PilotStats, PowerSums, Problem, ThetaReport,
};
use cirboost::grids::{CirModel, HestonModel, Model, RunStreams};
use cirboost::heston::{reference_put, HestonParams, HestonScheme, HestonState};
use cirboost::oracle;
use cirboost::{laplace_transform, CirParams, CirScheme, SchemeKind};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ModelKind};
use crate::CliError;

/// Cost ratio assumed when kernels are not timed.
pub const NOMINAL_ZETA: f64 = 2.5;
/// Bias rows below this many standard errors are unresolved.
pub const RESOLUTION: f64 = 3.0;

const PURPOSE_CONVERGE: u64 = 1000;
const PURPOSE_VARIANCE: u64 = 2000;
const PURPOSE_PRICE: u64 = 3000;

/// One CSV line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Row {
    pub n: usize,
    pub order: usize,
    pub estimate: f64,
    pub se: f64,
    pub reference: Option<f64>,
    pub bias: Option<f64>,
    pub rel_bias: Option<f64>,
    pub samples: u64,
    pub seconds: f64,
    pub seed: u64,
}

impl Row {
    fn new(
        n: usize,
        order: usize,
        estimate: f64,
        se: f64,
        reference: Option<f64>,
        samples: u64,
        seconds: f64,
        seed: u64,
    ) -> Self {
        let bias = reference.map(|r| estimate - r);
        let rel_bias = reference.zip(bias).map(|(r, b)| b / r);
        Row { n, order, estimate, se, reference, bias, rel_bias, samples, seconds, seed }
    }

    pub fn resolved(&self) -> bool {
        self.bias.is_some_and(|b| b.abs() >= RESOLUTION * self.se)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub label: Option<String>,
    pub rows: Vec<Row>,
}

/// Result of a command: tables for the CSV files and details for the sidecar.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub tables: Vec<Table>,
    pub details: serde_json::Value,
    /// Human-readable lines.
    pub summary: Vec<String>,
}

/// Object-safe view of a [`Problem`].
pub trait Experiment: Sync {
    fn run_mixed(&self, order: usize, m_base: u64, m_corr: u64, streams: &RunStreams, workers: usize) -> MixedStats;
    fn pilot(&self, m: u64, seed: u64, workers: usize, zeta: Option<f64>) -> Result<PilotStats, CliError>;
    fn theta(&self, mode: Mode, m1: u64, m2: u64, seed: u64, workers: usize) -> ThetaReport;
    fn kernel_times(&self, batches: usize, batch: u64, seed: u64) -> (f64, f64);
    fn correction_power_sums(&self, m: u64, streams: &RunStreams, workers: usize) -> PowerSums;
}

impl<M, F> Experiment for Problem<M, F>
where
    M: Model + Clone + Sync,
    F: Fn(&M::State) -> f64 + Sync,
{
    fn run_mixed(&self, order: usize, m_base: u64, m_corr: u64, streams: &RunStreams, workers: usize) -> MixedStats {
        Problem::run_mixed(self, order, m_base, m_corr, streams, workers)
    }

    fn pilot(&self, m: u64, seed: u64, workers: usize, zeta: Option<f64>) -> Result<PilotStats, CliError> {
        Ok(pilot_with(self, m, seed, workers, zeta)?)
    }

    fn theta(&self, mode: Mode, m1: u64, m2: u64, seed: u64, workers: usize) -> ThetaReport {
        run_theta(mode, m1, m2, self, seed, workers)
    }

    fn kernel_times(&self, batches: usize, batch: u64, seed: u64) -> (f64, f64) {
        measure_kernel_times(self, batches, batch, seed)
    }

    fn correction_power_sums(&self, m: u64, streams: &RunStreams, workers: usize) -> PowerSums {
        Problem::correction_power_sums(self, m, streams, workers)
    }
}

type CirPayoff = Box<dyn Fn(&f64) -> f64 + Sync>;
type HestonPayoff = Box<dyn Fn(&HestonState) -> f64 + Sync>;

fn cir_params(cfg: &ExperimentConfig) -> Result<CirParams, CliError> {
    Ok(CirParams::new(cfg.params.a, cfg.params.k, cfg.params.sigma)?)
}

fn heston_params(cfg: &ExperimentConfig) -> Result<HestonParams, CliError> {
    let p = &cfg.params;
    Ok(HestonParams::new(p.s0, p.r, p.rho, cir_params(cfg)?, p.x0)?)
}

/// The configured model and payoff with `scheme` on `n` coarse steps.
pub fn build(cfg: &ExperimentConfig, scheme: SchemeKind, n: usize) -> Result<Box<dyn Experiment>, CliError> {
    let horizon = cfg.params.horizon;
    Ok(match cfg.model {
        ModelKind::Cir => {
            let model = CirModel { scheme: CirScheme::new(cir_params(cfg)?, scheme)?, x0: cfg.params.x0 };
            let lambda = cfg.lambda;
            let payoff: CirPayoff = Box::new(move |x: &f64| (-lambda * x).exp());
            Box::new(Problem::new(model, payoff, n, horizon)?)
        }
        ModelKind::Heston => {
            let model = HestonModel { scheme: HestonScheme::new(heston_params(cfg)?, scheme)? };
            let strike = cfg.strike;
            let payoff: HestonPayoff = Box::new(move |s: &HestonState| (strike - s.s).max(0.0));
            Box::new(Problem::new(model, payoff, n, horizon)?)
        }
    })
}

/// Exact value of the configured expectation.
pub fn reference(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    Ok(match cfg.model {
        ModelKind::Cir => laplace_transform(&cir_params(cfg)?, cfg.params.x0, cfg.params.horizon, cfg.lambda),
        ModelKind::Heston => reference_put(&heston_params(cfg)?, cfg.strike, cfg.params.horizon)?,
    })
}

fn zeta_for(cfg: &ExperimentConfig) -> Option<f64> {
    cfg.zeta.or(if cfg.reproducible { Some(NOMINAL_ZETA) } else { None })
}

fn seconds(cfg: &ExperimentConfig, s: f64) -> f64 {
    if cfg.reproducible {
        0.0
    } else {
        s
    }
}

/// Least-squares slope of `log|bias|` against `log(1/n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Slope {
    Value(f64),
    Indeterminate(&'static str),
}

impl Slope {
    pub fn value(self) -> Option<f64> {
        match self {
            Slope::Value(v) => Some(v),
            Slope::Indeterminate(_) => None,
        }
    }
}

impl std::fmt::Display for Slope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Slope::Value(v) => write!(f, "{v:.2}"),
            Slope::Indeterminate(s) => f.write_str(s),
        }
    }
}

/// Slope over the resolved rows only.
pub fn regress_slope(rows: &[Row]) -> Slope {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.resolved()).map(|r| ((1.0 / r.n as f64).ln(), r.bias.unwrap().abs().ln())).collect();
    let distinct = {
        let mut xs: Vec<u64> = pts.iter().map(|p| p.0.to_bits()).collect();
        xs.sort_unstable();
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Slope::Indeterminate("indeterminate");
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Slope::Value(sxy / sxx)
}

fn plan_json(p: &EstimatorPlan) -> serde_json::Value {
    json!({
        "m1": p.m1,
        "m2": p.m2,
        "mode": format!("{:?}", p.mode).to_lowercase(),
        "branch": p.branch.map(|b| format!("{b:?}")),
        "warning": p.warning,
    })
}

fn pilot_json(s: &PilotStats) -> serde_json::Value {
    json!({
        "sigma2_sq": s.sigma2_sq,
        "sigma4_sq": s.sigma4_sq,
        "gamma": s.gamma,
        "zeta": s.zeta,
        "m_pilot": s.m_pilot,
    })
}

/// Shared driver of `converge` and `price`: one run per `n` at the highest
/// requested order, from which every order is read off.
fn sweep(cfg: &ExperimentConfig, command: &str, allocate: bool) -> Result<Report, CliError> {
    let scheme = cfg.single_scheme()?;
    let reference = reference(cfg)?;
    let workers = cfg.worker_count();
    let max_order = *cfg.orders.iter().max().unwrap();
    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    for &n in &cfg.ns {
        let exp = build(cfg, scheme, n)?;
        let (m1, m2, extra) = if max_order == 1 {
            (cfg.samples.unwrap_or(1_000_000), 0, json!(null))
        } else if allocate {
            let stats = exp.pilot(cfg.pilot, cfg.seed, workers, zeta_for(cfg))?;
            let plan = match (cfg.samples, cfg.eps) {
                (Some(m1), _) => allocate_dependent_for_m1(&stats, m1),
                (None, Some(eps)) => allocate_dependent(&stats, eps / 1.96)?,
                (None, None) => allocate_dependent_for_m1(&stats, 1_000_000),
            };
            (plan.m1, plan.m2, json!({ "pilot": pilot_json(&stats), "plan": plan_json(&plan) }))
        } else {
            let m = cfg.samples.unwrap_or(1_000_000);
            (m, m, json!(null))
        };
        let purpose = if allocate { PURPOSE_CONVERGE } else { PURPOSE_PRICE } + n as u64;
        let stats = exp.run_mixed(max_order, m1, m2, &RunStreams::new(cfg.seed, purpose), workers);
        for &order in &cfg.orders {
            let e = stats.estimate(order);
            let used = if order == 1 { e.m1 } else { e.m1 + e.m2 };
            rows.push(Row::new(n, order, e.value, e.se, Some(reference), used, seconds(cfg, stats.seconds), cfg.seed));
        }
        per_n.push(json!({ "n": n, "m1": m1, "m2": m2, "seconds": stats.seconds, "allocation": extra }));
    }
    let mut summary = vec![format!("reference {reference:.10}")];
    let mut slopes = serde_json::Map::new();
    let mut unresolved = Vec::new();
    for &order in &cfg.orders {
        let of_order: Vec<Row> = rows.iter().copied().filter(|r| r.order == order).collect();
        let slope = regress_slope(&of_order);
        summary.push(format!("order {order}: slope {slope}"));
        slopes.insert(order.to_string(), serde_json::to_value(slope).unwrap());
        for r in of_order.iter().filter(|r| !r.resolved()) {
            unresolved.push(json!({ "n": r.n, "order": r.order }));
        }
    }
    for r in &rows {
        let flag = if r.resolved() { "" } else { "  (unresolved)" };
        summary.push(format!(
            "n={} order={} estimate={:.8} se={:.2e} bias={:+.3e}{flag}",
            r.n,
            r.order,
            r.estimate,
            r.se,
            r.bias.unwrap()
        ));
    }
    Ok(Report {
        command: command.into(),
        tables: vec![Table { label: None, rows }],
        details: json!({
            "reference": reference,
            "slopes": slopes,
            "unresolved": unresolved,
            "resolution_se": RESOLUTION,
            "runs": per_n,
        }),
        summary,
    })
}

/// Boosted estimates for every `(n, order)` with an allocation from a pilot,
/// plus regressed convergence slopes.
pub fn converge(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    sweep(cfg, "converge", true)
}

/// Boosted estimates with `M1 = M2 = samples`.
pub fn price(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    sweep(cfg, "price", false)
}

/// Variance of the order-2 correction per scheme and `n`.
pub fn variance_table(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let workers = cfg.worker_count();
    let m = cfg.samples.unwrap_or(1_000_000);
    let mut tables = Vec::new();
    let mut summary = Vec::new();
    for &scheme in &cfg.schemes {
        let mut rows = Vec::new();
        for &n in &cfg.ns {
            let exp = build(cfg, scheme, n)?;
            let start = Instant::now();
            let ps = exp.correction_power_sums(m, &RunStreams::new(cfg.seed, PURPOSE_VARIANCE + n as u64), workers);
            let secs = start.elapsed().as_secs_f64();
            rows.push(Row::new(n, 2, ps.variance(), ps.variance_se(), None, m, seconds(cfg, secs), cfg.seed));
            summary.push(format!(
                "{:<9} n={n:<3} sigma4^2={:.4e} +/- {:.1e}",
                scheme.name(),
                ps.variance(),
                1.96 * ps.variance_se()
            ));
        }
        tables.push(Table { label: Some(scheme.name().to_string()), rows });
    }
    if tables.len() == 1 {
        tables[0].label = None;
    }
    Ok(Report { command: "variance-table".into(), tables, details: json!({ "confidence": 0.95 }), summary })
}

/// Pilot, allocation and full runs of both estimators at a target half-width.
pub fn allocate(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let scheme = cfg.single_scheme()?;
    let eps = cfg.eps.ok_or_else(|| CliError::Config("allocate needs --eps".into()))?;
    let reference = reference(cfg)?;
    let workers = cfg.worker_count();
    let target = eps / 1.96;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut summary = vec![format!("reference {reference:.10}, target se {target:.3e}")];
    for &n in &cfg.ns {
        let exp = build(cfg, scheme, n)?;
        let stats = exp.pilot(cfg.pilot, cfg.seed, workers, zeta_for(cfg))?;
        let (i1, i2) = allocate_independent(&stats, target)?;
        let plan = allocate_dependent(&stats, target)?;
        let ti = exp.theta(Mode::Independent, i1, i2, cfg.seed, workers);
        let td = exp.theta(plan.mode, plan.m1, plan.m2, cfg.seed, workers);
        for t in [&ti, &td] {
            rows.push(Row::new(
                n,
                2,
                t.estimate,
                t.se,
                Some(reference),
                t.m1 + t.m2,
                seconds(cfg, t.seconds),
                cfg.seed,
            ));
        }
        let ratio = td.seconds / ti.seconds;
        let joint = (ti.variance + td.variance).sqrt();
        summary.push(format!(
            "n={n}: independent {i1}+{i2} in {:.2}s, dependent {}+{} in {:.2}s, time ratio {ratio:.3}",
            ti.seconds, plan.m1, plan.m2, td.seconds
        ));
        runs.push(json!({
            "n": n,
            "pilot": pilot_json(&stats),
            "independent": { "m1": i1, "m2": i2, "se": ti.se, "seconds": ti.seconds,
                             "predicted_cost": predicted_cost(Mode::Independent, &stats, i1, i2) },
            "dependent": { "plan": plan_json(&plan), "se": td.se, "seconds": td.seconds,
                           "predicted_cost": predicted_cost(plan.mode, &stats, plan.m1, plan.m2) },
            "time_ratio": ratio,
            "agreement_z": (td.estimate - ti.estimate) / joint,
        }));
    }
    Ok(Report {
        command: "allocate".into(),
        tables: vec![Table { label: None, rows }],
        details: json!({ "target_se": target, "row_order": ["independent", "dependent"], "runs": runs }),
        summary,
    })
}

/// Outcome of one deterministic check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

fn check(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Check {
    Check { name: name.into(), value, bound: format!("[{lo:e}, {hi:e}]"), pass: (lo..=hi).contains(&value) }
}

/// Deterministic checks of the scheme and the coefficient identities at the
/// configured CIR parameters.
pub fn oracle_checks(cfg: &ExperimentConfig) -> Result<Vec<Check>, CliError> {
    let p = cir_params(cfg)?;
    let mut out = Vec::new();
    let xs = [0.0, 0.5, 1.0, 10.0];
    if p.feller_ratio() <= 1.0 {
        let ev = oracle::gaussian_even_moments(12);
        for m in 1..=5 {
            let ratio = oracle::local_error_ratio(&p, 0.1, m, &ev, &xs)?;
            out.push(check(format!("local error ratio m={m}"), ratio, 6.5, 9.5));
        }
        let f = oracle::Polynomial::monomial(4);
        let exact = oracle::apply_semigroup(&p, cfg.params.horizon, &f).eval(cfg.params.x0);
        for order in 1..=3 {
            let b = |n| {
                oracle::boosted_polynomial(&p, cfg.params.horizon, n, order, &f, &ev)
                    .map(|q| q.eval(cfg.params.x0) - exact)
            };
            let slope = (b(4)? / b(8)?).abs().log2();
            let want = 2.0 * order as f64;
            out.push(check(format!("boosted order {order} slope"), slope, want - 0.2, want + 0.2));
        }
    }
    let exact_cmm = oracle::cmm_identity_holds(20);
    out.push(check("c_mm closed form, m <= 20", if exact_cmm { 0.0 } else { 1.0 }, 0.0, 0.0));
    let ys: Vec<f64> = (0..1000).map(|i| -6.0 + 12.0 * i as f64 / 999.0).collect();
    for m in 1..=8 {
        out.push(check(format!("eta* residual m={m}"), oracle::gaussian_eta_star_check(m, &ys), 0.0, 1e-10));
        out.push(check(format!("hermite inversion m={m}"), oracle::hermite_inversion_check(m, &ys), 0.0, 1e-9));
    }
    Ok(out)
}

/// [`oracle_checks`] as a report.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let checks = oracle_checks(cfg)?;
    let summary = checks
        .iter()
        .map(|c| format!("{} {} = {:.4e} in {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.bound))
        .collect();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let report =
        Report { command: "oracle-check".into(), tables: Vec::new(), details: json!({ "checks": checks }), summary };
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

/// Median kernel times and their ratio for the configured model.
pub fn kernel_zeta(cfg: &ExperimentConfig, n: usize, batches: usize, batch: u64) -> Result<(f64, f64, f64), CliError> {
    let exp = build(cfg, cfg.single_scheme()?, n)?;
    let (t1, t2) = exp.kernel_times(batches, batch, cfg.seed);
    Ok((t1, t2, t2 / t1))
}
