//! Properties of the two estimators of the order-4 approximation.

use cirboost::estimators::{predicted_variance, run_theta, Mode, PilotStats, Problem};
use cirboost::grids::HestonModel;
use cirboost::heston::{HestonParams, HestonScheme, HestonState};
use cirboost::{CirParams, SchemeKind};

fn table5() -> Problem<HestonModel, impl Fn(&HestonState) -> f64 + Sync> {
    let cir = CirParams::new(0.1, 1.0, 0.63).unwrap();
    let hp = HestonParams::new(100.0, 0.0, -0.3, cir, 0.1).unwrap();
    let scheme = HestonScheme::new(hp, SchemeKind::NvGaussian).unwrap();
    Problem::new(HestonModel { scheme }, |s: &HestonState| (100.0 - s.s).max(0.0), 3, 1.0).unwrap()
}

#[test]
fn modes_agree_within_joint_error() {
    let p = table5();
    let d = run_theta(Mode::Dependent, 300_000, 200_000, &p, 21, 1);
    let i = run_theta(Mode::Independent, 300_000, 200_000, &p, 21, 1);
    let joint = (d.variance + i.variance).sqrt();
    assert!((d.estimate - i.estimate).abs() < 5.0 * joint, "{} vs {} ({joint})", d.estimate, i.estimate);
}

#[test]
fn dependent_variance_matches_prediction() {
    let p = table5();
    let (m1, m2) = (12, 6);
    let reps = 20_000u64;
    let mut values = Vec::with_capacity(reps as usize);
    for seed in 0..reps {
        values.push(run_theta(Mode::Dependent, m1, m2, &p, 1000 + seed, 1).estimate);
    }
    let mean = values.iter().sum::<f64>() / reps as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let big = cirboost::estimators::pilot(&p, 400_000, 5, 1).unwrap();
    let stats = PilotStats { zeta: 2.0, ..big };
    let want = predicted_variance(Mode::Dependent, &stats, m1, m2);
    assert!((var / want - 1.0).abs() < 0.2, "empirical {var} vs predicted {want}");
}
