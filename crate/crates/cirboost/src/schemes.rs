//! One-step maps for the CIR process.
//!
//! The splitting scheme composes the drift flow `X0` with the volatility
//! flow `X1`. It is only defined when `sigma^2 <= 4a`; the two switching
//! variants fall back to a moment-matched variable below a small threshold
//! and work for any `sigma`.

use statrs::function::erf::erfc;

use crate::cir::{exact_moments, psi_k, CirParams, ExactTransition};
use crate::error::{Error, Result};
use crate::rng::StreamFamily;

/// `N^{-1}(1/6)`; the upper cut is its negative.
pub const SWITCH_A_CUT: f64 = -0.967_421_566_101_700_7;
pub const SWITCH_A_BOUND: f64 = 1.732_050_807_568_877_2;

pub const SWITCH_B_Z1: f64 = 2.752_345_170_471_058_6;
pub const SWITCH_B_Z2: f64 = 3.5;
pub const SWITCH_B_C1: f64 = 2.58;
pub const SWITCH_B_C2: f64 = 3.106_520_327_375_868;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    NvGaussian,
    SwitchA,
    SwitchB,
    Exact,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] =
        [SchemeKind::NvGaussian, SchemeKind::SwitchA, SchemeKind::SwitchB, SchemeKind::Exact];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::NvGaussian => "nv",
            SchemeKind::SwitchA => "switch-a",
            SchemeKind::SwitchB => "switch-b",
            SchemeKind::Exact => "exact",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nv" | "nv-gaussian" | "gaussian" | "phi" => Ok(SchemeKind::NvGaussian),
            "switch-a" | "a" | "phi-a" => Ok(SchemeKind::SwitchA),
            "switch-b" | "b" | "phi-b" => Ok(SchemeKind::SwitchB),
            "exact" | "e" => Ok(SchemeKind::Exact),
            _ => Err(Error::InvalidParameter(format!("unknown scheme '{s}'"))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Handle on the auxiliary randomness of one step: the stream of lane
/// `index` for a given Monte Carlo sample.
#[derive(Clone, Copy, Debug)]
pub struct AuxDraw {
    pub family: StreamFamily,
    pub sample: u64,
    pub index: u32,
}

#[derive(Clone, Copy, Debug)]
pub struct StepInput {
    pub x: f64,
    pub h: f64,
    pub w: f64,
    pub u: AuxDraw,
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// `e^{-kt} x + psi_k(t) (a - sigma^2/4)`
pub fn flow_x0(params: &CirParams, t: f64, x: f64) -> f64 {
    (-params.k * t).exp() * x + psi_k(params.k, t) * params.reduced_drift()
}

/// `(sqrt(x) + w sigma / 2)^2`
pub fn flow_x1(params: &CirParams, w: f64, x: f64) -> f64 {
    let r = x.sqrt() + 0.5 * params.sigma * w;
    r * r
}

/// `X0(h/2, X1(w, X0(h/2, x)))`.
pub fn phi(params: &CirParams, x: f64, h: f64, w: f64) -> f64 {
    flow_x0(params, h / 2.0, flow_x1(params, w, flow_x0(params, h / 2.0, x).max(0.0)))
}

/// State level below which the splitting map is replaced by the fallback
/// variable, for a `Y` supported in `[-a_y, a_y]`. Zero when `sigma^2 <= 4a`.
pub fn threshold_k2(params: &CirParams, h: f64, a_y: f64) -> f64 {
    let gap = -params.reduced_drift();
    if gap <= 0.0 {
        return 0.0;
    }
    let e = (params.k * h / 2.0).exp();
    let g = gap * psi_k(params.k, h / 2.0);
    let r = (e * g).sqrt() + 0.5 * params.sigma * a_y * h.sqrt();
    e * (g + r * r)
}

/// Three-point variable with moments `0, 1, 0, 3, 0`, read off a normal by quantiles.
#[inline]
pub fn switch_a_y(n: f64) -> f64 {
    if n < SWITCH_A_CUT {
        -SWITCH_A_BOUND
    } else if n < -SWITCH_A_CUT {
        0.0
    } else {
        SWITCH_A_BOUND
    }
}

/// Normal clipped to `[-3.5, 3.5]` with its second and fourth moments kept.
#[inline]
pub fn switch_b_y(n: f64) -> f64 {
    if n <= -SWITCH_B_C2 {
        -SWITCH_B_Z2
    } else if n <= -SWITCH_B_C1 {
        -SWITCH_B_Z1
    } else if n <= SWITCH_B_C1 {
        n
    } else if n <= SWITCH_B_C2 {
        SWITCH_B_Z1
    } else {
        SWITCH_B_Z2
    }
}

/// A validated `(params, kind)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirScheme {
    pub params: CirParams,
    pub kind: SchemeKind,
}

impl CirScheme {
    pub fn new(params: CirParams, kind: SchemeKind) -> Result<Self> {
        if kind == SchemeKind::NvGaussian && params.feller_ratio() > 1.0 {
            return Err(Error::FellerViolation { scheme: "nv", ratio: params.feller_ratio() });
        }
        Ok(Self { params, kind })
    }

    /// Precomputes everything that depends only on the step size.
    pub fn prepare(&self, h: f64) -> CirStep {
        let p = self.params;
        let tab = exact_moments(&p, h, 2);
        let a_y = match self.kind {
            SchemeKind::SwitchA => SWITCH_A_BOUND,
            SchemeKind::SwitchB => SWITCH_B_Z2,
            _ => 0.0,
        };
        CirStep {
            kind: self.kind,
            sqrt_h: h.sqrt(),
            e_half: (-p.k * h / 2.0).exp(),
            drift_half: p.reduced_drift() * psi_k(p.k, h / 2.0),
            half_sigma: p.sigma / 2.0,
            threshold: if a_y > 0.0 { threshold_k2(&p, h, a_y) } else { 0.0 },
            u1: [tab.coeff(0, 1), tab.coeff(1, 1)],
            u2: [tab.coeff(0, 2), tab.coeff(1, 2), tab.coeff(2, 2)],
            exact: ExactTransition::new(&p, h),
        }
    }
}

/// A scheme specialised to one step size.
#[derive(Clone, Copy, Debug)]
pub struct CirStep {
    kind: SchemeKind,
    sqrt_h: f64,
    e_half: f64,
    drift_half: f64,
    half_sigma: f64,
    threshold: f64,
    u1: [f64; 2],
    u2: [f64; 3],
    exact: ExactTransition,
}

impl CirStep {
    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    fn phi(&self, x: f64, w: f64) -> f64 {
        let r = (self.e_half * x + self.drift_half).max(0.0).sqrt() + self.half_sigma * w;
        (self.e_half * r * r + self.drift_half).max(0.0)
    }

    /// First two exact moments and the atom weight of the fallback variable.
    #[inline]
    fn fallback(&self, x: f64) -> (f64, f64) {
        let m1 = self.u1[0] + self.u1[1] * x;
        let m2 = self.u2[0] + x * (self.u2[1] + x * self.u2[2]);
        let pi = 0.5 * (1.0 - (1.0 - m1 * m1 / m2).max(0.0).sqrt());
        (m1, pi)
    }

    /// Advances `x` by one step given the Brownian increment `w`.
    #[inline]
    pub fn step(&self, x: f64, w: f64, aux: AuxDraw) -> f64 {
        match self.kind {
            SchemeKind::NvGaussian => self.phi(x, w),
            SchemeKind::SwitchA => {
                let n = w / self.sqrt_h;
                if x >= self.threshold {
                    self.phi(x, self.sqrt_h * switch_a_y(n))
                } else {
                    let (m1, pi) = self.fallback(x);
                    if m1 <= 0.0 {
                        0.0
                    } else if normal_cdf(n) < 1.0 - pi {
                        m1 / (2.0 * (1.0 - pi))
                    } else {
                        m1 / (2.0 * pi)
                    }
                }
            }
            SchemeKind::SwitchB => {
                let n = w / self.sqrt_h;
                if x >= self.threshold {
                    self.phi(x, self.sqrt_h * switch_b_y(n))
                } else {
                    let (m1, pi) = self.fallback(x);
                    if m1 <= 0.0 {
                        0.0
                    } else {
                        m1 / (2.0 * pi) * normal_cdf(n).powf(1.0 / (2.0 * pi) - 1.0)
                    }
                }
            }
            SchemeKind::Exact => {
                let mut rng = aux.family.stream(aux.sample, aux.index);
                self.exact.sample(x, &mut rng)
            }
        }
    }
}

/// Uniform entry point: one step of `kind` from `input`.
pub fn step(kind: SchemeKind, params: &CirParams, input: StepInput) -> Result<f64> {
    if !(input.h > 0.0) || !(input.x >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad step input h={} x={}", input.h, input.x)));
    }
    Ok(CirScheme::new(*params, kind)?.prepare(input.h).step(input.x, input.w, input.u))
}
