//! The Heston model with a CIR variance factor.
//!
//! `dS = r S dt + sqrt(X) S (rho dW + sqrt(1 - rho^2) dZ)` and `X` follows the
//! CIR dynamics driven by `W`. The second-order step composes an exact
//! update of `S` given a frozen variance (`S1`) with a joint update driven by
//! the CIR scheme (`S2`), in an order chosen by a fair coin.

use num_complex::Complex64;

use crate::cir::CirParams;
use crate::error::{ensure, Error, Result};
use crate::schemes::{AuxDraw, CirScheme, CirStep, SchemeKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonParams {
    pub s0: f64,
    pub r: f64,
    pub rho: f64,
    pub vol: CirParams,
    pub x0: f64,
}

impl HestonParams {
    pub fn new(s0: f64, r: f64, rho: f64, vol: CirParams, x0: f64) -> Result<Self> {
        ensure(s0 > 0.0 && s0.is_finite(), || format!("s0 must be > 0, got {s0}"))?;
        ensure(r.is_finite(), || format!("r must be finite, got {r}"))?;
        ensure((-1.0..=1.0).contains(&rho), || format!("rho must lie in [-1, 1], got {rho}"))?;
        ensure(x0 >= 0.0 && x0.is_finite(), || format!("x0 must be >= 0, got {x0}"))?;
        Ok(Self { s0, r, rho, vol, x0 })
    }

    pub fn initial_state(&self) -> HestonState {
        HestonState { x: self.x0, s: self.s0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonState {
    pub x: f64,
    pub s: f64,
}

/// Exact update of `S` with the variance frozen; `z` is the increment of `Z`.
pub fn s1_map(params: &HestonParams, state: HestonState, z: f64) -> HestonState {
    let f = (state.x * (1.0 - params.rho * params.rho)).sqrt() * z;
    HestonState { x: state.x, s: state.s * f.exp() }
}

/// Joint update of `(X, S)` driven by `W`, with `cir_step` advancing the variance.
pub fn s2_map(params: &HestonParams, state: HestonState, h: f64, cir_step: impl FnOnce(f64) -> f64) -> HestonState {
    let CirParams { a, k, sigma } = params.vol;
    let x = state.x;
    let xn = cir_step(x);
    let q = params.rho / sigma;
    let lr = (params.r - q * a) * h + (q * k - 0.5) * 0.5 * (x + xn) * h + q * (xn - x);
    HestonState { x: xn, s: state.s * lr.exp() }
}

/// One step of the coin-ordered composition with the CIR map chosen by `kind`.
pub fn phi_heston(
    params: &HestonParams,
    state: HestonState,
    h: f64,
    w: f64,
    z: f64,
    b: bool,
    kind: SchemeKind,
    aux: AuxDraw,
) -> Result<HestonState> {
    Ok(HestonScheme::new(*params, kind)?.prepare(h).step(state, w, z, b, aux))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonScheme {
    pub params: HestonParams,
    pub kind: SchemeKind,
}

impl HestonScheme {
    pub fn new(params: HestonParams, kind: SchemeKind) -> Result<Self> {
        CirScheme::new(params.vol, kind)?;
        Ok(Self { params, kind })
    }

    pub fn prepare(&self, h: f64) -> HestonStep {
        let p = &self.params;
        let CirParams { a, k, sigma } = p.vol;
        let q = p.rho / sigma;
        HestonStep {
            cir: CirScheme { params: p.vol, kind: self.kind }.prepare(h),
            c0: (p.r - q * a) * h,
            c1: (q * k - 0.5) * 0.5 * h,
            q,
            perp: (1.0 - p.rho * p.rho).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HestonStep {
    cir: CirStep,
    c0: f64,
    c1: f64,
    q: f64,
    perp: f64,
}

impl HestonStep {
    #[inline]
    fn s1(&self, st: HestonState, z: f64) -> HestonState {
        HestonState { x: st.x, s: st.s * (self.perp * st.x.sqrt() * z).exp() }
    }

    #[inline]
    fn s2(&self, st: HestonState, w: f64, aux: AuxDraw) -> HestonState {
        let xn = self.cir.step(st.x, w, aux);
        let lr = self.c0 + self.c1 * (st.x + xn) + self.q * (xn - st.x);
        HestonState { x: xn, s: st.s * lr.exp() }
    }

    /// `b = true` applies `S1` first, then `S2`.
    #[inline]
    pub fn step(&self, st: HestonState, w: f64, z: f64, b: bool, aux: AuxDraw) -> HestonState {
        if b {
            self.s2(self.s1(st, z), w, aux)
        } else {
            self.s1(self.s2(st, w, aux), z)
        }
    }
}

/// Characteristic function of `ln(S_T / S_0) - rT` at a complex argument,
/// in the formulation whose complex logarithm never crosses its branch cut.
pub fn log_return_cf(params: &HestonParams, t: f64, u: Complex64) -> Complex64 {
    let CirParams { a, k, sigma } = params.vol;
    let i = Complex64::i();
    let s2 = sigma * sigma;
    let beta = k - params.rho * sigma * i * u;
    let d = (beta * beta + s2 * (i * u + u * u)).sqrt();
    let bm = beta - d;
    let g = bm / (beta + d);
    let edt = (-d * t).exp();
    let c = a / s2 * (bm * t - 2.0 * ((1.0 - g * edt) / (1.0 - g)).ln());
    let dd = bm / s2 * (1.0 - edt) / (1.0 - g * edt);
    (c + dd * params.x0).exp()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn panel_integral(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, panels: usize, rule: &[(f64, f64)]) -> f64 {
    let w = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * w;
        let part: f64 = rule.iter().map(|&(z, wt)| wt * f(mid + 0.5 * w * z)).sum();
        acc += 0.5 * w * part;
    }
    acc
}

/// Price of a European put with strike `strike` and maturity `t`.
///
/// Uses the single-integral representation of the call along the line
/// `Im u = -1/2` and put-call parity. The quadrature is refined by doubling
/// both the truncation point and the panel count until successive values of
/// the price agree to `1e-8`.
pub fn reference_put(params: &HestonParams, strike: f64, t: f64) -> Result<f64> {
    ensure(strike > 0.0 && t > 0.0, || format!("need K > 0 and T > 0, got K={strike} T={t}"))?;
    let s0 = params.s0;
    let kx = (s0 / strike).ln() + params.r * t;
    let integrand = |u: f64| {
        let v = log_return_cf(params, t, Complex64::new(u, -0.5));
        let e = Complex64::new(0.0, u * kx).exp();
        (e * v).re / (u * u + 0.25)
    };
    let pref = (s0 * strike).sqrt() * (-params.r * t / 2.0).exp() / std::f64::consts::PI;
    let rule = gauss_legendre(16);
    let price = |upper: f64, panels: usize| {
        let call = s0 - pref * panel_integral(&integrand, 0.0, upper, panels, &rule);
        call - s0 + strike * (-params.r * t).exp()
    };
    let tol = 1e-8;
    let mut upper = 50.0;
    let mut panels = 16;
    let mut prev = price(upper, panels);
    for _ in 0..12 {
        let finer = price(upper, 2 * panels);
        let longer = price(2.0 * upper, 4 * panels);
        let (dp, du) = ((finer - prev).abs(), (longer - finer).abs());
        if dp < tol && du < tol && longer.is_finite() {
            return Ok(longer);
        }
        if dp >= tol {
            panels *= 2;
        }
        if du >= tol {
            upper *= 2.0;
            panels *= 2;
        }
        prev = price(upper, panels);
    }
    Err(Error::Quadrature(format!("put price did not settle: upper={upper}, panels={panels}, last={prev}")))
}
