//! The CIR process `dX = (a - kX) dt + sigma sqrt(X) dW`.
//!
//! Exact moments, the Laplace transform and an exact transition sampler.
//! These serve as ground truth for the discretisation schemes.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirParams {
    pub a: f64,
    pub k: f64,
    pub sigma: f64,
}

impl CirParams {
    pub fn new(a: f64, k: f64, sigma: f64) -> Result<Self> {
        ensure(a.is_finite() && a >= 0.0, || format!("a must be >= 0, got {a}"))?;
        ensure(k.is_finite(), || format!("k must be finite, got {k}"))?;
        ensure(sigma.is_finite() && sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
        Ok(Self { a, k, sigma })
    }

    /// `sigma^2 / (4a)`; the splitting scheme needs this to be at most 1.
    pub fn feller_ratio(&self) -> f64 {
        self.sigma * self.sigma / (4.0 * self.a)
    }

    /// Drift of the ODE part of the splitting, `a - sigma^2/4`.
    pub fn reduced_drift(&self) -> f64 {
        self.a - self.sigma * self.sigma / 4.0
    }

    /// `E[X_t]` started from `x`.
    pub fn mean(&self, x: f64, t: f64) -> f64 {
        (-self.k * t).exp() * x + self.a * psi_k(self.k, t)
    }
}

/// `(1 - e^{-kt}) / k`, continuously extended by `t` at `k = 0`.
pub fn psi_k(k: f64, t: f64) -> f64 {
    let z = k * t;
    if z.abs() < 1e-8 {
        t * (1.0 - z / 2.0 + z * z / 6.0)
    } else {
        -(-z).exp_m1() / k
    }
}

/// Coefficients of the moment polynomials `E[(X_t^x)^m] = sum_j u[j][m] x^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    t: f64,
    m_max: usize,
    // row m holds u_{0,m} .. u_{m,m}
    rows: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn coeff(&self, j: usize, m: usize) -> f64 {
        assert!(j <= m && m <= self.m_max, "u_({j},{m}) outside table");
        self.rows[m][j]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m]
    }

    /// `E[(X_t^x)^m]`.
    pub fn moment(&self, m: usize, x: f64) -> f64 {
        self.rows[m].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Exact moment table up to order `m_max` at time `t`.
///
/// The generator acts on `x^m` as a lower bidiagonal matrix whose diagonal
/// `-k m` is equally spaced, so its exponential has the closed form
///
/// `u_{j,m}(t) = prod_{l=j+1}^{m} (a l + sigma^2 l(l-1)/2) / (m-j)!
///              * e^{-k j t} psi_k(t)^{m-j}`,
///
/// which stays accurate as `k -> 0` and for negative `k`.
pub fn exact_moments(params: &CirParams, t: f64, m_max: usize) -> MomentTable {
    let CirParams { a, k, sigma } = *params;
    let psi = psi_k(k, t);
    let rate = |l: usize| {
        let l = l as f64;
        a * l + sigma * sigma * l * (l - 1.0) / 2.0
    };
    let rows = (0..=m_max)
        .map(|m| {
            (0..=m)
                .map(|j| {
                    let mut c = (-k * j as f64 * t).exp();
                    for (i, l) in (j + 1..=m).enumerate() {
                        c *= rate(l) * psi / (i + 1) as f64;
                    }
                    c
                })
                .collect()
        })
        .collect();
    MomentTable { t, m_max, rows }
}

/// `E[exp(-lambda X_t^x)]`.
pub fn laplace_transform(params: &CirParams, x: f64, t: f64, lambda: f64) -> f64 {
    let CirParams { a, k, sigma } = *params;
    let s2 = sigma * sigma;
    let den = 1.0 + 0.5 * s2 * lambda * psi_k(k, t);
    den.powf(-2.0 * a / s2) * (-lambda * x * (-k * t).exp() / den).exp()
}

/// Exact transition law over a fixed step: a Poisson mixture of Gammas
/// (the scaled noncentral chi-square).
#[derive(Clone, Copy, Debug)]
pub struct ExactTransition {
    half_d: f64,
    shape0: f64,
    scale: f64,
}

impl ExactTransition {
    pub fn new(params: &CirParams, t: f64) -> Self {
        let CirParams { a, k, sigma } = *params;
        let s2 = sigma * sigma;
        // c_t = 4k / (sigma^2 (1 - e^{-kt})) written through psi_k so k = 0 is the limit.
        let c = 4.0 / (s2 * psi_k(k, t));
        let d = c * (-k * t).exp();
        Self { half_d: d / 2.0, shape0: 2.0 * a / s2, scale: 2.0 / c }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let lam = self.half_d * x;
        let i = if lam > 0.0 { Poisson::new(lam).expect("finite Poisson mean").sample(rng) } else { 0.0 };
        let shape = i + self.shape0;
        if shape == 0.0 {
            return 0.0;
        }
        Gamma::new(shape, self.scale).expect("positive Gamma shape").sample(rng)
    }
}

/// One draw of `X_t^x`.
pub fn exact_sampler<R: Rng + ?Sized>(params: &CirParams, x: f64, t: f64, rng: &mut R) -> f64 {
    ExactTransition::new(params, t).sample(x, rng)
}
