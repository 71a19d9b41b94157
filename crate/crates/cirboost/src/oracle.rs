//! Deterministic checks built on exact polynomial calculus.
//!
//! The splitting flows map polynomials to polynomials, so `E[phi(x, t, sqrt(t) Y)^m]`
//! can be computed exactly from the even moments of `Y` and compared with
//! the exact CIR moments without any sampling. The second half of the
//! module holds the coefficient identities behind the smooth-function
//! analysis, computed in exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::cir::{exact_moments, psi_k, CirParams};
use crate::error::{Error, Result};

/// Dense real polynomial `a_0 + a_1 x + ... + a_L x^L`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn monomial(m: usize) -> Self {
        let mut c = vec![0.0; m + 1];
        c[m] = 1.0;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// The l1 norm of the coefficients.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        self.sub(&other.scale(-1.0))
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Polynomial::new((0..n).map(|i| get(&self.coeffs, i) - get(&other.coeffs, i)).collect())
    }
}

fn binomial_rows(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![1.0; i + 1];
        for j in 1..i {
            row[j] = prev[j - 1] + prev[j];
        }
        rows.push(row);
    }
    rows
}

/// Accumulates with Neumaier compensation.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// `x -> f(X0(t, x))`, expanded exactly.
pub fn apply_x0(params: &CirParams, t: f64, f: &Polynomial) -> Polynomial {
    let e = (-params.k * t).exp();
    let c = psi_k(params.k, t) * params.reduced_drift();
    let l = f.degree();
    let binom = binomial_rows(l);
    let mut out = vec![Compensated::default(); l + 1];
    for (j, &aj) in f.coeffs.iter().enumerate() {
        for i in 0..=j {
            out[i].add(aj * binom[j][i] * e.powi(i as i32) * c.powi((j - i) as i32));
        }
    }
    Polynomial::new(out.into_iter().map(Compensated::value).collect())
}

/// `x -> E[f(X1(sqrt(t) Y, x))]` for a symmetric `Y` with
/// `even_moments[i] = E[Y^{2i}]`.
pub fn apply_x1_expectation(params: &CirParams, t: f64, f: &Polynomial, even_moments: &[f64]) -> Result<Polynomial> {
    let l = f.degree();
    if even_moments.len() <= l {
        return Err(Error::InvalidParameter(format!(
            "need E[Y^(2i)] for i <= {l}, got {} moments",
            even_moments.len()
        )));
    }
    let b2 = params.sigma * params.sigma * t / 4.0;
    let binom = binomial_rows(2 * l);
    let mut out = vec![Compensated::default(); l + 1];
    for (j, &aj) in f.coeffs.iter().enumerate() {
        for i in 0..=j {
            let d = j - i;
            out[i].add(aj * binom[2 * j][2 * i] * b2.powi(d as i32) * even_moments[d]);
        }
    }
    Ok(Polynomial::new(out.into_iter().map(Compensated::value).collect()))
}

/// `E[N^{2i}] = (2i)! / (i! 2^i)` for `i = 0..=n`.
pub fn gaussian_even_moments(n: usize) -> Vec<f64> {
    let mut m = vec![1.0];
    for i in 1..=n {
        m.push(m[i - 1] * (2 * i - 1) as f64);
    }
    m
}

/// Even moments of the three-point variable on `{-sqrt 3, 0, sqrt 3}`.
pub fn three_point_even_moments(n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == 0 { 1.0 } else { 3f64.powi(i as i32) / 3.0 }).collect()
}

/// `x -> E[phi(x, t, sqrt(t) Y)^m]`, exactly.
pub fn scheme_moment_poly(params: &CirParams, t: f64, m: usize, even_moments: &[f64]) -> Result<Polynomial> {
    let inner = apply_x0(params, t / 2.0, &Polynomial::monomial(m));
    let mid = apply_x1_expectation(params, t, &inner, even_moments)?;
    Ok(apply_x0(params, t / 2.0, &mid))
}

/// One scheme step applied to a polynomial test function.
pub fn apply_scheme(params: &CirParams, t: f64, f: &Polynomial, even_moments: &[f64]) -> Result<Polynomial> {
    let inner = apply_x0(params, t / 2.0, f);
    let mid = apply_x1_expectation(params, t, &inner, even_moments)?;
    Ok(apply_x0(params, t / 2.0, &mid))
}

/// Values that can be linearly combined.
pub trait Linear: Sized {
    fn combine(terms: &[(f64, &Self)]) -> Self;
}

impl Linear for f64 {
    fn combine(terms: &[(f64, &Self)]) -> Self {
        let mut acc = Compensated::default();
        for (w, v) in terms {
            acc.add(w * **v);
        }
        acc.value()
    }
}

impl Linear for Polynomial {
    fn combine(terms: &[(f64, &Self)]) -> Self {
        let deg = terms.iter().map(|(_, q)| q.degree()).max().unwrap_or(0);
        let mut acc = vec![Compensated::default(); deg + 1];
        for (w, q) in terms {
            for (i, c) in q.coeffs.iter().enumerate() {
                acc[i].add(w * c);
            }
        }
        Polynomial::new(acc.into_iter().map(Compensated::value).collect())
    }
}

fn mean<V: Linear>(values: &[V]) -> V {
    let w = 1.0 / values.len() as f64;
    V::combine(&values.iter().map(|v| (w, v)).collect::<Vec<_>>())
}

/// The boosted approximation of `order` (1, 2 or 3), averaging exactly over
/// all random grids. `run` maps step sizes, in time order, to the expectation
/// of the payoff along a path with those steps.
pub fn boosted<V: Linear>(horizon: f64, n: usize, order: usize, mut run: impl FnMut(&[f64]) -> Result<V>) -> Result<V> {
    if n < 2 || !(1..=3).contains(&order) {
        return Err(Error::InvalidParameter(format!("need n >= 2 and order in 1..=3, got n={n} order={order}")));
    }
    let nf = n as f64;
    let h = [horizon / nf, horizon / (nf * nf), horizon / (nf * nf * nf)];
    let coarse = |fine_cells: &[usize]| -> Vec<f64> {
        (0..n).flat_map(|c| if fine_cells.contains(&c) { vec![h[1]; n] } else { vec![h[0]] }).collect()
    };
    let p0 = run(&coarse(&[]))?;
    if order == 1 {
        return Ok(p0);
    }
    let p1 = mean(&(0..n).map(|c| run(&coarse(&[c]))).collect::<Result<Vec<_>>>()?);
    if order == 2 {
        return Ok(V::combine(&[(1.0 - nf, &p0), (nf, &p1)]));
    }
    let mut refined = Vec::with_capacity(n * n);
    for kappa in 0..n {
        for kp in 0..n {
            let mut steps = Vec::new();
            for c in 0..n {
                if c != kappa {
                    steps.push(h[0]);
                    continue;
                }
                for j in 0..n {
                    if j == kp {
                        steps.extend(std::iter::repeat_n(h[2], n));
                    } else {
                        steps.push(h[1]);
                    }
                }
            }
            refined.push(run(&steps)?);
        }
    }
    let p2 = mean(&refined);
    let mut pairs = Vec::new();
    for k1 in 0..n {
        for k2 in k1 + 1..n {
            let both = run(&coarse(&[k1, k2]))?;
            let one = run(&coarse(&[k1]))?;
            let two = run(&coarse(&[k2]))?;
            pairs.push(V::combine(&[(1.0, &both), (-1.0, &one), (-1.0, &two), (1.0, &p0)]));
        }
    }
    let t3 = mean(&pairs);
    let (n2, np) = (nf * nf, nf * (nf - 1.0) / 2.0);
    Ok(V::combine(&[(1.0 - nf, &p0), (nf - n2, &p1), (n2, &p2), (np, &t3)]))
}

/// [`boosted`] for a polynomial payoff and the scheme driven by `Y`.
pub fn boosted_polynomial(
    params: &CirParams,
    horizon: f64,
    n: usize,
    order: usize,
    f: &Polynomial,
    even_moments: &[f64],
) -> Result<Polynomial> {
    boosted(horizon, n, order, |steps| {
        steps.iter().rev().try_fold(f.clone(), |g, &h| apply_scheme(params, h, &g, even_moments))
    })
}

/// `c exp(-lambda x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpAffine {
    pub c: f64,
    pub lambda: f64,
}

/// One Gaussian scheme step applied to `c exp(-lambda x)`; the result has
/// the same form since `(sqrt y + b N)^2` is noncentral chi-square.
pub fn apply_scheme_exp(params: &CirParams, t: f64, g: ExpAffine) -> Result<ExpAffine> {
    if params.feller_ratio() > 1.0 || g.lambda < 0.0 {
        return Err(Error::InvalidParameter("closed form needs sigma^2 <= 4a and lambda >= 0".into()));
    }
    let e = (-params.k * t / 2.0).exp();
    let d = params.reduced_drift() * psi_k(params.k, t / 2.0);
    let drift = |g: ExpAffine| ExpAffine { c: g.c * (-g.lambda * d).exp(), lambda: g.lambda * e };
    let g = drift(g);
    let q = 1.0 + 0.5 * g.lambda * params.sigma * params.sigma * t;
    Ok(drift(ExpAffine { c: g.c / q.sqrt(), lambda: g.lambda / q }))
}

/// Exact value at `x` of the boosted approximation of `exp(-lambda .)` for
/// the Gaussian scheme.
pub fn boosted_laplace(params: &CirParams, horizon: f64, n: usize, order: usize, x: f64, lambda: f64) -> Result<f64> {
    boosted(horizon, n, order, |steps| {
        let g = steps.iter().rev().try_fold(ExpAffine { c: 1.0, lambda }, |g, &h| apply_scheme_exp(params, h, g))?;
        Ok(g.c * (-g.lambda * x).exp())
    })
}

/// `x -> E[f(X_t^x)]` through the exact moment table.
pub fn apply_semigroup(params: &CirParams, t: f64, f: &Polynomial) -> Polynomial {
    let tab = exact_moments(params, t, f.degree());
    let mut out = vec![Compensated::default(); f.degree() + 1];
    for (m, &am) in f.coeffs.iter().enumerate() {
        for (j, &u) in tab.row(m).iter().enumerate() {
            out[j].add(am * u);
        }
    }
    Polynomial::new(out.into_iter().map(Compensated::value).collect())
}

/// `exp(t G)` for the generator restricted to polynomials of degree `<= m_max`,
/// by scaling and squaring a Taylor series. Column `m` holds the coefficients
/// of `E[(X_t^x)^m]`. Used as an oracle independent of the closed form.
pub fn generator_exponential(params: &CirParams, t: f64, m_max: usize) -> Vec<Vec<f64>> {
    let n = m_max + 1;
    // g[j][m]: coefficient of x^j in G x^m
    let mut g = vec![vec![0.0; n]; n];
    for m in 0..n {
        let mf = m as f64;
        g[m][m] = -params.k * mf;
        if m > 0 {
            g[m - 1][m] = params.a * mf + params.sigma * params.sigma * mf * (mf - 1.0) / 2.0;
        }
    }
    let scale: f64 = g.iter().flatten().map(|v| v.abs()).sum::<f64>() * t;
    let squarings = if scale > 0.5 { (scale / 0.5).log2().ceil() as u32 } else { 0 };
    let tt = t / 2f64.powi(squarings as i32);
    let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| {
        let mut z = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    z[i][j] += x[i][k] * y[k][j];
                }
            }
        }
        z
    };
    let mut result: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut term = result.clone();
    let a: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|v| v * tt).collect()).collect();
    for p in 1..40 {
        term = mul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= p as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}

/// Explicit constants of the polynomial norm bounds for horizon `T`.
pub fn lemma_constants(params: &CirParams, horizon: f64) -> (f64, f64) {
    let c_x0 = 1.0 + params.reduced_drift().abs() * horizon.max(1.0);
    let r = 1.0 + params.sigma / 2.0 * horizon.max(1.0).sqrt();
    (c_x0, r * r)
}

/// Triangular table `c_{j,m}`, `1 <= j <= m <= m_max`, in exact rationals.
#[derive(Clone, Debug)]
pub struct CjmTable {
    rows: Vec<Vec<BigRational>>,
}

impl CjmTable {
    pub fn m_max(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, j: usize, m: usize) -> &BigRational {
        &self.rows[m - 1][j - 1]
    }
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `c_{1,1} = -1`,
/// `c_{j,m} = (2j/(m-1) - 4) c_{j,m-1} [j<m] + 2/(m-1) c_{j-1,m-1} [j>1]`.
pub fn cjm_table(m_max: usize) -> CjmTable {
    assert!(m_max >= 1, "m_max must be at least 1");
    let mut rows = vec![vec![rat(-1, 1)]];
    for m in 2..=m_max {
        let prev = &rows[m - 2];
        let d = (m - 1) as i64;
        let row = (1..=m)
            .map(|j| {
                let mut c = BigRational::zero();
                if j < m {
                    c += rat(2 * j as i64 - 4 * d, d) * &prev[j - 1];
                }
                if j > 1 {
                    c += rat(2, d) * &prev[j - 2];
                }
                c
            })
            .collect();
        rows.push(row);
    }
    CjmTable { rows }
}

/// `-2^{m-1} / (m-1)!`
pub fn cmm_closed_form(m: usize) -> BigRational {
    let mut fact = BigInt::one();
    for i in 2..m {
        fact *= BigInt::from(i);
    }
    -BigRational::new(BigInt::one() << (m - 1), fact)
}

/// Probabilists' Hermite polynomials `He_0 .. He_n` at `y`.
pub fn hermite_values(n: usize, y: f64) -> Vec<f64> {
    let mut h = vec![1.0, y];
    for j in 1..n {
        let next = y * h[j] - j as f64 * h[j - 1];
        h.push(next);
    }
    h.truncate(n + 1);
    h
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn gauss_density(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Largest `|eta*_m(y) + c_{m,m} y^{2m} eta(y)|` over the grid for the
/// standard Gaussian density, with `eta^{(j)} = (-1)^j He_j eta`.
pub fn gaussian_eta_star_check(m: usize, ys: &[f64]) -> f64 {
    let tab = cjm_table(m);
    let c: Vec<f64> = (1..=m).map(|j| to_f64(tab.get(j, m))).collect();
    let cmm = c[m - 1];
    let sign_m = if (m - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    ys.iter()
        .map(|&y| {
            let he = hermite_values(m, y);
            let eta = gauss_density(y);
            let mut acc = Compensated::default();
            for j in 1..=m {
                let sj = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc.add(sign_m * c[j - 1] * y.powi(j as i32) * sj * he[j] * eta);
            }
            acc.add(cmm * y.powi(2 * m as i32) * eta);
            acc.value().abs()
        })
        .fold(0.0, f64::max)
}

/// Largest relative error of `y^{2m} = sum_j (-1)^{m+j} c_{j,m}/c_{m,m} y^j He_j(y)`,
/// measured against the magnitude of the summands.
pub fn hermite_inversion_check(m: usize, ys: &[f64]) -> f64 {
    let tab = cjm_table(m);
    let cmm = tab.get(m, m).clone();
    let r: Vec<f64> = (1..=m).map(|j| to_f64(&(tab.get(j, m) / &cmm))).collect();
    ys.iter()
        .map(|&y| {
            let he = hermite_values(m, y);
            let mut acc = Compensated::default();
            let mut scale = y.powi(2 * m as i32).abs();
            for j in 1..=m {
                let s = if (m + j).is_multiple_of(2) { 1.0 } else { -1.0 };
                let term = s * r[j - 1] * y.powi(j as i32) * he[j];
                scale = scale.max(term.abs());
                acc.add(term);
            }
            acc.add(-y.powi(2 * m as i32));
            if scale == 0.0 {
                0.0
            } else {
                acc.value().abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// `true` when every diagonal entry matches the closed form exactly.
pub fn cmm_identity_holds(m_max: usize) -> bool {
    let tab = cjm_table(m_max);
    (1..=m_max).all(|m| *tab.get(m, m) == cmm_closed_form(m) && tab.get(m, m).is_negative())
}

/// Sup over `xs` of `|E[phi^m] - E[X^m]|` at step `t`.
pub fn local_error(params: &CirParams, t: f64, m: usize, even_moments: &[f64], xs: &[f64]) -> Result<f64> {
    let diff =
        scheme_moment_poly(params, t, m, even_moments)?.sub(&apply_semigroup(params, t, &Polynomial::monomial(m)));
    Ok(xs.iter().map(|&x| diff.eval(x).abs()).fold(0.0, f64::max))
}

/// Ratio of local errors at `t` and `t/2`; 8 for a third-order local error.
pub fn local_error_ratio(params: &CirParams, t: f64, m: usize, even_moments: &[f64], xs: &[f64]) -> Result<f64> {
    Ok(local_error(params, t, m, even_moments, xs)? / local_error(params, t / 2.0, m, even_moments, xs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig2() -> CirParams {
        CirParams::new(0.2, 0.5, 0.65).unwrap()
    }

    fn slope(b_coarse: f64, b_fine: f64, ratio: f64) -> f64 {
        (b_coarse / b_fine).abs().ln() / ratio.ln()
    }

    #[test]
    fn boosted_orders_are_two_four_six() {
        let p = fig2();
        let ev = gaussian_even_moments(10);
        let f = Polynomial::monomial(4);
        let exact = apply_semigroup(&p, 1.0, &f);
        for x in [0.0, 0.5] {
            for order in 1..=3 {
                let b = |n| boosted_polynomial(&p, 1.0, n, order, &f, &ev).unwrap().eval(x) - exact.eval(x);
                let s = slope(b(4), b(8), 2.0);
                assert!((s - 2.0 * order as f64).abs() < 0.1, "order {order} x {x}: slope {s}");
            }
        }
    }

    #[test]
    fn exp_step_matches_quadrature() {
        let p = fig2();
        let nodes = crate::heston::gauss_legendre(64);
        for (x, h, lambda) in [(0.0, 0.5, 10.0), (0.7, 0.1, 3.0), (2.0, 1.0, 0.5)] {
            let g = apply_scheme_exp(&p, h, ExpAffine { c: 1.0, lambda }).unwrap();
            let mut q = 0.0;
            for panel in 0..24 {
                let (lo, hi) = (-12.0 + panel as f64, -11.0 + panel as f64);
                for &(u, w) in &nodes {
                    let n = 0.5 * (lo + hi) + 0.5 * (hi - lo) * u;
                    let dens = (-0.5 * n * n).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    let v = crate::schemes::phi(&p, x, h, h.sqrt() * n);
                    q += 0.5 * (hi - lo) * w * dens * (-lambda * v).exp();
                }
            }
            let closed = g.c * (-g.lambda * x).exp();
            assert!((closed - q).abs() < 1e-13, "{closed} vs {q}");
        }
        let bad = CirParams::new(0.1, 0.5, 1.0).unwrap();
        assert!(apply_scheme_exp(&bad, 0.1, ExpAffine { c: 1.0, lambda: 1.0 }).is_err());
    }

    #[test]
    fn boosted_laplace_matches_reported_accuracy() {
        let p = fig2();
        let exact = crate::cir::laplace_transform(&p, 0.0, 1.0, 10.0);
        let rel = |n, order| (boosted_laplace(&p, 1.0, n, order, 0.0, 10.0).unwrap() - exact) / exact;
        // relative errors of about 0.17% and 0.002% at n = 3
        assert!((rel(3, 2).abs() - 0.0017).abs() < 0.0002, "{}", rel(3, 2));
        assert!(rel(3, 3).abs() < 0.0003, "{}", rel(3, 3));
        let s: Vec<f64> = (2..6).map(|n| slope(rel(n, 2), rel(n + 1, 2), (n + 1) as f64 / n as f64)).collect();
        assert!(s.iter().all(|v| (3.5..4.5).contains(v)), "{s:?}");
        assert!(boosted_laplace(&p, 1.0, 1, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn boosted_combinations_are_consistent() {
        let p = fig2();
        let ev = gaussian_even_moments(6);
        let f = Polynomial::monomial(3);
        // order 1 is the plain scheme
        let direct = (0..3).try_fold(f.clone(), |g, _| apply_scheme(&p, 1.0 / 3.0, &g, &ev)).unwrap();
        let b = boosted_polynomial(&p, 1.0, 3, 1, &f, &ev).unwrap();
        assert!(direct.sub(&b).norm() < 1e-15);
        // a constant payoff is left untouched at every order
        for order in 1..=3 {
            let c = boosted_polynomial(&p, 1.0, 4, order, &Polynomial::constant(2.5), &ev).unwrap();
            assert!(c.sub(&Polynomial::constant(2.5)).norm() < 1e-12);
        }
    }

    fn grid() -> Vec<f64> {
        (0..1000).map(|i| -6.0 + 12.0 * i as f64 / 999.0).collect()
    }

    #[test]
    fn polynomial_basics() {
        let p = Polynomial::new(vec![1.0, -2.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 1);
        assert_eq!(p.norm(), 3.0);
        assert_eq!(p.eval(2.0), -3.0);
        assert_eq!(Polynomial::new(vec![]).degree(), 0);
    }

    #[test]
    fn x0_pushforward() {
        let p = fig2();
        assert_eq!(apply_x0(&p, 0.7, &Polynomial::constant(1.0)), Polynomial::constant(1.0));
        let q = CirParams::new(0.25, 0.8, 1.0).unwrap();
        let g = apply_x0(&q, 0.5, &Polynomial::monomial(1));
        assert_eq!(g.coeffs(), &[0.0, (-0.4f64).exp()]);
        let f = Polynomial::new(vec![0.3, -1.0, 2.0]);
        let g = apply_x0(&p, 0.4, &f);
        for x in [0.0, 0.5, 3.0] {
            let y = crate::schemes::flow_x0(&p, 0.4, x);
            assert!((g.eval(x) - f.eval(y)).abs() < 1e-13);
        }
    }

    #[test]
    fn x1_expectation() {
        let p = fig2();
        let t = 0.3;
        let g = apply_x1_expectation(&p, t, &Polynomial::monomial(1), &gaussian_even_moments(1)).unwrap();
        assert!((g.coeffs()[0] - p.sigma * p.sigma * t / 4.0).abs() < 1e-16);
        assert_eq!(g.coeffs()[1], 1.0);
        let one = apply_x1_expectation(&p, t, &Polynomial::constant(1.0), &[1.0]).unwrap();
        assert_eq!(one, Polynomial::constant(1.0));
        assert!(apply_x1_expectation(&p, t, &Polynomial::monomial(3), &[1.0, 1.0]).is_err());
        // three-point Y by direct enumeration
        let f = Polynomial::new(vec![0.1, 0.2, -0.4, 0.5]);
        let g = apply_x1_expectation(&p, t, &f, &three_point_even_moments(3)).unwrap();
        let x = 0.7;
        let s3 = 3f64.sqrt();
        let direct: f64 = [(-s3, 1.0 / 6.0), (0.0, 2.0 / 3.0), (s3, 1.0 / 6.0)]
            .iter()
            .map(|&(y, w)| w * f.eval(crate::schemes::flow_x1(&p, t.sqrt() * y, x)))
            .sum();
        assert!((g.eval(x) - direct).abs() < 1e-13);
    }

    #[test]
    fn gaussian_moments() {
        assert_eq!(gaussian_even_moments(4), vec![1.0, 1.0, 3.0, 15.0, 105.0]);
        assert_eq!(three_point_even_moments(2), vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn first_moment_of_scheme() {
        let p = fig2();
        let err = |t: f64| {
            let g = scheme_moment_poly(&p, t, 1, &gaussian_even_moments(1)).unwrap();
            assert!((g.coeffs()[1] - (-p.k * t).exp()).abs() < 1e-15);
            g.coeffs()[0] - exact_moments(&p, t, 1).coeff(0, 1)
        };
        let r = err(0.1) / err(0.05);
        assert!((6.5..=9.5).contains(&r), "{r}");
        assert_eq!(scheme_moment_poly(&p, 0.1, 0, &[1.0]).unwrap(), Polynomial::constant(1.0));
    }

    #[test]
    fn order_condition_gaussian_and_three_point() {
        let p = fig2();
        let xs = [0.0, 0.5, 1.0, 5.0, 10.0];
        for moments in [gaussian_even_moments(5), three_point_even_moments(5)] {
            for m in 1..=5 {
                let r = local_error_ratio(&p, 0.1, m, &moments, &xs).unwrap();
                assert!((6.5..=9.5).contains(&r), "m={m}: {r}");
            }
        }
    }

    #[test]
    fn semigroup_matches_generator_exponential() {
        for k in [-0.5, 0.0, 0.5, 3.0] {
            let p = CirParams::new(0.2, k, 0.65).unwrap();
            for t in [0.1, 1.0, 2.5] {
                let e = generator_exponential(&p, t, 6);
                let tab = exact_moments(&p, t, 6);
                for m in 0..=6 {
                    let g = apply_semigroup(&p, t, &Polynomial::monomial(m));
                    for j in 0..=m {
                        let want = e[j][m];
                        assert!((tab.coeff(j, m) - want).abs() <= 1e-12 * want.abs().max(1.0));
                        assert!(
                            (g.coeffs().get(j).copied().unwrap_or(0.0) - want).abs() <= 1e-12 * want.abs().max(1.0)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cjm_values() {
        let t = cjm_table(20);
        assert_eq!(*t.get(1, 1), rat(-1, 1));
        assert_eq!(*t.get(1, 2), rat(2, 1));
        assert_eq!(*t.get(2, 2), rat(-2, 1));
        assert!(cmm_identity_holds(20));
        assert_eq!(cmm_closed_form(4), rat(-8, 6));
    }

    #[test]
    fn eta_star_identity() {
        let ys = grid();
        for m in 1..=8 {
            let r = gaussian_eta_star_check(m, &ys);
            assert!(r <= 1e-10, "m={m}: {r}");
        }
        assert_eq!(gaussian_eta_star_check(1, &ys), 0.0);
    }

    #[test]
    fn hermite_inversion() {
        let ys = grid();
        for m in 1..=8 {
            let r = hermite_inversion_check(m, &ys);
            assert!(r <= 1e-9, "m={m}: {r}");
        }
        assert_eq!(hermite_values(3, 2.0), vec![1.0, 2.0, 3.0, 2.0]);
    }

    fn poly_strategy() -> impl Strategy<Value = Polynomial> {
        prop::collection::vec(-5.0f64..5.0, 1..=11).prop_map(Polynomial::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn norm_bounds(f in poly_strategy(), t in 1e-3f64..=1.0, a in 0.05f64..1.0,
                       k in -1.0f64..2.0, ratio in 0.05f64..1.0) {
            let sigma = (4.0 * a * ratio).sqrt();
            let p = CirParams::new(a, k, sigma).unwrap();
            let (cx0, cx1) = lemma_constants(&p, 1.0);
            let l = f.degree() as i32;
            let g0 = apply_x0(&p, t, &f);
            let bound0 = 1f64.max((-k * l as f64 * t).exp()) * (1.0 + cx0.powi(l) * t) * f.norm();
            prop_assert!(g0.norm() <= bound0 * (1.0 + 1e-12));
            let moments = gaussian_even_moments(f.degree());
            let g1 = apply_x1_expectation(&p, t, &f, &moments).unwrap();
            let bound1 = (1.0 + moments[f.degree()] * cx1.powi(l) * t) * f.norm();
            prop_assert!(g1.norm() <= bound1 * (1.0 + 1e-12));
            prop_assert_eq!(g1.degree(), f.degree());
        }
    }
}
