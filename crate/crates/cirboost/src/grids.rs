//! Random grids and coupled path simulation.
//!
//! For one Monte Carlo sample we draw the refinement indices, generate a
//! single Brownian path at the finest resolution the sample needs, and run
//! the one-step scheme on up to six grids:
//!
//! | path | grid                                                        |
//! |------|-------------------------------------------------------------|
//! | 0    | uniform, step `T/n`                                         |
//! | 1    | cell `kappa` refined to step `T/n^2`                        |
//! | 2    | as 1, with sub-cell `kappa'` refined again to `T/n^3`       |
//! | 3    | cell `kappa1` refined                                       |
//! | 4    | cell `kappa2` refined                                       |
//! | 5    | cells `kappa1` and `kappa2` refined                         |
//!
//! Coarse step `k` uses auxiliary draw `V_k`; refined sub-steps use
//! `V_{n+k'}` (paths 1, 2), `V_{2n+k''}` (path 2, finest level),
//! `V_{3n+k'}` (cell `kappa1`) and `V_{4n+k'}` (cell `kappa2`). Paths that
//! share history and upcoming instructions therefore evolve identically,
//! and that fact is used to skip redundant work.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::heston::{HestonScheme, HestonState, HestonStep};
use crate::rng::{Philox, StreamFamily, MAIN_LANE};
use crate::schemes::{AuxDraw, CirScheme, CirStep};

/// Per-sample source of the auxiliary variables `V_i` and the Heston coins.
#[derive(Clone, Copy, Debug)]
pub struct SampleAux {
    pub aux: StreamFamily,
    pub coin: StreamFamily,
    pub sample: u64,
}

impl SampleAux {
    #[inline]
    pub fn draw(&self, index: u32) -> AuxDraw {
        AuxDraw { family: self.aux, sample: self.sample, index }
    }

    #[inline]
    pub fn coin(&self, index: u32) -> bool {
        self.coin.word(self.sample, index) & 1 == 1
    }
}

/// A one-step scheme usable on random grids.
pub trait Model: Sync {
    type State: Copy + PartialEq + Send + std::fmt::Debug;
    type Step: Sync + Send;
    /// Number of driving Brownian motions (1 or 2).
    const DIM: usize;

    fn initial(&self) -> Self::State;
    fn prepare(&self, h: f64) -> Self::Step;
    fn advance(step: &Self::Step, state: Self::State, dw: [f64; 2], aux: &SampleAux, v: u32) -> Self::State;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirModel {
    pub scheme: CirScheme,
    pub x0: f64,
}

impl Model for CirModel {
    type State = f64;
    type Step = CirStep;
    const DIM: usize = 1;

    fn initial(&self) -> f64 {
        self.x0
    }

    fn prepare(&self, h: f64) -> CirStep {
        self.scheme.prepare(h)
    }

    #[inline]
    fn advance(step: &CirStep, x: f64, dw: [f64; 2], aux: &SampleAux, v: u32) -> f64 {
        step.step(x, dw[0], aux.draw(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonModel {
    pub scheme: HestonScheme,
}

impl Model for HestonModel {
    type State = HestonState;
    type Step = HestonStep;
    const DIM: usize = 2;

    fn initial(&self) -> HestonState {
        self.scheme.params.initial_state()
    }

    fn prepare(&self, h: f64) -> HestonStep {
        self.scheme.prepare(h)
    }

    #[inline]
    fn advance(step: &HestonStep, st: HestonState, dw: [f64; 2], aux: &SampleAux, v: u32) -> HestonState {
        step.step(st, dw[0], dw[1], aux.coin(v), aux.draw(v))
    }
}

/// Refinement indices of one boosted sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridDraw {
    pub n: usize,
    pub kappa: usize,
    pub kappa_prime: usize,
    pub kappa1: usize,
    pub kappa2: usize,
}

impl GridDraw {
    /// Draws the indices needed by an estimator of the given order (1..=3).
    pub fn sample<R: Rng + ?Sized>(order: usize, n: usize, rng: &mut R) -> Self {
        assert!(n >= 2, "need at least two steps per level");
        let mut g = GridDraw { n, kappa: 0, kappa_prime: 0, kappa1: 0, kappa2: 1 };
        if order >= 2 {
            g.kappa = rng.random_range(0..n);
        }
        if order >= 3 {
            g.kappa_prime = rng.random_range(0..n);
            let pairs = n * (n - 1) / 2;
            let (k1, k2) = unrank_pair(rng.random_range(0..pairs), n);
            g.kappa1 = k1;
            g.kappa2 = k2;
        }
        g
    }

    /// Grid points of path `which` in units of `T/n^3`.
    pub fn ticks(&self, which: usize) -> Vec<u64> {
        let n = self.n as u64;
        let (c1, c2) = (n * n, n);
        let refined: &[(usize, bool)] = match which {
            0 => &[],
            1 => &[(self.kappa, false)],
            2 => &[(self.kappa, true)],
            3 => &[(self.kappa1, false)],
            4 => &[(self.kappa2, false)],
            5 => &[(self.kappa1, false), (self.kappa2, false)],
            _ => panic!("path index {which} out of range"),
        };
        let mut out = vec![0];
        for c in 0..self.n {
            let start = c as u64 * c1;
            match refined.iter().find(|r| r.0 == c) {
                None => out.push(start + c1),
                Some(&(_, sub)) => {
                    for j in 0..n {
                        let s = start + j * c2;
                        if sub && j as usize == self.kappa_prime {
                            out.extend((1..=n).map(|l| s + l));
                        } else {
                            out.push(s + c2);
                        }
                    }
                }
            }
        }
        out
    }

    /// Grid points of path `which` as times on `[0, horizon]`.
    pub fn times(&self, which: usize, horizon: f64) -> Vec<f64> {
        let unit = horizon / (self.n as f64).powi(3);
        self.ticks(which).into_iter().map(|t| t as f64 * unit).collect()
    }
}

/// Maps `r < n(n-1)/2` to the `r`-th pair `(k1, k2)`, `k1 < k2`, in lexicographic order.
pub fn unrank_pair(mut r: usize, n: usize) -> (usize, usize) {
    for k1 in 0..n - 1 {
        let row = n - 1 - k1;
        if r < row {
            return (k1, k1 + 1 + r);
        }
        r -= row;
    }
    panic!("pair rank out of range")
}

/// Terminal states of the simulated paths; `None` for paths the order did not need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledPaths<S> {
    pub states: [Option<S>; 6],
}

impl<S: Copy> CoupledPaths<S> {
    pub fn get(&self, which: usize) -> S {
        self.states[which].unwrap_or_else(|| panic!("path {which} was not simulated"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Plan {
    Coarse,
    Fine { vbase: u32 },
    FineSub { vbase: u32 },
}

/// Weighted estimator terms: `f(X0)`, `n (f(X1) - f(X0))`, `n^2 (f(X2) - f(X1))`,
/// `n(n-1)/2 (f(X5) - f(X4) - f(X3) + f(X0))`. Unused entries are zero.
pub fn estimator_terms<S: Copy>(order: usize, f: impl Fn(&S) -> f64, paths: &CoupledPaths<S>, n: usize) -> [f64; 4] {
    let nf = n as f64;
    let f0 = f(&paths.get(0));
    let mut t = [f0, 0.0, 0.0, 0.0];
    if order >= 2 {
        let f1 = f(&paths.get(1));
        t[1] = nf * (f1 - f0);
        if order >= 3 {
            let f2 = f(&paths.get(2));
            let (f3, f4, f5) = (f(&paths.get(3)), f(&paths.get(4)), f(&paths.get(5)));
            t[2] = nf * nf * (f2 - f1);
            t[3] = nf * (nf - 1.0) / 2.0 * (f5 - f4 - f3 + f0);
        }
    }
    t
}

/// A model with its step maps prepared for the three step sizes `T/n^l`.
pub struct Simulator<M: Model> {
    pub model: M,
    pub n: usize,
    pub horizon: f64,
    steps: [M::Step; 3],
    collapse_refinement: bool,
    record: bool,
    trace: Vec<CellTrace<M::State>>,
    dw2: Vec<[f64; 2]>,
    dw3: Vec<[f64; 2]>,
}

/// Increments and states after one coarse cell, kept only when recording.
#[derive(Clone, Debug)]
pub struct CellTrace<S> {
    pub coarse: [f64; 2],
    /// Fine increments of a refined cell, empty otherwise.
    pub fine: Vec<[f64; 2]>,
    pub states: [S; 6],
}

impl<M: Model> Simulator<M> {
    pub fn new(model: M, n: usize, horizon: f64) -> Self {
        assert!(n >= 2 && horizon > 0.0, "need n >= 2 and a positive horizon");
        let nf = n as f64;
        let steps =
            [model.prepare(horizon / nf), model.prepare(horizon / (nf * nf)), model.prepare(horizon / (nf * nf * nf))];
        Self {
            model,
            n,
            horizon,
            steps,
            collapse_refinement: false,
            record: false,
            trace: Vec::new(),
            dw2: vec![[0.0; 2]; n],
            dw3: vec![[0.0; 2]; n],
        }
    }

    #[inline]
    fn increment(rng: &mut Philox, scale: f64) -> [f64; 2] {
        let w: f64 = rng.sample(StandardNormal);
        let z = if M::DIM > 1 { rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        [scale * w, scale * z]
    }

    /// Keeps a per-cell trace of the next coupled simulations.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
        self.trace.clear();
    }

    /// Trace of the last coupled simulation.
    pub fn trace(&self) -> &[CellTrace<M::State>] {
        &self.trace
    }

    /// `X0` only, on the uniform grid.
    pub fn simulate_base(&mut self, rng: &mut Philox, aux: &SampleAux) -> M::State {
        let scale = (self.horizon / self.n as f64).sqrt();
        let mut s = self.model.initial();
        for c in 0..self.n {
            let dw = Self::increment(rng, scale);
            s = M::advance(&self.steps[0], s, dw, aux, c as u32);
        }
        s
    }

    /// Runs the paths needed by an estimator of `order` for one grid draw.
    pub fn simulate_coupled(
        &mut self,
        order: usize,
        grid: &GridDraw,
        rng: &mut Philox,
        aux: &SampleAux,
    ) -> CoupledPaths<M::State> {
        assert_eq!(grid.n, self.n, "grid drawn for a different n");
        let n = self.n;
        let nf = n as f64;
        let (s2, s3) = ((self.horizon / (nf * nf)).sqrt(), (self.horizon / (nf * nf * nf)).sqrt());
        let active = match order {
            1 => 1,
            2 => 2,
            3 => 6,
            _ => panic!("order must be 1, 2 or 3"),
        };
        if order == 1 {
            let s = self.simulate_base(rng, aux);
            let mut states = [None; 6];
            states[0] = Some(s);
            return CoupledPaths { states };
        }
        let nu = n as u32;
        self.trace.clear();
        let mut states = [self.model.initial(); 6];
        for c in 0..n {
            let refine_kappa = c == grid.kappa;
            let refine_pair = order == 3 && (c == grid.kappa1 || c == grid.kappa2);
            let mut plans = [Plan::Coarse; 6];
            if refine_kappa {
                plans[1] = Plan::Fine { vbase: nu };
                plans[2] = Plan::FineSub { vbase: nu };
            }
            if order == 3 {
                if c == grid.kappa1 {
                    plans[3] = Plan::Fine { vbase: 3 * nu };
                    plans[5] = Plan::Fine { vbase: 3 * nu };
                }
                if c == grid.kappa2 {
                    plans[4] = Plan::Fine { vbase: 4 * nu };
                    plans[5] = Plan::Fine { vbase: 4 * nu };
                }
            }
            // Brownian increments: finest level first, then summed upward.
            let coarse = if refine_kappa || refine_pair {
                let mut total = [0.0; 2];
                for j in 0..n {
                    let inc = if order == 3 && refine_kappa && j == grid.kappa_prime {
                        let mut sub = [0.0; 2];
                        for l in 0..n {
                            let d = Self::increment(rng, s3);
                            self.dw3[l] = d;
                            sub[0] += d[0];
                            sub[1] += d[1];
                        }
                        sub
                    } else {
                        Self::increment(rng, s2)
                    };
                    self.dw2[j] = inc;
                    total[0] += inc[0];
                    total[1] += inc[1];
                }
                total
            } else {
                Self::increment(rng, (self.horizon / nf).sqrt())
            };
            let before = states;
            for p in 0..active {
                if let Some(q) = (0..p).find(|&q| plans[q] == plans[p] && before[q] == before[p]) {
                    states[p] = states[q];
                    continue;
                }
                states[p] = self.run_cell(plans[p], before[p], c as u32, coarse, grid, order, aux);
            }
            if self.record {
                let fine = if refine_kappa || refine_pair { self.dw2.clone() } else { Vec::new() };
                self.trace.push(CellTrace { coarse, fine, states });
            }
        }
        let mut out = [None; 6];
        for p in 0..active {
            out[p] = Some(states[p]);
        }
        CoupledPaths { states: out }
    }

    fn run_cell(
        &self,
        plan: Plan,
        mut s: M::State,
        c: u32,
        coarse: [f64; 2],
        grid: &GridDraw,
        order: usize,
        aux: &SampleAux,
    ) -> M::State {
        let nu = self.n as u32;
        if self.collapse_refinement && plan != Plan::Coarse {
            return M::advance(&self.steps[0], s, coarse, aux, c);
        }
        match plan {
            Plan::Coarse => M::advance(&self.steps[0], s, coarse, aux, c),
            Plan::Fine { vbase } => {
                for j in 0..self.n {
                    s = M::advance(&self.steps[1], s, self.dw2[j], aux, vbase + j as u32);
                }
                s
            }
            Plan::FineSub { vbase } => {
                for j in 0..self.n {
                    if order == 3 && j == grid.kappa_prime {
                        for l in 0..self.n {
                            s = M::advance(&self.steps[2], s, self.dw3[l], aux, 2 * nu + l as u32);
                        }
                    } else {
                        s = M::advance(&self.steps[1], s, self.dw2[j], aux, vbase + j as u32);
                    }
                }
                s
            }
        }
    }
}

/// One-off coupled simulation of sample `sample` under the given stream families.
pub fn simulate_coupled<M: Model + Clone>(
    order: usize,
    model: &M,
    n: usize,
    horizon: f64,
    grid: &GridDraw,
    rng: &mut Philox,
    aux: &SampleAux,
) -> CoupledPaths<M::State> {
    Simulator::new(model.clone(), n, horizon).simulate_coupled(order, grid, rng, aux)
}

/// Streams for one Monte Carlo run, keyed by seed and a purpose tag.
#[derive(Clone, Copy, Debug)]
pub struct RunStreams {
    pub main: StreamFamily,
    pub aux: StreamFamily,
    pub coin: StreamFamily,
}

impl RunStreams {
    pub fn new(seed: u64, purpose: u64) -> Self {
        Self {
            main: StreamFamily::new(seed, purpose.wrapping_mul(3)),
            aux: StreamFamily::new(seed, purpose.wrapping_mul(3) + 1),
            coin: StreamFamily::new(seed, purpose.wrapping_mul(3) + 2),
        }
    }

    pub fn sample(&self, i: u64) -> (Philox, SampleAux) {
        (self.main.stream(i, MAIN_LANE), SampleAux { aux: self.aux, coin: self.coin, sample: i })
    }
}
