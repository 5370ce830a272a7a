//! Method of Moving Asymptotes for one inequality constraint.
//!
//! Exposes the four knobs the tuning loop adjusts: `albefa` (move-limit
//! fraction between the asymptotes), `asyinit` (initial asymptote distance),
//! and `asyincr`/`asydecr` (asymptote widening on monotone history and
//! narrowing on oscillation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset added to the curvature terms of the convex approximation.
pub const RAA0: f64 = 1e-5;

const DUAL_TOL: f64 = 1e-9;
const LAMBDA_WIDTH_TOL: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmaParams {
    pub albefa: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
}

impl MmaParams {
    pub const NAMES: [&'static str; 4] = ["albefa", "asyinit", "asyincr", "asydecr"];

    /// Lower corner of the tuning box.
    pub const TUNING_LOWER: [f64; 4] = [0.25, 0.25, 1.00, 0.25];
    /// Upper corner of the tuning box.
    pub const TUNING_UPPER: [f64; 4] = [0.75, 0.75, 1.50, 0.75];

    /// Best Case I setting reported for the cantilever.
    pub const CANTILEVER_REFERENCE: MmaParams = MmaParams {
        albefa: 0.7218,
        asyinit: 0.3956,
        asyincr: 1.3615,
        asydecr: 0.3760,
    };

    /// Best Case II setting reported for the L-shape.
    pub const LSHAPE_REFERENCE: MmaParams = MmaParams {
        albefa: 0.5596,
        asyinit: 0.4296,
        asyincr: 1.1387,
        asydecr: 0.4112,
    };

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            albefa: a[0],
            asyinit: a[1],
            asyincr: a[2],
            asydecr: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.albefa, self.asyinit, self.asyincr, self.asydecr]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.albefa > 0.0
            && self.albefa < 1.0
            && self.asyinit > 0.0
            && self.asyincr >= 1.0
            && self.asydecr > 0.0
            && self.asydecr < 1.0;
        if ok && self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid MMA parameters {self:?}")))
        }
    }

    pub fn in_tuning_box(&self) -> bool {
        self.to_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= Self::TUNING_LOWER[i] && *v <= Self::TUNING_UPPER[i])
    }
}

impl Default for MmaParams {
    fn default() -> Self {
        Self::CANTILEVER_REFERENCE
    }
}

/// Iteration history owned by one optimization run.
#[derive(Debug, Clone)]
pub struct MmaState {
    /// Number of completed steps.
    pub iteration: usize,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub xmin: Vec<f64>,
    pub xmax: Vec<f64>,
}

impl MmaState {
    pub fn new(x0: &[f64], xmin: Vec<f64>, xmax: Vec<f64>) -> Result<Self> {
        if xmin.len() != x0.len() || xmax.len() != x0.len() {
            return Err(Error::LengthMismatch(xmin.len(), x0.len()));
        }
        if xmin
            .iter()
            .zip(&xmax)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidArgument(
                "MMA bounds must be finite with xmin < xmax".into(),
            ));
        }
        Ok(Self {
            iteration: 0,
            xold1: x0.to_vec(),
            xold2: x0.to_vec(),
            low: xmin.clone(),
            upp: xmax.clone(),
            xmin,
            xmax,
        })
    }
}

/// New asymptotes for the step about to be taken from `x`.
pub fn update_asymptotes(state: &MmaState, x: &[f64], params: &MmaParams) -> (Vec<f64>, Vec<f64>) {
    let k = state.iteration + 1;
    let n = x.len();
    let mut low = vec![0.0; n];
    let mut upp = vec![0.0; n];
    for j in 0..n {
        let range = state.xmax[j] - state.xmin[j];
        if k <= 2 {
            low[j] = x[j] - params.asyinit * range;
            upp[j] = x[j] + params.asyinit * range;
        } else {
            let s = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            let gamma = if s > 0.0 {
                params.asyincr
            } else if s < 0.0 {
                params.asydecr
            } else {
                1.0
            };
            low[j] = x[j] - gamma * (state.xold1[j] - state.low[j]);
            upp[j] = x[j] + gamma * (state.upp[j] - state.xold1[j]);
            low[j] = low[j].min(x[j] - 0.01 * range).max(x[j] - 10.0 * range);
            upp[j] = upp[j].max(x[j] + 0.01 * range).min(x[j] + 10.0 * range);
        }
    }
    (low, upp)
}

/// Move limits `[alfa, beta]` a fraction `albefa` of the way from the
/// asymptotes towards `x`, intersected with the variable box.
pub fn move_limits(
    x: &[f64],
    low: &[f64],
    upp: &[f64],
    xmin: &[f64],
    xmax: &[f64],
    albefa: f64,
) -> (Vec<f64>, Vec<f64>) {
    let alfa = (0..x.len())
        .map(|j| xmin[j].max(low[j] + albefa * (x[j] - low[j])))
        .collect();
    let beta = (0..x.len())
        .map(|j| xmax[j].min(upp[j] - albefa * (upp[j] - x[j])))
        .collect();
    (alfa, beta)
}

/// Convex separable approximation of one objective and one constraint about `x`.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub alfa: Vec<f64>,
    pub beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p1: Vec<f64>,
    q1: Vec<f64>,
    /// Constant term of the constraint approximation.
    r1: f64,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub lambda: f64,
    /// The approximated constraint could not be satisfied inside the move limits.
    pub strained: bool,
}

impl Subproblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &[f64],
        df0: &[f64],
        g: f64,
        dg: &[f64],
        low: &[f64],
        upp: &[f64],
        alfa: &[f64],
        beta: &[f64],
        xmin: &[f64],
        xmax: &[f64],
    ) -> Self {
        let n = x.len();
        let (mut p0, mut q0, mut p1, mut q1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut r1 = g;
        for j in 0..n {
            let ux = upp[j] - x[j];
            let xl = x[j] - low[j];
            let reg = RAA0 / (xmax[j] - xmin[j]);
            let (pos, neg) = (df0[j].max(0.0), (-df0[j]).max(0.0));
            p0[j] = ux * ux * (1.001 * pos + 0.001 * neg + reg);
            q0[j] = xl * xl * (0.001 * pos + 1.001 * neg + reg);
            let (pos, neg) = (dg[j].max(0.0), (-dg[j]).max(0.0));
            p1[j] = ux * ux * (1.001 * pos + 0.001 * neg + reg);
            q1[j] = xl * xl * (0.001 * pos + 1.001 * neg + reg);
            r1 -= p1[j] / ux + q1[j] / xl;
        }
        Self {
            low: low.to_vec(),
            upp: upp.to_vec(),
            alfa: alfa.to_vec(),
            beta: beta.to_vec(),
            p0,
            q0,
            p1,
            q1,
            r1,
        }
    }

    /// Objective approximation, up to a constant.
    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..x.len())
            .map(|j| self.p0[j] / (self.upp[j] - x[j]) + self.q0[j] / (x[j] - self.low[j]))
            .sum()
    }

    pub fn constraint(&self, x: &[f64]) -> f64 {
        self.r1
            + (0..x.len())
                .map(|j| self.p1[j] / (self.upp[j] - x[j]) + self.q1[j] / (x[j] - self.low[j]))
                .sum::<f64>()
    }

    fn primal(&self, lambda: f64) -> Vec<f64> {
        (0..self.p0.len())
            .map(|j| {
                let p = (self.p0[j] + lambda * self.p1[j]).sqrt();
                let q = (self.q0[j] + lambda * self.q1[j]).sqrt();
                ((p * self.low[j] + q * self.upp[j]) / (p + q)).clamp(self.alfa[j], self.beta[j])
            })
            .collect()
    }

    fn constraint_minimizer(&self) -> Vec<f64> {
        (0..self.p1.len())
            .map(|j| {
                let p = self.p1[j].sqrt();
                let q = self.q1[j].sqrt();
                ((p * self.low[j] + q * self.upp[j]) / (p + q)).clamp(self.alfa[j], self.beta[j])
            })
            .collect()
    }

    /// Solve through the single dual variable by bisection.
    pub fn solve(&self) -> SubproblemSolution {
        let x0 = self.primal(0.0);
        if self.constraint(&x0) <= 0.0 {
            return SubproblemSolution {
                x: x0,
                lambda: 0.0,
                strained: false,
            };
        }
        let mut hi = 1.0;
        while self.constraint(&self.primal(hi)) > 0.0 {
            hi *= 2.0;
            if hi > LAMBDA_MAX {
                return SubproblemSolution {
                    x: self.constraint_minimizer(),
                    lambda: hi,
                    strained: true,
                };
            }
        }
        let mut lo = 0.0;
        let mut x = self.primal(hi);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let xm = self.primal(mid);
            let g = self.constraint(&xm);
            if g.abs() <= DUAL_TOL {
                return SubproblemSolution {
                    x: xm,
                    lambda: mid,
                    strained: false,
                };
            }
            if g > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                x = xm;
            }
            if hi - lo <= LAMBDA_WIDTH_TOL {
                break;
            }
        }
        SubproblemSolution {
            x,
            lambda: hi,
            strained: false,
        }
    }

    /// Max violation of the KKT conditions of the subproblem at `(x, lambda)`:
    /// projected stationarity, primal feasibility and complementarity.
    pub fn kkt_residual(&self, x: &[f64], lambda: f64) -> f64 {
        let mut r: f64 = 0.0;
        for j in 0..x.len() {
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let grad = (self.p0[j] + lambda * self.p1[j]) / (ux * ux) - (self.q0[j] + lambda * self.q1[j]) / (xl * xl);
            let width = (self.beta[j] - self.alfa[j]).max(f64::MIN_POSITIVE);
            let at_lo = (x[j] - self.alfa[j]) <= 1e-12 * width;
            let at_hi = (self.beta[j] - x[j]) <= 1e-12 * width;
            let viol = if at_lo && at_hi {
                0.0
            } else if at_lo {
                (-grad).max(0.0)
            } else if at_hi {
                grad.max(0.0)
            } else {
                grad.abs()
            };
            r = r.max(viol);
        }
        let g = self.constraint(x);
        r.max(g.max(0.0)).max((lambda * g).abs())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn solve_subproblem(
    x: &[f64],
    df0: &[f64],
    g: f64,
    dg: &[f64],
    low: &[f64],
    upp: &[f64],
    alfa: &[f64],
    beta: &[f64],
    xmin: &[f64],
    xmax: &[f64],
) -> SubproblemSolution {
    Subproblem::new(x, df0, g, dg, low, upp, alfa, beta, xmin, xmax).solve()
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x: Vec<f64>,
    pub strained: bool,
}

/// One MMA iteration for `min f0 s.t. g <= 0`; advances `state` in place.
pub fn mma_step(x: &[f64], df0: &[f64], g: f64, dg: &[f64], state: &mut MmaState, params: &MmaParams) -> StepOutcome {
    let (low, upp) = update_asymptotes(state, x, params);
    let (alfa, beta) = move_limits(x, &low, &upp, &state.xmin, &state.xmax, params.albefa);
    let sol = solve_subproblem(x, df0, g, dg, &low, &upp, &alfa, &beta, &state.xmin, &state.xmax);
    state.iteration += 1;
    state.xold2 = std::mem::replace(&mut state.xold1, x.to_vec());
    state.low = low;
    state.upp = upp;
    StepOutcome {
        x: sol.x,
        strained: sol.strained,
    }
}
