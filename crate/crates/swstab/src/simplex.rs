//! Dense bounded-variable simplex with Bland's rule.
//!
//! Solves `min c^T x` subject to `A x (=, <=, >=) b` and box bounds
//! `l <= x <= u`, by phase 1 over artificial variables and an optional
//! phase 2. Bland's rule (lowest eligible index enters, lowest basic index
//! among minimum-ratio rows leaves) prevents cycling and makes every run
//! deterministic. Dense tableau arithmetic; meant for desk-scale problems,
//! not sparse ones.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Problem statement over structural variables with finite or infinite box
/// bounds (`f64::INFINITY` for no upper bound).
#[derive(Clone, Debug)]
pub struct Problem {
    pub num_vars: usize,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Coefficients to maximize in phase 2; `None` runs feasibility only.
    pub maximize: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// Structural variable values at the final basic feasible point.
    Optimal(Vec<f64>),
    Infeasible,
    /// Pivot budget exhausted before a conclusion.
    IterationLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Value of the basic variable in each row.
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pivots_left: usize,
}

impl Tableau {
    fn value_of(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Basic(r) => self.beta[r],
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
        }
    }

    /// Reduced costs d_j = c_j - c_B^T B^{-1} A_j, recomputed from the
    /// current tableau.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let n = self.state.len();
        let mut d = cost.to_vec();
        for (r, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..n {
                    d[j] -= cb * row[j];
                }
            }
        }
        d
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        (0..self.state.len()).map(|j| cost[j] * self.value_of(j)).sum()
    }

    /// One simplex pass minimizing `cost`. Returns false when the pivot
    /// budget ran out.
    fn minimize(&mut self, cost: &[f64]) -> bool {
        loop {
            if self.pivots_left == 0 {
                return false;
            }
            let d = self.reduced_costs(cost);
            // Bland: lowest eligible index enters
            let mut entering = None;
            for (j, &dj) in d.iter().enumerate() {
                let eligible = match self.state[j] {
                    VarState::Basic(_) => false,
                    VarState::AtLower => dj < -COST_TOL,
                    VarState::AtUpper => dj > COST_TOL,
                };
                if eligible {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else { return true };
            let dir = if self.state[j] == VarState::AtLower { 1.0 } else { -1.0 };

            // ratio test: how far x_j can move before a basic variable hits
            // a bound, or x_j reaches its own opposite bound
            let own_span = self.upper[j] - self.lower[j];
            let mut best = own_span; // may be infinite
            let mut leaving: Option<usize> = None;
            for r in 0..self.rows.len() {
                let coeff = self.rows[r][j] * dir;
                let b = self.basis[r];
                let ratio = if coeff > PIVOT_TOL {
                    (self.beta[r] - self.lower[b]) / coeff
                } else if coeff < -PIVOT_TOL {
                    if self.upper[b].is_infinite() {
                        continue;
                    }
                    (self.upper[b] - self.beta[r]) / -coeff
                } else {
                    continue;
                };
                let ratio = ratio.max(0.0);
                let better = match leaving {
                    None => ratio < best,
                    Some(cur) => {
                        ratio < best - PIVOT_TOL
                            || (ratio < best + PIVOT_TOL && self.basis[r] < self.basis[cur])
                    }
                };
                if better {
                    best = ratio;
                    leaving = Some(r);
                }
            }

            if best.is_infinite() {
                // cost unbounded below; with the box bounds used here this
                // only happens on malformed input
                return true;
            }
            self.pivots_left -= 1;

            let delta = best * dir;
            match leaving {
                None => {
                    // bound flip: no basis change
                    for r in 0..self.rows.len() {
                        self.beta[r] -= self.rows[r][j] * delta;
                    }
                    self.state[j] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                }
                Some(r) => {
                    let entering_value = self.value_of(j) + delta;
                    for i in 0..self.rows.len() {
                        self.beta[i] -= self.rows[i][j] * delta;
                    }
                    let old_basic = self.basis[r];
                    let coeff = self.rows[r][j] * dir;
                    self.state[old_basic] = if coeff > 0.0 {
                        self.beta[r] = self.lower[old_basic];
                        VarState::AtLower
                    } else {
                        self.beta[r] = self.upper[old_basic];
                        VarState::AtUpper
                    };

                    // eliminate column j from all other rows
                    let pivot = self.rows[r][j];
                    let row_r: Vec<f64> = self.rows[r].iter().map(|v| v / pivot).collect();
                    self.rows[r] = row_r;
                    for i in 0..self.rows.len() {
                        if i == r {
                            continue;
                        }
                        let factor = self.rows[i][j];
                        if factor != 0.0 {
                            for col in 0..self.state.len() {
                                self.rows[i][col] -= factor * self.rows[r][col];
                            }
                        }
                    }
                    self.basis[r] = j;
                    self.state[j] = VarState::Basic(r);
                    self.beta[r] = entering_value;
                }
            }
        }
    }
}

/// Solves the problem: phase 1 drives artificial variables to zero, phase 2
/// (when `maximize` is present) improves the objective from the feasible
/// vertex. Returns structural values only.
pub fn solve(problem: &Problem, max_pivots: usize) -> Outcome {
    let n = problem.num_vars;
    let m = problem.constraints.len();

    // layout: structural | slacks/surplus | artificials
    let num_slacks = problem
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count();
    let total = n + num_slacks + m;

    let mut lower = problem.lower.clone();
    let mut upper = problem.upper.clone();
    lower.resize(total, 0.0);
    upper.resize(total, f64::INFINITY);

    let mut rows = vec![vec![0.0; total]; m];
    let mut rhs = vec![0.0; m];
    let mut slack_col = n;
    for (r, c) in problem.constraints.iter().enumerate() {
        assert_eq!(c.coeffs.len(), n, "constraint arity mismatch");
        rows[r][..n].copy_from_slice(&c.coeffs);
        rhs[r] = c.rhs;
        match c.relation {
            Relation::Eq => {}
            Relation::Le => {
                rows[r][slack_col] = 1.0;
                slack_col += 1;
            }
            Relation::Ge => {
                rows[r][slack_col] = -1.0;
                slack_col += 1;
            }
        }
    }

    // normalize rows to nonnegative rhs, then one artificial per row gives a
    // feasible starting basis with all structural variables at lower bound
    let mut beta = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut state = vec![VarState::AtLower; total];
    for r in 0..m {
        let mut row_value = rhs[r];
        for j in 0..n {
            row_value -= rows[r][j] * lower[j];
        }
        if row_value < 0.0 {
            for v in rows[r].iter_mut() {
                *v = -*v;
            }
            row_value = -row_value;
        }
        let art = n + num_slacks + r;
        rows[r][art] = 1.0;
        basis[r] = art;
        state[art] = VarState::Basic(r);
        beta[r] = row_value;
    }
    // structural variables with nonzero lower bounds shift the row values;
    // all bounds used by this crate start at zero, so beta is exact here

    let mut tableau = Tableau {
        rows,
        beta,
        basis,
        state,
        lower,
        upper,
        pivots_left: max_pivots,
    };

    let mut phase1_cost = vec![0.0; total];
    phase1_cost[(n + num_slacks)..total].fill(1.0);
    if !tableau.minimize(&phase1_cost) {
        return Outcome::IterationLimit;
    }
    let infeasibility = tableau.objective(&phase1_cost);
    let scale = 1.0 + rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if infeasibility > FEAS_TOL * scale {
        return Outcome::Infeasible;
    }

    // pin artificials to zero for phase 2
    for j in (n + num_slacks)..total {
        tableau.upper[j] = 0.0;
        if tableau.state[j] == VarState::AtUpper {
            tableau.state[j] = VarState::AtLower;
        }
    }

    if let Some(obj) = &problem.maximize {
        assert_eq!(obj.len(), n, "objective arity mismatch");
        let mut cost = vec![0.0; total];
        for (j, &v) in obj.iter().enumerate() {
            cost[j] = -v;
        }
        if !tableau.minimize(&cost) {
            return Outcome::IterationLimit;
        }
    }

    Outcome::Optimal((0..n).map(|j| tableau.value_of(j)).collect())
}
