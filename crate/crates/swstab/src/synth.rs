//! Stabilizing-circuit synthesis: the circuit-feasibility LP over the
//! augmented incidence matrix, a rounding/repair loop for fractional
//! vertices, Hierholzer extraction, and the assembled periodic signal.
//!
//! The LP searches for an edge-indicator flow `f` with `A f = 0` (closed,
//! self-loops excluded by the auxiliary rows), `0 <= f <= 1`, `sum f >= 1`,
//! and the linearized ratio condition `N(f) <= (1 - eps) D(f)`. An integral
//! solution is a circuit; repeating it yields a switching signal whose
//! asymptotic ratio equals the circuit's. The final gate re-verifies both
//! conditions independently of the LP arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{self, IncidenceMatrix, SwitchingSignal, TransitionGraph, Walk};
use crate::lyap::{ClassMap, GainTable, StabilityClass};
use crate::simplex::{self, Constraint, Outcome, Problem, Relation};
use crate::stability::{asymptotic_check, walk_ratio, RatioReport};
use crate::ModeId;

/// Flow vector over the edge set, in graph edge order.
#[derive(Clone, Debug)]
pub struct EdgeFlow {
    values: Vec<f64>,
}

impl EdgeFlow {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Edge positions carrying flow (integral flows only have 0/1 entries).
    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The feasibility LP of the circuit search.
#[derive(Clone, Debug)]
pub struct CircuitLp {
    pub incidence: IncidenceMatrix,
    /// Per-column weight of the linearized ratio condition:
    /// `ln mu_kl + |ln lambda_k| [k unstable] - (1 - eps) |ln lambda_k| [k stable]`.
    pub ratio_coeffs: Vec<f64>,
    pub epsilon: f64,
}

/// Outcome of the LP + integrality repair.
#[derive(Clone, Debug)]
pub enum LpOutcome {
    Flow(EdgeFlow),
    Infeasible { reason: String },
    Undecided { reason: String },
}

#[derive(Clone, Debug)]
pub struct SynthesisConfig {
    /// Slack turning the strict ratio inequality into an LP row.
    pub epsilon: f64,
    /// Return the constant signal on an asymptotically stable self-loop
    /// without solving the LP.
    pub prefer_trivial: bool,
    /// Edge budget for the exhaustive-enumeration fallback.
    pub max_oracle_edges: usize,
    pub max_pivots: usize,
    pub max_enumerated: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            prefer_trivial: true,
            max_oracle_edges: 20,
            max_pivots: 50_000,
            max_enumerated: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    /// The integral LP flow; absent when the trivial self-loop shortcut or
    /// the enumeration fallback produced the circuit.
    pub flow: Option<EdgeFlow>,
    pub circuit: Walk,
    /// Ratio of the circuit under the strict (margin 0) reading.
    pub ratio: RatioReport,
    pub signal: SwitchingSignal,
    pub trivial_case: Option<ModeId>,
    /// True when the circuit came from exhaustive enumeration instead of the
    /// LP flow.
    pub from_oracle_fallback: bool,
}

/// First asymptotically stable vertex carrying a self-loop, in vertex order.
pub fn trivial_case_check(g: &TransitionGraph, classes: &ClassMap) -> Option<ModeId> {
    g.vertices().iter().copied().find(|&v| {
        g.has_edge(v, v) && classes.get(&v) == Some(&StabilityClass::AsymptoticallyStable)
    })
}

/// Builds the LP. Fails immediately when no asymptotically stable mode
/// exists: the ratio denominator is identically zero.
pub fn build_lp(
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    epsilon: f64,
) -> Result<CircuitLp> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !g
        .vertices()
        .iter()
        .any(|v| classes.get(v) == Some(&StabilityClass::AsymptoticallyStable))
    {
        return Err(Error::Infeasible {
            reason: "no asymptotically stable mode: the ratio denominator is identically zero".into(),
        });
    }
    let mut ratio_coeffs = Vec::with_capacity(g.edge_count());
    for &(k, l) in g.edges() {
        let mut w = gains.log_mu(k, l)?;
        match classes.get(&k).ok_or(Error::MissingClass { mode: k })? {
            StabilityClass::Unstable => w += gains.log_lambda(k)?.abs(),
            StabilityClass::AsymptoticallyStable => {
                w -= (1.0 - epsilon) * gains.log_lambda(k)?.abs()
            }
            StabilityClass::MarginallyStable => {}
        }
        ratio_coeffs.push(w);
    }
    Ok(CircuitLp {
        incidence: graph::incidence_matrix(g),
        ratio_coeffs,
        epsilon,
    })
}

fn lp_to_problem(lp: &CircuitLp) -> Problem {
    let n = lp.ratio_coeffs.len();
    let mut constraints = Vec::new();
    for r in 0..lp.incidence.matrix.nrows() {
        constraints.push(Constraint {
            coeffs: lp.incidence.matrix.row(r).iter().copied().collect(),
            relation: Relation::Eq,
            rhs: 0.0,
        });
    }
    constraints.push(Constraint {
        coeffs: lp.ratio_coeffs.clone(),
        relation: Relation::Le,
        rhs: 0.0,
    });
    constraints.push(Constraint {
        coeffs: vec![1.0; n],
        relation: Relation::Ge,
        rhs: 1.0,
    });
    Problem {
        num_vars: n,
        constraints,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
        // constant objective in the source formulation; maximizing the total
        // flow is the deterministic selection rule among feasible points
        maximize: Some(vec![1.0; n]),
    }
}

const EQUALITY_TOL: f64 = 1e-8;
const RATIO_ROW_TOL: f64 = 1e-9;

/// Validates an integral candidate against every LP constraint plus the
/// positive-denominator requirement that the linearized row cannot express.
fn verify_integral_flow(
    lp: &CircuitLp,
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    values: &[f64],
) -> bool {
    let n = values.len();
    if values.iter().any(|&v| !(v == 0.0 || v == 1.0)) {
        return false;
    }
    if values.iter().sum::<f64>() < 1.0 {
        return false;
    }
    let inc = &lp.incidence.matrix;
    for r in 0..inc.nrows() {
        let dot: f64 = (0..n).map(|c| inc[(r, c)] * values[c]).sum();
        if dot.abs() > EQUALITY_TOL {
            return false;
        }
    }
    let row: f64 = (0..n).map(|c| lp.ratio_coeffs[c] * values[c]).sum();
    if row > RATIO_ROW_TOL {
        return false;
    }
    // positive denominator: some asymptotically stable mode is activated
    let mut denom = 0.0;
    for (c, &(k, _)) in g.edges().iter().enumerate() {
        if values[c] > 0.5 && classes.get(&k) == Some(&StabilityClass::AsymptoticallyStable) {
            denom += gains.log_lambda(k).map(|v| v.abs()).unwrap_or(0.0);
        }
    }
    denom > 0.0
}

/// Whether a circuit meets the epsilon-slack ratio condition with a positive
/// denominator. Shared by the repair loop, the enumeration fallback, and the
/// LP/oracle agreement tests.
pub fn circuit_satisfies(report: &RatioReport, epsilon: f64) -> bool {
    report.denominator > 0.0
        && report.numerator <= (1.0 - epsilon) * report.denominator + RATIO_ROW_TOL
}

/// Deterministic peel of a balanced integral flow into vertex-simple
/// circuits: walk lowest-position unused out-edges until a vertex repeats,
/// emit the enclosed cycle, remove its edges, repeat.
fn decompose_into_circuits(g: &TransitionGraph, support: &[usize]) -> Vec<Vec<ModeId>> {
    let mut remaining: BTreeSet<usize> = support.iter().copied().collect();
    let mut circuits = Vec::new();
    while let Some(&seed) = remaining.iter().next() {
        let mut path_vertices = vec![g.edges()[seed].0];
        let mut path_edges: Vec<usize> = Vec::new();
        let mut seen: BTreeMap<ModeId, usize> = BTreeMap::new();
        seen.insert(path_vertices[0], 0);
        loop {
            let at = *path_vertices.last().expect("path is nonempty");
            let next = remaining
                .iter()
                .copied()
                .find(|&e| !path_edges.contains(&e) && g.edges()[e].0 == at);
            let Some(e) = next else {
                // a balanced flow cannot strand the walk; bail defensively
                remaining.remove(&seed);
                break;
            };
            path_edges.push(e);
            let to = g.edges()[e].1;
            if let Some(&i) = seen.get(&to) {
                let mut cycle: Vec<ModeId> = path_vertices[i..].to_vec();
                cycle.push(to);
                for &used in &path_edges[i..] {
                    remaining.remove(&used);
                }
                circuits.push(cycle);
                break;
            }
            seen.insert(to, path_vertices.len());
            path_vertices.push(to);
        }
    }
    circuits
}

/// Exhaustive fallback: the first enumerated self-loop-free circuit meeting
/// the epsilon-slack condition.
fn oracle_search(
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    cfg: &SynthesisConfig,
) -> Result<Option<Walk>> {
    if g.edge_count() > cfg.max_oracle_edges {
        return Err(Error::Undecided {
            reason: format!(
                "LP produced no usable integral flow and the graph has {} edges, above the {}-edge enumeration budget",
                g.edge_count(),
                cfg.max_oracle_edges
            ),
        });
    }
    let en = graph::enumerate_circuits(g, g.edge_count(), cfg.max_enumerated)?;
    for w in &en.circuits {
        if w.edge_pairs().any(|(k, l)| k == l) {
            continue; // self-loop flows are excluded by the augmented rows
        }
        let report = walk_ratio(w, gains, classes, 0.0)?;
        if circuit_satisfies(&report, cfg.epsilon) {
            return Ok(Some(w.clone()));
        }
    }
    if en.truncated {
        return Err(Error::Undecided {
            reason: "circuit enumeration budget exhausted before a satisfying circuit appeared".into(),
        });
    }
    Ok(None)
}

/// Solves the LP to a basic feasible point and repairs fractional vertices:
/// threshold at 0.5, re-verify, fall back to circuit decomposition of the
/// rounding, then to exhaustive enumeration.
pub fn solve_feasibility(
    lp: &CircuitLp,
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    cfg: &SynthesisConfig,
) -> Result<LpOutcome> {
    let problem = lp_to_problem(lp);
    let values = match simplex::solve(&problem, cfg.max_pivots) {
        Outcome::Infeasible => {
            return Ok(LpOutcome::Infeasible {
                reason: "the circuit-feasibility LP has no solution".into(),
            })
        }
        Outcome::IterationLimit => {
            return Ok(LpOutcome::Undecided {
                reason: format!("simplex pivot budget of {} exhausted", cfg.max_pivots),
            })
        }
        Outcome::Optimal(values) => values,
    };

    // Integral up to tolerance, or fractional because the ratio row breaks
    // total unimodularity of the incidence system: either way, threshold at
    // 0.5 and verify the rounding against every constraint.
    let rounded: Vec<f64> = values.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    if verify_integral_flow(lp, g, gains, classes, &rounded) {
        return Ok(LpOutcome::Flow(EdgeFlow { values: rounded }));
    }

    // if the rounding is a balanced flow, each circuit of its decomposition
    // is a candidate on its own
    let support: Vec<usize> = rounded
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(i, _)| i)
        .collect();
    let balanced = {
        let inc = &lp.incidence.matrix;
        (0..inc.nrows()).all(|r| {
            let dot: f64 = support.iter().map(|&c| inc[(r, c)]).sum();
            dot.abs() <= EQUALITY_TOL
        })
    };
    if balanced && !support.is_empty() {
        for cycle in decompose_into_circuits(g, &support) {
            let walk = Walk::new(g, cycle)?;
            let report = walk_ratio(&walk, gains, classes, 0.0)?;
            if circuit_satisfies(&report, lp.epsilon) {
                let mut indicator = vec![0.0; values.len()];
                for (from, to) in walk.edge_pairs() {
                    let pos = g
                        .edge_position(from, to)
                        .ok_or_else(|| Error::InternalConsistency("decomposed circuit uses unknown edge".into()))?;
                    indicator[pos] = 1.0;
                }
                if verify_integral_flow(lp, g, gains, classes, &indicator) {
                    return Ok(LpOutcome::Flow(EdgeFlow { values: indicator }));
                }
            }
        }
    }

    match oracle_search(g, gains, classes, cfg) {
        Ok(Some(walk)) => {
            let mut indicator = vec![0.0; values.len()];
            for (from, to) in walk.edge_pairs() {
                let pos = g
                    .edge_position(from, to)
                    .ok_or_else(|| Error::InternalConsistency("oracle circuit uses unknown edge".into()))?;
                indicator[pos] = 1.0;
            }
            Ok(LpOutcome::Flow(EdgeFlow { values: indicator }))
        }
        Ok(None) => Ok(LpOutcome::Infeasible {
            reason: "exhaustive enumeration found no circuit meeting the ratio condition".into(),
        }),
        Err(Error::Undecided { reason }) => Ok(LpOutcome::Undecided { reason }),
        Err(e) => Err(e),
    }
}

/// Extracts a closed trail traversing the flow's support, one circuit per
/// weakly connected component via directed Hierholzer. With several
/// components, returns the first whose ratio meets the epsilon condition.
pub fn extract_circuit(
    flow: &EdgeFlow,
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    epsilon: f64,
) -> Result<Walk> {
    let support = flow.support();
    if support.is_empty() {
        return Err(Error::InternalConsistency("empty flow support".into()));
    }

    // weakly connected components over the support
    let mut parent: BTreeMap<ModeId, ModeId> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<ModeId, ModeId>, v: ModeId) -> ModeId {
        let p = *parent.entry(v).or_insert(v);
        if p == v {
            v
        } else {
            let root = find(parent, p);
            parent.insert(v, root);
            root
        }
    }
    for &e in &support {
        let (a, b) = g.edges()[e];
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let mut components: BTreeMap<ModeId, Vec<usize>> = BTreeMap::new();
    for &e in &support {
        let root = find(&mut parent, g.edges()[e].0);
        components.entry(root).or_default().push(e);
    }

    let mut walks = Vec::new();
    for edges in components.values() {
        // in-traversals must equal out-traversals at every support vertex
        let mut balance: BTreeMap<ModeId, i64> = BTreeMap::new();
        for &e in edges {
            let (from, to) = g.edges()[e];
            *balance.entry(from).or_insert(0) += 1;
            *balance.entry(to).or_insert(0) -= 1;
        }
        if balance.values().any(|&v| v != 0) {
            return Err(Error::InternalConsistency(
                "flow support is not balanced at every vertex".into(),
            ));
        }
        walks.push(hierholzer(g, edges)?);
    }

    if walks.len() == 1 {
        return Ok(walks.pop().expect("one walk"));
    }
    let mut ratios = Vec::new();
    for walk in &walks {
        let report = walk_ratio(walk, gains, classes, 0.0)?;
        if circuit_satisfies(&report, epsilon) {
            return Ok(walk.clone());
        }
        ratios.push(report.ratio);
    }
    Err(Error::SupportDecomposed {
        count: walks.len(),
        ratios,
    })
}

/// Directed Hierholzer on a balanced edge set: follow unused out-edges until
/// the tour closes, splicing at vertices with remaining out-edges. Lowest
/// edge position first keeps the output deterministic.
fn hierholzer(g: &TransitionGraph, edges: &[usize]) -> Result<Walk> {
    let mut unused: BTreeMap<ModeId, Vec<usize>> = BTreeMap::new();
    for &e in edges {
        unused.entry(g.edges()[e].0).or_default().push(e);
    }
    for list in unused.values_mut() {
        list.sort_unstable();
        list.reverse(); // pop() yields lowest position first
    }
    let start = *unused.keys().next().expect("nonempty edge set");
    let mut stack = vec![start];
    let mut tour = Vec::new();
    while let Some(&at) = stack.last() {
        if let Some(e) = unused.get_mut(&at).and_then(|l| l.pop()) {
            stack.push(g.edges()[e].1);
        } else {
            tour.push(stack.pop().expect("stack nonempty"));
        }
    }
    tour.reverse();
    let walk = Walk::new(g, tour)?;
    if !walk.is_circuit() || walk.len() != edges.len() {
        return Err(Error::InternalConsistency(
            "Hierholzer did not return an Eulerian circuit of the support".into(),
        ));
    }
    Ok(walk)
}

/// End-to-end synthesis from gains and classes: trivial-case shortcut, LP,
/// extraction, and an independent final gate on the resulting circuit.
pub fn synthesize(
    g: &TransitionGraph,
    gains: &GainTable,
    classes: &ClassMap,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    if cfg.prefer_trivial {
        if let Some(mode) = trivial_case_check(g, classes) {
            let circuit = Walk::new(g, vec![mode, mode])?;
            let ratio = walk_ratio(&circuit, gains, classes, 0.0)?;
            let signal = SwitchingSignal::constant(mode);
            let verdict = asymptotic_check(&signal, gains, classes)?;
            if !verdict.trivial_as_dwell || !verdict.ratio_below_one {
                return Err(Error::InternalConsistency(
                    "trivial self-loop case failed its own verification".into(),
                ));
            }
            return Ok(SynthesisResult {
                flow: None,
                circuit,
                ratio,
                signal,
                trivial_case: Some(mode),
                from_oracle_fallback: false,
            });
        }
    }

    let lp = build_lp(g, gains, classes, cfg.epsilon)?;
    let flow = match solve_feasibility(&lp, g, gains, classes, cfg)? {
        LpOutcome::Infeasible { reason } => return Err(Error::Infeasible { reason }),
        LpOutcome::Undecided { reason } => return Err(Error::Undecided { reason }),
        LpOutcome::Flow(flow) => flow,
    };

    let (circuit, flow, fallback) =
        match extract_circuit(&flow, g, gains, classes, cfg.epsilon) {
            Ok(c) => (c, Some(flow), false),
            Err(Error::SupportDecomposed { .. }) => match oracle_search(g, gains, classes, cfg)? {
                Some(walk) => (walk, None, true),
                None => {
                    return Err(Error::Infeasible {
                        reason:
                            "LP support decomposed into components none of which satisfies the ratio condition, and enumeration found no alternative"
                                .into(),
                    })
                }
            },
            Err(e) => return Err(e),
        };

    // final gate, independent of the LP arithmetic
    let ratio = walk_ratio(&circuit, gains, classes, 0.0)?;
    if !ratio.satisfied {
        return Err(Error::InternalConsistency(format!(
            "extracted circuit fails the strict ratio condition: {:.6}",
            ratio.ratio
        )));
    }
    let signal = SwitchingSignal::from_circuit(&circuit)?;
    let verdict = asymptotic_check(&signal, gains, classes)?;
    if !(verdict.switching_persists && verdict.ratio_below_one) {
        return Err(Error::InternalConsistency(
            "synthesized signal fails the asymptotic conditions".into(),
        ));
    }

    Ok(SynthesisResult {
        flow,
        circuit,
        ratio,
        signal,
        trivial_case: None,
        from_oracle_fallback: fallback,
    })
}
