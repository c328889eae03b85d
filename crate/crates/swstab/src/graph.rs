//! Directed graph of admissible mode transitions, walks, switching signals,
//! and the self-loop-augmented node-arc incidence matrix.
//!
//! A switching signal and an infinite walk on the graph are two views of the
//! same object: vertex at position `t` = active mode at time `t`, one edge =
//! one time step. Dwelling on a mode for consecutive steps traverses its
//! self-loop.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ModeId;

/// Admissible-transition graph with a fixed vertex and edge order. The edge
/// order defines the column order of the incidence matrix and of LP flow
/// vectors.
#[derive(Clone, Debug)]
pub struct TransitionGraph {
    vertices: Vec<ModeId>,
    edges: Vec<(ModeId, ModeId)>,
    edge_index: BTreeMap<(ModeId, ModeId), usize>,
}

impl TransitionGraph {
    pub fn new(vertices: Vec<ModeId>, edges: Vec<(ModeId, ModeId)>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyVertexSet);
        }
        let mut seen = BTreeSet::new();
        for &v in &vertices {
            if !seen.insert(v) {
                return Err(Error::DuplicateVertex { vertex: v });
            }
        }
        let mut edge_index = BTreeMap::new();
        for (pos, &(from, to)) in edges.iter().enumerate() {
            if !seen.contains(&from) || !seen.contains(&to) {
                return Err(Error::DanglingEdge { from, to });
            }
            if edge_index.insert((from, to), pos).is_some() {
                return Err(Error::DuplicateEdge { from, to });
            }
        }
        Ok(Self {
            vertices,
            edges,
            edge_index,
        })
    }

    pub fn vertices(&self) -> &[ModeId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(ModeId, ModeId)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_vertex(&self, v: ModeId) -> bool {
        self.vertices.contains(&v)
    }

    pub fn has_edge(&self, from: ModeId, to: ModeId) -> bool {
        self.edge_index.contains_key(&(from, to))
    }

    /// Position of the edge in the fixed column order.
    pub fn edge_position(&self, from: ModeId, to: ModeId) -> Option<usize> {
        self.edge_index.get(&(from, to)).copied()
    }

    /// Vertices carrying a self-loop, in vertex order.
    pub fn self_loop_vertices(&self) -> Vec<ModeId> {
        self.vertices
            .iter()
            .copied()
            .filter(|&v| self.has_edge(v, v))
            .collect()
    }

    /// Edge positions leaving `v`, in edge order.
    pub fn out_edges(&self, v: ModeId) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(from, _))| from == v)
            .map(|(pos, _)| pos)
            .collect()
    }
}

/// Row of the augmented incidence matrix: either an actual vertex or the
/// auxiliary vertex `j'` that absorbs the self-loop on `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncidenceRow {
    Vertex(ModeId),
    Auxiliary(ModeId),
}

/// Node-arc incidence matrix with one auxiliary row per self-loop: column
/// `(i, j)`, `i != j`, has `+1` in row `i` and `-1` in row `j`; column
/// `(j, j)` has `+1` in row `j` and `-1` in row `j'`.
#[derive(Clone, Debug)]
pub struct IncidenceMatrix {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<IncidenceRow>,
}

/// Builds the augmented incidence matrix; auxiliary rows are appended after
/// the vertex rows, in vertex order of the looped vertices.
pub fn incidence_matrix(g: &TransitionGraph) -> IncidenceMatrix {
    let loops = g.self_loop_vertices();
    let mut rows: Vec<IncidenceRow> = g.vertices().iter().map(|&v| IncidenceRow::Vertex(v)).collect();
    rows.extend(loops.iter().map(|&v| IncidenceRow::Auxiliary(v)));
    let row_of_vertex: BTreeMap<ModeId, usize> = g
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let row_of_aux: BTreeMap<ModeId, usize> = loops
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, g.vertices().len() + i))
        .collect();

    let mut m = DMatrix::<f64>::zeros(rows.len(), g.edge_count());
    for (col, &(from, to)) in g.edges().iter().enumerate() {
        if from == to {
            m[(row_of_vertex[&from], col)] = 1.0;
            m[(row_of_aux[&from], col)] = -1.0;
        } else {
            m[(row_of_vertex[&from], col)] = 1.0;
            m[(row_of_vertex[&to], col)] = -1.0;
        }
    }
    IncidenceMatrix { matrix: m, rows }
}

/// A walk: a vertex sequence whose consecutive pairs are all edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    vertices: Vec<ModeId>,
}

impl Walk {
    /// Validates every consecutive pair against the graph, reporting the
    /// first offending step.
    pub fn new(g: &TransitionGraph, vertices: Vec<ModeId>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyWalk);
        }
        for (t, w) in vertices.windows(2).enumerate() {
            if !g.has_edge(w[0], w[1]) {
                return Err(Error::InvalidTransition {
                    t,
                    from: w[0],
                    to: w[1],
                });
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[ModeId] {
        &self.vertices
    }

    /// Number of edges (time steps).
    pub fn len(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.first() == self.vertices.last() && self.vertices.len() > 1
    }

    pub fn edge_pairs(&self) -> impl Iterator<Item = (ModeId, ModeId)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    /// No repeated edge.
    pub fn is_trail(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.edge_pairs().all(|e| seen.insert(e))
    }

    pub fn is_circuit(&self) -> bool {
        self.is_closed() && self.is_trail()
    }

    /// Concatenates `k` copies of a closed walk, counting the shared
    /// endpoint once.
    pub fn repeat(&self, k: usize) -> Result<Walk> {
        if !self.is_closed() {
            return Err(Error::WalkNotClosed);
        }
        let mut vertices = vec![self.vertices[0]];
        for _ in 0..k {
            vertices.extend_from_slice(&self.vertices[1..]);
        }
        Ok(Walk { vertices })
    }

    /// Canonical representative of a closed walk under rotation: the
    /// lexicographically smallest rotation of its vertex sequence.
    pub fn canonical_rotation(&self) -> Result<Walk> {
        if !self.is_closed() {
            return Err(Error::WalkNotClosed);
        }
        let cycle = &self.vertices[..self.len()];
        let n = cycle.len();
        let mut best: Option<Vec<ModeId>> = None;
        for start in 0..n {
            let mut rot: Vec<ModeId> = (0..n).map(|i| cycle[(start + i) % n]).collect();
            rot.push(rot[0]);
            if best.as_ref().is_none_or(|b| rot < *b) {
                best = Some(rot);
            }
        }
        Ok(Walk {
            vertices: best.expect("closed walk has at least one rotation"),
        })
    }

}

/// A switching signal: either an explicit finite prefix or a circuit
/// repeated indefinitely after an optional prelude.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwitchingSignal {
    Finite(Vec<ModeId>),
    Periodic { prelude: Vec<ModeId>, cycle: Vec<ModeId> },
}

impl SwitchingSignal {
    /// Infinite periodic signal generated by repeating a circuit.
    pub fn from_circuit(w: &Walk) -> Result<Self> {
        if !w.is_closed() {
            return Err(Error::WalkNotClosed);
        }
        Ok(SwitchingSignal::Periodic {
            prelude: Vec::new(),
            cycle: w.vertices()[..w.len()].to_vec(),
        })
    }

    pub fn constant(mode: ModeId) -> Self {
        SwitchingSignal::Periodic {
            prelude: Vec::new(),
            cycle: vec![mode],
        }
    }

    pub fn mode_at(&self, t: usize) -> Option<ModeId> {
        match self {
            SwitchingSignal::Finite(v) => v.get(t).copied(),
            SwitchingSignal::Periodic { prelude, cycle } => {
                if t < prelude.len() {
                    Some(prelude[t])
                } else {
                    Some(cycle[(t - prelude.len()) % cycle.len()])
                }
            }
        }
    }

    /// First `len` values sigma(0..len).
    pub fn prefix(&self, len: usize) -> Result<Vec<ModeId>> {
        match self {
            SwitchingSignal::Finite(v) if v.len() < len => Err(Error::PrefixTooShort {
                requested: len,
                available: v.len(),
            }),
            _ => Ok((0..len)
                .map(|t| self.mode_at(t).expect("periodic or long enough"))
                .collect()),
        }
    }

    /// Period length, for circuit-generated signals without prelude.
    pub fn period(&self) -> Option<usize> {
        match self {
            SwitchingSignal::Periodic { prelude, cycle } if prelude.is_empty() => Some(cycle.len()),
            _ => None,
        }
    }

    /// Checks every available consecutive pair against the graph. For
    /// periodic signals this covers one full period plus the wrap-around.
    pub fn validate(&self, g: &TransitionGraph) -> Result<()> {
        let values: Vec<ModeId> = match self {
            SwitchingSignal::Finite(v) => v.clone(),
            SwitchingSignal::Periodic { prelude, cycle } => {
                let span = prelude.len() + 2 * cycle.len() + 1;
                (0..span).map(|t| self.mode_at(t).unwrap()).collect()
            }
        };
        for &m in &values {
            if !g.has_vertex(m) {
                return Err(Error::UnknownMode { mode: m });
            }
        }
        for (t, w) in values.windows(2).enumerate() {
            if !g.has_edge(w[0], w[1]) {
                return Err(Error::InvalidTransition {
                    t,
                    from: w[0],
                    to: w[1],
                });
            }
        }
        Ok(())
    }
}

/// Walk view of a signal prefix of length `t` (vertices sigma(0..=t), `t`
/// edges).
pub fn signal_to_walk(g: &TransitionGraph, sigma: &SwitchingSignal, t: usize) -> Result<Walk> {
    let vertices = sigma.prefix(t + 1)?;
    Walk::new(g, vertices)
}

/// Signal view of a walk: `sigma(t)` is the walk's vertex at position `t`.
pub fn walk_to_signal(w: &Walk) -> SwitchingSignal {
    SwitchingSignal::Finite(w.vertices().to_vec())
}

/// Edge-traversal and activation counts of a walk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SwitchCounts {
    pub rho: BTreeMap<(ModeId, ModeId), usize>,
    pub kappa: BTreeMap<ModeId, usize>,
}

impl SwitchCounts {
    pub fn total_traversals(&self) -> usize {
        self.rho.values().sum()
    }

    pub fn total_activations(&self) -> usize {
        self.kappa.values().sum()
    }
}

/// Counts plus a flag for the open-walk boundary: on an open walk the final
/// vertex has no outgoing edge, so its activation count is short by one
/// relative to vertex-visit counting.
#[derive(Clone, Debug)]
pub struct WalkStats {
    pub counts: SwitchCounts,
    pub closed: bool,
}

/// `rho[(k, l)]` = traversals of edge `(k, l)`; `kappa[j]` = total outgoing
/// traversals of `j`. Exact activation counts for closed walks.
pub fn walk_stats(w: &Walk) -> WalkStats {
    let mut counts = SwitchCounts::default();
    for (from, to) in w.edge_pairs() {
        *counts.rho.entry((from, to)).or_insert(0) += 1;
        *counts.kappa.entry(from).or_insert(0) += 1;
    }
    WalkStats {
        counts,
        closed: w.is_closed(),
    }
}

/// Circuits found by exhaustive search, with a truncation marker when the
/// emission budget was hit.
#[derive(Clone, Debug)]
pub struct CircuitEnumeration {
    pub circuits: Vec<Walk>,
    pub truncated: bool,
}

/// Enumerates all circuits (closed trails) of length at most `max_len`, each
/// reported once in canonical rotation, in sorted order. Depth-first search
/// over unused edges with an edge-set bitmask; intended for small graphs.
pub fn enumerate_circuits(
    g: &TransitionGraph,
    max_len: usize,
    max_emitted: usize,
) -> Result<CircuitEnumeration> {
    if g.edge_count() > 64 {
        return Err(Error::TooManyEdges {
            count: g.edge_count(),
            max: 64,
        });
    }

    struct Dfs<'a> {
        g: &'a TransitionGraph,
        out: BTreeMap<ModeId, Vec<usize>>,
        start: ModeId,
        max_len: usize,
        max_emitted: usize,
        path: Vec<ModeId>,
        found: BTreeSet<Vec<ModeId>>,
        truncated: bool,
    }

    impl Dfs<'_> {
        fn go(&mut self, at: ModeId, used: u64, len: usize) {
            if self.truncated || len >= self.max_len {
                return;
            }
            let out = self.out[&at].clone();
            for e in out {
                if used & (1 << e) != 0 {
                    continue;
                }
                let (_, to) = self.g.edges()[e];
                if to < self.start {
                    continue; // canonical start is the minimal vertex
                }
                self.path.push(to);
                if to == self.start {
                    if self.found.len() >= self.max_emitted {
                        self.truncated = true;
                    } else {
                        let w = Walk {
                            vertices: self.path.clone(),
                        };
                        let canon = w.canonical_rotation().expect("closed by construction");
                        self.found.insert(canon.vertices().to_vec());
                    }
                }
                if !self.truncated {
                    self.go(to, used | (1 << e), len + 1);
                }
                self.path.pop();
                if self.truncated {
                    return;
                }
            }
        }
    }

    let mut dfs = Dfs {
        g,
        out: g.vertices().iter().map(|&v| (v, g.out_edges(v))).collect(),
        start: 0,
        max_len,
        max_emitted,
        path: Vec::new(),
        found: BTreeSet::new(),
        truncated: false,
    };
    for &start in g.vertices() {
        dfs.start = start;
        dfs.path = vec![start];
        dfs.go(start, 0, 0);
        if dfs.truncated {
            break;
        }
    }

    Ok(CircuitEnumeration {
        circuits: dfs
            .found
            .into_iter()
            .map(|vertices| Walk { vertices })
            .collect(),
        truncated: dfs.truncated,
    })
}

#[cfg(test)]
pub(crate) fn benchmark_graph() -> TransitionGraph {
    // five modes, every transition admissible, self-loops on 3, 4, 5
    let vertices = vec![1, 2, 3, 4, 5];
    let mut edges = Vec::new();
    for i in 1..=5usize {
        for j in 1..=5usize {
            if i != j {
                edges.push((i, j));
            } else if i >= 3 {
                edges.push((i, i));
            }
        }
    }
    TransitionGraph::new(vertices, edges).unwrap()
}
