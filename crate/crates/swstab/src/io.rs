//! File formats: the JSON system description, newline-delimited signal
//! files with a period header, the JSON report, and trajectory CSV export.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SwitchingSignal, TransitionGraph};
use crate::lyap::{
    certify_family, ClassMap, GainTable, StabilityClass, SubsystemCertificate, SubsystemMatrix,
};
use crate::sim::Trajectory;
use crate::stability::RatioReport;
use crate::ModeId;

/// On-disk system description. Matrices are row-major nested arrays.
/// `subsystems` may be omitted when `gains_override` supplies the numbers
/// directly (the family matrices are then unknown and simulation is
/// unavailable).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<ModeId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsystems: Vec<SubsystemEntry>,
    pub edges: Vec<[ModeId; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q: Vec<MatrixEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains_override: Option<GainsOverride>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsystemEntry {
    pub id: ModeId,
    pub a: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub id: ModeId,
    pub m: Vec<Vec<f64>>,
}

/// Direct specification of `ln mu` per edge and `ln lambda` per mode; the
/// stability class of each mode follows from the sign of `ln lambda`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainsOverride {
    #[serde(default)]
    pub log_mu: Vec<LogMuEntry>,
    pub log_lambda: Vec<LogLambdaEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogMuEntry {
    pub from: ModeId,
    pub to: ModeId,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLambdaEntry {
    pub id: ModeId,
    pub value: f64,
}

fn matrix_from_rows(id: ModeId, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidInput(format!("matrix for mode {id} is empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!(
            "matrix for mode {id} has ragged rows"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// `(ln mu per edge, ln lambda per mode)` supplied directly by the user.
pub type LogGains = (BTreeMap<(ModeId, ModeId), f64>, BTreeMap<ModeId, f64>);

/// Certificates keyed by mode.
pub type CertificateMap = BTreeMap<ModeId, SubsystemCertificate>;

/// Validated in-memory system.
#[derive(Clone, Debug)]
pub struct SystemDescription {
    pub family: BTreeMap<ModeId, SubsystemMatrix>,
    pub graph: TransitionGraph,
    pub q_override: BTreeMap<ModeId, DMatrix<f64>>,
    pub epsilon: Option<f64>,
    pub gains_override: Option<LogGains>,
}

impl SystemDescription {
    pub fn from_spec(file: SystemFile) -> Result<Self> {
        let mut family = BTreeMap::new();
        let mut dim: Option<usize> = None;
        let mut subsystem_order = Vec::new();
        for entry in &file.subsystems {
            let m = matrix_from_rows(entry.id, &entry.a)?;
            if let Some(d) = dim {
                if m.nrows() != d {
                    return Err(Error::DimensionMismatch {
                        context: format!(
                            "mode {} is {}x{}, expected {d}x{d} like the other subsystems",
                            entry.id,
                            m.nrows(),
                            m.ncols()
                        ),
                    });
                }
            } else {
                dim = Some(m.nrows());
            }
            let sub = SubsystemMatrix::new(entry.id, m)?;
            if family.insert(entry.id, sub).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate subsystem id {}",
                    entry.id
                )));
            }
            subsystem_order.push(entry.id);
        }

        let vertices = match &file.modes {
            Some(modes) => modes.clone(),
            None if !subsystem_order.is_empty() => subsystem_order,
            None => {
                return Err(Error::InvalidInput(
                    "either `modes` or `subsystems` must declare the vertex set".into(),
                ))
            }
        };
        let edges: Vec<(ModeId, ModeId)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = TransitionGraph::new(vertices, edges)?;

        if !family.is_empty() {
            for &v in graph.vertices() {
                if !family.contains_key(&v) {
                    return Err(Error::InvalidInput(format!(
                        "graph vertex {v} has no subsystem matrix"
                    )));
                }
            }
        } else if file.gains_override.is_none() {
            return Err(Error::InvalidInput(
                "a system without subsystem matrices needs a gains_override section".into(),
            ));
        }

        let mut q_override = BTreeMap::new();
        for entry in &file.q {
            if !family.contains_key(&entry.id) {
                return Err(Error::InvalidInput(format!(
                    "Q override references unknown mode {}",
                    entry.id
                )));
            }
            q_override.insert(entry.id, matrix_from_rows(entry.id, &entry.m)?);
        }

        let gains_override = match &file.gains_override {
            None => None,
            Some(spec) => {
                let mut log_mu = BTreeMap::new();
                for e in &spec.log_mu {
                    if log_mu.insert((e.from, e.to), e.value).is_some() {
                        return Err(Error::InvalidInput(format!(
                            "duplicate log_mu entry for edge ({}, {})",
                            e.from, e.to
                        )));
                    }
                }
                let mut log_lambda = BTreeMap::new();
                for e in &spec.log_lambda {
                    if log_lambda.insert(e.id, e.value).is_some() {
                        return Err(Error::InvalidInput(format!(
                            "duplicate log_lambda entry for mode {}",
                            e.id
                        )));
                    }
                }
                Some((log_mu, log_lambda))
            }
        };

        if let Some(eps) = file.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "epsilon must lie in (0, 1), got {eps}"
                )));
            }
        }

        Ok(Self {
            family,
            graph,
            q_override,
            epsilon: file.epsilon,
            gains_override,
        })
    }

    pub fn to_spec(&self) -> SystemFile {
        SystemFile {
            modes: Some(self.graph.vertices().to_vec()),
            subsystems: self
                .family
                .values()
                .map(|s| SubsystemEntry {
                    id: s.id(),
                    a: matrix_to_rows(s.matrix()),
                })
                .collect(),
            edges: self.graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
            q: self
                .q_override
                .iter()
                .map(|(&id, m)| MatrixEntry {
                    id,
                    m: matrix_to_rows(m),
                })
                .collect(),
            epsilon: self.epsilon,
            gains_override: self.gains_override.as_ref().map(|(log_mu, log_lambda)| {
                GainsOverride {
                    log_mu: log_mu
                        .iter()
                        .map(|(&(from, to), &value)| LogMuEntry { from, to, value })
                        .collect(),
                    log_lambda: log_lambda
                        .iter()
                        .map(|(&id, &value)| LogLambdaEntry { id, value })
                        .collect(),
                }
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_spec(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_spec())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Plain dynamics matrices for the simulator.
    pub fn matrices(&self) -> BTreeMap<ModeId, DMatrix<f64>> {
        self.family
            .iter()
            .map(|(&id, s)| (id, s.matrix().clone()))
            .collect()
    }

    /// Certificates, gains and classes: computed from the matrices, or taken
    /// from the gains-override section when present (no certificates then).
    pub fn certify(&self) -> Result<(Option<CertificateMap>, GainTable, ClassMap)> {
        if let Some((log_mu, log_lambda)) = &self.gains_override {
            let (gains, classes) = GainTable::from_logs(&self.graph, log_mu, log_lambda)?;
            return Ok((None, gains, classes));
        }
        if self.family.is_empty() {
            return Err(Error::InvalidInput(
                "system has neither matrices nor a gains_override".into(),
            ));
        }
        let certs = certify_family(&self.family, &self.q_override)?;
        let classes: ClassMap = certs.iter().map(|(&id, c)| (id, c.class)).collect();
        let gains = GainTable::from_certificates(&self.graph, &certs)?;
        Ok((Some(certs), gains, classes))
    }
}

/// Writes a signal file: a `# period N` or `# prefix N` header followed by
/// one mode id per line (one period for periodic signals).
pub fn write_signal<W: Write>(mut w: W, sigma: &SwitchingSignal) -> Result<()> {
    match sigma {
        SwitchingSignal::Periodic { prelude, cycle } if prelude.is_empty() => {
            writeln!(w, "# period {}", cycle.len())?;
            for m in cycle {
                writeln!(w, "{m}")?;
            }
        }
        other => {
            let values = match other {
                SwitchingSignal::Finite(v) => v.clone(),
                SwitchingSignal::Periodic { prelude, cycle } => {
                    // preludes are not produced by synthesis; store one
                    // expanded period after the prelude as an explicit prefix
                    let mut v = prelude.clone();
                    v.extend_from_slice(cycle);
                    v
                }
            };
            writeln!(w, "# prefix {}", values.len())?;
            for m in &values {
                writeln!(w, "{m}")?;
            }
        }
    }
    Ok(())
}

/// Reads a signal file. Files without a header are treated as explicit
/// prefixes.
pub fn read_signal<R: BufRead>(r: R) -> Result<SwitchingSignal> {
    let mut period: Option<usize> = None;
    let mut values: Vec<ModeId> = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if saw_header || !values.is_empty() {
                continue; // later comments are ignored
            }
            saw_header = true;
            let mut parts = rest.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("period"), Some(n)) => {
                    period = Some(n.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad period header on line {}", lineno + 1))
                    })?)
                }
                (Some("prefix"), Some(_)) | (None, None) => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "unrecognized signal header on line {}",
                        lineno + 1
                    )))
                }
            }
            continue;
        }
        values.push(trimmed.parse().map_err(|_| {
            Error::InvalidInput(format!("bad mode id `{trimmed}` on line {}", lineno + 1))
        })?);
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("signal file contains no modes".into()));
    }
    match period {
        Some(n) if n != values.len() => Err(Error::InvalidInput(format!(
            "period header says {n} but {} modes follow",
            values.len()
        ))),
        Some(_) => Ok(SwitchingSignal::Periodic {
            prelude: Vec::new(),
            cycle: values,
        }),
        None => Ok(SwitchingSignal::Finite(values)),
    }
}

pub fn read_signal_file(path: &Path) -> Result<SwitchingSignal> {
    let file = std::fs::File::open(path)?;
    read_signal(std::io::BufReader::new(file))
}

pub fn write_signal_file(path: &Path, sigma: &SwitchingSignal) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_signal(std::io::BufWriter::new(file), sigma)
}

/// Machine-readable report; every verdict can be recomputed from the gains
/// and circuit it carries.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub certificates: Vec<CertificateEntry>,
    pub gains: Vec<GainEntry>,
    pub lambdas: Vec<LambdaEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lp: Option<LpReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<Vec<ModeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<RatioReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching_persists: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_below_one: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trivial_case: Option<ModeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_prefix: Option<Vec<ModeId>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateEntry {
    pub id: ModeId,
    pub p: Vec<Vec<f64>>,
    pub lambda: f64,
    pub class: StabilityClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainEntry {
    pub from: ModeId,
    pub to: ModeId,
    pub mu: f64,
    pub log_mu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub id: ModeId,
    pub lambda: f64,
    pub log_lambda: f64,
    pub class: StabilityClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LpReport {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(ModeId, ModeId)>>,
}

impl Report {
    pub fn with_gains(gains: &GainTable, classes: &ClassMap) -> Result<Self> {
        let mut report = Report::default();
        for (&(from, to), &mu) in gains.mu_entries() {
            report.gains.push(GainEntry {
                from,
                to,
                mu,
                log_mu: mu.ln(),
            });
        }
        for (&id, &lambda) in gains.lambda_entries() {
            report.lambdas.push(LambdaEntry {
                id,
                lambda,
                log_lambda: lambda.ln(),
                class: *classes.get(&id).ok_or(Error::MissingClass { mode: id })?,
            });
        }
        Ok(report)
    }

    pub fn set_certificates(&mut self, certs: &BTreeMap<ModeId, SubsystemCertificate>) {
        self.certificates = certs
            .values()
            .map(|c| CertificateEntry {
                id: c.id,
                p: matrix_to_rows(&c.p),
                lambda: c.lambda,
                class: c.class,
            })
            .collect();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// CSV export, one row per step: `t,mode,x_1,...,x_d,norm,lyap,envelope`.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let d = traj.states[0].len();
    let mut header = String::from("t,mode");
    for i in 1..=d {
        header.push_str(&format!(",x_{i}"));
    }
    header.push_str(",norm,lyap,envelope");
    writeln!(w, "{header}")?;
    for t in 0..traj.states.len() {
        let mut row = format!("{t},{}", traj.modes[t]);
        for i in 0..d {
            row.push_str(&format!(",{}", traj.states[t][i]));
        }
        row.push_str(&format!(",{}", traj.norms[t]));
        match traj.lyap.get(t) {
            Some(v) => row.push_str(&format!(",{v}")),
            None => row.push(','),
        }
        match traj.envelope.as_ref().and_then(|e| e.get(t)) {
            Some(v) => row.push_str(&format!(",{v}")),
            None => row.push(','),
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}
