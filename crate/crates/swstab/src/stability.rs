//! Switching statistics on signal prefixes and evaluation of the asymptotic
//! stability conditions.
//!
//! Two conditions certify a signal: switching keeps happening
//! (liminf nu(t) > 0), and the limsup of the weighted log-gain ratio stays
//! below one. For circuit-generated signals both limits are computable
//! exactly from one period; for arbitrary prefixes only the finite-horizon
//! values are reported, never verdicts.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::{SwitchCounts, SwitchingSignal, Walk};
use crate::lyap::{ClassMap, GainTable, StabilityClass, SubsystemCertificate};
use crate::linalg;
use crate::ModeId;

/// Switching statistics of the prefix sigma(0..=t).
///
/// Counting convention: `kappa[j]` counts steps `s` in `0..t` with
/// `sigma(s) = j`, and `rho[(k, l)]` counts steps `s` in `0..t` with
/// `sigma(s) = k`, `sigma(s+1) = l`, so both sum to `t` and one walk edge is
/// one time step. The final partial holding interval is included; the
/// residual term of the proof's `g2` is absorbed by this convention.
#[derive(Clone, Debug)]
pub struct PrefixStats {
    pub t: usize,
    pub n_switches: usize,
    pub nu: f64,
    pub counts: SwitchCounts,
}

/// Counts switches and traversals over the first `t` steps (consuming
/// sigma(0..=t)).
pub fn prefix_stats(sigma: &SwitchingSignal, t: usize) -> Result<PrefixStats> {
    if t == 0 {
        return Err(Error::InvalidInput("prefix statistics need t >= 1".into()));
    }
    let values = sigma.prefix(t + 1)?;
    let mut counts = SwitchCounts::default();
    let mut n_switches = 0;
    for s in 0..t {
        *counts.rho.entry((values[s], values[s + 1])).or_insert(0) += 1;
        *counts.kappa.entry(values[s]).or_insert(0) += 1;
        if values[s + 1] != values[s] {
            n_switches += 1;
        }
    }
    Ok(PrefixStats {
        t,
        n_switches,
        nu: n_switches as f64 / t as f64,
        counts,
    })
}

/// Numerator, denominator and value of the weighted log-gain ratio; the
/// ratio is `+inf` when no asymptotically stable mode was activated.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RatioReport {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

/// Evaluates the weighted log-gain ratio on switching counts:
/// numerator = sum of `ln mu` over traversed edges plus `|ln lambda|` times
/// activations of unstable modes; denominator = `|ln lambda|` times
/// activations of asymptotically stable modes. Marginal modes contribute to
/// neither. `satisfied` means ratio < 1 - margin.
pub fn stability_ratio(
    counts: &SwitchCounts,
    gains: &GainTable,
    classes: &ClassMap,
    margin: f64,
) -> Result<RatioReport> {
    let mut numerator = 0.0;
    for (&(k, l), &n) in &counts.rho {
        numerator += gains.log_mu(k, l)? * n as f64;
    }
    let mut denominator = 0.0;
    for (&j, &n) in &counts.kappa {
        let class = classes.get(&j).ok_or(Error::MissingClass { mode: j })?;
        match class {
            StabilityClass::Unstable => numerator += gains.log_lambda(j)?.abs() * n as f64,
            StabilityClass::AsymptoticallyStable => {
                denominator += gains.log_lambda(j)?.abs() * n as f64
            }
            StabilityClass::MarginallyStable => {}
        }
    }
    let ratio = if denominator > 0.0 {
        numerator / denominator
    } else {
        f64::INFINITY
    };
    Ok(RatioReport {
        numerator,
        denominator,
        ratio,
        satisfied: ratio < 1.0 - margin,
    })
}

/// Exact asymptotic verdicts for a circuit-generated signal, computed from
/// one period.
#[derive(Clone, Debug)]
pub struct AsymptoticVerdict {
    /// liminf nu(t) > 0: the circuit traverses at least one non-self-loop edge.
    pub switching_persists: bool,
    /// limsup ratio < 1 on the repeated circuit.
    pub ratio_below_one: bool,
    /// The circuit dwells on a single asymptotically stable self-loop; the
    /// ratio condition holds trivially and persistent switching is not
    /// needed.
    pub trivial_as_dwell: bool,
    pub report: RatioReport,
}

/// Evaluates both stability conditions for a periodic signal. Rejects
/// non-periodic signals: their limits are not decidable from a prefix.
pub fn asymptotic_check(
    sigma: &SwitchingSignal,
    gains: &GainTable,
    classes: &ClassMap,
) -> Result<AsymptoticVerdict> {
    let period = sigma.period().ok_or(Error::NotPeriodic)?;
    let stats = prefix_stats(sigma, period)?;
    let report = stability_ratio(&stats.counts, gains, classes, 0.0)?;
    let switching_persists = stats.counts.rho.keys().any(|&(k, l)| k != l);
    let trivial_as_dwell = !switching_persists
        && stats.counts.kappa.len() == 1
        && stats.counts.kappa.keys().all(|j| {
            classes.get(j) == Some(&StabilityClass::AsymptoticallyStable)
        });
    Ok(AsymptoticVerdict {
        switching_persists,
        ratio_below_one: report.satisfied,
        trivial_as_dwell,
        report,
    })
}

/// The two exponent functions of the Lyapunov iteration over sigma(0..=t):
/// `g1` collects the contraction earned on asymptotically stable modes,
/// `g2` the expansion from transition gains and unstable modes. The bound is
/// `V(t) <= V(0) exp(g2 - g1)`.
pub fn g_functions(
    sigma: &SwitchingSignal,
    t: usize,
    gains: &GainTable,
    classes: &ClassMap,
) -> Result<(f64, f64)> {
    let stats = prefix_stats(sigma, t)?;
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for (&(k, l), &n) in &stats.counts.rho {
        g2 += gains.log_mu(k, l)? * n as f64;
    }
    for (&j, &n) in &stats.counts.kappa {
        match classes.get(&j).ok_or(Error::MissingClass { mode: j })? {
            StabilityClass::AsymptoticallyStable => g1 += gains.log_lambda(j)?.abs() * n as f64,
            StabilityClass::Unstable => g2 += gains.log_lambda(j)?.abs() * n as f64,
            StabilityClass::MarginallyStable => {}
        }
    }
    Ok((g1, g2))
}

/// Norm-level envelope data at one time step.
#[derive(Clone, Debug)]
pub struct EnvelopeBound {
    pub g1: f64,
    pub g2: f64,
    /// Overshoot constant sqrt(lambda_max(sum P_i) / min_i lambda_min(P_i)).
    pub c: f64,
    /// c ||x0|| exp(g2 - g1), the reported envelope value.
    pub bound: f64,
    /// V(0) exp(g2 - g1): the Lyapunov-level bound on V(t), which is the
    /// inequality the simulator asserts.
    pub lyapunov_bound: f64,
}

/// Overshoot constant `c` from the family of certificates.
pub fn envelope_constant(certs: &BTreeMap<ModeId, SubsystemCertificate>) -> f64 {
    let mut iter = certs.values();
    let first = iter.next().expect("at least one certificate");
    let mut sum = first.p.clone();
    let mut min_eig = linalg::sym_eig_range(&first.p).0;
    for cert in iter {
        sum += &cert.p;
        min_eig = min_eig.min(linalg::sym_eig_range(&cert.p).0);
    }
    let (_, max_sum) = linalg::sym_eig_range(&sum);
    (max_sum / min_eig).sqrt()
}

/// Envelope bound at horizon `t` for a trajectory started at `x0`. At `t = 0`
/// the bound is `c ||x0||`.
pub fn envelope(
    certs: &BTreeMap<ModeId, SubsystemCertificate>,
    gains: &GainTable,
    x0: &DVector<f64>,
    sigma: &SwitchingSignal,
    t: usize,
) -> Result<EnvelopeBound> {
    let classes: ClassMap = certs.iter().map(|(&id, c)| (id, c.class)).collect();
    let (g1, g2) = if t == 0 {
        (0.0, 0.0)
    } else {
        g_functions(sigma, t, gains, &classes)?
    };
    let c = envelope_constant(certs);
    let mode0 = sigma.mode_at(0).ok_or(Error::InvalidInput("empty signal".into()))?;
    let cert0 = certs.get(&mode0).ok_or(Error::UnknownMode { mode: mode0 })?;
    Ok(EnvelopeBound {
        g1,
        g2,
        c,
        bound: c * x0.norm() * (g2 - g1).exp(),
        lyapunov_bound: cert0.level(x0) * (g2 - g1).exp(),
    })
}

/// Statistics of a walk reinterpreted through [`stability_ratio`]; convenience
/// for circuit candidates.
pub fn walk_ratio(
    walk: &Walk,
    gains: &GainTable,
    classes: &ClassMap,
    margin: f64,
) -> Result<RatioReport> {
    let stats = crate::graph::walk_stats(walk);
    stability_ratio(&stats.counts, gains, classes, margin)
}
