//! Trajectory simulation `x(t+1) = A_{sigma(t)} x(t)` with per-step
//! Lyapunov levels and envelope checks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::SwitchingSignal;
use crate::lyap::{ClassMap, GainTable, SubsystemCertificate};
use crate::stability::{envelope_constant, g_functions};
use crate::ModeId;

/// Abort threshold on the state norm.
const DIVERGENCE_GUARD: f64 = 1e300;

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// sigma(0..=T).
    pub modes: Vec<ModeId>,
    /// x(0..=T).
    pub states: Vec<DVector<f64>>,
    /// ||x(t)||_2.
    pub norms: Vec<f64>,
    /// V_{sigma(t)}(x(t)); empty when no certificates were supplied.
    pub lyap: Vec<f64>,
    /// Norm-envelope values c ||x0|| exp(g2 - g1); filled by
    /// [`attach_envelope`].
    pub envelope: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Iterates the switched dynamics for `t_end` steps.
pub fn simulate(
    matrices: &BTreeMap<ModeId, DMatrix<f64>>,
    certs: Option<&BTreeMap<ModeId, SubsystemCertificate>>,
    sigma: &SwitchingSignal,
    x0: &DVector<f64>,
    t_end: usize,
) -> Result<Trajectory> {
    let modes = sigma.prefix(t_end + 1)?;
    for &mode in &modes {
        if !matrices.contains_key(&mode) {
            return Err(Error::UnknownMode { mode });
        }
    }
    let d = x0.len();
    for (&id, m) in matrices {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "mode {id} is {}x{} but the initial state has dimension {d}",
                    m.nrows(),
                    m.ncols()
                ),
            });
        }
    }

    let mut states = Vec::with_capacity(t_end + 1);
    let mut norms = Vec::with_capacity(t_end + 1);
    states.push(x0.clone());
    norms.push(x0.norm());
    for t in 0..t_end {
        let mode = modes[t];
        let a = matrices.get(&mode).ok_or(Error::UnknownMode { mode })?;
        let next = a * &states[t];
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Divergence { t: t + 1, norm });
        }
        states.push(next);
        norms.push(norm);
    }

    let lyap = match certs {
        None => Vec::new(),
        Some(certs) => {
            let mut lyap = Vec::with_capacity(t_end + 1);
            for (t, x) in states.iter().enumerate() {
                let mode = modes[t];
                let cert = certs.get(&mode).ok_or(Error::UnknownMode { mode })?;
                lyap.push(cert.level(x));
            }
            lyap
        }
    };

    Ok(Trajectory {
        modes,
        states,
        norms,
        lyap,
        envelope: None,
    })
}

/// Fills the envelope column: c ||x0|| exp(g2(t) - g1(t)).
pub fn attach_envelope(
    traj: &mut Trajectory,
    certs: &BTreeMap<ModeId, SubsystemCertificate>,
    gains: &GainTable,
    sigma: &SwitchingSignal,
) -> Result<()> {
    let classes: ClassMap = certs.iter().map(|(&id, c)| (id, c.class)).collect();
    let c = envelope_constant(certs);
    let x0_norm = traj.norms[0];
    let mut values = Vec::with_capacity(traj.states.len());
    values.push(c * x0_norm);
    for t in 1..traj.states.len() {
        let (g1, g2) = g_functions(sigma, t, gains, &classes)?;
        values.push(c * x0_norm * (g2 - g1).exp());
    }
    traj.envelope = Some(values);
    Ok(())
}

/// Finite-horizon convergence evidence: the final norm is below `factor`
/// times both the initial norm and the norm `window` steps earlier. Never a
/// proof of asymptotic stability, only evidence on this prefix.
pub fn check_convergence(traj: &Trajectory, window: usize, factor: f64) -> bool {
    let t_end = traj.horizon();
    if window > t_end {
        return false;
    }
    let last = traj.norms[t_end];
    last <= factor * traj.norms[t_end - window] && last <= factor * traj.norms[0]
}

/// Outcome of the envelope verification: the worst relative violation over
/// all steps of the Lyapunov-level bound `V(t) <= V(0) exp(g2 - g1)` and the
/// norm-level bound `||x(t)|| <= c ||x0|| exp((g2 - g1)/2)` it implies.
#[derive(Clone, Debug)]
pub struct EnvelopeCheck {
    pub ok: bool,
    pub max_violation: f64,
}

const ENVELOPE_REL_TOL: f64 = 1e-6;

/// Asserts both envelope bounds at every step of the trajectory.
pub fn verify_envelope(
    traj: &Trajectory,
    certs: &BTreeMap<ModeId, SubsystemCertificate>,
    gains: &GainTable,
    sigma: &SwitchingSignal,
) -> Result<EnvelopeCheck> {
    let classes: ClassMap = certs.iter().map(|(&id, c)| (id, c.class)).collect();
    let mode0 = traj.modes[0];
    let cert0 = certs.get(&mode0).ok_or(Error::UnknownMode { mode: mode0 })?;
    let v0 = cert0.level(&traj.states[0]);
    let c = envelope_constant(certs);
    let x0_norm = traj.norms[0];

    let mut worst = f64::NEG_INFINITY;
    for t in 1..=traj.horizon() {
        let (g1, g2) = g_functions(sigma, t, gains, &classes)?;
        let gap = (g2 - g1).exp();

        let mode = traj.modes[t];
        let cert = certs.get(&mode).ok_or(Error::UnknownMode { mode })?;
        let v = cert.level(&traj.states[t]);
        let v_bound = v0 * gap;
        if v_bound > 0.0 {
            worst = worst.max(v / v_bound - 1.0);
        } else if v > 0.0 {
            worst = worst.max(f64::INFINITY);
        }

        let norm_bound = c * x0_norm * gap.sqrt();
        if norm_bound > 0.0 {
            worst = worst.max(traj.norms[t] / norm_bound - 1.0);
        } else if traj.norms[t] > 0.0 {
            worst = worst.max(f64::INFINITY);
        }
    }
    Ok(EnvelopeCheck {
        ok: worst <= ENVELOPE_REL_TOL,
        max_violation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{benchmark_graph, SwitchingSignal};
    use crate::lyap::{certify_family, GainTable, StabilityClass, SubsystemMatrix};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn benchmark_family_mats() -> BTreeMap<ModeId, DMatrix<f64>> {
        let mats: [(ModeId, [f64; 4]); 5] = [
            (1, [0.4, 0.8, -0.7, 0.6]),
            (2, [0.3, 0.6, 0.1, 0.4]),
            (3, [1.0, 0.0, 0.0, 0.5]),
            (4, [1.2, 0.7, 1.6, 0.1]),
            (5, [1.0, 0.1, 0.1, 1.0]),
        ];
        mats.into_iter()
            .map(|(id, m)| (id, DMatrix::from_row_slice(2, 2, &m)))
            .collect()
    }

    fn benchmark_certs() -> BTreeMap<ModeId, SubsystemCertificate> {
        let family: BTreeMap<ModeId, SubsystemMatrix> = benchmark_family_mats()
            .into_iter()
            .map(|(id, m)| (id, SubsystemMatrix::new(id, m).unwrap()))
            .collect();
        certify_family(&family, &BTreeMap::new()).unwrap()
    }

    fn benchmark_signal() -> SwitchingSignal {
        SwitchingSignal::Periodic {
            prelude: Vec::new(),
            cycle: vec![3, 1, 2, 1, 3, 2],
        }
    }

    #[test]
    fn halving_mode_halves_state() {
        let mats = BTreeMap::from([(0usize, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]))]);
        let sigma = SwitchingSignal::constant(0);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = simulate(&mats, None, &sigma, &x0, 10).unwrap();
        for t in 0..=10 {
            assert_relative_eq!(traj.states[t][0], 0.5_f64.powi(t as i32));
            assert_relative_eq!(traj.states[t][1], 0.0);
        }
    }

    #[test]
    fn eigenvector_of_unstable_mode_grows_geometrically() {
        let mats = benchmark_family_mats();
        let sigma = SwitchingSignal::constant(5);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let traj = simulate(&mats, None, &sigma, &x0, 5).unwrap();
        for t in 0..=5 {
            let expected = 1.1_f64.powi(t as i32);
            assert_relative_eq!(traj.states[t][0], expected, epsilon = 1e-12);
            assert_relative_eq!(traj.states[t][1], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthesized_signal_contracts_strongly() {
        let mats = benchmark_family_mats();
        let x0 = DVector::from_vec(vec![-1000.0, 1000.0]);
        let traj = simulate(&mats, None, &benchmark_signal(), &x0, 120).unwrap();
        assert!(traj.norms[120] / traj.norms[0] < 1e-6);
    }

    #[test]
    fn unknown_mode_is_rejected_at_offending_step() {
        let mats = benchmark_family_mats();
        let sigma = SwitchingSignal::Finite(vec![3, 9]);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let err = simulate(&mats, None, &sigma, &x0, 1).unwrap_err();
        assert!(matches!(err, Error::UnknownMode { mode: 9 }));
    }

    #[test]
    fn convergence_check_examples() {
        let mats = benchmark_family_mats();
        let x0 = DVector::from_vec(vec![-1000.0, 1000.0]);
        let traj = simulate(&mats, None, &benchmark_signal(), &x0, 120).unwrap();
        assert!(check_convergence(&traj, 60, 1e-3));

        let constant4 = simulate(
            &mats,
            None,
            &SwitchingSignal::constant(4),
            &DVector::from_vec(vec![1.0, 0.5]),
            40,
        )
        .unwrap();
        assert!(!check_convergence(&constant4, 20, 1e-3));

        let zero = simulate(
            &mats,
            None,
            &benchmark_signal(),
            &DVector::from_vec(vec![0.0, 0.0]),
            20,
        )
        .unwrap();
        assert!(check_convergence(&zero, 10, 1e-3));
    }

    #[test]
    fn lyapunov_chain_step_inequalities() {
        // V never grows faster than lambda per step and mu per switch
        let mats = benchmark_family_mats();
        let certs = benchmark_certs();
        let g = benchmark_graph();
        let gains = GainTable::from_certificates(&g, &certs).unwrap();
        let sigma = benchmark_signal();
        let x0 = DVector::from_vec(vec![17.0, -3.0]);
        let traj = simulate(&mats, Some(&certs), &sigma, &x0, 60).unwrap();
        for t in 0..60 {
            let from = traj.modes[t];
            let to = traj.modes[t + 1];
            let cert_from = &certs[&from];
            let v_now = cert_from.level(&traj.states[t]);
            let v_next_same = cert_from.level(&traj.states[t + 1]);
            assert!(
                v_next_same <= cert_from.lambda * v_now * (1.0 + 1e-9),
                "descent violated at t={t}"
            );
            if from != to {
                let v_next_new = certs[&to].level(&traj.states[t + 1]);
                let mu = gains.mu(from, to).unwrap();
                assert!(
                    v_next_new <= mu * v_next_same * (1.0 + 1e-9),
                    "switch gain violated at t={t}"
                );
            }
        }
    }

    #[test]
    fn product_form_matches_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let mats: BTreeMap<ModeId, DMatrix<f64>> = (0..3)
                .map(|id| {
                    let m = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.8..0.8));
                    (id, m)
                })
                .collect();
            let modes: Vec<ModeId> = (0..15).map(|_| rng.gen_range(0..3)).collect();
            let sigma = SwitchingSignal::Finite(modes.clone());
            let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let traj = simulate(&mats, None, &sigma, &x0, 14).unwrap();

            let mut product = DMatrix::<f64>::identity(3, 3);
            for t in 0..14 {
                product = &mats[&modes[t]] * product;
            }
            let direct = product * &x0;
            let err = (&direct - &traj.states[14]).norm();
            assert!(err <= 1e-10 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn scaling_equivariance() {
        let mats = benchmark_family_mats();
        let sigma = benchmark_signal();
        let x0 = DVector::from_vec(vec![3.0, -7.0]);
        let alpha = 3.7;
        let base = simulate(&mats, None, &sigma, &x0, 40).unwrap();
        let scaled = simulate(&mats, None, &sigma, &(&x0 * alpha), 40).unwrap();
        for t in 0..=40 {
            let err = (&scaled.states[t] - &base.states[t] * alpha).norm();
            assert!(err <= 1e-12 * scaled.norms[t].max(1e-300));
        }
    }

    #[test]
    fn envelope_holds_on_synthesized_signal() {
        let mats = benchmark_family_mats();
        let certs = benchmark_certs();
        let g = benchmark_graph();
        let gains = GainTable::from_certificates(&g, &certs).unwrap();
        let sigma = benchmark_signal();
        for x0 in [
            DVector::from_vec(vec![-1000.0, 1000.0]),
            DVector::from_vec(vec![1200.0, -500.0]),
        ] {
            let traj = simulate(&mats, Some(&certs), &sigma, &x0, 120).unwrap();
            let check = verify_envelope(&traj, &certs, &gains, &sigma).unwrap();
            assert!(check.ok, "violation {:.3e}", check.max_violation);
        }
    }

    #[test]
    fn envelope_reduces_to_lambda_power_for_single_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let sm = SubsystemMatrix::new(0, a.clone()).unwrap();
        let cert = crate::lyap::certificate_for(&sm, &DMatrix::identity(2, 2)).unwrap();
        let certs = BTreeMap::from([(0usize, cert.clone())]);
        let g = crate::graph::TransitionGraph::new(vec![0], vec![(0, 0)]).unwrap();
        let gains = GainTable::from_certificates(&g, &certs).unwrap();
        let mats = BTreeMap::from([(0usize, a)]);
        let sigma = SwitchingSignal::constant(0);
        let x0 = DVector::from_vec(vec![2.0, 1.0]);
        let traj = simulate(&mats, Some(&certs), &sigma, &x0, 30).unwrap();
        let check = verify_envelope(&traj, &certs, &gains, &sigma).unwrap();
        assert!(check.ok, "violation {:.3e}", check.max_violation);
        // the Lyapunov level contracts by exactly lambda = 1/4 each step
        for t in 0..30 {
            assert_relative_eq!(traj.lyap[t + 1], 0.25 * traj.lyap[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn corrupted_lambda_breaks_envelope() {
        let mats = benchmark_family_mats();
        let mut certs = benchmark_certs();
        let g = benchmark_graph();
        // halving an unstable mode's lambda invalidates the descent chain
        certs.get_mut(&4).unwrap().lambda /= 2.0;
        assert_eq!(certs[&4].class, StabilityClass::Unstable);
        let gains = GainTable::from_certificates(&g, &certs).unwrap();
        let sigma = SwitchingSignal::Periodic {
            prelude: Vec::new(),
            cycle: vec![4, 1],
        };
        let x0 = DVector::from_vec(vec![5.0, 2.0]);
        let traj = simulate(&mats, Some(&certs), &sigma, &x0, 30).unwrap();
        let check = verify_envelope(&traj, &certs, &gains, &sigma).unwrap();
        assert!(!check.ok);
    }

    #[test]
    fn divergence_guard_fires() {
        let mats = BTreeMap::from([(0usize, DMatrix::from_row_slice(1, 1, &[10.0]))]);
        let sigma = SwitchingSignal::constant(0);
        let x0 = DVector::from_vec(vec![1.0]);
        let err = simulate(&mats, None, &sigma, &x0, 400).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn attach_envelope_starts_at_c_x0() {
        let mats = benchmark_family_mats();
        let certs = benchmark_certs();
        let g = benchmark_graph();
        let gains = GainTable::from_certificates(&g, &certs).unwrap();
        let sigma = benchmark_signal();
        let x0 = DVector::from_vec(vec![3.0, 4.0]);
        let mut traj = simulate(&mats, Some(&certs), &sigma, &x0, 12).unwrap();
        attach_envelope(&mut traj, &certs, &gains, &sigma).unwrap();
        let env = traj.envelope.as_ref().unwrap();
        assert_relative_eq!(env[0], crate::stability::envelope_constant(&certs) * 5.0, epsilon = 1e-10);
        assert!(env[0] >= 5.0);
    }
}
