//! Acceptance suite for the five-mode benchmark family and the published
//! reference values. One pass/fail line per criterion (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swstab::error::Error;
use swstab::graph::{
    enumerate_circuits, signal_to_walk, walk_stats, walk_to_signal, SwitchingSignal,
    TransitionGraph, Walk,
};
use swstab::lyap::{
    certify_family, ClassMap, GainTable, StabilityClass, SubsystemCertificate, SubsystemMatrix,
};
use swstab::sim::{simulate, verify_envelope};
use swstab::stability::{prefix_stats, stability_ratio, walk_ratio};
use swstab::synth::{circuit_satisfies, synthesize, SynthesisConfig};
use swstab::ModeId;

fn benchmark_family() -> BTreeMap<ModeId, SubsystemMatrix> {
    let mats: [(ModeId, [f64; 4]); 5] = [
        (1, [0.4, 0.8, -0.7, 0.6]),
        (2, [0.3, 0.6, 0.1, 0.4]),
        (3, [1.0, 0.0, 0.0, 0.5]),
        (4, [1.2, 0.7, 1.6, 0.1]),
        (5, [1.0, 0.1, 0.1, 1.0]),
    ];
    mats.into_iter()
        .map(|(id, m)| {
            (
                id,
                SubsystemMatrix::new(id, DMatrix::from_row_slice(2, 2, &m)).unwrap(),
            )
        })
        .collect()
}

fn benchmark_graph() -> TransitionGraph {
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
    TransitionGraph::new(vec![1, 2, 3, 4, 5], edges).unwrap()
}

fn benchmark_setup() -> (
    TransitionGraph,
    BTreeMap<ModeId, SubsystemCertificate>,
    GainTable,
    ClassMap,
) {
    let g = benchmark_graph();
    let certs = certify_family(&benchmark_family(), &BTreeMap::new()).unwrap();
    let classes: ClassMap = certs.iter().map(|(&id, c)| (id, c.class)).collect();
    let gains = GainTable::from_certificates(&g, &certs).unwrap();
    (g, certs, gains, classes)
}

fn pass(line: &str) {
    println!("criterion {line}: PASS");
}

#[test]
fn criterion_1_certificate_reproduction() {
    let start = Instant::now();
    let certs = certify_family(&benchmark_family(), &BTreeMap::new()).unwrap();

    assert!((certs[&1].lambda - 0.8269).abs() <= 1e-3, "lambda_1 = {}", certs[&1].lambda);
    assert!((certs[&2].lambda - 0.5026).abs() <= 1e-3, "lambda_2 = {}", certs[&2].lambda);
    assert_eq!(certs[&3].lambda, 1.0, "lambda_3 must be exactly 1");
    assert!((certs[&4].lambda - 5.1306).abs() <= 1e-3, "lambda_4 = {}", certs[&4].lambda);
    assert!((certs[&5].lambda - 3.2000).abs() <= 1e-3, "lambda_5 = {}", certs[&5].lambda);

    // independent check of the unstable-branch formula: ||A_4||^2 is the top
    // eigenvalue of A_4^T A_4 = [[4, 1], [1, 0.5]], in closed form
    let top = 0.5 * (4.5 + (4.5_f64 * 4.5 - 4.0 * (4.0 * 0.5 - 1.0)).sqrt());
    assert!((certs[&4].lambda - (1.0 + 2.0 * top.sqrt())).abs() <= 1e-12);

    let published_p1 = [(0, 0, 4.7545), (0, 1, -0.5804), (1, 0, -0.5804), (1, 1, 5.4464)];
    for (r, c, expected) in published_p1 {
        assert!(
            (certs[&1].p[(r, c)] - expected).abs() <= 1e-3,
            "P_1[{r}][{c}] = {}",
            certs[&1].p[(r, c)]
        );
    }

    assert_eq!(certs[&1].class, StabilityClass::AsymptoticallyStable);
    assert_eq!(certs[&2].class, StabilityClass::AsymptoticallyStable);
    assert_eq!(certs[&3].class, StabilityClass::MarginallyStable);
    assert_eq!(certs[&4].class, StabilityClass::Unstable);
    assert_eq!(certs[&5].class, StabilityClass::Unstable);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(&format!("1 (certificate reproduction, {elapsed:?})"));
}

#[test]
fn criterion_2_gain_reproduction() {
    let start = Instant::now();
    let (_, _, gains, _) = benchmark_setup();

    for (from, to, expected) in [
        (3, 1, 5.7761),
        (2, 1, 5.2823),
        (1, 2, 0.4185),
        (3, 2, 2.0103),
    ] {
        let got = gains.mu(from, to).unwrap();
        assert!(
            (got - expected).abs() <= 5e-3,
            "mu_{from}{to} = {got}, expected {expected}"
        );
    }
    for j in [3, 4, 5] {
        let got = gains.mu(j, j).unwrap();
        assert!((got - 1.0).abs() <= 1e-12, "mu_{j}{j} = {got}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(&format!("2 (gain reproduction, {elapsed:?})"));
}

#[test]
fn criterion_3_synthesis_reproduction() {
    let start = Instant::now();
    let (g, _, gains, classes) = benchmark_setup();

    // The published circuit's exact ratio is 0.9969..., so the epsilon slack
    // must be below 1 - 0.9970 for the published support to satisfy the LP
    // row; the default 0.01 admits only shorter circuits.
    let cfg = SynthesisConfig {
        epsilon: 0.002,
        ..SynthesisConfig::default()
    };
    let result = synthesize(&g, &gains, &classes, &cfg).unwrap();

    let flow = result.flow.as_ref().expect("LP flow expected");
    let support: Vec<(ModeId, ModeId)> = flow.support().iter().map(|&e| g.edges()[e]).collect();
    assert_eq!(
        support,
        vec![(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)],
        "support must match the published 23-entry indicator"
    );
    let expected_f = [
        1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0,
    ];
    assert_eq!(flow.values(), &expected_f);

    assert!(
        (result.ratio.ratio - 0.99).abs() <= 0.01,
        "circuit ratio {} not within 0.99 +- 0.01",
        result.ratio.ratio
    );
    assert!(result.circuit.is_circuit());
    assert_eq!(result.circuit.len(), 6);

    // the LP also stays feasible at the default slack (a shorter circuit)
    let default_result = synthesize(&g, &gains, &classes, &SynthesisConfig::default()).unwrap();
    assert!(default_result.ratio.satisfied);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(&format!("3 (synthesis reproduction, {elapsed:?})"));
}

#[test]
fn criterion_4_negative_case() {
    let g = TransitionGraph::new(vec![1, 2], vec![(1, 2), (2, 1)]).unwrap();
    let log_mu = BTreeMap::from([((1, 2), -1.5), ((2, 1), 1.8)]);
    let log_lambda = BTreeMap::from([(1, -0.2), (2, 1.6)]);
    let (gains, classes) = GainTable::from_logs(&g, &log_mu, &log_lambda).unwrap();

    let err = synthesize(&g, &gains, &classes, &SynthesisConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }), "got {err:?}");

    let sigma = SwitchingSignal::Periodic {
        prelude: Vec::new(),
        cycle: vec![1, 2],
    };
    let stats = prefix_stats(&sigma, 2).unwrap();
    let report = stability_ratio(&stats.counts, &gains, &classes, 0.0).unwrap();
    assert!(
        (report.ratio - 9.5).abs() <= 1e-9,
        "period ratio {} != 9.5",
        report.ratio
    );
    assert!(!report.satisfied);
    pass("4 (negative case)");
}

#[test]
fn criterion_5_trajectory_convergence_and_envelope() {
    let (g, certs, gains, classes) = benchmark_setup();
    let cfg = SynthesisConfig {
        epsilon: 0.002,
        ..SynthesisConfig::default()
    };
    let result = synthesize(&g, &gains, &classes, &cfg).unwrap();
    let mats: BTreeMap<ModeId, DMatrix<f64>> = benchmark_family()
        .into_iter()
        .map(|(id, s)| (id, s.matrix().clone()))
        .collect();

    for x0 in [
        DVector::from_vec(vec![-1000.0, 1000.0]),
        DVector::from_vec(vec![1200.0, -500.0]),
    ] {
        let traj = simulate(&mats, Some(&certs), &result.signal, &x0, 120).unwrap();
        let contraction = traj.norms[120] / traj.norms[0];
        assert!(
            contraction < 1e-6,
            "||x(120)||/||x0|| = {contraction:.3e} from x0 = {x0:?}"
        );
        let check = verify_envelope(&traj, &certs, &gains, &result.signal).unwrap();
        assert!(
            check.ok,
            "envelope violated by {:.3e} from x0 = {x0:?}",
            check.max_violation
        );
    }
    pass("5 (trajectory convergence and envelope)");
}

/// Random instance for the LP/oracle agreement property.
fn random_instance(rng: &mut ChaCha8Rng) -> (TransitionGraph, GainTable, ClassMap) {
    loop {
        let n_vertices = rng.gen_range(2..=5usize);
        let vertices: Vec<ModeId> = (1..=n_vertices).collect();
        let mut edges = Vec::new();
        for i in 1..=n_vertices {
            for j in 1..=n_vertices {
                if rng.gen_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        if edges.is_empty() || edges.len() > 12 {
            continue;
        }
        let g = TransitionGraph::new(vertices.clone(), edges.clone()).unwrap();

        let mut log_mu = BTreeMap::new();
        for &(k, l) in g.edges() {
            if k != l {
                log_mu.insert((k, l), rng.gen_range(-2.0..2.0));
            }
        }
        let mut log_lambda = BTreeMap::new();
        for &v in g.vertices() {
            let log = match rng.gen_range(0..10) {
                0 => 0.0, // marginal
                _ => rng.gen_range(-2.0..2.0),
            };
            log_lambda.insert(v, log);
        }
        let (gains, classes) = GainTable::from_logs(&g, &log_mu, &log_lambda).unwrap();
        return (g, gains, classes);
    }
}

#[test]
fn criterion_6_lp_oracle_agreement() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20260810);
    let epsilon = 0.01;
    let cfg = SynthesisConfig {
        epsilon,
        ..SynthesisConfig::default()
    };

    let mut synth_successes = 0;
    for case in 0..200 {
        let (g, gains, classes) = random_instance(&mut rng);

        let enumeration = enumerate_circuits(&g, g.edge_count(), 500_000).unwrap();
        assert!(
            !enumeration.truncated,
            "case {case}: oracle enumeration truncated; verdict would be unreliable"
        );
        let oracle_finds = enumeration.circuits.iter().any(|w| {
            let report = walk_ratio(w, &gains, &classes, 0.0).unwrap();
            circuit_satisfies(&report, epsilon)
        });

        let synth_outcome = synthesize(&g, &gains, &classes, &cfg);
        let synth_succeeds = match &synth_outcome {
            Ok(_) => true,
            Err(Error::Infeasible { .. }) => false,
            Err(other) => panic!("case {case}: unexpected synthesis outcome {other:?}"),
        };

        assert_eq!(
            synth_succeeds, oracle_finds,
            "case {case}: synthesis {synth_succeeds} but oracle {oracle_finds} on graph {:?}",
            g.edges()
        );
        if synth_succeeds {
            synth_successes += 1;
            let result = synth_outcome.unwrap();
            assert!(result.ratio.satisfied);
        }
    }
    assert!(synth_successes > 20, "degenerate sample: only {synth_successes} feasible cases");
    assert!(
        start.elapsed().as_secs_f64() < 30.0,
        "took {:?}",
        start.elapsed()
    );
    pass(&format!(
        "6 (LP/oracle agreement on 200 random instances, {} feasible, {:?})",
        synth_successes,
        start.elapsed()
    ));
}

#[test]
#[ignore = "10x stress variant of criterion 6; run with --ignored"]
fn lp_oracle_agreement_stress() {
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let epsilon = 0.01;
    let cfg = SynthesisConfig {
        epsilon,
        ..SynthesisConfig::default()
    };
    for case in 0..2000 {
        let (g, gains, classes) = random_instance(&mut rng);
        let enumeration = enumerate_circuits(&g, g.edge_count(), 500_000).unwrap();
        assert!(!enumeration.truncated, "case {case}: enumeration truncated");
        let oracle_finds = enumeration.circuits.iter().any(|w| {
            let report = walk_ratio(w, &gains, &classes, 0.0).unwrap();
            circuit_satisfies(&report, epsilon)
        });
        let synth_succeeds = match synthesize(&g, &gains, &classes, &cfg) {
            Ok(_) => true,
            Err(Error::Infeasible { .. }) => false,
            Err(other) => panic!("case {case}: unexpected outcome {other:?}"),
        };
        assert_eq!(
            synth_succeeds, oracle_finds,
            "case {case}: disagreement on graph {:?}",
            g.edges()
        );
    }
}

#[test]
fn criterion_7_invariant_suites() {
    let (g, certs, gains, classes) = benchmark_setup();

    // certificate descent, by eigenvalue test and by sampling
    let family = benchmark_family();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (&id, cert) in &certs {
        assert!(swstab::lyap::verify_certificate(cert, &family[&id]));
        let worst =
            swstab::lyap::sample_certificate_violation(cert, &family[&id], 1000, &mut rng);
        assert!(worst <= 1e-9, "mode {id} sampled violation {worst:.3e}");
    }

    // signal <-> walk bijection on 1000 random walks
    for _ in 0..1000 {
        let mut vertices = vec![*g.vertices().first().unwrap()];
        for _ in 0..rng.gen_range(1..30) {
            let at = *vertices.last().unwrap();
            let out: Vec<(ModeId, ModeId)> = g
                .edges()
                .iter()
                .copied()
                .filter(|&(f, _)| f == at)
                .collect();
            let (_, to) = out[rng.gen_range(0..out.len())];
            vertices.push(to);
        }
        let walk = Walk::new(&g, vertices).unwrap();
        let sigma = walk_to_signal(&walk);
        let back = signal_to_walk(&g, &sigma, walk.len()).unwrap();
        assert_eq!(back.vertices(), walk.vertices());
    }

    // conservation and self-loop exclusion of the synthesized flow
    let cfg = SynthesisConfig {
        epsilon: 0.002,
        ..SynthesisConfig::default()
    };
    let result = synthesize(&g, &gains, &classes, &cfg).unwrap();
    let flow = result.flow.as_ref().unwrap();
    let inc = swstab::graph::incidence_matrix(&g);
    for r in 0..inc.matrix.nrows() {
        let dot: f64 = (0..g.edge_count())
            .map(|c| inc.matrix[(r, c)] * flow.values()[c])
            .sum();
        assert!(dot.abs() <= 1e-9, "conservation violated in row {r}");
    }
    for (pos, &(k, l)) in g.edges().iter().enumerate() {
        if k == l {
            assert_eq!(flow.values()[pos], 0.0, "self-loop ({k},{l}) carries flow");
        }
    }
    let stats = walk_stats(&result.circuit);
    assert_eq!(stats.counts.total_traversals(), flow.support().len());

    // ratio scale invariance under k-fold repetition
    let base = walk_ratio(&result.circuit, &gains, &classes, 0.0).unwrap();
    for k in 1..=5 {
        let repeated = result.circuit.repeat(k).unwrap();
        let r = walk_ratio(&repeated, &gains, &classes, 0.0).unwrap();
        assert!((r.ratio - base.ratio).abs() <= 1e-12);
    }

    pass("7 (invariant suites)");
}
