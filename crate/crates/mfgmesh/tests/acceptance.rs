//! The release gate: one test per acceptance criterion, each printing a
//! single PASS/FAIL line (visible with `--nocapture`) and asserting both
//! the property and its runtime budget.
//!
//! Criteria run in name order; on this suite's budgets they complete on a
//! single core.

use mfgmesh::config::ExperimentConfig;
use mfgmesh::env::{empirical_distribution, EnvState, GridConfig, TaskKind};
use mfgmesh::graphs::{build_visibility_graph, AgentGraph, Diameter};
use mfgmesh::learner::{ArchitectureKind, Hyper, Population, RewardSource};
use mfgmesh::metrics::approximate_exploitability;
use mfgmesh::mfest::{estimate_all_general, estimate_all_visibility};
use mfgmesh::nn::{loss_and_gradients, MlpParams, Transition};
use mfgmesh::runner::{self, TrialResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion} ({name}): {verdict} - {detail}");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn budget(criterion: usize, name: &str, started: Instant, limit_secs: f64) -> f64 {
    let secs = started.elapsed().as_secs_f64();
    assert!(
        secs < limit_secs,
        "criterion {criterion} ({name}) exceeded its runtime budget: {secs:.1} s >= {limit_secs} s"
    );
    secs
}

fn random_batch<R: Rng>(input_len: usize, len: usize, rng: &mut R) -> Vec<Transition> {
    (0..len)
        .map(|_| Transition {
            obs: (0..input_len).map(|_| rng.gen::<f64>()).collect(),
            action: rng.gen_range(0..5),
            reward: rng.gen::<f64>(),
            next_obs: (0..input_len).map(|_| rng.gen::<f64>()).collect(),
        })
        .collect()
}

#[test]
fn criterion_1_gradient_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (tau_q, cl, gamma) = (0.03, -1.0, 0.9);
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for net_idx in 0..20 {
        let input_len = [6, 10, 15][net_idx % 3];
        let batch = random_batch(input_len, 4, &mut rng);
        let probes: Vec<Vec<f64>> = batch
            .iter()
            .flat_map(|t| [t.obs.clone(), t.next_obs.clone()])
            .collect();
        // Keep every pre-activation away from the ReLU kink so central
        // differences stay on one linear piece.
        let params = loop {
            let candidate = MlpParams::new_random(input_len, &mut rng);
            if candidate.relu_margin(&probes) > 1e-3 {
                break candidate;
            }
        };
        let target = MlpParams::new_random(input_len, &mut rng);
        let (_, grads) = loss_and_gradients(&params, &target, &batch, tau_q, cl, gamma);
        let loss_at = |perturbed: MlpParams| {
            loss_and_gradients(&perturbed, &target, &batch, tau_q, cl, gamma).0
        };
        for li in 0..params.layers().len() {
            let n_w = params.layers()[li].w.len();
            let n_b = params.layers()[li].b.len();
            for pi in 0..n_w + n_b {
                let shifted = |delta: f64| {
                    let mut layers = params.layers().to_vec();
                    if pi < n_w {
                        layers[li].w[pi] += delta;
                    } else {
                        layers[li].b[pi - n_w] += delta;
                    }
                    MlpParams::from_layers(layers).unwrap()
                };
                let fd = (loss_at(shifted(h)) - loss_at(shifted(-h))) / (2.0 * h);
                let ga = if pi < n_w {
                    grads.layers[li].w[pi]
                } else {
                    grads.layers[li].b[pi - n_w]
                };
                let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
    }
    let secs = budget(1, "gradient oracle", started, 10.0);
    report(
        1,
        "gradient oracle",
        max_rel < 1e-4,
        &format!("max relative error {max_rel:.3e} over 20 nets in {secs:.1} s"),
    );
}

fn random_connected_graph<R: Rng>(n: usize, rng: &mut R) -> AgentGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, rng.gen_range(0..i))).collect();
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    AgentGraph::from_edges(n, &edges)
}

fn random_graph<R: Rng>(n: usize, rng: &mut R) -> AgentGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    AgentGraph::from_edges(n, &edges)
}

#[test]
fn criterion_2_estimator_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let w = rng.gen_range(2..=8);
        let h = rng.gen_range(2..=8);
        let n = rng.gen_range(2..=32);
        let grid = GridConfig::new(w, h, TaskKind::Cluster, n).unwrap();
        let env = EnvState::random(&grid, &mut rng);
        let states: Vec<usize> =
            env.agents.iter().map(|&a| grid.cell_index(a)).collect();
        let mu = empirical_distribution(&env.agents, &grid);
        let c_e = rng.gen_range(0..=3);
        let comm = random_graph(n, &mut rng);

        // Full visibility: every local count is already complete, so the
        // estimate equals the exact distribution bit for bit.
        let full_vis = build_visibility_graph(&grid, 1.0);
        let estimates = estimate_all_visibility(&states, &comm, &full_vis, c_e).unwrap();
        for est in &estimates {
            assert_eq!(est.as_slice(), mu.as_slice(), "full visibility must be exact");
        }

        // No visibility and no communication: the own cell is counted,
        // everything else splits the remainder evenly.
        let self_vis = build_visibility_graph(&grid, 0.0);
        let no_comm = AgentGraph::empty(n);
        let estimates = estimate_all_visibility(&states, &no_comm, &self_vis, c_e).unwrap();
        let n_states = grid.n_states();
        for (i, est) in estimates.iter().enumerate() {
            let own = states[i];
            let c_own = states.iter().filter(|&&s| s == own).count() as f64;
            let rest = (n as f64 - c_own) / (n as f64 * (n_states as f64 - 1.0));
            for (s, &p) in est.as_slice().iter().enumerate() {
                let expect = if s == own { c_own / n as f64 } else { rest };
                assert!(
                    (p - expect).abs() < 1e-12,
                    "self-only closed form violated at state {s}: {p} vs {expect}"
                );
            }
        }
        checked += 1;
    }
    let secs = budget(2, "estimator exactness", started, 5.0);
    report(
        2,
        "estimator exactness",
        checked == 1000,
        &format!("{checked} random configurations, zero failures, in {secs:.1} s"),
    );
}

#[test]
fn criterion_3_normalization_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    while checked < 10_000 {
        let w = rng.gen_range(2..=8);
        let h = rng.gen_range(2..=8);
        let n = rng.gen_range(2..=32);
        let grid = GridConfig::new(w, h, TaskKind::Cluster, n).unwrap();
        let env = EnvState::random(&grid, &mut rng);
        let states: Vec<usize> =
            env.agents.iter().map(|&a| grid.cell_index(a)).collect();
        let comm = random_graph(n, &mut rng);
        let c_e = rng.gen_range(0..=3);
        let mut check = |probs: &[f64]| {
            let sum: f64 = probs.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            assert!((sum - 1.0).abs() <= 1e-9, "distribution sums to {sum}");
            assert!(probs.iter().all(|&p| p >= 0.0), "negative probability");
            checked += 1;
        };
        check(empirical_distribution(&env.agents, &grid).as_slice());
        let ids: Vec<usize> = (0..n).collect();
        let obs = random_graph(n, &mut rng);
        for est in
            estimate_all_general(&states, &ids, &comm, &obs, c_e, grid.n_states()).unwrap()
        {
            check(est.as_slice());
        }
        let vis = build_visibility_graph(&grid, rng.gen::<f64>());
        for est in estimate_all_visibility(&states, &comm, &vis, c_e).unwrap() {
            check(est.as_slice());
        }
    }
    let secs = budget(3, "normalization suite", started, 10.0);
    report(
        3,
        "normalization suite",
        checked >= 10_000,
        &format!("{checked} distributions, worst |sum-1| = {worst:.2e}, in {secs:.1} s"),
    );
}

#[test]
fn criterion_4_max_consensus() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let hyper = Hyper { k_iters: 2, m_steps: 2, l_steps: 2, e_steps: 2, nu: 1, batch_size: 2, ..Hyper::default() };
    let mut successes = 0;
    for trial in 0..50 {
        let n = rng.gen_range(2..=16);
        let comm = random_connected_graph(n, &mut rng);
        let Diameter::Finite(d) = comm.diameter() else {
            panic!("constructed graph must be connected")
        };
        let grid = GridConfig::new(5, 5, TaskKind::Cluster, n).unwrap();
        let mut pop = Population::new(grid, hyper.clone(), 404 + trial).unwrap();
        // Distinct sigmas in shuffled order.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for (rank, &agent) in order.iter().enumerate() {
            pop.learners[agent].sigma = 0.1 * rank as f64;
        }
        let best_agent = order[n - 1];
        let best = pop.learners[best_agent].params.serialize();
        for _ in 0..d.max(1) {
            pop.adoption_round(&comm, 1e-9);
        }
        if pop.learners.iter().all(|l| l.params.serialize() == best) {
            successes += 1;
        }
    }
    let secs = budget(4, "max consensus", started, 5.0);
    report(
        4,
        "max consensus",
        successes == 50,
        &format!("{successes}/50 random trials reached argmax adoption in {secs:.1} s"),
    );
}

#[test]
fn criterion_5_centralised_equality() {
    let started = Instant::now();
    let hyper = Hyper {
        architecture: ArchitectureKind::Centralised,
        k_iters: 5,
        ..Hyper::default()
    };
    let grid = GridConfig::new(5, 5, TaskKind::Cluster, 8).unwrap();
    let mut pop = Population::new(grid, hyper, 505).unwrap();
    let mut all_equal = true;
    for k in 0..5 {
        pop.run_iteration(k).unwrap();
        let reference = pop.learners[0].params.serialize();
        all_equal &= pop.learners.iter().all(|l| l.params.serialize() == reference);
    }
    let secs = budget(5, "centralised equality", started, 30.0);
    report(
        5,
        "centralised equality",
        all_equal,
        &format!("8 agents byte-identical after each of 5 iterations in {secs:.1} s"),
    );
}

const CLUSTER_NETWORKED: &str = "
task = cluster
obs_mode = local_only
architecture = networked
comm_radius_fraction = 0.5
n_agents = 32
grid_width = 10
grid_height = 10
K = 20
trials = 5
seed = 0
exploitability_every = 0
";

fn final_window_mean(rows: &[mfgmesh::metrics::MetricsRow], window: usize) -> f64 {
    let tail = &rows[rows.len() - window..];
    tail.iter().map(|r| r.mean_return).sum::<f64>() / window as f64
}

#[test]
fn criterion_6_networked_beats_independent_on_cluster() {
    let started = Instant::now();
    let networked = ExperimentConfig::parse(CLUSTER_NETWORKED).unwrap();
    let independent = ExperimentConfig::parse(
        &CLUSTER_NETWORKED.replace("architecture = networked", "architecture = independent"),
    )
    .unwrap();
    let net_results = runner::run_trials(&networked, 1).unwrap();
    let ind_results = runner::run_trials(&independent, 1).unwrap();
    let mut wins = 0;
    let mut lines = Vec::new();
    for (n, i) in net_results.iter().zip(&ind_results) {
        let (nf, inf) = (final_window_mean(&n.rows, 5), final_window_mean(&i.rows, 5));
        lines.push(format!("seed {}: {:.3} vs {:.3}", n.seed, nf, inf));
        if nf > inf {
            wins += 1;
        }
    }
    let secs = budget(6, "networked beats independent", started, 600.0);
    report(
        6,
        "networked beats independent",
        wins >= 4,
        &format!("{wins}/5 seeds ({}) in {secs:.0} s", lines.join("; ")),
    );
}

#[test]
fn criterion_7_evade_shark_with_estimates_learns() {
    let started = Instant::now();
    let config = ExperimentConfig::parse(
        "
task = evade_shark
obs_mode = estimated_mean_field
architecture = networked
C_e = 1
n_agents = 32
grid_width = 10
grid_height = 10
K = 20
trials = 5
seed = 0
exploitability_every = 0
",
    )
    .unwrap();
    let results = runner::run_trials(&config, 1).unwrap();
    let mut wins = 0;
    let mut lines = Vec::new();
    for r in &results {
        assert!(
            r.rows.iter().all(|row| row.mean_return.is_finite() && row.std_return.is_finite()),
            "non-finite metric in trial {}",
            r.trial_index
        );
        let early = r.rows[0..5].iter().map(|x| x.mean_return).sum::<f64>() / 5.0;
        let late = r.rows[15..20].iter().map(|x| x.mean_return).sum::<f64>() / 5.0;
        lines.push(format!("seed {}: {:.3} -> {:.3}", r.seed, early, late));
        if late > early {
            wins += 1;
        }
    }
    let secs = budget(7, "population-dependent learning", started, 900.0);
    report(
        7,
        "population-dependent learning",
        wins >= 4,
        &format!("{wins}/5 seeds improved ({}) in {secs:.0} s", lines.join("; ")),
    );
}

#[test]
fn criterion_8_exploitability_sanity() {
    let started = Instant::now();
    let hyper = Hyper { reward_source: RewardSource::Constant(0.5), ..Hyper::default() };
    let gamma: f64 = hyper.gamma;
    let bound = 0.1 * (1.0 - gamma.powi(hyper.e_steps as i32)) / (1.0 - gamma);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let grid = GridConfig::new(5, 5, TaskKind::Cluster, 8).unwrap();
        let pop = Population::new(grid, hyper.clone(), seed).unwrap();
        let ex = approximate_exploitability(&pop, 808 + seed).unwrap();
        worst = worst.max(ex.abs());
    }
    let secs = budget(8, "exploitability sanity", started, 120.0);
    report(
        8,
        "exploitability sanity",
        worst < bound,
        &format!(
            "max |exploitability| {worst:.3e} < bound {bound:.4} on action-independent \
             rewards, 5 seeds, in {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_9_byte_determinism() {
    let started = Instant::now();
    let config = ExperimentConfig::parse(CLUSTER_NETWORKED).unwrap();
    let strip_seconds = |csv: &str| {
        csv.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l).to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let export = |results: &[TrialResult], dir: &std::path::Path| {
        runner::export_results(&config, results, dir, false).unwrap();
    };
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    export(&runner::run_trials(&config, 1).unwrap(), &dir_a);
    export(&runner::run_trials(&config, 1).unwrap(), &dir_b);
    let mut identical = true;
    for t in 0..config.trials {
        let a = std::fs::read_to_string(dir_a.join(format!("trial_{t}.csv"))).unwrap();
        let b = std::fs::read_to_string(dir_b.join(format!("trial_{t}.csv"))).unwrap();
        identical &= strip_seconds(&a) == strip_seconds(&b);
    }
    let sa = std::fs::read(dir_a.join("summary.json")).unwrap();
    let sb = std::fs::read(dir_b.join("summary.json")).unwrap();
    identical &= sa == sb;
    let secs = budget(9, "byte determinism", started, 1200.0);
    report(
        9,
        "byte determinism",
        identical,
        &format!(
            "two runs of the criterion 6 config match byte-for-byte outside the seconds \
             column, in {secs:.0} s"
        ),
    );
}
