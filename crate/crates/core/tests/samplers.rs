use cdbfl::compression::CompressorConfig;
use cdbfl::models::{generate_synthetic_dataset, Dataset, ModelSpec};
use cdbfl::network::{build_graph, metropolis_weights, CommLedger, DeviceGraph, MixingMatrix, Topology};
use cdbfl::samplers::{
    cdbfl_local_phase, cdbfl_round, cffl_round, compressed_round, dsgld_round, run_chain, Algorithm,
    ChainSetup, ClassifierOracle, GradientOracle, HyperParams, NodeState, QuadraticOracle,
    ZeroGradient,
};
use cdbfl::vector::ParameterVector;
use cdbfl::{Purpose, RngStream};

type Pv = ParameterVector<f64>;

fn states(init: &[Pv], seed: u64) -> Vec<NodeState<f64>> {
    init.iter()
        .enumerate()
        .map(|(k, t)| NodeState::new(k, t.clone(), seed))
        .collect()
}

fn random_init(devices: usize, p: usize, seed: u64) -> Vec<Pv> {
    let mut rng = RngStream::for_device(seed, 0, Purpose::Init);
    (0..devices)
        .map(|_| Pv::from_vec((0..p).map(|_| rng.standard_normal()).collect()))
        .collect()
}

fn shards(devices: usize, per_class: usize, seed: u64) -> (ModelSpec, Vec<Dataset<f64>>) {
    let mut rng = RngStream::for_device(seed, 0, Purpose::Data);
    let data = generate_synthetic_dataset::<f64>(4, 3, per_class, 2.0, 1.0, &mut rng).unwrap();
    let mut prng = RngStream::for_device(seed, 0, Purpose::Partition);
    let parts = cdbfl::harness::partition_data(&data, devices, cdbfl::harness::PartitionMode::Iid, &mut prng)
        .unwrap();
    (ModelSpec::softmax_linear(3, 4), parts)
}

fn hp(rounds: usize, local_steps: usize, zeta: f64) -> HyperParams {
    HyperParams {
        eta: 1e-2,
        rounds,
        burn_in: rounds - 1,
        local_steps,
        zeta,
        batch_size: 4,
        ..HyperParams::default()
    }
}

#[test]
fn dsgld_single_device_is_sgld() {
    let (spec, parts) = shards(1, 10, 3);
    let oracle = ClassifierOracle::new(spec, parts, 4, None, false).unwrap();
    let init = random_init(1, spec.param_count(), 3);
    let h = hp(30, 1, 0.5);
    let run = |alg| {
        let setup = ChainSetup {
            algorithm: alg,
            hp: &h,
            graph: &DeviceGraph::single(),
            omega: &MixingMatrix::identity(1),
            compressor: CompressorConfig::identity(),
            seed: 9,
            init: init.clone(),
        };
        run_chain(setup, &oracle, &mut ()).unwrap().states[0].theta.clone()
    };
    let sgld = run(Algorithm::Sgld);
    for alg in [Algorithm::Dsgld, Algorithm::CdBfl] {
        let other = run(alg);
        for (a, b) in sgld.iter().zip(other.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{alg:?}");
        }
    }
}

#[test]
fn uniform_mixing_jumps_to_average() {
    let init = vec![Pv::from_f64(&[1.0, 0.0]), Pv::from_f64(&[3.0, 6.0]), Pv::from_f64(&[5.0, 3.0])];
    let mut s = states(&init, 1);
    let graph = build_graph(Topology::Complete, 3, &mut RngStream::for_device(1, 0, Purpose::Graph)).unwrap();
    let oracle = ZeroGradient { dim: 2, devices: 3 };
    let mut ledger = CommLedger::new(3);
    dsgld_round(&mut s, &MixingMatrix::uniform(3), &graph, &oracle, 0.1, 0.0, &mut ledger, 0).unwrap();
    for st in &s {
        assert!((st.theta[0] - 3.0).abs() < 1e-12);
        assert!((st.theta[1] - 3.0).abs() < 1e-12);
    }
}

#[test]
fn dsgld_ring_of_three_by_hand() {
    let graph = DeviceGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
    let omega = MixingMatrix::from_rows(&[
        vec![0.5, 0.25, 0.25],
        vec![0.25, 0.5, 0.25],
        vec![0.25, 0.25, 0.5],
    ])
    .unwrap();
    let init = vec![Pv::from_f64(&[4.0]), Pv::from_f64(&[0.0]), Pv::from_f64(&[8.0])];
    let mut s = states(&init, 1);
    let mut ledger = CommLedger::new(3);
    dsgld_round(&mut s, &omega, &graph, &ZeroGradient { dim: 1, devices: 3 }, 0.1, 0.0, &mut ledger, 0).unwrap();
    let got: Vec<f64> = s.iter().map(|st| st.theta[0]).collect();
    assert_eq!(got, vec![4.0, 3.0, 5.0]);
}

#[test]
fn local_phase_on_quadratic() {
    let oracle = QuadraticOracle {
        centers: vec![Pv::from_f64(&[1.0, -2.0])],
        curvature: 2.0,
    };
    let mut rng = RngStream::for_device(0, 0, Purpose::Batch);
    let theta = Pv::from_f64(&[3.0, 0.0]);
    // θ - m shrinks by (1 - ηc) per step
    let one = cdbfl_local_phase(&theta, &oracle, 0, 1, 0.1, &mut rng).unwrap();
    assert!((one[0] - (1.0 + 2.0 * 0.8)).abs() < 1e-15);
    let two = cdbfl_local_phase(&theta, &oracle, 0, 2, 0.1, &mut rng).unwrap();
    assert!((two[0] - (1.0 + 2.0 * 0.64)).abs() < 1e-15);
    assert!((two[1] - (-2.0 + 2.0 * 0.64)).abs() < 1e-15);
}

fn complete(k: usize) -> (DeviceGraph, MixingMatrix<f64>) {
    let g = build_graph(Topology::Complete, k, &mut RngStream::for_device(0, 0, Purpose::Graph)).unwrap();
    let w = metropolis_weights(&g).unwrap();
    (g, w)
}

#[test]
fn identity_gossip_single_round() {
    let (graph, omega) = complete(4);
    let init = random_init(4, 5, 2);
    let mut s = states(&init, 2);
    let h = hp(2, 1, 1.0);
    let mut ledger = CommLedger::new(4);
    compressed_round(
        &mut s,
        &omega,
        &graph,
        &CompressorConfig::identity(),
        &ZeroGradient { dim: 5, devices: 4 },
        &h,
        0.0,
        &mut ledger,
        0,
    )
    .unwrap();
    for (k, st) in s.iter().enumerate() {
        for i in 0..5 {
            let want: f64 = (0..4).map(|j| omega.get(k, j) * init[j][i]).sum();
            assert!((st.theta[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zeta_zero_runs_independent_chains() {
    let (graph, omega) = complete(3);
    let oracle = QuadraticOracle {
        centers: random_init(3, 4, 5),
        curvature: 1.0,
    };
    let init = random_init(3, 4, 6);
    let h = hp(10, 3, 0.0);
    let mut s = states(&init, 4);
    let mut ledger = CommLedger::new(3);
    for r in 0..10 {
        cdbfl_round(&mut s, &omega, &graph, &CompressorConfig::top_k(0.5), &oracle, &h, &mut ledger, r).unwrap();
    }
    // each device alone: L gradient steps, then noise, ten times
    for k in 0..3 {
        let mut theta = init[k].clone();
        let mut noise = RngStream::for_device(4, k, Purpose::Noise);
        let mut batch = RngStream::for_device(4, k, Purpose::Batch);
        for _ in 0..10 {
            theta = cdbfl_local_phase(&theta, &oracle, k, 3, h.eta, &mut batch).unwrap();
            let xi = cdbfl::vector::gaussian_noise(4, h.noise_scale::<f64>(), &mut noise).unwrap();
            theta.add_assign_vec(&xi).unwrap();
        }
        for (a, b) in theta.iter().zip(s[k].theta.iter()) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn noise_off_cdbfl_equals_cffl() {
    let (spec, parts) = shards(5, 10, 8);
    let oracle = ClassifierOracle::new(spec, parts, 4, None, false).unwrap();
    let (graph, omega) = complete(5);
    let init = random_init(5, spec.param_count(), 8);
    let mut h = hp(25, 3, 0.3);
    let cfg = CompressorConfig::top_k(0.2);
    let mut a = states(&init, 11);
    let mut b = states(&init, 11);
    let mut la = CommLedger::new(5);
    let mut lb = CommLedger::new(5);
    h.noise_multiplier = 0.0;
    for r in 0..25 {
        cdbfl_round(&mut a, &omega, &graph, &cfg, &oracle, &h, &mut la, r).unwrap();
        cffl_round(&mut b, &omega, &graph, &cfg, &oracle, &h, &mut lb, r).unwrap();
    }
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.theta, y.theta);
    }
    assert_eq!(la, lb);
}

#[test]
fn cffl_differs_from_cdbfl_only_by_noise() {
    // with zero gradients and identity compression the difference is the
    // gossiped sum of noise draws, which is exactly what CD-BFL adds
    let (graph, omega) = complete(3);
    let init = random_init(3, 4, 1);
    let h = hp(5, 1, 1.0);
    let oracle = ZeroGradient { dim: 4, devices: 3 };
    let cfg = CompressorConfig::identity();
    let mut a = states(&init, 2);
    let mut b = states(&init, 2);
    let mut la = CommLedger::new(3);
    let mut lb = CommLedger::new(3);
    let mut acc: Vec<Pv> = vec![Pv::zeros(4); 3];
    let mut noise: Vec<RngStream> = (0..3).map(|k| RngStream::for_device(2, k, Purpose::Noise)).collect();
    for r in 0..5 {
        cdbfl_round(&mut a, &omega, &graph, &cfg, &oracle, &h, &mut la, r).unwrap();
        cffl_round(&mut b, &omega, &graph, &cfg, &oracle, &h, &mut lb, r).unwrap();
        let mixed: Vec<Pv> = (0..3)
            .map(|k| {
                let mut m = Pv::zeros(4);
                for (j, v) in acc.iter().enumerate() {
                    m.axpy(omega.get(k, j), v).unwrap();
                }
                m
            })
            .collect();
        acc = mixed
            .into_iter()
            .zip(noise.iter_mut())
            .map(|(mut m, rng)| {
                let xi = cdbfl::vector::gaussian_noise(4, h.noise_scale::<f64>(), rng).unwrap();
                m.add_assign_vec(&xi).unwrap();
                m
            })
            .collect();
    }
    for k in 0..3 {
        let diff = a[k].theta.sub(&b[k].theta).unwrap();
        for (d, e) in diff.iter().zip(acc[k].iter()) {
            assert!((d - e).abs() < 1e-12);
        }
    }
    assert_eq!(la.total_values, lb.total_values);
}

#[test]
fn compressed_gossip_reaches_initial_average() {
    let (graph, omega) = complete(6);
    let init = random_init(6, 8, 3);
    let mut h = hp(200, 1, 1.0);
    h.noise_multiplier = 0.0;
    let oracle = ZeroGradient { dim: 8, devices: 6 };
    let mut s = states(&init, 3);
    let mut ledger = CommLedger::new(6);
    for r in 0..200 {
        cffl_round(&mut s, &omega, &graph, &CompressorConfig::identity(), &oracle, &h, &mut ledger, r).unwrap();
    }
    for i in 0..8 {
        let avg: f64 = init.iter().map(|t| t[i]).sum::<f64>() / 6.0;
        for st in &s {
            assert!((st.theta[i] - avg).abs() < 1e-9);
        }
    }
}

#[test]
fn cdbfl_ledger_does_not_depend_on_data() {
    let (graph, omega) = complete(4);
    let h = hp(6, 2, 0.1);
    let cfg = CompressorConfig::top_k(0.25);
    let mut totals = Vec::new();
    for seed in [1, 2] {
        let (spec, parts) = shards(4, 8, seed);
        let oracle = ClassifierOracle::new(spec, parts, 4, None, false).unwrap();
        let setup = ChainSetup {
            algorithm: Algorithm::CdBfl,
            hp: &h,
            graph: &graph,
            omega: &omega,
            compressor: cfg,
            seed,
            init: random_init(4, spec.param_count(), seed),
        };
        let out = run_chain(setup, &oracle, &mut ()).unwrap();
        totals.push((out.ledger.total_values, out.ledger.total_indices));
    }
    assert_eq!(totals[0], totals[1]);
    // k = 4 of p = 16 coordinates, 3 neighbors, 4 devices, 6 rounds
    assert_eq!(totals[0].0, 4 * 3 * 4 * 6);
}

fn chain(algorithm: Algorithm, h: &HyperParams, seed: u64) -> cdbfl::samplers::ChainOutput<f64> {
    let (spec, parts) = shards(3, 8, 4);
    let oracle = ClassifierOracle::new(spec, parts, 4, None, false).unwrap();
    let (graph, omega) = complete(3);
    let setup = ChainSetup {
        algorithm,
        hp: h,
        graph: &graph,
        omega: &omega,
        compressor: CompressorConfig::top_k(0.25),
        seed,
        init: random_init(3, spec.param_count(), 4),
    };
    run_chain(setup, &oracle, &mut ()).unwrap()
}

#[test]
fn retention_counts() {
    let mut h = hp(20, 2, 0.1);
    h.burn_in = 10;
    let out = chain(Algorithm::CdBfl, &h, 1);
    assert!(out.states.iter().all(|s| s.ensemble.len() == 10));
    h.burn_in = 19;
    assert!(chain(Algorithm::Dsgld, &h, 1).states.iter().all(|s| s.ensemble.len() == 1));
    h.thinning = 3;
    h.burn_in = 10;
    assert!(chain(Algorithm::CdBfl, &h, 1).states.iter().all(|s| s.ensemble.len() == 4));
    assert!(chain(Algorithm::CfFl, &h, 1).states.iter().all(|s| s.ensemble.is_empty()));
}

#[test]
fn chains_are_deterministic() {
    let h = hp(15, 2, 0.2);
    let a = chain(Algorithm::CdBfl, &h, 5);
    let b = chain(Algorithm::CdBfl, &h, 5);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.ensemble, y.ensemble);
        assert_eq!(x.theta, y.theta);
    }
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.trace, b.trace);
    let c = chain(Algorithm::CdBfl, &h, 6);
    assert_ne!(a.states[0].theta, c.states[0].theta);
}

struct Exploding;

impl GradientOracle<f64> for Exploding {
    fn dim(&self) -> usize {
        2
    }
    fn devices(&self) -> usize {
        1
    }
    fn gradient(&self, _: usize, theta: &Pv, _: &mut RngStream) -> cdbfl::Result<Pv> {
        Ok(Pv::from_vec(theta.iter().map(|t| t * 1e30).collect()))
    }
}

#[test]
fn divergence_reports_round() {
    let h = HyperParams {
        eta: 1.0,
        rounds: 50,
        burn_in: 10,
        ..HyperParams::default()
    };
    let setup = ChainSetup {
        algorithm: Algorithm::Sgld,
        hp: &h,
        graph: &DeviceGraph::single(),
        omega: &MixingMatrix::identity(1),
        compressor: CompressorConfig::identity(),
        seed: 0,
        init: vec![Pv::from_f64(&[1.0, 1.0])],
    };
    match run_chain(setup, &Exploding, &mut ()) {
        Err(cdbfl::Error::Diverged { round, device, .. }) => {
            assert!(round < 50);
            assert_eq!(device, 0);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn sgld_needs_one_device() {
    let h = hp(4, 1, 0.1);
    let (graph, omega) = complete(2);
    let setup = ChainSetup {
        algorithm: Algorithm::Sgld,
        hp: &h,
        graph: &graph,
        omega: &omega,
        compressor: CompressorConfig::identity(),
        seed: 0,
        init: random_init(2, 3, 0),
    };
    assert!(run_chain(setup, &ZeroGradient { dim: 3, devices: 2 }, &mut ()).is_err());
}
