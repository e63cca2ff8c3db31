use cdbfl::models::{
    ensemble_predict, finite_diff_grad, generate_synthetic_dataset, local_loss_grad, nll_grad,
    predict_proba, LabeledExample, LocalObjective, ModelSpec, PosteriorEnsemble,
};
use cdbfl::vector::ParameterVector;
use cdbfl::{Purpose, RngStream};
use proptest::prelude::*;

type Pv = ParameterVector<f64>;

fn random_theta(rng: &mut RngStream, p: usize, scale: f64) -> Pv {
    Pv::from_vec((0..p).map(|_| scale * rng.standard_normal()).collect())
}

fn random_batch(rng: &mut RngStream, n: usize, d: usize, classes: usize) -> Vec<LabeledExample<f64>> {
    (0..n)
        .map(|i| LabeledExample {
            x: (0..d).map(|_| rng.standard_normal()).collect(),
            label: i % classes,
        })
        .collect()
}

#[test]
fn separable_blobs_fit_perfectly() {
    let mut rng = RngStream::for_device(7, 0, Purpose::Data);
    let data = generate_synthetic_dataset::<f64>(2, 2, 10, 10.0, 0.1, &mut rng).unwrap();
    let spec = ModelSpec::softmax_linear(2, 2);
    let obj = LocalObjective::literal(1).with_prior_share(0.0);
    let mut theta = Pv::zeros(spec.param_count());
    for _ in 0..2000 {
        let g = local_loss_grad(&spec, &theta, &data.examples, &obj).unwrap();
        theta.axpy(-0.01, &g).unwrap();
    }
    let correct = data
        .examples
        .iter()
        .filter(|e| {
            let p = predict_proba(&spec, &theta, &e.x).unwrap();
            p[e.label] > 0.5
        })
        .count();
    assert_eq!(correct, data.len());
}

#[test]
fn softmax_linear_matches_finite_differences() {
    let mut rng = RngStream::for_device(2, 0, Purpose::Init);
    let spec = ModelSpec::softmax_linear(5, 4);
    let theta = random_theta(&mut rng, spec.param_count(), 0.5);
    let batch = random_batch(&mut rng, 6, 5, 4);
    let obj = LocalObjective::literal(10);
    let g = local_loss_grad(&spec, &theta, &batch, &obj).unwrap();
    let fd = finite_diff_grad(&spec, &theta, &batch, &obj, 1e-5).unwrap();
    for (a, b) in g.iter().zip(fd.iter()) {
        assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-6) < 1e-4);
    }
}

#[test]
fn ensemble_of_hundred_matches_direct_mean() {
    let mut rng = RngStream::for_device(3, 0, Purpose::Init);
    let spec = ModelSpec::mlp(3, 4, 3);
    let mut ens = PosteriorEnsemble::new(0);
    for _ in 0..100 {
        ens.push(random_theta(&mut rng, spec.param_count(), 1.0));
    }
    let x = [0.3, -1.0, 2.0];
    let avg = ensemble_predict(&spec, &ens, &x).unwrap();
    let mut direct = [0.0; 3];
    for t in &ens.samples {
        for (d, p) in direct.iter_mut().zip(predict_proba(&spec, t, &x).unwrap()) {
            *d += p / 100.0;
        }
    }
    for (a, b) in avg.iter().zip(direct) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn synthetic_counts() {
    let mut rng = RngStream::for_device(1, 0, Purpose::Data);
    let d = generate_synthetic_dataset::<f64>(10, 8, 50, 1.0, 1.0, &mut rng).unwrap();
    assert_eq!(d.len(), 500);
    assert!(d.label_counts().iter().all(|&c| c == 50));
}

fn specs() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        (1usize..5, 2usize..5).prop_map(|(d, r)| ModelSpec::softmax_linear(d, r)),
        (1usize..4, 1usize..5, 2usize..4).prop_map(|(d, h, r)| ModelSpec::mlp(d, h, r)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(spec in specs(), seed in 0u64..1000) {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Init);
        let theta = random_theta(&mut rng, spec.param_count(), 0.5);
        let batch = random_batch(&mut rng, 4, spec.input_dim, spec.classes);
        let obj = LocalObjective::literal(10);
        let g = local_loss_grad(&spec, &theta, &batch, &obj).unwrap();
        let fd = finite_diff_grad(&spec, &theta, &batch, &obj, 1e-5).unwrap();
        for (a, b) in g.iter().zip(fd.iter()) {
            prop_assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-6) < 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn probabilities_on_simplex(spec in specs(), seed in 0u64..1000, scale in 0.1f64..20.0) {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Init);
        let theta = random_theta(&mut rng, spec.param_count(), scale);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| scale * rng.standard_normal()).collect();
        let p = predict_proba(&spec, &theta, &x).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_ignores_sample_order(spec in specs(), seed in 0u64..1000, n in 2usize..12) {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Init);
        let samples: Vec<Pv> = (0..n).map(|_| random_theta(&mut rng, spec.param_count(), 2.0)).collect();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.standard_normal()).collect();
        let fwd = PosteriorEnsemble { owner: 0, samples: samples.clone() };
        let mut rev = samples;
        rev.rotate_left(n / 2);
        rev.reverse();
        let bwd = PosteriorEnsemble { owner: 0, samples: rev };
        prop_assert_eq!(ensemble_predict(&spec, &fwd, &x).unwrap(), ensemble_predict(&spec, &bwd, &x).unwrap());
    }

    #[test]
    fn likelihood_gradient_additive_over_batches(spec in specs(), seed in 0u64..1000, split in 1usize..7) {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Init);
        let theta = random_theta(&mut rng, spec.param_count(), 0.7);
        let batch = random_batch(&mut rng, 8, spec.input_dim, spec.classes);
        let whole = nll_grad(&spec, &theta, &batch).unwrap();
        let a = nll_grad(&spec, &theta, &batch[..split]).unwrap();
        let b = nll_grad(&spec, &theta, &batch[split..]).unwrap();
        for i in 0..whole.dim() {
            let sum = a[i] + b[i];
            prop_assert!((whole[i] - sum).abs() <= 1e-10 * whole[i].abs().max(1.0));
        }
    }
}
