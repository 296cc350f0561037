use maskdp::mechanism::{RandomSeed, Stream};
use maskdp::model::{Activation, ModelDims, ModelParams, TokenSubset};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_tokens(count: usize, d_in: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..d_in).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn perturbed_params(dims: ModelDims, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(dims, Activation::Tanh, RandomSeed(seed));
    // Non-zero biases so every block is exercised.
    let mut rng = RandomSeed(seed).stream(Stream::GradientNoise);
    for v in p.flat_mut() {
        *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for instance in 0..50u64 {
        let mut rng = RandomSeed(instance).stream(Stream::DataGeneration);
        let dims = ModelDims::new(
            rng.random_range(1..6),
            rng.random_range(1..8),
            rng.random_range(2..6),
        )
        .unwrap();
        let params = perturbed_params(dims, instance);
        // Every fifth instance uses the empty subset.
        let count = if instance % 5 == 0 {
            0
        } else {
            rng.random_range(1..6)
        };
        let tokens = random_tokens(count, dims.d_in, &mut rng);
        let subset = TokenSubset::from_tokens(&tokens);
        let label = rng.random_range(0..dims.n_classes);
        let (_, grad) = params.loss_and_grad(&subset, label).unwrap();

        let n = dims.param_count();
        let coords: Vec<usize> = if n <= 20 {
            (0..n).collect()
        } else {
            (0..20).map(|_| rng.random_range(0..n)).collect()
        };
        for i in coords {
            let mut plus = params.clone();
            plus.flat_mut()[i] += h;
            let mut minus = params.clone();
            minus.flat_mut()[i] -= h;
            let fd = (plus.loss_and_grad(&subset, label).unwrap().0
                - minus.loss_and_grad(&subset, label).unwrap().0)
                / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            let rel = (fd - grad[i]).abs() / scale;
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "instance {instance} coord {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn empty_subset_gradient_is_label_only() {
    let dims = ModelDims::new(3, 4, 5).unwrap();
    let params = perturbed_params(dims, 1);
    let (loss, grad) = params.loss_and_grad(&TokenSubset::empty(), 2).unwrap();
    assert!(loss > 0.0);
    let hb_start = dims.param_count() - dims.n_classes;
    // With a zero pool only the head bias (and no weights) receive gradient.
    assert!(grad.as_slice()[..hb_start].iter().all(|&g| g == 0.0));
    let sum: f64 = grad.as_slice()[hb_start..].iter().sum();
    assert!(sum.abs() < 1e-12);
}

#[test]
fn zero_params_give_log_k() {
    let dims = ModelDims::new(3, 4, 7).unwrap();
    let params = ModelParams::zeros(dims, Activation::Tanh);
    let mut rng = RandomSeed(0).stream(Stream::DataGeneration);
    let tokens = random_tokens(3, 3, &mut rng);
    let (loss, _) = params
        .loss_and_grad(&TokenSubset::from_tokens(&tokens), 4)
        .unwrap();
    assert_eq!(loss, (7f64).ln());
    assert!(params
        .forward(&TokenSubset::from_tokens(&tokens))
        .unwrap()
        .iter()
        .all(|&l| l == 0.0));
}

#[test]
fn identity_composition_in_linear_mode() {
    let d = 3;
    let dims = ModelDims::new(d, d, d).unwrap();
    let mut values = vec![0.0; dims.param_count()];
    for i in 0..d {
        values[i * d + i] = 1.0; // embed
        values[d * d + d + i * d + i] = 1.0; // head
    }
    let params = ModelParams::from_flat(dims, Activation::Identity, values).unwrap();
    let token = vec![vec![0.5, -2.0, 3.25]];
    assert_eq!(
        params.forward(&TokenSubset::from_tokens(&token)).unwrap(),
        token[0]
    );
}

#[test]
fn permutation_and_duplication_invariance() {
    let dims = ModelDims::new(4, 6, 3).unwrap();
    for seed in 0..20 {
        let params = perturbed_params(dims, seed);
        let mut rng = RandomSeed(seed).stream(Stream::DataGeneration);
        let tokens = random_tokens(5, 4, &mut rng);
        let (loss, grad) = params
            .loss_and_grad(&TokenSubset::from_tokens(&tokens), 1)
            .unwrap();

        let mut shuffled = tokens.clone();
        shuffled.shuffle(&mut rng);
        let mut doubled = tokens.clone();
        doubled.extend(tokens.iter().cloned());
        for other in [shuffled, doubled] {
            let (l, g) = params
                .loss_and_grad(&TokenSubset::from_tokens(&other), 1)
                .unwrap();
            assert!((l - loss).abs() < 1e-12);
            for i in 0..grad.len() {
                assert!((g[i] - grad[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dims = ModelDims::new(5, 7, 4).unwrap();
    let params = perturbed_params(dims, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.txt");
    params.write_checkpoint(&path).unwrap();
    let back = ModelParams::read_checkpoint(&path).unwrap();
    assert_eq!(back, params);
    let bits = |p: &ModelParams| p.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&params));
    assert_eq!(back.to_checkpoint_string(), params.to_checkpoint_string());

    let flat = params.clone().into_flat();
    assert_eq!(
        ModelParams::from_flat(dims, Activation::Tanh, flat).unwrap(),
        params
    );
}

proptest! {
    #[test]
    fn loss_is_non_negative(seed in 0u64..1000, count in 0usize..6, label in 0usize..4) {
        let dims = ModelDims::new(3, 5, 4).unwrap();
        let params = perturbed_params(dims, seed);
        let mut rng = RandomSeed(seed).stream(Stream::DataGeneration);
        let tokens = random_tokens(count, 3, &mut rng);
        let (loss, grad) = params.loss_and_grad(&TokenSubset::from_tokens(&tokens), label).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.as_slice().iter().all(|v| v.is_finite()));
    }
}
