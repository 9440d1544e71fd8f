use ppca_core::neuralnet::{count_parameters, train, Cnn, Mlp, Network, PlateauScheduler, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `||analytic - numeric|| / ||analytic + numeric||` over the full gradient,
/// including the penalty term.
fn gradient_error<N: Network>(net: &N, x: &[f64], t: &[f64], n: usize, l2: f64) -> f64 {
    let (_, analytic) = net.loss_grad(x, t, n, l2);
    let eps = 1e-6;
    let mut probe = net.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for i in 0..analytic.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let up = probe.loss_grad(x, t, n, l2).0;
        probe.params_mut()[i] = orig - eps;
        let down = probe.loss_grad(x, t, n, l2).0;
        probe.params_mut()[i] = orig;
        numeric[i] = (up - down) / (2.0 * eps);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let sum: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
    if sum == 0.0 {
        0.0
    } else {
        diff / sum
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..50 {
        let depth = rng.random_range(1..4);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..7)).collect();
        // random biases keep pre-activations off the ReLU kink at exactly 0
        let count = Mlp::new(&widths, case).unwrap().params().len();
        let net = Mlp::from_params(&widths, random_vec(&mut rng, count)).unwrap();
        let n = rng.random_range(1..5);
        let x = random_vec(&mut rng, n * widths[0]);
        let t = random_vec(&mut rng, n * widths[depth]);
        let err = gradient_error(&net, &x, &t, n, 1e-3);
        assert!(err <= 1e-4, "widths {widths:?}: relative error {err}");
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..50 {
        let kernel = [1, 3, 5][rng.random_range(0..3)];
        let side = rng.random_range(kernel.max(2)..8);
        let hidden = rng.random_range(0..3);
        let mut channels = vec![rng.random_range(1..3)];
        channels.extend((0..hidden).map(|_| rng.random_range(1..4)));
        channels.push(rng.random_range(1..3));
        let count = Cnn::new(&channels, kernel, side, case).unwrap().params().len();
        let net = Cnn::from_params(&channels, kernel, side, random_vec(&mut rng, count)).unwrap();
        let n = rng.random_range(1..3);
        let x = random_vec(&mut rng, n * net.input_len());
        let t = random_vec(&mut rng, n * net.output_len());
        let err = gradient_error(&net, &x, &t, n, 1e-3);
        assert!(err <= 1e-4, "channels {channels:?} k={kernel} side={side}: relative error {err}");
    }
}

#[test]
fn parameter_counts_follow_the_layer_shapes() {
    let mlp = Mlp::new(&[10, 256, 256, 7], 0).unwrap();
    assert_eq!(count_parameters(&mlp), 10 * 256 + 256 + 256 * 256 + 256 + 256 * 7 + 7);
    let cnn = Cnn::new(&[1, 16, 16, 1], 5, 8, 0).unwrap();
    assert_eq!(count_parameters(&cnn), (25 * 16 + 16) + (25 * 16 * 16 + 16) + (25 * 16 + 1));
}

#[test]
fn mlp_overfits_a_small_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10;
    let x = random_vec(&mut rng, n * 4);
    let t: Vec<f64> = x
        .chunks(4)
        .flat_map(|r| [r[0] * r[1] + r[2], (r[3] * 2.0).sin()])
        .collect();
    let cfg = TrainConfig {
        epochs: 1500,
        batch_size: 10,
        l2_penalty: 0.0,
        validation_fraction: 0.0,
        plateau_patience: 100,
        ..TrainConfig::default()
    };
    let (net, hist) = train(Mlp::new(&[4, 32, 32, 2], 3).unwrap(), &x, &t, n, &cfg).unwrap();
    assert!(hist.final_train_loss < 1e-3 * hist.initial_train_loss, "{hist:?}");
    assert!(hist.final_train_loss <= hist.initial_train_loss);
    let y = net.forward_batch(&x, n);
    let mse: f64 = y.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
    assert!((mse - hist.final_train_loss).abs() < 1e-12);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_vec(&mut rng, 40 * 3);
    let t = random_vec(&mut rng, 40 * 2);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let a = train(Mlp::new(&[3, 8, 2], 1).unwrap(), &x, &t, 40, &cfg).unwrap().0;
    let b = train(Mlp::new(&[3, 8, 2], 1).unwrap(), &x, &t, 40, &cfg).unwrap().0;
    assert_eq!(a.params(), b.params());
}

#[test]
fn plateau_scheduler_cuts_after_patience() {
    let mut s = PlateauScheduler::new(1e-3, 0.1, 2, 1e-6);
    assert_eq!(s.step(1.0), 1e-3);
    assert_eq!(s.step(1.0), 1e-3);
    assert_eq!(s.step(1.0), 1e-3);
    assert!((s.step(1.0) - 1e-4).abs() < 1e-18);
    assert!((s.step(0.5) - 1e-4).abs() < 1e-18);
    for _ in 0..100 {
        s.step(0.5);
    }
    assert!((s.lr() - 1e-6).abs() < 1e-18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Batched forward equals per-sample forward.
    #[test]
    fn batch_forward_matches_single(seed in 0u64..1000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[5, 7, 3], seed).unwrap();
        let x = random_vec(&mut rng, n * 5);
        let batch = net.forward_batch(&x, n);
        for i in 0..n {
            let one = net.forward(&x[i * 5..(i + 1) * 5]).unwrap();
            for (a, b) in one.iter().zip(&batch[i * 3..(i + 1) * 3]) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    /// A parameter round trip through the flat vector is exact.
    #[test]
    fn flat_parameters_round_trip(seed in 0u64..1000) {
        let net = Cnn::new(&[1, 4, 1], 3, 6, seed).unwrap();
        let back = Cnn::from_params(&[1, 4, 1], 3, 6, net.params().to_vec()).unwrap();
        prop_assert_eq!(back.params(), net.params());
    }
}

