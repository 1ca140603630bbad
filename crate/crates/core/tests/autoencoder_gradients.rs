mod common;

use aecbir::autoencoder::{init_autoencoder, train_autoencoder, TrainConfig};
use common::{gradient_check, unit_samples};

#[test]
fn backprop_matches_central_differences() {
    for seed in 0..5 {
        let ae = init_autoencoder(6, 3, seed, 1.0).unwrap();
        let samples = unit_samples(4, 6, 100 + seed);
        let worst = gradient_check(&ae, &samples, 1e-5);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst:.3e}");
    }
}

#[test]
fn full_batch_loss_never_increases() {
    let samples = unit_samples(20, 6, 7);
    let ae = init_autoencoder(6, 3, 3, 0.5).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        batch_size: 20,
        seed: 0,
        init_scale: 0.5,
    };
    let (trained, losses) = train_autoencoder(ae, &samples, &cfg).unwrap();
    let mut curve = losses.clone();
    curve.push(trained.loss_and_gradient(&samples).unwrap().0);
    assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
}

#[test]
fn larger_step_still_descends_on_full_batch() {
    let samples = unit_samples(20, 6, 9);
    let ae = init_autoencoder(6, 3, 4, 0.5).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 0.5,
        batch_size: 64,
        seed: 0,
        init_scale: 0.5,
    };
    let (_, losses) = train_autoencoder(ae, &samples, &cfg).unwrap();
    assert!(losses.last().unwrap() < losses.first().unwrap());
}
