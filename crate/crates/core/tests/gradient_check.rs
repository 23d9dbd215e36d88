//! Analytic parameter gradients against central finite differences on the
//! miniature configuration, in f64.

use framecast_core::model::{Mode, ModelConfig, Network};
use framecast_core::{Frame, TemporalDisplacement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-6;

/// Mean squared error computed directly from the forward output.
fn loss_at(net: &Network<f64>, input: &Frame, dt: Option<TemporalDisplacement>, target: &Frame, dropout_seed: Option<u64>) -> f64 {
    let trace = match dropout_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            net.forward(input, dt, Mode::Train(&mut rng)).unwrap()
        }
        None => net.forward(input, dt, Mode::Inference).unwrap(),
    };
    let out = trace.output();
    out.iter().zip(target.pixels()).map(|(&y, &t)| (y - t as f64).powi(2)).sum::<f64>() / out.len() as f64
}

struct Outcome {
    checked: usize,
    agreeing: usize,
    worst: f64,
}

fn check(config: ModelConfig, seed: u64, dropout_seed: Option<u64>, samples: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Zero biases leave dead units exactly on the ReLU kink, where central
    // differences see half the slope; evaluate at a generic point instead.
    let mut params = Network::<f64>::init(config.clone(), seed).unwrap().into_params();
    for layer in params.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
    }
    let net = Network::new(config.clone(), params).unwrap();
    let (h, w) = config.input_resolution;
    let input = Frame::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0)).unwrap();
    let target = Frame::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0)).unwrap();
    let dt = config.has_time_branch().then(|| TemporalDisplacement::from_millis(120.0).unwrap());

    let (_, analytic) = match dropout_seed {
        Some(s) => {
            let mut drng = ChaCha8Rng::seed_from_u64(s);
            net.loss_and_gradient(&input, dt, &target, Mode::Train(&mut drng)).unwrap()
        }
        None => net.loss_and_gradient(&input, dt, &target, Mode::Inference).unwrap(),
    };

    let params = net.params().clone();
    let layer_count = params.layers().len();
    let mut outcome = Outcome { checked: 0, agreeing: 0, worst: 0.0 };
    for sample in 0..samples {
        // cover every layer, then spread the rest at random
        let layer = if sample < layer_count { sample } else { rng.gen_range(0..layer_count) };
        let bias = rng.gen_bool(0.25);
        let len = if bias { params.layers()[layer].bias.len() } else { params.layers()[layer].weight.len() };
        let index = rng.gen_range(0..len);

        let perturbed = |delta: f64| {
            let mut p = params.clone();
            let l = &mut p.layers_mut()[layer];
            let slot = if bias { &mut l.bias[index] } else { &mut l.weight[index] };
            *slot += delta;
            let n = Network::new(config.clone(), p).unwrap();
            loss_at(&n, &input, dt, &target, dropout_seed)
        };
        let numeric = (perturbed(STEP) - perturbed(-STEP)) / (2.0 * STEP);
        let l = &analytic.layers()[layer];
        let a = if bias { l.bias[index] } else { l.weight[index] };

        let ok = if a.abs() < ABS_TOL && numeric.abs() < ABS_TOL {
            (a - numeric).abs() <= ABS_TOL
        } else {
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            outcome.worst = outcome.worst.max(rel);
            rel <= REL_TOL
        };
        if !ok {
            let kind = if bias { "bias" } else { "weight" };
            println!("  {} {kind}[{index}]: analytic {a:.6e}, numeric {numeric:.6e}", params.layers()[layer].name);
        }
        outcome.checked += 1;
        outcome.agreeing += ok as usize;
    }
    outcome
}

fn assert_passes(o: Outcome, what: &str) {
    let fraction = o.agreeing as f64 / o.checked as f64;
    println!("{what}: {}/{} coordinates agree, worst relative error {:.2e}", o.agreeing, o.checked, o.worst);
    assert!(fraction >= 0.95, "{what}: only {:.1}% of coordinates agree", 100.0 * fraction);
}

#[test]
fn time_conditioned_gradients_match_finite_differences() {
    assert_passes(check(ModelConfig::miniature(), 11, None, 400), "inference mode");
}

#[test]
fn gradients_with_dropout_masks_match() {
    assert_passes(check(ModelConfig::miniature(), 12, Some(99), 300), "training mode");
}

#[test]
fn baseline_gradients_match() {
    assert_passes(check(ModelConfig::miniature().without_time_branch(), 13, None, 300), "baseline");
}

#[test]
fn unflattened_encoder_gradients_match() {
    let config = ModelConfig { flatten_is_first_fc: false, ..ModelConfig::miniature() };
    assert_passes(check(config, 14, None, 300), "projection FC");
}
