//! Tape gradients against central finite differences, op by op.

use ckconv::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Builds `Σ f(inputs) ⊙ R` for a fixed random `R` and compares its tape
/// gradient with central differences for every input entry.
fn check(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random(tape.shape(out), &mut rng)
    };
    let eval = |tape: &mut Tape, vars: &[Var]| -> Var {
        let out = f(tape, vars);
        if tape.value(out).is_scalar() {
            return out;
        }
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = eval(&mut tape, &vars);
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.numel() {
            let value_at = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[i].data_mut()[j] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = shifted.iter().map(|x| t.constant(x.clone())).collect();
                let l = eval(&mut t, &vs);
                t.value(l).item()
            };
            let numeric = (value_at(EPS) - value_at(-EPS)) / (2.0 * EPS);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops(seed in 0u64..10_000, n in 1usize..6, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[n, m], &mut rng);
        let b = random(&[n, m], &mut rng);
        let s = random(&[], &mut rng);
        let k = away_from_zero(&[n, m], &mut rng);
        prop_assert!(check(&[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(&[a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(&[a.clone(), b.clone()], seed, |t, v| t.mul(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(&[a.clone(), s], seed, |t, v| t.mul(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.scale(v[0], -2.5)) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.sin(v[0])) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.swish(v[0])) < TOL);
        prop_assert!(check(std::slice::from_ref(&k), seed, |t, v| t.relu(v[0])) < TOL);
        prop_assert!(check(&[k], seed, |t, v| t.leaky_relu(v[0])) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.sum(v[0])) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.mean(v[0])) < TOL);
        let dropout_err = check(&[a], seed, |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            t.dropout(v[0], 0.4, true, &mut rng).unwrap()
        });
        prop_assert!(dropout_err < TOL);
    }

    #[test]
    fn linear_algebra(seed in 0u64..10_000, m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let w = random(&[n, k], &mut rng);
        let bias = random(&[n], &mut rng);
        prop_assert!(check(&[a.clone(), b], seed, |t, v| t.matmul(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(&[a.clone(), w.clone(), bias], seed, |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap()) < TOL);
        prop_assert!(check(std::slice::from_ref(&a), seed, |t, v| t.transpose(v[0]).unwrap()) < TOL);
        prop_assert!(check(&[a], seed, |t, v| t.reshape(v[0], &[k * m]).unwrap()) < TOL);
        let g = random(&[n], &mut rng);
        prop_assert!(check(&[w, g], seed, |t, v| t.weight_norm(v[0], v[1]).unwrap()) < TOL);
    }

    #[test]
    fn sequence_ops(seed in 0u64..10_000, b in 1usize..3, c in 1usize..4, o in 1usize..4, len in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[b, c, len], &mut rng);
        let klen = rng.gen_range(1..=len);
        let k = random(&[o, c, klen], &mut rng);
        let w = random(&[o, c], &mut rng);
        let bias = random(&[o], &mut rng);
        let gain = random(&[c], &mut rng);
        let shift = random(&[c], &mut rng);
        let cb = random(&[c], &mut rng);
        prop_assert!(check(&[x.clone(), k], seed, |t, v| t.causal_conv(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(&[x.clone(), w, bias], seed, |t, v| t.pointwise(v[0], v[1], Some(v[2])).unwrap()) < TOL);
        prop_assert!(check(&[x.clone(), gain, shift], seed, |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()) < TOL);
        prop_assert!(check(&[x.clone(), cb], seed, |t, v| t.channel_bias(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(check(std::slice::from_ref(&x), seed, |t, v| t.last_step(v[0]).unwrap()) < TOL);
        prop_assert!(check(std::slice::from_ref(&x), seed, |t, v| t.to_rows(v[0]).unwrap()) < TOL);
        prop_assert!(check(&[x], seed, |t, v| t.blur(v[0], &[0.1, 0.2, 0.4, 0.2, 0.1]).unwrap()) < TOL);
    }

    #[test]
    fn losses(seed in 0u64..10_000, n in 1usize..6, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&[n, k], &mut rng).scaled(3.0);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred = random(&[n, 1], &mut rng);
        let y = random(&[n, 1], &mut rng);
        prop_assert!(check(&[logits], seed, |t, v| t.cross_entropy(v[0], &targets).unwrap()) < TOL);
        prop_assert!(check(&[pred], seed, |t, v| t.mse(v[0], &y).unwrap()) < TOL);
    }
}

#[test]
fn mse_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[7], &mut rng);
    let y = random(&[7], &mut rng);
    let err = check(&[x], 0, |t, v| t.mse(v[0], &y).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn sum_gradient_is_ones_and_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0; 4]);
}

#[test]
fn loss_independent_of_input_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]).unwrap(), true);
    let y = tape.leaf(Tensor::from_vec(vec![3.0]).unwrap(), true);
    let x0 = tape.scale(x, 0.0);
    let sx = tape.sum(x0);
    let sy = tape.sum(y);
    let loss = tape.add(sx, sy).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
}
