//! Central finite-difference validation of every primitive's backward pass,
//! plus a composite check through a full transformer loss.

use memcirc::model::{Model, ModelConfig};
use memcirc::tape::ValueId;
use memcirc::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const POINTS: usize = 100;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Check `∂loss/∂inputs` against central differences at `POINTS` random
/// entries spread over the differentiable inputs.
fn grad_check<F>(name: &str, seed: u64, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Tape, &[ValueId]) -> ValueId,
{
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();

    let run = |tensors: &[Tensor]| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss).scalar_value();
        tape.backward(loss).unwrap();
        let grads = ids.iter().map(|&id| tape.grad(id).data().to_vec()).collect();
        (value, Some(grads))
    };

    let (_, grads) = run(&inputs);
    let grads = grads.unwrap();

    for _ in 0..POINTS {
        let which = rng.gen_range(0..inputs.len());
        let idx = rng.gen_range(0..inputs[which].numel());
        let mut plus = inputs.clone();
        plus[which].data_mut()[idx] += STEP;
        let mut minus = inputs.clone();
        minus[which].data_mut()[idx] -= STEP;
        let (lp, _) = run(&plus);
        let (lm, _) = run(&minus);
        let numeric = (lp - lm) / (2.0 * STEP);
        let analytic = grads[which][idx];
        // skip points where both are essentially zero
        if analytic.abs() < 1e-10 && numeric.abs() < 1e-7 {
            continue;
        }
        assert!(
            rel_err(analytic, numeric) < REL_TOL,
            "{name}: input {which} element {idx}: analytic {analytic} vs numeric {numeric}"
        );
    }
}

/// Weighted scalarization so the check exercises every output entry.
fn weighted(tape: &mut Tape, out: ValueId, seed: u64) -> ValueId {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = tape.leaf(w);
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

#[test]
fn matmul_gradient() {
    grad_check("matmul", 11, &[&[3, 4], &[4, 5]], |t, ids| {
        let c = t.matmul(ids[0], ids[1]);
        weighted(t, c, 111)
    });
}

#[test]
fn matmul_bt_gradient() {
    grad_check("matmul_bt", 12, &[&[3, 4], &[5, 4]], |t, ids| {
        let c = t.matmul_bt(ids[0], ids[1]);
        weighted(t, c, 112)
    });
}

#[test]
fn add_sub_gradient() {
    grad_check("add", 13, &[&[2, 6], &[2, 6]], |t, ids| {
        let c = t.add(ids[0], ids[1]);
        weighted(t, c, 113)
    });
    grad_check("sub", 14, &[&[2, 6], &[2, 6]], |t, ids| {
        let c = t.sub(ids[0], ids[1]);
        weighted(t, c, 114)
    });
}

#[test]
fn mul_scale_gradient() {
    grad_check("mul", 15, &[&[4, 3], &[4, 3]], |t, ids| {
        let c = t.mul(ids[0], ids[1]);
        weighted(t, c, 115)
    });
    grad_check("scale", 16, &[&[4, 3]], |t, ids| {
        let c = t.scale(ids[0], -1.7);
        weighted(t, c, 116)
    });
}

#[test]
fn sum_many_gradient() {
    grad_check("sum_many", 17, &[&[3, 3], &[3, 3], &[3, 3]], |t, ids| {
        let c = t.sum_many(ids);
        weighted(t, c, 117)
    });
}

#[test]
fn softmax_gradient() {
    grad_check("softmax", 18, &[&[4, 4]], |t, ids| {
        let c = t.softmax(ids[0], false);
        weighted(t, c, 118)
    });
    grad_check("softmax_causal", 19, &[&[4, 4]], |t, ids| {
        let c = t.softmax(ids[0], true);
        weighted(t, c, 119)
    });
}

#[test]
fn layernorm_gradient() {
    // checks x, gamma, and beta paths
    grad_check("layernorm", 20, &[&[3, 6], &[6], &[6]], |t, ids| {
        let c = t.layernorm(ids[0], ids[1], ids[2]);
        weighted(t, c, 120)
    });
}

#[test]
fn gelu_gradient() {
    grad_check("gelu", 21, &[&[5, 5]], |t, ids| {
        let c = t.gelu(ids[0]);
        weighted(t, c, 121)
    });
}

#[test]
fn embed_gradient() {
    let ids_fixed: Vec<u32> = vec![2, 0, 3, 2];
    grad_check("embed", 22, &[&[5, 4]], move |t, ids| {
        let c = t.embed(ids[0], &ids_fixed);
        weighted(t, c, 122)
    });
}

#[test]
fn cross_entropy_gradient() {
    let targets: Vec<u32> = vec![1, 4, 0];
    grad_check("cross_entropy", 23, &[&[4, 5]], move |t, ids| {
        t.cross_entropy(ids[0], &targets)
    });
}

#[test]
fn pick_gradient() {
    grad_check("pick", 24, &[&[3, 4]], |t, ids| t.pick(ids[0], 2, 1));
}

/// Composite: full transformer training loss against finite differences on
/// sampled weight entries.
#[test]
fn transformer_loss_matches_finite_differences() {
    use rand::Rng;
    let config = ModelConfig::new(2, 2, 8, 4, 12, 11, 16, 42);
    let model = Model::new(config);
    let tokens: Vec<u32> = vec![3, 1, 4, 1, 5, 9, 2, 6];

    let fwd = model.forward_train(&tokens).unwrap();
    let mut tape = fwd.tape;
    tape.backward(fwd.loss).unwrap();
    let named = model.weights.named();
    let analytic: Vec<Vec<f64>> = fwd
        .weight_ids
        .iter()
        .map(|&id| tape.grad(id).data().to_vec())
        .collect();

    let loss_with = |widx: usize, eidx: usize, delta: f64| -> f64 {
        let mut m = model.clone();
        {
            let mut slots = m.weights.named_mut();
            let arc = &mut slots[widx].1;
            let t = std::sync::Arc::make_mut(arc);
            t.data_mut()[eidx] += delta;
        }
        let f = m.forward_train(&tokens).unwrap();
        f.tape.value(f.loss).scalar_value()
    };

    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let mut checked = 0;
    while checked < 60 {
        let widx = rng.gen_range(0..named.len());
        let eidx = rng.gen_range(0..named[widx].1.numel());
        let lp = loss_with(widx, eidx, STEP);
        let lm = loss_with(widx, eidx, -STEP);
        let numeric = (lp - lm) / (2.0 * STEP);
        let a = analytic[widx][eidx];
        if a.abs() < 1e-10 && numeric.abs() < 1e-7 {
            continue;
        }
        // central differences bottom out around 1e-10 absolute here, so tiny
        // gradients get an absolute floor instead of the relative bound
        assert!(
            (a - numeric).abs() < 1e-9 || rel_err(a, numeric) < REL_TOL,
            "weight {} element {eidx}: analytic {a} vs numeric {numeric}",
            named[widx].0
        );
        checked += 1;
    }
}
