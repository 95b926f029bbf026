use redial::arhead::{loss_and_grad, ARModel, ArDims, ArInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_instance(t: usize, d: usize, seed: u64) -> ArInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn_vectors = (0..t)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let gold = (2..=t).map(|i| rng.gen_range(1..i)).collect();
    ArInstance::new(turn_vectors, gold)
}

#[test]
fn probe() {
    let model = ARModel::uniform_init(ArDims { embed: 5, hidden: 4, proj: 3 }, 42);
    let batch = vec![rand_instance(4, 5, 1), rand_instance(3, 5, 2)];
    let (_, grads) = loss_and_grad(&batch, &model).unwrap();
    let flat: Vec<f64> = grads.flat();
    let step = 1e-5;
    for k in 0..model.param_count() {
        let orig = model.param(k);
        let mut plus = model.clone();
        plus.set_param(k, orig + step);
        let mut minus = model.clone();
        minus.set_param(k, orig - step);
        let (lp, _) = loss_and_grad(&batch, &plus).unwrap();
        let (lm, _) = loss_and_grad(&batch, &minus).unwrap();
        let numeric = (lp - lm) / (2.0 * step);
        let denom = numeric.abs().max(flat[k].abs()).max(1e-8);
        let rel = (numeric - flat[k]).abs() / denom;
        if rel > 1e-5 {
            println!("k={k} analytic={:+.3e} numeric={:+.3e} rel={:.2e}", flat[k], numeric, rel);
        }
    }
}
