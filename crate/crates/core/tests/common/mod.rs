#![allow(dead_code)]

use frea_core::gradcheck::{central_difference, relative_error, Probe};
use frea_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Builds `build` on a fresh tape with every tensor in `params` as a
/// trainable leaf, contracts the output with a fixed random weighting, and
/// compares the backward-pass gradient of every coordinate with central
/// differences. Returns the worst relative error.
pub fn check_all_grads<F>(params: Vec<Tensor>, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let mut r = rng(0xfeed);
        rand_tensor(tape.value(out).shape(), &mut r)
    };
    let eval = |ps: &[Tensor], want_grad: bool| -> Result<(f64, u64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod);
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(loss)?;
            grads = vars.iter().map(|v| tape.grad_or_zeros(*v)).collect();
        }
        Ok((tape.value(loss).item(), tape.kink_signature(), grads))
    };
    let (_, sig, analytic) = eval(&params, true).unwrap();
    let mut objective = |ps: &[Tensor]| -> Result<Probe> {
        let (loss, signature, _) = eval(ps, false)?;
        Ok(Probe { loss, signature })
    };
    let mut params = params;
    let mut worst = 0.0f64;
    for t in 0..params.len() {
        for i in 0..params[t].len() {
            if let Some(numeric) =
                central_difference(&mut objective, &mut params, t, i, 1e-5, sig).unwrap()
            {
                let a = analytic[t].data()[i];
                worst = worst.max(relative_error(a, numeric, 1e-6));
            }
        }
    }
    worst
}
