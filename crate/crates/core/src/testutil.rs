//! Finite-difference oracle and random inputs for unit tests.

use rand::Rng;

use crate::numcore::{NumError, ParamSet, Tape, Tensor2, Var};

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

/// Largest relative disagreement between tape gradients and central
/// differences (step 1e-5) over every entry of every parameter.
pub fn finite_difference_check(
    params: &mut ParamSet,
    loss: impl Fn(&mut Tape, &ParamSet) -> Result<Var, NumError>,
) -> Result<f64, NumError> {
    const STEP: f64 = 1e-5;
    params.zero_grad();
    let mut tape = Tape::new();
    let root = loss(&mut tape, params)?;
    tape.backward(root, params)?;
    let ids: Vec<_> = params.ids().collect();
    let analytic: Vec<Tensor2> = ids.iter().map(|&id| params.grad(id).clone()).collect();
    params.zero_grad();

    let eval = |p: &ParamSet| -> Result<f64, NumError> {
        let mut t = Tape::new();
        let r = loss(&mut t, p)?;
        Ok(t.value(r).get(0, 0))
    };
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..params.value(id).len() {
            let orig = params.value(id).as_slice()[i];
            params.value_mut(id).as_mut_slice()[i] = orig + STEP;
            let up = eval(params)?;
            params.value_mut(id).as_mut_slice()[i] = orig - STEP;
            let down = eval(params)?;
            params.value_mut(id).as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k].as_slice()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
