//! Fully connected binary classifier trained with minibatch Adam on BCE.

use rand::seq::SliceRandom;

use super::AttackError;
use crate::encoder::glorot;
use crate::numcore::{sigmoid, AdamHyper, NumError, ParamSet, Tape, Tensor2, Var};
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

/// Column-wise standardization fitted on training rows.
#[derive(Clone, Debug)]
pub(crate) struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    pub(crate) fn fit(x: &Tensor2) -> Self {
        let n = x.rows().max(1) as f64;
        let mean: Vec<f64> = x.column_means().into_vec();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (j, v) in row.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { 1.0 / s } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub(crate) fn apply(&self, x: &Tensor2) -> Tensor2 {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.scale[j];
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    params: ParamSet,
    layers: usize,
    scaler: Scaler,
}

impl Mlp {
    pub fn fit(spec: &MlpSpec, x: &Tensor2, y: &[u8], seed: u64) -> Result<Self, AttackError> {
        if x.rows() == 0 || x.rows() != y.len() {
            return Err(AttackError::EmptySplit);
        }
        let scaler = Scaler::fit(x);
        let x = scaler.apply(x);
        let mut rng = seeded_rng(seed, 0x31);
        let mut params = ParamSet::new();
        let mut widths = vec![x.cols()];
        widths.extend(&spec.hidden);
        widths.push(1);
        for (l, w) in widths.windows(2).enumerate() {
            params.insert(format!("w{l}"), glorot(&mut rng, w[0], w[1]))?;
            params.insert(format!("b{l}"), Tensor2::zeros(1, w[1]))?;
        }
        let mut mlp = Self {
            params,
            layers: widths.len() - 1,
            scaler,
        };
        let targets: Vec<f64> = y.iter().map(|&v| if v != 0 { 1.0 } else { -1.0 }).collect();
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for epoch in 0..spec.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(spec.batch.max(1)) {
                let mut tape = Tape::new();
                let xb = tape.constant(x.select_rows(batch));
                let logits = mlp.forward(&mut tape, xb).map_err(|e| non_finite(e, epoch))?;
                // BCE as -log σ(s·z) with s = ±1
                let signs = tape.constant(Tensor2::column_vector(&batch.iter().map(|&i| targets[i]).collect::<Vec<_>>()));
                let signed = tape.mul(logits, signs).map_err(|e| non_finite(e, epoch))?;
                let ll = tape.log_sigmoid(signed).map_err(|e| non_finite(e, epoch))?;
                let m = tape.mean(ll).map_err(|e| non_finite(e, epoch))?;
                let loss = tape.scale(m, -1.0).map_err(|e| non_finite(e, epoch))?;
                tape.backward(loss, &mut mlp.params)?;
                mlp.params.optimize_step(spec.lr, AdamHyper::default());
            }
        }
        Ok(mlp)
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumError> {
        let mut h = x;
        for l in 0..self.layers {
            let w = tape.param(&self.params, self.params.id(&format!("w{l}")).expect("layer present"));
            let b = tape.param(&self.params, self.params.id(&format!("b{l}")).expect("layer present"));
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            h = if l + 1 == self.layers { z } else { tape.relu(z)? };
        }
        Ok(h)
    }

    /// Activations of the last hidden layer (input to the output unit).
    pub fn penultimate(&self, x: &Tensor2) -> Result<Tensor2, AttackError> {
        let mut tape = Tape::new();
        let mut h = tape.constant(self.scaler.apply(x));
        for l in 0..self.layers - 1 {
            let w = tape.param(&self.params, self.params.id(&format!("w{l}")).unwrap());
            let b = tape.param(&self.params, self.params.id(&format!("b{l}")).unwrap());
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            h = tape.relu(z)?;
        }
        Ok(tape.value(h).clone())
    }

    /// Probability of the positive class per row.
    pub fn predict_proba(&self, x: &Tensor2) -> Result<Vec<f64>, AttackError> {
        let mut tape = Tape::new();
        let xv = tape.constant(self.scaler.apply(x));
        let z = self.forward(&mut tape, xv)?;
        Ok(tape.value(z).as_slice().iter().map(|&v| sigmoid(v)).collect())
    }
}

fn non_finite(e: NumError, epoch: usize) -> AttackError {
    match e {
        NumError::NonFinite { .. } => AttackError::NonFiniteLoss { epoch },
        other => other.into(),
    }
}
