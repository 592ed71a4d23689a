//! Two-layer mean-aggregator GNN node classifier over the shadow subgraph.

use std::sync::Arc;

use super::mlp::Scaler;
use super::AttackError;
use crate::encoder::{encode, glorot, Aggregator, EncoderVars, Propagation};
use crate::numcore::{sigmoid, AdamHyper, NumError, ParamSet, Tape, Tensor2};
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GnnSpec {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for GnnSpec {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 200,
            lr: 1e-2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GnnAttacker {
    params: ParamSet,
    scaler: Scaler,
}

const NAMES: [&str; 6] = ["l0.ws", "l0.wn", "l0.b", "l1.ws", "l1.wn", "l1.b"];

impl GnnAttacker {
    /// Full-batch training on the labeled `train` nodes; messages flow over
    /// every node of `neighbors`.
    pub fn fit(
        spec: &GnnSpec,
        x: &Tensor2,
        neighbors: &[Vec<usize>],
        train: &[usize],
        y: &[u8],
        seed: u64,
    ) -> Result<Self, AttackError> {
        if train.is_empty() || train.len() != y.len() || neighbors.len() != x.rows() {
            return Err(AttackError::EmptySplit);
        }
        let scaler = Scaler::fit(&x.select_rows(train));
        let xs = scaler.apply(x);
        let mut rng = seeded_rng(seed, 0x6a);
        let (q, h) = (x.cols(), spec.hidden);
        let mut params = ParamSet::new();
        let shapes = [(q, h), (q, h), (1, h), (h, 1), (h, 1), (1, 1)];
        for (name, (r, c)) in NAMES.iter().zip(shapes) {
            let t = if r == 1 { Tensor2::zeros(1, c) } else { glorot(&mut rng, r, c) };
            params.insert(*name, t)?;
        }
        let mut model = Self { params, scaler };
        let prop = Propagation::new(neighbors, Aggregator::Mean);
        let signs = Tensor2::column_vector(&y.iter().map(|&v| if v != 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>());
        let rows = Arc::new(train.to_vec());
        for epoch in 0..spec.epochs {
            let step = || -> Result<(Tape, crate::numcore::Var), NumError> {
                let mut tape = Tape::new();
                let xv = tape.constant(xs.clone());
                let z = model.logits(&mut tape, &prop, xv).map_err(|e| match e {
                    AttackError::Num(n) => n,
                    _ => unreachable!("encode only fails on shapes checked above"),
                })?;
                let z = tape.select_rows(z, rows.clone())?;
                let s = tape.constant(signs.clone());
                let signed = tape.mul(z, s)?;
                let ll = tape.log_sigmoid(signed)?;
                let m = tape.mean(ll)?;
                let loss = tape.scale(m, -1.0)?;
                Ok((tape, loss))
            };
            let (tape, loss) = step().map_err(|e| match e {
                NumError::NonFinite { .. } => AttackError::NonFiniteLoss { epoch },
                other => other.into(),
            })?;
            tape.backward(loss, &mut model.params)?;
            model.params.optimize_step(spec.lr, AdamHyper::default());
        }
        Ok(model)
    }

    fn logits(&self, tape: &mut Tape, prop: &Propagation, x: crate::numcore::Var) -> Result<crate::numcore::Var, AttackError> {
        let v: Vec<_> = NAMES
            .iter()
            .map(|n| tape.param(&self.params, self.params.id(n).expect("registered")))
            .collect();
        let vars = EncoderVars {
            layers: vec![(v[0], v[1], v[2]), (v[3], v[4], v[5])],
        };
        encode(tape, prop, x, &vars).map_err(|e| match e {
            crate::encoder::EncoderError::Num(n) => AttackError::Num(n),
            other => AttackError::InvalidSpec(other.to_string()),
        })
    }

    /// Positive-class probability for every node.
    pub fn predict_proba(&self, x: &Tensor2, neighbors: &[Vec<usize>]) -> Result<Vec<f64>, AttackError> {
        let prop = Propagation::new(neighbors, Aggregator::Mean);
        let mut tape = Tape::new();
        let xv = tape.constant(self.scaler.apply(x));
        let z = self.logits(&mut tape, &prop, xv)?;
        Ok(tape.value(z).as_slice().iter().map(|&v| sigmoid(v)).collect())
    }
}
