use std::collections::BTreeMap;

use super::{NumError, Tensor2};

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor2,
    grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Named trainable tensors with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    slots: Vec<Slot>,
    by_name: BTreeMap<String, usize>,
    step: u64,
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId, NumError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let (r, c) = value.shape();
        let id = self.slots.len();
        self.by_name.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            value,
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.slots[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.id(name).map(|id| self.value(id))
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    /// Replaces a value while keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor2) -> Result<(), NumError> {
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            return Err(NumError::ShapeMismatch {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", slot.name, slot.value.shape(), value.shape()),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor2) {
        self.slots[id.0].grad.add_scaled(g, 1.0);
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// One bias-corrected Adam update over every parameter, then clears the
    /// gradient accumulators.
    pub fn optimize_step(&mut self, lr: f64, hyper: AdamHyper) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hyper.beta1.powi(t);
        let c2 = 1.0 - hyper.beta2.powi(t);
        for s in &mut self.slots {
            let values = s.value.as_mut_slice();
            let grads = s.grad.as_mut_slice();
            let ms = s.m.as_mut_slice();
            let vs = s.v.as_mut_slice();
            for i in 0..values.len() {
                let g = grads[i];
                ms[i] = hyper.beta1 * ms[i] + (1.0 - hyper.beta1) * g;
                vs[i] = hyper.beta2 * vs[i] + (1.0 - hyper.beta2) * g * g;
                let m_hat = ms[i] / c1;
                let v_hat = vs[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
                grads[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::zeros(1, 1)).unwrap();
        assert!(matches!(p.insert("w", Tensor2::zeros(2, 2)), Err(NumError::DuplicateParam(_))));
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::new();
        let id = p.insert("w", Tensor2::from_rows(&[[1.5, -2.0]]).unwrap()).unwrap();
        p.optimize_step(0.1, AdamHyper::default());
        assert_eq!(p.value(id).as_slice(), &[1.5, -2.0]);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamSet::new();
        let id = p.insert("p", Tensor2::scalar(1.0)).unwrap();
        p.accumulate_grad(id, &Tensor2::scalar(1.0));
        p.optimize_step(0.1, AdamHyper::default());
        // m̂ = g, v̂ = g², so the update is lr * g / (|g| + eps)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.value(id).get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(p.grad(id).get(0, 0), 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamSet::new();
        let id = p.insert("p", Tensor2::scalar(0.0)).unwrap();
        for _ in 0..200 {
            let x = p.value(id).get(0, 0);
            p.accumulate_grad(id, &Tensor2::scalar(2.0 * (x - 3.0)));
            p.optimize_step(0.1, AdamHyper::default());
        }
        assert!((p.value(id).get(0, 0) - 3.0).abs() < 1e-2);
    }
}
