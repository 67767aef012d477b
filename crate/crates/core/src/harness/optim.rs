use crate::error::{shape_err, Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::Scalar;

/// `-log softmax(logits)[label]` for one sample; `label` counts from 0.
pub fn cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<S> {
    if label >= logits.len() {
        return Err(Error::OutOfRange(format!(
            "label {label} with {} classes",
            logits.len()
        )));
    }
    // the arg-max term contributes exactly 1 to the partition sum, so the
    // rest goes through ln_1p and confident predictions keep their digits
    let top = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let m = logits[top];
    let rest = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .fold(S::zero(), |acc, (_, &z)| acc + (z - m).exp());
    Ok((m - logits[label]) + rest.ln_1p())
}

/// One heavy-ball step on a single tensor:
/// `v = momentum·v + grad + weight_decay·param`, then `param -= lr·v`.
pub fn sgd_update<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    velocity: &mut Tensor<S>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(shape_err!(
            "sgd step: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        ));
    }
    let (lr, mu, wd) = (S::lit(lr), S::lit(momentum), S::lit(weight_decay));
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a whole store. Biases and norm affine parameters are
/// exempt from weight decay.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(store: &ParamStore<S>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<S>] {
        &self.velocity
    }

    /// Applies the accumulated gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(shape_err!(
                "optimizer tracks {} tensors, store has {}",
                self.velocity.len(),
                store.len()
            ));
        }
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            if !p.requires_grad {
                continue;
            }
            let wd = if p.kind.decays() { self.weight_decay } else { 0.0 };
            sgd_update(&mut p.value, &p.grad, v, lr, self.momentum, wd)?;
        }
        Ok(())
    }
}
