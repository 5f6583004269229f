use crate::error::{Error, Result};
use crate::model::FusionNet;
use crate::nn::Forward;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-4;

pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Contract(format!(
            "label {bad} is out of range for {num_classes} classes"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Contract("no labels".into()));
    }
    Ok(Tensor::from_fn(vec![labels.len(), num_classes], |i| {
        if labels[i / num_classes] == i % num_classes {
            T::one()
        } else {
            T::zero()
        }
    }))
}

fn check_inputs<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if probs.rank() != 2 || probs.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    let k = probs.shape()[1];
    for (r, row) in targets.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != k {
            return Err(Error::Contract(format!("target row {r} is not one-hot")));
        }
    }
    for (r, row) in probs.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Contract(format!(
                "probability row {r} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `-Σ target · log(max(prob, 1e-12))`.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    check_inputs(probs, targets)?;
    let batch = probs.shape()[0] as f64;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| -t.as_f64() * p.as_f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / batch)
}

/// Graph version of [`cross_entropy_loss`], differentiable in `probs`.
pub fn cross_entropy<T: Scalar>(graph: &mut Graph<T>, probs: Var, targets: &Tensor<T>) -> Result<Var> {
    check_inputs(graph.value(probs), targets)?;
    let batch = targets.shape()[0] as f64;
    let t = graph.constant(targets.clone());
    let p = graph.clamp_min(probs, PROB_FLOOR);
    let logp = graph.log(p);
    let picked = graph.mul(logp, t)?;
    let total = graph.sum(picked);
    Ok(graph.scale(total, -1.0 / batch))
}

/// `Σ 0.016·Σw² + 0.006·mean_batch Σa² + 0.006·Σ|b|` over the first MLP
/// layer of every stream. Needs a forward pass on `ctx` for the activity
/// term.
pub fn regularization_penalty<T: Scalar>(net: &FusionNet, ctx: &mut Forward<'_, T>) -> Result<Var> {
    net.penalty(ctx)
}
