//! Training objectives: Wasserstein terms, gradient penalty, perceptual,
//! L1 reconstruction and total-variation losses, and their weighted total.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::speech_encoder::SpeechEncoder;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l1: f64,
    pub tv: f64,
    pub gp: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 150.0, tv: 120.0, gp: 10.0, perceptual: 70.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("l1", self.l1), ("tv", self.tv), ("gp", self.gp), ("perceptual", self.perceptual)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be a finite non-negative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv: f64,
    pub gp: f64,
    pub perceptual: f64,
    pub l1: f64,
    pub tv: f64,
}

/// Named loss values together with their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub adv: f64,
    pub gp: f64,
    pub perceptual: f64,
    pub l1: f64,
    pub tv: f64,
    pub total: f64,
}

fn check_finite(terms: &LossTerms) -> Result<()> {
    let all = [terms.adv, terms.gp, terms.perceptual, terms.l1, terms.tv];
    if all.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite loss term in {terms:?}")))
    }
}

/// Generator-side total; the gradient penalty is reported but not added.
pub fn total_generator_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossBundle> {
    weights.validate()?;
    check_finite(terms)?;
    let total = terms.adv + weights.l1 * terms.l1 + weights.tv * terms.tv + weights.perceptual * terms.perceptual;
    Ok(LossBundle { adv: terms.adv, gp: terms.gp, perceptual: terms.perceptual, l1: terms.l1, tv: terms.tv, total })
}

/// Critic-side total: adversarial objective plus weighted gradient penalty.
pub fn total_critic_loss(adv: f64, gp: f64, weights: &LossWeights) -> Result<LossBundle> {
    weights.validate()?;
    let terms = LossTerms { adv, gp, ..LossTerms::default() };
    check_finite(&terms)?;
    Ok(LossBundle { adv, gp, total: adv + weights.gp * gp, ..LossBundle::default() })
}

impl LossBundle {
    /// Recomputes the total from the parts (`critic` selects which side's formula).
    pub fn recomputed_total(&self, weights: &LossWeights, critic: bool) -> f64 {
        if critic {
            self.adv + weights.gp * self.gp
        } else {
            self.adv + weights.l1 * self.l1 + weights.tv * self.tv + weights.perceptual * self.perceptual
        }
    }
}

/// `(critic_objective, generator_objective)` from `[B]` score vectors.
pub fn adversarial_terms<'g>(score_real: Var<'g>, score_fake: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
    if score_real.value().is_empty() || score_fake.value().is_empty() {
        return Err(Error::InvalidInput("adversarial terms need at least one score".into()));
    }
    let critic = score_fake.mean() - score_real.mean();
    let generator = -score_fake.mean();
    Ok((critic, generator))
}

/// Mean over the batch of `(||grad D(x_hat)|| - 1)^2` at random interpolates.
///
/// `real` and `fake` are `[B, L]`; `critic` maps such a batch to `[B]` scores.
/// The returned value stays differentiable with respect to whatever `critic` closes over.
pub fn gradient_penalty<'g>(
    g: &'g Graph,
    critic: impl Fn(Var<'g>) -> Var<'g>,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut impl Rng,
) -> Result<Var<'g>> {
    if real.shape() != fake.shape() || real.rank() != 2 {
        return Err(Error::InvalidInput(format!(
            "gradient penalty needs equal [B, L] batches, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let (b, len) = (real.shape()[0], real.shape()[1]);
    if b == 0 {
        return Err(Error::InvalidInput("gradient penalty needs a non-empty batch".into()));
    }
    let eps: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let mixed = Tensor::from_fn([b, len], |i| {
        let e = eps[i / len];
        e * real.data()[i] + (1.0 - e) * fake.data()[i]
    });
    Ok(penalty_at(g, critic, mixed))
}

/// Gradient penalty evaluated at fixed points `x_hat`.
pub fn penalty_at<'g>(g: &'g Graph, critic: impl Fn(Var<'g>) -> Var<'g>, x_hat: Tensor) -> Var<'g> {
    let x = g.leaf(x_hat);
    let scores = critic(x);
    // Rows are scored independently, so the gradient of the sum holds each row's own gradient.
    let grad = g.grad(scores.sum(), &[x], true).remove(0);
    let grad = grad.unwrap_or_else(|| g.constant(Tensor::zeros(x.shape())));
    let norms = grad.square().sum_rows().add_scalar(1e-16).sqrt();
    norms.add_scalar(-1.0).square().mean()
}

/// Mean absolute difference between the features of `real` and `fake` (`[B, L]`).
pub fn perceptual_loss<'g>(phi: &dyn SpeechEncoder, real: Var<'g>, fake: Var<'g>) -> Result<Var<'g>> {
    if real.shape() != fake.shape() {
        return Err(Error::InvalidInput(format!(
            "perceptual loss length mismatch: {:?} vs {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    Ok((phi.encode(real) - phi.encode(fake)).abs().mean())
}

pub fn l1_loss<'g>(real: Var<'g>, fake: Var<'g>) -> Result<Var<'g>> {
    if real.shape() != fake.shape() {
        return Err(Error::InvalidInput(format!("L1 length mismatch: {:?} vs {:?}", real.shape(), fake.shape())));
    }
    Ok((real - fake).abs().mean())
}

/// `(1/T) * sum_t |x[t+1] - x[t]|` along the last axis, averaged over leading axes.
pub fn tv_loss<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    let t = *shape.last().unwrap_or(&0);
    if t < 2 {
        return Err(Error::InvalidInput(format!("total variation needs at least 2 samples, got {t}")));
    }
    let axis = shape.len() - 1;
    let rows = x.value().len() / t;
    let diff = x.narrow(axis, 1, t - 1) - x.narrow(axis, 0, t - 1);
    Ok(diff.abs().sum().scale(1.0 / (t * rows) as f64))
}
