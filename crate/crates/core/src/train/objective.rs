//! A batch loss as a function of the current encoder parameters, with its
//! gradient assembled from the loss-level gradients and encoder backprop.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::loss::{contrastive_loss_grad, iterative_loss_grad, LossValue, RelationMatrix};
use super::pseudo::Batch;
use crate::encoders::{pool_subset, AudioForward, Encoder, Pooled, VisualForward};
use crate::error::{Error, Result};
use crate::numcore::{Objective, ParamVector};

/// Which patches feed `v⁺_i` and `v⁻_i` for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPlan {
    pub positive: Vec<usize>,
    pub negative: Option<Vec<usize>>,
}

impl PoolPlan {
    pub fn all(num_patches: usize) -> Self {
        Self {
            positive: (0..num_patches).collect(),
            negative: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    Contrastive,
    Iterative {
        plans: Vec<PoolPlan>,
        relation: RelationMatrix,
    },
}

/// How many times each loss has been evaluated.
#[derive(Debug, Default)]
pub struct LossCounters {
    contrastive: AtomicU64,
    iterative: AtomicU64,
}

impl LossCounters {
    pub fn contrastive(&self) -> u64 {
        self.contrastive.load(Ordering::Relaxed)
    }

    pub fn iterative(&self) -> u64 {
        self.iterative.load(Ordering::Relaxed)
    }
}

pub struct BatchObjective<'a> {
    pub encoder: &'a Encoder,
    pub batch: &'a Batch<'a>,
    pub tau: f64,
    pub kind: LossKind,
    pub counters: Option<&'a LossCounters>,
}

struct Forward {
    visual: VisualForward,
    audio: AudioForward,
}

impl BatchObjective<'_> {
    fn forward(&self, params: &ParamVector) -> Result<Vec<Forward>> {
        self.batch
            .samples()
            .par_iter()
            .map(|s| {
                Ok(Forward {
                    visual: self.encoder.visual_forward(params, &s.image)?,
                    audio: self.encoder.audio_forward(params, &s.lms)?,
                })
            })
            .collect()
    }

    fn pool(&self, fwd: &[Forward]) -> Result<(Vec<Pooled>, Vec<Option<Pooled>>)> {
        let cfg = &self.encoder.cfg;
        let (d, renorm) = (cfg.embed_dim, cfg.renorm_pooled);
        let all = PoolPlan::all(cfg.num_patches());
        let plans: Vec<&PoolPlan> = match &self.kind {
            LossKind::Contrastive => vec![&all; fwd.len()],
            LossKind::Iterative { plans, .. } => {
                if plans.len() != fwd.len() {
                    return Err(Error::invalid(format!(
                        "{} pool plans for {} instances",
                        plans.len(),
                        fwd.len()
                    )));
                }
                plans.iter().collect()
            }
        };
        let mut plus = Vec::with_capacity(fwd.len());
        let mut minus = Vec::with_capacity(fwd.len());
        for (f, plan) in fwd.iter().zip(plans) {
            plus.push(pool_subset(&f.visual.features, d, &plan.positive, renorm)?);
            minus.push(match &plan.negative {
                Some(idx) => Some(pool_subset(&f.visual.features, d, idx, renorm)?),
                None => None,
            });
        }
        Ok((plus, minus))
    }

    /// Loss value, per-instance terms and (optionally) the parameter gradient.
    pub fn evaluate(
        &self,
        params: &ParamVector,
        with_grad: bool,
    ) -> Result<(LossValue, Option<ParamVector>)> {
        let fwd = self.forward(params)?;
        let (plus, minus) = self.pool(&fwd)?;
        let vp: Vec<Vec<f64>> = plus.iter().map(|p| p.vector().to_vec()).collect();
        let audio: Vec<Vec<f64>> = fwd.iter().map(|f| f.audio.embedding().to_vec()).collect();
        let (loss, d_plus, d_minus, d_audio) = match &self.kind {
            LossKind::Contrastive => {
                if let Some(c) = self.counters {
                    c.contrastive.fetch_add(1, Ordering::Relaxed);
                }
                let g = contrastive_loss_grad(&vp, &audio, self.tau)?;
                (g.loss, g.d_visual, vec![None; fwd.len()], g.d_audio)
            }
            LossKind::Iterative { relation, .. } => {
                if let Some(c) = self.counters {
                    c.iterative.fetch_add(1, Ordering::Relaxed);
                }
                let vm: Vec<Option<Vec<f64>>> = minus
                    .iter()
                    .map(|m| m.as_ref().map(|p| p.vector().to_vec()))
                    .collect();
                let g = iterative_loss_grad(&vp, &vm, &audio, relation, self.tau)?;
                (g.loss, g.d_plus, g.d_minus, g.d_audio)
            }
        };
        if !with_grad {
            return Ok((loss, None));
        }
        let m = self.encoder.cfg.num_patches();
        let d = self.encoder.cfg.embed_dim;
        let per_instance = (0..fwd.len())
            .into_par_iter()
            .map(|i| {
                let mut g = params.zeros_like();
                let mut d_features = vec![0.0; m * d];
                plus[i].backward(&d_plus[i], &mut d_features);
                if let (Some(p), Some(dm)) = (&minus[i], &d_minus[i]) {
                    p.backward(dm, &mut d_features);
                }
                self.encoder
                    .visual_backward(params, &fwd[i].visual, &d_features, &mut g);
                self.encoder
                    .audio_backward(params, &fwd[i].audio, &d_audio[i], &mut g);
                g
            })
            .collect::<Vec<_>>();
        let mut total = params.zeros_like();
        for g in &per_instance {
            total.add_assign(g)?;
        }
        Ok((loss, Some(total)))
    }
}

impl Objective for BatchObjective<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params, false)?.0.value)
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let (loss, g) = self.evaluate(params, true)?;
        Ok((loss.value, g.expect("gradient requested")))
    }
}
