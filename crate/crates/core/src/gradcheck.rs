//! Self-verification: every analytic gradient in the pipeline against central
//! differences on small random instances.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Sample;
use crate::dsp::Spectrogram;
use crate::encoders::{init_params, Encoder, EncoderConfig};
use crate::error::Result;
use crate::numcore::{
    dot, finite_diff_multi_step, grad, FnObjective, Objective, ParamVector, Rng, Tensor,
};
use crate::train::{Batch, BatchObjective, LossKind, PoolPlan, RelationMatrix};

pub const TOLERANCE: f64 = 1e-4;
pub const STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
pub const DEFAULT_SEEDS: usize = 10;

const BATCH: usize = 3;
const FRAMES: usize = 5;

/// Worst relative error of one component across all checked seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub seeds: usize,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    Contrastive,
    Itr,
    ItrIntra,
    ItrInter,
    Full,
    Visual,
    Audio,
}

impl Component {
    const ALL: [Component; 7] = [
        Component::Contrastive,
        Component::Itr,
        Component::ItrIntra,
        Component::ItrInter,
        Component::Full,
        Component::Visual,
        Component::Audio,
    ];

    fn name(self) -> &'static str {
        match self {
            Component::Contrastive => "contrastive-loss",
            Component::Itr => "iterative-loss/itr",
            Component::ItrIntra => "iterative-loss/itr-intra",
            Component::ItrInter => "iterative-loss/itr-inter",
            Component::Full => "iterative-loss/full",
            Component::Visual => "visual-encoder",
            Component::Audio => "audio-encoder",
        }
    }
}

pub fn small_encoder_config() -> EncoderConfig {
    EncoderConfig {
        image_height: 8,
        image_width: 8,
        channels: 3,
        grid_rows: 2,
        grid_cols: 2,
        hidden: 5,
        embed_dim: 4,
        mel_bins: 6,
        ..EncoderConfig::default()
    }
}

fn random_sample(cfg: &EncoderConfig, id: u64, rng: &mut Rng) -> Result<Sample> {
    let n = cfg.image_height * cfg.image_width * cfg.channels;
    let image = Tensor::new(
        vec![cfg.image_height, cfg.image_width, cfg.channels],
        (0..n).map(|_| rng.draw_uniform()).collect(),
    )?;
    let lms = Tensor::new(
        vec![cfg.mel_bins, FRAMES],
        (0..cfg.mel_bins * FRAMES)
            .map(|_| 1.0 + 2.5 * rng.draw_normal())
            .collect(),
    )?;
    Ok(Sample {
        id,
        image,
        lms: Spectrogram {
            values: lms,
            mel_bins: cfg.mel_bins,
            hop_seconds: 0.02,
            window_seconds: 0.04,
        },
        sounding_boxes: Vec::new(),
        sounding_classes: Vec::new(),
    })
}

/// Random non-empty positive subset; the negative side is its complement.
/// Instance 0 never gets negatives so the missing-`v⁻` path is covered.
fn random_plans(m: usize, intra: bool, rng: &mut Rng) -> Result<Vec<PoolPlan>> {
    (0..BATCH)
        .map(|i| {
            let size = 1 + rng.draw_index(m - 1);
            let mut positive = rng.choose_without_replacement(m, size)?;
            positive.sort_unstable();
            let rest: Vec<usize> = (0..m).filter(|p| !positive.contains(p)).collect();
            let negative = (intra && i > 0).then_some(rest);
            Ok(PoolPlan { positive, negative })
        })
        .collect()
}

fn linked_relation() -> Result<RelationMatrix> {
    RelationMatrix::from_rows(&[
        vec![true, true, false],
        vec![true, true, false],
        vec![false, false, true],
    ])
}

/// Checks one component at one seed and returns its worst relative error.
/// `corrupt` doubles the largest analytic gradient coordinate first.
fn check(component: Component, seed: u64, corrupt: bool) -> Result<f64> {
    let mut rng = Rng::derive(seed, &[component as u64]);
    let encoder = Encoder::new(small_encoder_config())?;
    let params = init_params(&encoder.cfg, &mut rng)?;
    let samples: Vec<Sample> = (0..BATCH as u64)
        .map(|id| random_sample(&encoder.cfg, id, &mut rng))
        .collect::<Result<_>>()?;
    let batch = Batch::new(samples.iter().collect())?;
    let m = encoder.cfg.num_patches();
    let kind = |intra: bool, inter: bool, rng: &mut Rng| -> Result<LossKind> {
        Ok(LossKind::Iterative {
            plans: random_plans(m, intra, rng)?,
            relation: if inter {
                linked_relation()?
            } else {
                RelationMatrix::identity(BATCH)
            },
        })
    };
    let loss_kind = match component {
        Component::Contrastive => Some(LossKind::Contrastive),
        Component::Itr => Some(kind(false, false, &mut rng)?),
        Component::ItrIntra => Some(kind(true, false, &mut rng)?),
        Component::ItrInter => Some(kind(false, true, &mut rng)?),
        Component::Full => Some(kind(true, true, &mut rng)?),
        Component::Visual | Component::Audio => None,
    };
    match loss_kind {
        Some(kind) => {
            let objective = BatchObjective {
                encoder: &encoder,
                batch: &batch,
                tau: 0.1,
                kind,
                counters: None,
            };
            run(&objective, &params, corrupt)
        }
        None if component == Component::Visual => {
            let len = m * encoder.cfg.embed_dim;
            let weights: Vec<f64> = (0..len).map(|_| rng.draw_normal()).collect();
            let image = &samples[0].image;
            let objective = FnObjective::new(
                |p: &ParamVector| Ok(dot(&encoder.visual_forward(p, image)?.features, &weights)),
                |p: &ParamVector| {
                    let fwd = encoder.visual_forward(p, image)?;
                    let mut g = p.zeros_like();
                    encoder.visual_backward(p, &fwd, &weights, &mut g);
                    Ok(g)
                },
            );
            run(&objective, &params, corrupt)
        }
        None => {
            let weights: Vec<f64> = (0..encoder.cfg.embed_dim)
                .map(|_| rng.draw_normal())
                .collect();
            let lms = &samples[0].lms;
            let objective = FnObjective::new(
                |p: &ParamVector| Ok(dot(encoder.audio_forward(p, lms)?.embedding(), &weights)),
                |p: &ParamVector| {
                    let fwd = encoder.audio_forward(p, lms)?;
                    let mut g = p.zeros_like();
                    encoder.audio_backward(p, &fwd, &weights, &mut g);
                    Ok(g)
                },
            );
            run(&objective, &params, corrupt)
        }
    }
}

fn run(objective: &dyn Objective, params: &ParamVector, corrupt: bool) -> Result<f64> {
    let mut analytic = grad(objective, params)?;
    if corrupt {
        let worst = (0..analytic.len())
            .max_by(|&a, &b| analytic.coord(a).abs().total_cmp(&analytic.coord(b).abs()))
            .expect("non-empty parameters");
        let v = analytic.coord(worst);
        analytic.set_coord(worst, 2.0 * v);
    }
    Ok(finite_diff_multi_step(objective, params, &analytic, &STEPS, TOLERANCE)?.max_rel_error())
}

/// Runs every component on seeds `first_seed .. first_seed + seeds`.
pub fn gradcheck(first_seed: u64, seeds: usize, corrupt: bool) -> Result<Vec<ComponentReport>> {
    let jobs: Vec<(Component, u64)> = Component::ALL
        .into_iter()
        .flat_map(|c| (0..seeds as u64).map(move |s| (c, first_seed + s)))
        .collect();
    let errors = jobs
        .par_iter()
        .map(|&(c, s)| check(c, s, corrupt))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Component::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| ComponentReport {
            name: c.name(),
            max_rel_error: errors[i * seeds..(i + 1) * seeds]
                .iter()
                .copied()
                .fold(0.0, f64::max),
            seeds,
        })
        .collect())
}
