//! Pseudo-labels from the previous-epoch snapshot and patch sampling for the
//! sounding / non-sounding pooled features.

use rayon::prelude::*;

use crate::dataset::Sample;
use crate::encoders::{phi, pool_subset, AudioEmbedding, Encoder, Snapshot, VisualFeatureMap};
use crate::error::{Error, Result};
use crate::localization::{minmax_normalize, response_map, ResponseMap};
use crate::numcore::Rng;

/// A batch of `k` prepared instances.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    samples: Vec<&'a Sample>,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("a batch needs at least one instance"));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[&'a Sample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabels {
    /// Flat patch indices with `R̃ > δv`.
    pub positive: Vec<usize>,
    /// Flat patch indices with `R̃ < δv`.
    pub negative: Vec<usize>,
    pub audio: AudioEmbedding,
    pub response: ResponseMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub instances: Vec<InstanceLabels>,
}

impl PseudoLabels {
    pub fn audio_vectors(&self) -> Vec<Vec<f64>> {
        self.instances
            .iter()
            .map(|l| l.audio.as_slice().to_vec())
            .collect()
    }
}

/// Strict split of a normalized map around `delta_v`; values equal to
/// `delta_v` land in neither set.
pub fn split_patches(normalized: &ResponseMap, delta_v: f64) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (p, &x) in normalized.values.data().iter().enumerate() {
        if x > delta_v {
            pos.push(p);
        } else if x < delta_v {
            neg.push(p);
        }
    }
    (pos, neg)
}

/// Encodes the batch with the frozen snapshot parameters.
pub fn compute_pseudo_labels(
    encoder: &Encoder,
    snapshot: &Snapshot,
    batch: &Batch,
    delta_v: f64,
) -> Result<PseudoLabels> {
    let params = snapshot.params();
    let instances = batch
        .samples()
        .par_iter()
        .map(|s| {
            let v = encoder.visual_encode(params, &s.image)?;
            let audio = encoder.audio_encode(params, &s.lms)?;
            let response = minmax_normalize(&response_map(&v, &audio)?)?;
            let (positive, negative) = split_patches(&response, delta_v);
            Ok(InstanceLabels {
                positive,
                negative,
                audio,
                response,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabels { instances })
}

/// At most `r` members of `set`, drawn without replacement, in ascending order.
pub fn sample_patches(set: &[usize], r: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if r == 0 {
        return Err(Error::invalid("sample count must be ≥ 1"));
    }
    if set.len() <= r {
        return Ok(set.to_vec());
    }
    let mut chosen: Vec<usize> = rng
        .choose_without_replacement(set.len(), r)?
        .into_iter()
        .map(|i| set[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Patches pooled into `v⁺`; an empty positive set falls back to every patch.
pub fn positive_plan(
    x_pos: &[usize],
    num_patches: usize,
    r: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if x_pos.is_empty() {
        return Ok((0..num_patches).collect());
    }
    sample_patches(x_pos, r, rng)
}

/// Patches pooled into `v⁻`, or `None` when there are no negatives.
pub fn negative_plan(x_neg: &[usize], r: usize, rng: &mut Rng) -> Result<Option<Vec<usize>>> {
    if x_neg.is_empty() {
        return Ok(None);
    }
    sample_patches(x_neg, r, rng).map(Some)
}

pub fn sample_sounding_feature(
    v: &VisualFeatureMap,
    x_pos: &[usize],
    r: usize,
    renorm: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if x_pos.is_empty() {
        return Ok(phi(v, renorm));
    }
    let chosen = positive_plan(x_pos, v.num_patches(), r, rng)?;
    Ok(pool_subset(v.values.data(), v.dim(), &chosen, renorm)?
        .vector()
        .to_vec())
}

pub fn sample_nonsounding_feature(
    v: &VisualFeatureMap,
    x_neg: &[usize],
    r: usize,
    renorm: bool,
    rng: &mut Rng,
) -> Result<Option<Vec<f64>>> {
    match negative_plan(x_neg, r, rng)? {
        None => Ok(None),
        Some(chosen) => Ok(Some(
            pool_subset(v.values.data(), v.dim(), &chosen, renorm)?
                .vector()
                .to_vec(),
        )),
    }
}
