//! Corpus instances prepared for the encoders: the log-mel spectrogram is
//! computed once per instance and kept alongside the image and ground truth.

use rayon::prelude::*;

use crate::corpus::{BoundingBox, CorpusInstance};
use crate::dsp::{LogMel, LogMelConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Tensor,
    pub lms: Spectrogram,
    pub sounding_boxes: Vec<BoundingBox>,
    pub sounding_classes: Vec<usize>,
}

pub fn prepare(instances: &[CorpusInstance], cfg: &LogMelConfig) -> Result<Vec<Sample>> {
    let Some(first) = instances.first() else {
        return Ok(Vec::new());
    };
    let front = LogMel::new(*cfg, first.waveform.sample_rate())?;
    instances
        .par_iter()
        .map(|inst| {
            Ok(Sample {
                id: inst.instance_id,
                image: inst.image.clone(),
                lms: front.compute(&inst.waveform)?,
                sounding_boxes: inst.sounding_boxes(),
                sounding_classes: inst.sounding_classes(),
            })
        })
        .collect()
}

pub fn find(samples: &[Sample], id: u64) -> Result<&Sample> {
    samples
        .iter()
        .find(|s| s.id == id)
        .ok_or(Error::UnknownInstance(id))
}
