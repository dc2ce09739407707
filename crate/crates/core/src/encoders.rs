//! Patch-MLP visual encoder, frame-MLP audio encoder, φ pooling and
//! parameter checkpoints.
//!
//! The visual encoder cuts the image into a `grid_rows × grid_cols` grid and
//! maps every patch through the same `patch → hidden (tanh) → d` perceptron,
//! giving a feature map `V` with one `d`-vector per patch. The audio encoder
//! applies a `mel → hidden (tanh) → d` perceptron to each spectrogram frame,
//! mean-pools over frames and L2-normalizes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::json::{read_json, write_json};
use crate::numcore::avic::{read_tensor, write_tensor};
use crate::numcore::ops::{
    dense_backward, dense_forward, l2_normalize, l2_normalize_backward, mean_rows,
    mean_rows_backward, tanh_backward, tanh_forward, Normalized,
};
use crate::numcore::{dot, ParamVector, Rng, Tensor};

pub const VISUAL_W1: &str = "visual.w1";
pub const VISUAL_B1: &str = "visual.b1";
pub const VISUAL_W2: &str = "visual.w2";
pub const VISUAL_B2: &str = "visual.b2";
pub const AUDIO_W1: &str = "audio.w1";
pub const AUDIO_B1: &str = "audio.b1";
pub const AUDIO_W2: &str = "audio.w2";
pub const AUDIO_B2: &str = "audio.b2";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub mel_bins: usize,
    /// Re-normalize φ's pooled vector to unit length.
    pub renorm_pooled: bool,
    /// Pixels enter the visual MLP as `(x − pixel_offset) / pixel_scale`.
    pub pixel_offset: f64,
    pub pixel_scale: f64,
    /// Log-mel inputs enter the audio MLP as `(x − lms_offset) / lms_scale`.
    pub lms_offset: f64,
    pub lms_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            channels: 3,
            grid_rows: 8,
            grid_cols: 8,
            hidden: 32,
            embed_dim: 16,
            mel_bins: 64,
            renorm_pooled: true,
            pixel_offset: 0.5,
            pixel_scale: 0.15,
            lms_offset: 1.0,
            lms_scale: 2.5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_height,
            self.image_width,
            self.channels,
            self.grid_rows,
            self.grid_cols,
            self.hidden,
            self.embed_dim,
            self.mel_bins,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if !self.image_height.is_multiple_of(self.grid_rows)
            || !self.image_width.is_multiple_of(self.grid_cols)
        {
            return Err(Error::invalid(format!(
                "image {}x{} is not divisible into a {}x{} grid",
                self.image_height, self.image_width, self.grid_rows, self.grid_cols
            )));
        }
        if !(self.lms_scale > 0.0) || !(self.pixel_scale > 0.0) {
            return Err(Error::invalid("pixel_scale and lms_scale must be positive"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_height(&self) -> usize {
        self.image_height / self.grid_rows
    }

    pub fn patch_width(&self) -> usize {
        self.image_width / self.grid_cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_height() * self.patch_width() * self.channels
    }
}

/// Per-patch features `grid_rows × grid_cols × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureMap {
    pub values: Tensor,
    pub source_size: (usize, usize),
}

impl VisualFeatureMap {
    pub fn grid(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn num_patches(&self) -> usize {
        self.values.shape()[0] * self.values.shape()[1]
    }

    /// Feature of patch `p` in row-major grid order.
    pub fn patch(&self, p: usize) -> &[f64] {
        let d = self.dim();
        &self.values.data()[p * d..(p + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding {
    pub values: Tensor,
    pub unit_norm: bool,
}

impl AudioEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        self.values.data()
    }
}

/// Frozen parameter copy taken at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    params: ParamVector,
    epoch: usize,
}

impl Snapshot {
    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

pub fn take_snapshot(params: &ParamVector, epoch: usize) -> Snapshot {
    Snapshot {
        params: params.clone(),
        epoch,
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, rounded to `f32`.
pub fn init_params(cfg: &EncoderConfig, rng: &mut Rng) -> Result<ParamVector> {
    cfg.validate()?;
    let mut p = ParamVector::new();
    let mut layer =
        |p: &mut ParamVector, w: &str, b: &str, fan_in: usize, fan_out: usize| -> Result<()> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.draw_range(-bound, bound) as f32 as f64)
                .collect();
            p.push(w, Tensor::new(vec![fan_in, fan_out], data)?)?;
            p.push(b, Tensor::zeros(&[fan_out]))
        };
    layer(&mut p, VISUAL_W1, VISUAL_B1, cfg.patch_dim(), cfg.hidden)?;
    layer(&mut p, VISUAL_W2, VISUAL_B2, cfg.hidden, cfg.embed_dim)?;
    layer(&mut p, AUDIO_W1, AUDIO_B1, cfg.mel_bins, cfg.hidden)?;
    layer(&mut p, AUDIO_W2, AUDIO_B2, cfg.hidden, cfg.embed_dim)?;
    Ok(p)
}

/// Segment names and shapes expected for `cfg`, in canonical order.
pub fn param_layout(cfg: &EncoderConfig) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        (VISUAL_W1, vec![cfg.patch_dim(), cfg.hidden]),
        (VISUAL_B1, vec![cfg.hidden]),
        (VISUAL_W2, vec![cfg.hidden, cfg.embed_dim]),
        (VISUAL_B2, vec![cfg.embed_dim]),
        (AUDIO_W1, vec![cfg.mel_bins, cfg.hidden]),
        (AUDIO_B1, vec![cfg.hidden]),
        (AUDIO_W2, vec![cfg.hidden, cfg.embed_dim]),
        (AUDIO_B2, vec![cfg.embed_dim]),
    ]
}

/// Intermediate values of a visual forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct VisualForward {
    patches: Vec<f64>,
    hidden: Vec<f64>,
    /// `M × d`, row-major over grid patches.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AudioForward {
    inputs: Vec<f64>,
    hidden: Vec<f64>,
    frames: usize,
    pooled: Normalized,
}

impl AudioForward {
    pub fn embedding(&self) -> &[f64] {
        &self.pooled.unit
    }
}

/// Both encoders under one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let c = &self.cfg;
        let expected = [c.image_height, c.image_width, c.channels];
        if image.shape() != expected {
            return Err(Error::Shape {
                op: "visual_encode",
                expected: expected.to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Rearranges the image into `M × patch_dim` rows, standardized.
    fn extract_patches(&self, image: &Tensor) -> Vec<f64> {
        let c = &self.cfg;
        let (ph, pw, ch) = (c.patch_height(), c.patch_width(), c.channels);
        let px = image.data();
        let (off, scale) = (c.pixel_offset, c.pixel_scale);
        let mut out = Vec::with_capacity(c.num_patches() * c.patch_dim());
        for gr in 0..c.grid_rows {
            for gc in 0..c.grid_cols {
                for r in gr * ph..(gr + 1) * ph {
                    let start = (r * c.image_width + gc * pw) * ch;
                    out.extend(px[start..start + pw * ch].iter().map(|v| (v - off) / scale));
                }
            }
        }
        out
    }

    pub fn visual_forward(&self, params: &ParamVector, image: &Tensor) -> Result<VisualForward> {
        self.check_image(image)?;
        let m = self.cfg.num_patches();
        let patches = self.extract_patches(image);
        let mut hidden = dense_forward(&patches, m, params.seg(VISUAL_W1), params.seg(VISUAL_B1));
        tanh_forward(&mut hidden);
        let features = dense_forward(&hidden, m, params.seg(VISUAL_W2), params.seg(VISUAL_B2));
        Ok(VisualForward {
            patches,
            hidden,
            features,
        })
    }

    /// Accumulates visual parameter gradients given `dL/dV` (`M × d`).
    pub fn visual_backward(
        &self,
        params: &ParamVector,
        fwd: &VisualForward,
        d_features: &[f64],
        grads: &mut ParamVector,
    ) {
        let m = self.cfg.num_patches();
        let (dw2, db2) = grads.seg_pair_mut(VISUAL_W2, VISUAL_B2);
        let dh = dense_backward(
            &fwd.hidden,
            m,
            params.seg(VISUAL_W2),
            d_features,
            dw2,
            db2,
            true,
        )
        .expect("dx requested");
        let dz = tanh_backward(&fwd.hidden, &dh);
        let (dw1, db1) = grads.seg_pair_mut(VISUAL_W1, VISUAL_B1);
        dense_backward(&fwd.patches, m, params.seg(VISUAL_W1), &dz, dw1, db1, false);
    }

    pub fn visual_encode(&self, params: &ParamVector, image: &Tensor) -> Result<VisualFeatureMap> {
        let fwd = self.visual_forward(params, image)?;
        let c = &self.cfg;
        Ok(VisualFeatureMap {
            values: Tensor::new(vec![c.grid_rows, c.grid_cols, c.embed_dim], fwd.features)?,
            source_size: (c.image_height, c.image_width),
        })
    }

    /// Frames as rows, standardized.
    fn audio_inputs(&self, lms: &Spectrogram) -> Result<(Vec<f64>, usize)> {
        let shape = lms.values.shape();
        if shape.len() != 2 || shape[0] != self.cfg.mel_bins {
            return Err(Error::Shape {
                op: "audio_encode",
                expected: vec![self.cfg.mel_bins, 0],
                actual: shape.to_vec(),
            });
        }
        let t = lms.values.transpose()?;
        let (off, scale) = (self.cfg.lms_offset, self.cfg.lms_scale);
        Ok((
            t.data().iter().map(|v| (v - off) / scale).collect(),
            shape[1],
        ))
    }

    pub fn audio_forward(&self, params: &ParamVector, lms: &Spectrogram) -> Result<AudioForward> {
        let (inputs, frames) = self.audio_inputs(lms)?;
        let mut hidden = dense_forward(&inputs, frames, params.seg(AUDIO_W1), params.seg(AUDIO_B1));
        tanh_forward(&mut hidden);
        let out = dense_forward(&hidden, frames, params.seg(AUDIO_W2), params.seg(AUDIO_B2));
        let pooled = l2_normalize(&mean_rows(&out, frames, self.cfg.embed_dim));
        Ok(AudioForward {
            inputs,
            hidden,
            frames,
            pooled,
        })
    }

    /// Accumulates audio parameter gradients given `dL/da` for the unit embedding.
    pub fn audio_backward(
        &self,
        params: &ParamVector,
        fwd: &AudioForward,
        d_embedding: &[f64],
        grads: &mut ParamVector,
    ) {
        let d_mean = l2_normalize_backward(&fwd.pooled, d_embedding);
        let d_out = mean_rows_backward(&d_mean, fwd.frames);
        let (dw2, db2) = grads.seg_pair_mut(AUDIO_W2, AUDIO_B2);
        let dh = dense_backward(
            &fwd.hidden,
            fwd.frames,
            params.seg(AUDIO_W2),
            &d_out,
            dw2,
            db2,
            true,
        )
        .expect("dx requested");
        let dz = tanh_backward(&fwd.hidden, &dh);
        let (dw1, db1) = grads.seg_pair_mut(AUDIO_W1, AUDIO_B1);
        dense_backward(
            &fwd.inputs,
            fwd.frames,
            params.seg(AUDIO_W1),
            &dz,
            dw1,
            db1,
            false,
        );
    }

    pub fn audio_encode(&self, params: &ParamVector, lms: &Spectrogram) -> Result<AudioEmbedding> {
        let fwd = self.audio_forward(params, lms)?;
        Ok(AudioEmbedding {
            unit_norm: !fwd.pooled.is_degenerate(),
            values: Tensor::from_vec(fwd.pooled.unit)?,
        })
    }
}

/// φ over a subset of patches, with the cache needed for backprop.
#[derive(Debug, Clone)]
pub struct Pooled {
    indices: Vec<usize>,
    units: Vec<Normalized>,
    mean: Vec<f64>,
    renorm: Option<Normalized>,
}

impl Pooled {
    pub fn vector(&self) -> &[f64] {
        match &self.renorm {
            Some(n) => &n.unit,
            None => &self.mean,
        }
    }

    /// The pooled average vanished (e.g. antipodal patches cancel).
    pub fn is_degenerate(&self) -> bool {
        self.mean.iter().all(|&x| x == 0.0)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Adds `dL/dV` rows for the pooled patches into `d_features` (`M × d`).
    pub fn backward(&self, d_out: &[f64], d_features: &mut [f64]) {
        let d = d_out.len();
        let d_mean = match &self.renorm {
            Some(n) => l2_normalize_backward(n, d_out),
            None => d_out.to_vec(),
        };
        let inv = 1.0 / self.indices.len() as f64;
        let du: Vec<f64> = d_mean.iter().map(|x| x * inv).collect();
        for (&p, unit) in self.indices.iter().zip(&self.units) {
            let dv = l2_normalize_backward(unit, &du);
            for (acc, g) in d_features[p * d..(p + 1) * d].iter_mut().zip(dv) {
                *acc += g;
            }
        }
    }
}

/// φ restricted to `indices` of an `M × d` feature matrix: L2-normalize each
/// selected patch, average, then (optionally) L2-normalize the average.
pub fn pool_subset(
    features: &[f64],
    dim: usize,
    indices: &[usize],
    renorm: bool,
) -> Result<Pooled> {
    if indices.is_empty() {
        return Err(Error::invalid("phi_subset needs at least one patch index"));
    }
    let m = features.len() / dim;
    if let Some(&bad) = indices.iter().find(|&&p| p >= m) {
        return Err(Error::invalid(format!(
            "patch index {bad} out of range for {m} patches"
        )));
    }
    let units: Vec<Normalized> = indices
        .iter()
        .map(|&p| l2_normalize(&features[p * dim..(p + 1) * dim]))
        .collect();
    let mut mean = vec![0.0; dim];
    for u in &units {
        for (a, x) in mean.iter_mut().zip(&u.unit) {
            *a += x;
        }
    }
    let inv = 1.0 / indices.len() as f64;
    mean.iter_mut().for_each(|x| *x *= inv);
    let renorm = renorm.then(|| l2_normalize(&mean));
    Ok(Pooled {
        indices: indices.to_vec(),
        units,
        mean,
        renorm,
    })
}

pub fn phi_subset(v: &VisualFeatureMap, indices: &[usize], renorm: bool) -> Result<Vec<f64>> {
    Ok(pool_subset(v.values.data(), v.dim(), indices, renorm)?
        .vector()
        .to_vec())
}

pub fn phi(v: &VisualFeatureMap, renorm: bool) -> Vec<f64> {
    let all: Vec<usize> = (0..v.num_patches()).collect();
    phi_subset(v, &all, renorm).expect("feature maps have at least one patch")
}

/// Cosine-style response `⟨v̂_p, a⟩` of every patch, row-major.
pub fn patch_responses(features: &[f64], dim: usize, audio: &[f64]) -> Vec<f64> {
    features
        .chunks_exact(dim)
        .map(|v| dot(&l2_normalize(v).unit, audio))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointIndex {
    epoch: usize,
    encoder: EncoderConfig,
    segments: BTreeMap<String, SegmentEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub encoder: EncoderConfig,
    /// Number of completed epochs.
    pub epoch: usize,
}

pub const CHECKPOINT_INDEX: &str = "index.json";

/// Writes one AVIC file per segment plus `index.json`.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut segments = BTreeMap::new();
    for (name, t) in ckpt.params.segments() {
        let file = format!("{name}.avic");
        write_tensor(&dir.join(&file), t)?;
        segments.insert(
            name.to_string(),
            SegmentEntry {
                file,
                shape: t.shape().to_vec(),
            },
        );
    }
    let index = CheckpointIndex {
        epoch: ckpt.epoch,
        encoder: ckpt.encoder,
        segments,
    };
    write_json(&dir.join(CHECKPOINT_INDEX), &index)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let ipath = dir.join(CHECKPOINT_INDEX);
    let index: CheckpointIndex = read_json(&ipath)?;
    index.encoder.validate()?;
    let mut params = ParamVector::new();
    for (name, shape) in param_layout(&index.encoder) {
        let entry = index
            .segments
            .get(name)
            .ok_or_else(|| Error::format(&ipath, format!("missing segment {name}")))?;
        let path = dir.join(&entry.file);
        let t = read_tensor(&path)?;
        if t.shape() != shape || entry.shape != shape {
            return Err(Error::format(
                &path,
                format!(
                    "segment {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                ),
            ));
        }
        params.push(name, t)?;
    }
    if index.segments.len() != params.num_segments() {
        return Err(Error::format(&ipath, "unexpected extra segments"));
    }
    Ok(Checkpoint {
        params,
        encoder: index.encoder,
        epoch: index.epoch,
    })
}
