//! Synthetic audio-visual corpora with planted sounding objects.
//!
//! Every instance is an image with non-overlapping textured boxes, one per
//! object, and a waveform that mixes the tones of the objects flagged as
//! sounding. Objects in one instance have distinct classes, so audio alone
//! identifies which boxes are sounding.
//!
//! On-disk layout under the corpus root:
//!
//! ```text
//! config.json
//! <split>/manifest.json
//! <split>/<instance_id:06>/{image.avic, audio.raw, audio.json, meta.json}
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_waveform, write_waveform, Waveform};
use crate::error::{Error, Result};
use crate::json::{read_json, write_json};
use crate::numcore::avic::{read_tensor, write_tensor};
use crate::numcore::{Rng, Tensor};

/// Half-open pixel box `[x0, x1) × [y0, y1)`; `x` indexes columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid(format!("empty box ({x0},{y0})-({x1},{y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= cols && self.y1 <= rows
    }

    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..self.y1).contains(&row) && (self.x0..self.x1).contains(&col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub sounding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusInstance {
    pub instance_id: u64,
    /// `height × width × channels`.
    pub image: Tensor,
    pub waveform: Waveform,
    pub objects: Vec<SceneObject>,
}

impl CorpusInstance {
    pub fn sounding_boxes(&self) -> Vec<BoundingBox> {
        self.objects
            .iter()
            .filter(|o| o.sounding)
            .map(|o| o.bbox)
            .collect()
    }

    pub fn sounding_classes(&self) -> Vec<usize> {
        self.objects
            .iter()
            .filter(|o| o.sounding)
            .map(|o| o.class_id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_sounding: usize,
    pub max_sounding: usize,
    /// Box area bounds as fractions of the image area.
    pub min_box_frac: f64,
    pub max_box_frac: f64,
    pub max_aspect: f64,
    /// Box corners and sizes are multiples of this many pixels.
    pub box_snap: usize,
    pub background_noise: f64,
    pub texture_noise: f64,
    pub audio_noise: f64,
    pub tone_amplitude: f64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub num_train: usize,
    pub num_test: usize,
    pub seed: u64,
    pub placement_retries: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 3,
            num_classes: 8,
            min_objects: 1,
            max_objects: 4,
            min_sounding: 1,
            max_sounding: 2,
            min_box_frac: 4.0 / 64.0,
            max_box_frac: 9.0 / 64.0,
            max_aspect: 2.0,
            box_snap: 8,
            background_noise: 0.08,
            texture_noise: 0.05,
            audio_noise: 0.05,
            tone_amplitude: 0.3,
            sample_rate: 8000,
            clip_seconds: 1.0,
            num_train: 512,
            num_test: 64,
            seed: 0,
            placement_retries: 1000,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return fail("image extents must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "need 1 ≤ min_objects ≤ max_objects, got {}..{}",
                self.min_objects, self.max_objects
            ));
        }
        if self.max_objects > self.num_classes {
            return fail(
                "objects in one image have distinct classes: max_objects > num_classes".into(),
            );
        }
        if self.min_sounding == 0
            || self.min_sounding > self.max_sounding
            || self.min_sounding > self.min_objects
        {
            return fail(format!(
                "need 1 ≤ min_sounding ≤ max_sounding and min_sounding ≤ min_objects, got {}..{}",
                self.min_sounding, self.max_sounding
            ));
        }
        if !(0.0 < self.min_box_frac
            && self.min_box_frac <= self.max_box_frac
            && self.max_box_frac <= 1.0)
        {
            return fail("box fractions must satisfy 0 < min ≤ max ≤ 1".into());
        }
        if !(self.max_aspect >= 1.0) {
            return fail("max_aspect must be ≥ 1".into());
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return fail("sample_rate and clip_seconds must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let top = (0..self.num_classes)
            .flat_map(|c| synth_class_tone(c).freqs)
            .fold(0.0, f64::max);
        if top >= nyquist {
            return fail(format!(
                "class tone at {top} Hz is not below Nyquist ({nyquist} Hz)"
            ));
        }
        for v in [
            self.background_noise,
            self.texture_noise,
            self.audio_noise,
            self.tone_amplitude,
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail("noise levels and amplitudes must be finite and ≥ 0".into());
            }
        }
        if self.box_sizes().is_empty() {
            return fail("no box size satisfies the area/aspect/snap constraints".into());
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    /// Every admissible `(width, height)` box size in pixels.
    pub fn box_sizes(&self) -> Vec<(usize, usize)> {
        let snap = self.box_snap.max(1);
        let area = (self.width * self.height) as f64;
        let mut out = Vec::new();
        for h in (snap..=self.height).step_by(snap) {
            for w in (snap..=self.width).step_by(snap) {
                let frac = (w * h) as f64 / area;
                let aspect = w.max(h) as f64 / w.min(h) as f64;
                if frac >= self.min_box_frac - 1e-12
                    && frac <= self.max_box_frac + 1e-12
                    && aspect <= self.max_aspect + 1e-12
                {
                    out.push((w, h));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureRecipe {
    pub class_id: usize,
    pub color: [f64; 3],
    /// Stripe direction in radians.
    pub angle: f64,
    /// Stripe period in pixels.
    pub period: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl TextureRecipe {
    /// Noise-free texture value at pixel `(row, col)` for `channel`.
    pub fn value(&self, row: usize, col: usize, channel: usize) -> f64 {
        let t = col as f64 * self.angle.cos() + row as f64 * self.angle.sin();
        let wave = (2.0 * PI * (t + self.phase) / self.period).sin();
        self.color[channel % 3] * (1.0 + self.amplitude * wave)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Class appearance: a deterministic base (hue, stripe angle and period)
/// plus per-draw jitter of color, phase and contrast.
pub fn synth_class_texture(class_id: usize, rng: &mut Rng) -> TextureRecipe {
    const GOLDEN: f64 = 0.618_033_988_749_895;
    let hue = (class_id as f64 * GOLDEN).fract();
    let base = hsv_to_rgb(hue, 0.75, 0.85);
    let angle = (class_id % 4) as f64 * PI / 4.0;
    let period = if (class_id / 4).is_multiple_of(2) {
        4.0
    } else {
        8.0
    };
    let mut color = base;
    for c in &mut color {
        *c = (*c + rng.draw_range(-0.04, 0.04)).clamp(0.0, 1.0);
    }
    TextureRecipe {
        class_id,
        color,
        angle,
        period,
        phase: rng.draw_range(0.0, period),
        amplitude: 0.25 + rng.draw_range(-0.05, 0.05),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToneRecipe {
    pub freqs: Vec<f64>,
}

/// Class sound: two sinusoids, `300 + 120c` Hz and `1500 + 200c` Hz.
/// The low tones step by 120 Hz and stay below 1500 Hz for up to ten
/// classes, so frequency sets of distinct classes are disjoint.
pub fn synth_class_tone(class_id: usize) -> ToneRecipe {
    let c = class_id as f64;
    ToneRecipe {
        freqs: vec![300.0 + 120.0 * c, 1500.0 + 200.0 * c],
    }
}

/// Noise-free tone mix of one class: `amplitude · Σ sin(2π f t)`.
pub fn class_tone_samples(
    class_id: usize,
    amplitude: f64,
    sample_rate: f64,
    len: usize,
) -> Vec<f64> {
    let tone = synth_class_tone(class_id);
    (0..len)
        .map(|i| {
            let t = i as f64 / sample_rate;
            tone.freqs
                .iter()
                .map(|f| amplitude * (2.0 * PI * f * t).sin())
                .sum()
        })
        .collect()
}

/// Draws one instance. Values are rounded to `f32` so that the on-disk
/// representation is exact.
pub fn generate_instance(
    cfg: &CorpusConfig,
    instance_id: u64,
    rng: &mut Rng,
) -> Result<CorpusInstance> {
    cfg.validate()?;
    let (rows, cols, ch) = (cfg.height, cfg.width, cfg.channels);
    let n_obj = cfg.min_objects + rng.draw_index(cfg.max_objects - cfg.min_objects + 1);
    let snd_hi = cfg.max_sounding.min(n_obj);
    let n_snd = cfg.min_sounding + rng.draw_index(snd_hi - cfg.min_sounding + 1);
    let classes = rng.choose_without_replacement(cfg.num_classes, n_obj)?;
    let sounding = rng.choose_without_replacement(n_obj, n_snd)?;

    let sizes = cfg.box_sizes();
    let snap = cfg.box_snap.max(1);
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n_obj);
    let mut attempts = 0;
    while boxes.len() < n_obj {
        if attempts == cfg.placement_retries {
            return Err(Error::Placement {
                retries: attempts,
                objects: n_obj,
                rows,
                cols,
            });
        }
        attempts += 1;
        let (w, h) = sizes[rng.draw_index(sizes.len())];
        let x0 = snap * rng.draw_index((cols - w) / snap + 1);
        let y0 = snap * rng.draw_index((rows - h) / snap + 1);
        let b = BoundingBox::new(x0, y0, x0 + w, y0 + h)?;
        if boxes.iter().all(|o| !o.overlaps(&b)) {
            boxes.push(b);
        }
    }

    let mut image = vec![0.0; rows * cols * ch];
    let bg: Vec<f64> = (0..ch).map(|_| rng.draw_range(0.3, 0.6)).collect();
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..ch {
                image[(r * cols + c) * ch + k] = bg[k] + cfg.background_noise * rng.draw_normal();
            }
        }
    }
    let mut objects = Vec::with_capacity(n_obj);
    for (i, (&class_id, b)) in classes.iter().zip(&boxes).enumerate() {
        let tex = synth_class_texture(class_id, rng);
        for r in b.y0..b.y1 {
            for c in b.x0..b.x1 {
                for k in 0..ch {
                    image[(r * cols + c) * ch + k] =
                        tex.value(r, c, k) + cfg.texture_noise * rng.draw_normal();
                }
            }
        }
        objects.push(SceneObject {
            bbox: *b,
            class_id,
            sounding: sounding.contains(&i),
        });
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0) as f32 as f64;
    }

    let len = cfg.clip_len();
    let rate = cfg.sample_rate as f64;
    let mut samples = vec![0.0; len];
    for o in objects.iter().filter(|o| o.sounding) {
        for (s, t) in samples.iter_mut().zip(class_tone_samples(
            o.class_id,
            cfg.tone_amplitude,
            rate,
            len,
        )) {
            *s += t;
        }
    }
    if cfg.audio_noise > 0.0 {
        for s in &mut samples {
            *s += cfg.audio_noise * rng.draw_normal();
        }
    }
    for s in &mut samples {
        *s = *s as f32 as f64;
    }

    Ok(CorpusInstance {
        instance_id,
        image: Tensor::new(vec![rows, cols, ch], image)?,
        waveform: Waveform::new(samples, rate)?,
        objects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub instance_id: u64,
    pub image: String,
    pub audio: String,
    pub audio_meta: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub split: Split,
    pub num_instances: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub num_classes: usize,
    pub seed: u64,
    pub instances: Vec<InstanceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceMeta {
    instance_id: u64,
    objects: Vec<SceneObject>,
}

/// Instance ids run over train first, then test, so ids are unique across splits.
pub fn split_ids(cfg: &CorpusConfig, split: Split) -> std::ops::Range<u64> {
    let n_train = cfg.num_train as u64;
    match split {
        Split::Train => 0..n_train,
        Split::Test => n_train..n_train + cfg.num_test as u64,
    }
}

/// Generates instances for ids in `ids`, each from its own stream `(seed, id)`.
pub fn generate_split(
    cfg: &CorpusConfig,
    seed: u64,
    ids: std::ops::Range<u64>,
) -> Result<Vec<CorpusInstance>> {
    ids.into_par_iter()
        .map(|id| generate_instance(cfg, id, &mut Rng::derive(seed, &[id])))
        .collect()
}

fn save_split(
    root: &Path,
    cfg: &CorpusConfig,
    seed: u64,
    split: Split,
    instances: &[CorpusInstance],
) -> Result<CorpusManifest> {
    let dir = root.join(split.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut refs = Vec::with_capacity(instances.len());
    for inst in instances {
        let name = format!("{:06}", inst.instance_id);
        let idir = dir.join(&name);
        fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
        write_tensor(&idir.join("image.avic"), &inst.image)?;
        write_waveform(&idir.join("audio.raw"), &inst.waveform)?;
        write_json(
            &idir.join("meta.json"),
            &InstanceMeta {
                instance_id: inst.instance_id,
                objects: inst.objects.clone(),
            },
        )?;
        refs.push(InstanceRef {
            instance_id: inst.instance_id,
            image: format!("{name}/image.avic"),
            audio: format!("{name}/audio.raw"),
            audio_meta: format!("{name}/audio.json"),
            meta: format!("{name}/meta.json"),
        });
    }
    let manifest = CorpusManifest {
        split,
        num_instances: refs.len(),
        width: cfg.width,
        height: cfg.height,
        channels: cfg.channels,
        sample_rate: cfg.sample_rate,
        clip_seconds: cfg.clip_seconds,
        num_classes: cfg.num_classes,
        seed,
        instances: refs,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Writes the train and test splits plus the resolved config under `out`.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    seed: u64,
    out: &Path,
) -> Result<(CorpusManifest, CorpusManifest)> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = CorpusConfig {
        seed,
        ..cfg.clone()
    };
    write_json(&out.join("config.json"), &resolved)?;
    let train = generate_split(cfg, seed, split_ids(cfg, Split::Train))?;
    let train_m = save_split(out, cfg, seed, Split::Train, &train)?;
    drop(train);
    let test = generate_split(cfg, seed, split_ids(cfg, Split::Test))?;
    let test_m = save_split(out, cfg, seed, Split::Test, &test)?;
    Ok((train_m, test_m))
}

/// Loads one split directory, checking the manifest against every file.
pub fn load_split(dir: &Path) -> Result<(CorpusManifest, Vec<CorpusInstance>)> {
    let mpath = dir.join("manifest.json");
    let manifest: CorpusManifest = read_json(&mpath)?;
    if manifest.num_instances != manifest.instances.len() {
        return Err(Error::format(
            &mpath,
            format!(
                "num_instances = {} but {} instances listed",
                manifest.num_instances,
                manifest.instances.len()
            ),
        ));
    }
    let expected_len = (manifest.clip_seconds * manifest.sample_rate as f64).round() as usize;
    let instances = manifest
        .instances
        .par_iter()
        .map(|r| {
            let image_path = dir.join(&r.image);
            let image = read_tensor(&image_path)?;
            if image.shape() != [manifest.height, manifest.width, manifest.channels] {
                return Err(Error::format(
                    &image_path,
                    format!(
                        "image shape {:?}, manifest says {}x{}x{}",
                        image.shape(),
                        manifest.height,
                        manifest.width,
                        manifest.channels
                    ),
                ));
            }
            let audio_path = dir.join(&r.audio);
            let waveform = read_waveform(&audio_path)?;
            if waveform.len() != expected_len
                || waveform.sample_rate() != manifest.sample_rate as f64
            {
                return Err(Error::format(
                    &audio_path,
                    "waveform disagrees with manifest",
                ));
            }
            let meta_path = dir.join(&r.meta);
            let meta: InstanceMeta = read_json(&meta_path)?;
            if meta.instance_id != r.instance_id {
                return Err(Error::format(
                    &meta_path,
                    "instance id disagrees with manifest",
                ));
            }
            for o in &meta.objects {
                if !o.bbox.fits(manifest.height, manifest.width)
                    || o.class_id >= manifest.num_classes
                {
                    return Err(Error::format(&meta_path, format!("invalid object {o:?}")));
                }
            }
            if !meta.objects.iter().any(|o| o.sounding) {
                return Err(Error::format(&meta_path, "no sounding object"));
            }
            Ok(CorpusInstance {
                instance_id: r.instance_id,
                image,
                waveform,
                objects: meta.objects,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, instances))
}

pub fn load_corpus(root: &Path, split: Split) -> Result<(CorpusManifest, Vec<CorpusInstance>)> {
    load_split(&root.join(split.name()))
}

pub fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.name())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded_rng;

    #[test]
    fn default_config_is_valid() {
        let cfg = CorpusConfig::default();
        cfg.validate().unwrap();
        let sizes = cfg.box_sizes();
        assert!(
            sizes.contains(&(16, 16)) && sizes.contains(&(24, 24)) && sizes.contains(&(16, 32))
        );
        assert!(!sizes.contains(&(8, 32)));
    }

    #[test]
    fn class_tones_are_disjoint_and_below_nyquist() {
        for a in 0..8 {
            let fa = synth_class_tone(a).freqs;
            assert!(fa.iter().all(|&f| f < 4000.0));
            for b in 0..8 {
                if a != b {
                    assert!(fa.iter().all(|f| !synth_class_tone(b).freqs.contains(f)));
                }
            }
        }
    }

    #[test]
    fn nyquist_guard() {
        let cfg = CorpusConfig {
            sample_rate: 4000,
            ..CorpusConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn texture_is_deterministic_per_seed() {
        let a = synth_class_texture(3, &mut seeded_rng(5));
        let b = synth_class_texture(3, &mut seeded_rng(5));
        assert_eq!(a, b);
        let c = synth_class_texture(4, &mut seeded_rng(5));
        assert_ne!(a.color, c.color);
    }

    #[test]
    fn four_objects_two_sounding() {
        let cfg = CorpusConfig {
            min_objects: 4,
            max_objects: 4,
            min_sounding: 2,
            max_sounding: 2,
            ..CorpusConfig::default()
        };
        for id in 0..20 {
            let inst = generate_instance(&cfg, id, &mut Rng::derive(1, &[id])).unwrap();
            assert_eq!(inst.objects.len(), 4);
            assert_eq!(inst.objects.iter().filter(|o| o.sounding).count(), 2);
            for (i, a) in inst.objects.iter().enumerate() {
                assert!(a.bbox.fits(64, 64));
                for b in &inst.objects[i + 1..] {
                    assert!(!a.bbox.overlaps(&b.bbox));
                    assert_ne!(a.class_id, b.class_id);
                }
            }
        }
    }

    #[test]
    fn single_source_without_noise_is_pure_tone() {
        let cfg = CorpusConfig {
            min_objects: 1,
            max_objects: 1,
            audio_noise: 0.0,
            ..CorpusConfig::default()
        };
        let inst = generate_instance(&cfg, 0, &mut seeded_rng(2)).unwrap();
        let class = inst.objects[0].class_id;
        let tone = class_tone_samples(class, cfg.tone_amplitude, 8000.0, 8000);
        for (a, b) in inst.waveform.samples().iter().zip(&tone) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = CorpusConfig::default();
        let a = generate_instance(&cfg, 9, &mut Rng::derive(4, &[9])).unwrap();
        let b = generate_instance(&cfg, 9, &mut Rng::derive(4, &[9])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn box_areas_within_bounds() {
        let cfg = CorpusConfig::default();
        let area = 64.0 * 64.0;
        for id in 0..50 {
            let inst = generate_instance(&cfg, id, &mut Rng::derive(8, &[id])).unwrap();
            for o in &inst.objects {
                let f = o.bbox.area() as f64 / area;
                assert!(f >= cfg.min_box_frac - 1e-12 && f <= cfg.max_box_frac + 1e-12);
            }
        }
    }

    #[test]
    fn impossible_placement_errors() {
        // Five 32x32 boxes cannot tile a 64x64 image.
        let cfg = CorpusConfig {
            min_objects: 5,
            max_objects: 5,
            min_box_frac: 0.25,
            max_box_frac: 0.25,
            max_aspect: 1.0,
            placement_retries: 200,
            ..CorpusConfig::default()
        };
        cfg.validate().unwrap();
        assert!(matches!(
            generate_instance(&cfg, 0, &mut seeded_rng(0)),
            Err(Error::Placement { .. })
        ));
    }
}
