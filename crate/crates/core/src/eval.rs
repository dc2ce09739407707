//! Consensus ground truth, cIoU, success-ratio curves and corpus-level
//! evaluation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BoundingBox;
use crate::dataset::{find, Sample};
use crate::encoders::{AudioEmbedding, Encoder};
use crate::error::{Error, Result};
use crate::localization::{
    export_heatmap, minmax_normalize, response_map, upsample_bilinear, ResponseMap,
};
use crate::numcore::{dot, ParamVector, Tensor};

/// Number of points on the success-curve threshold grid (step 0.05).
pub const CURVE_POINTS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMap {
    /// `rows × cols`, values in `{0, 1/c, …, 1}`.
    pub g: Tensor,
    pub consensus: usize,
}

/// `g = min(Σ_i b_i / consensus, 1)` for binary box masks `b_i`.
pub fn consensus_map(
    boxes: &[BoundingBox],
    rows: usize,
    cols: usize,
    consensus: usize,
) -> Result<ConsensusMap> {
    if consensus == 0 {
        return Err(Error::invalid("consensus must be ≥ 1"));
    }
    let mut counts = vec![0usize; rows * cols];
    for b in boxes {
        if !b.fits(rows, cols) {
            return Err(Error::invalid(format!(
                "box {b:?} outside {rows}x{cols} image"
            )));
        }
        for r in b.y0..b.y1 {
            for c in b.x0..b.x1 {
                counts[r * cols + c] += 1;
            }
        }
    }
    let g = counts
        .into_iter()
        .map(|n| (n.min(consensus)) as f64 / consensus as f64)
        .collect();
    Ok(ConsensusMap {
        g: Tensor::new(vec![rows, cols], g)?,
        consensus,
    })
}

/// Consensus IoU of the super-level set `A = {pred > τ_pix}`:
/// `Σ_{A} g / (Σ g + |{p ∈ A : g = 0}|)`. Both sets empty counts as a match.
pub fn ciou(pred: &Tensor, g: &ConsensusMap, tau_pix: f64) -> Result<f64> {
    if pred.shape() != g.g.shape() {
        return Err(Error::Shape {
            op: "ciou",
            expected: g.g.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let mut inter = 0.0;
    let mut false_pos = 0usize;
    for (&p, &gt) in pred.data().iter().zip(g.g.data()) {
        if p > tau_pix {
            if gt > 0.0 {
                inter += gt;
            } else {
                false_pos += 1;
            }
        }
    }
    let mass = g.g.sum();
    let denom = mass + false_pos as f64;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(inter / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub success_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
    n: usize,
    scores: Vec<f64>,
}

impl SuccessCurve {
    /// Fraction of instances whose cIoU is strictly higher than `tau`.
    pub fn success(&self, tau: f64) -> f64 {
        self.scores.iter().filter(|&&s| s > tau).count() as f64 / self.n as f64
    }

    /// `success(tau) · 100`, the cIoU@τ figure.
    pub fn ciou_at(&self, tau: f64) -> f64 {
        100.0 * self.success(tau)
    }
}

pub fn curve_thresholds() -> impl Iterator<Item = f64> {
    (0..CURVE_POINTS).map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
}

/// Success ratio on the 21-point grid `0, 0.05, …, 1` and its trapezoidal AUC.
pub fn success_curve(scores: &[f64]) -> Result<SuccessCurve> {
    if scores.is_empty() {
        return Err(Error::invalid("success curve needs at least one score"));
    }
    let mut curve = SuccessCurve {
        points: Vec::with_capacity(CURVE_POINTS),
        auc: 0.0,
        n: scores.len(),
        scores: scores.to_vec(),
    };
    curve.points = curve_thresholds()
        .map(|t| CurvePoint {
            threshold: t,
            success_ratio: curve.success(t),
        })
        .collect();
    curve.auc = curve
        .points
        .windows(2)
        .map(|w| {
            (w[1].threshold - w[0].threshold) * 0.5 * (w[0].success_ratio + w[1].success_ratio)
        })
        .sum();
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Pixel threshold on the normalized, upsampled response.
    pub tau_pix: f64,
    pub consensus: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau_pix: 0.5,
            consensus: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_pix) {
            return Err(Error::invalid(format!(
                "tau_pix must lie in [0, 1], got {}",
                self.tau_pix
            )));
        }
        if self.consensus == 0 {
            return Err(Error::invalid("consensus must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub instance_ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub auc: f64,
    #[serde(rename = "ciou_at_0.3")]
    pub ciou_at_0_3: f64,
    #[serde(rename = "ciou_at_0.5")]
    pub ciou_at_0_5: f64,
}

impl EvalResult {
    pub fn from_scores(instance_ids: Vec<u64>, scores: Vec<f64>) -> Result<Self> {
        let curve = success_curve(&scores)?;
        Ok(Self {
            instance_ids,
            ciou_at_0_3: curve.ciou_at(0.3),
            ciou_at_0_5: curve.ciou_at(0.5),
            auc: curve.auc,
            curve: curve.points,
            scores,
        })
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("threshold,success_ratio\n");
        for p in &self.curve {
            s.push_str(&format!("{:.2},{}\n", p.threshold, p.success_ratio));
        }
        s
    }
}

/// Inference output for one image/audio pair.
#[derive(Debug, Clone)]
pub struct Localization {
    pub raw: ResponseMap,
    pub normalized: ResponseMap,
    /// Normalized map upsampled to image resolution.
    pub heatmap: Tensor,
}

pub fn localize(
    encoder: &Encoder,
    params: &ParamVector,
    image: &Tensor,
    lms: &crate::dsp::Spectrogram,
) -> Result<Localization> {
    let v = encoder.visual_encode(params, image)?;
    let a = encoder.audio_encode(params, lms)?;
    let raw = response_map(&v, &a)?;
    let normalized = minmax_normalize(&raw)?;
    let (rows, cols) = v.source_size;
    let heatmap = upsample_bilinear(&normalized.values, rows, cols)?;
    Ok(Localization {
        raw,
        normalized,
        heatmap,
    })
}

/// Scores every sample against its sounding boxes. Per-instance work runs on
/// the current rayon pool; results are gathered in input order.
pub fn evaluate_corpus(
    encoder: &Encoder,
    params: &ParamVector,
    samples: &[Sample],
    cfg: &EvalConfig,
    heatmap_dir: Option<&Path>,
) -> Result<EvalResult> {
    if let Some(dir) = heatmap_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let scores = samples
        .par_iter()
        .map(|s| {
            if s.sounding_boxes.is_empty() {
                return Err(Error::invalid(format!(
                    "instance {} has no ground-truth boxes",
                    s.id
                )));
            }
            let loc = localize(encoder, params, &s.image, &s.lms)?;
            let (rows, cols) = (loc.heatmap.shape()[0], loc.heatmap.shape()[1]);
            let g = consensus_map(&s.sounding_boxes, rows, cols, cfg.consensus)?;
            if let Some(dir) = heatmap_dir {
                export_heatmap(&loc.heatmap, &dir.join(format!("{:06}.pgm", s.id)))?;
            }
            ciou(&loc.heatmap, &g, cfg.tau_pix)
        })
        .collect::<Result<Vec<f64>>>()?;
    EvalResult::from_scores(samples.iter().map(|s| s.id).collect(), scores)
}

/// Other samples ranked by `⟨a_query, a_other⟩`, descending; ties by id.
pub fn audio_retrieval(
    encoder: &Encoder,
    params: &ParamVector,
    samples: &[Sample],
    query_id: u64,
    top_n: usize,
) -> Result<Vec<u64>> {
    let query = find(samples, query_id)?;
    let qa = encoder.audio_encode(params, &query.lms)?;
    let embeddings: Vec<(u64, AudioEmbedding)> = samples
        .par_iter()
        .filter(|s| s.id != query_id)
        .map(|s| Ok((s.id, encoder.audio_encode(params, &s.lms)?)))
        .collect::<Result<_>>()?;
    let mut ranked: Vec<(u64, f64)> = embeddings
        .iter()
        .map(|(id, a)| (*id, dot(qa.as_slice(), a.as_slice())))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(top_n).map(|(id, _)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded_rng;

    fn bx(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn consensus_cases() {
        let one = consensus_map(&[bx(1, 0, 3, 2)], 3, 4, 1).unwrap();
        assert_eq!(
            one.g.data(),
            &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let twice = consensus_map(&[bx(1, 0, 3, 2), bx(1, 0, 3, 2)], 3, 4, 2).unwrap();
        assert_eq!(twice.g, one.g);
        let disjoint = consensus_map(&[bx(0, 0, 1, 1), bx(3, 2, 4, 3)], 3, 4, 2).unwrap();
        assert_eq!(disjoint.g.get(&[0, 0]), 0.5);
        assert_eq!(disjoint.g.get(&[2, 3]), 0.5);
        assert_eq!(disjoint.g.sum(), 1.0);
        assert!(consensus_map(&[], 2, 2, 0).is_err());
        assert!(consensus_map(&[bx(0, 0, 5, 1)], 2, 2, 1).is_err());
    }

    #[test]
    fn ciou_cases() {
        let g = consensus_map(&[bx(0, 0, 2, 1)], 2, 2, 1).unwrap();
        assert_eq!(ciou(&g.g, &g, 0.5).unwrap(), 1.0);
        assert_eq!(ciou(&Tensor::zeros(&[2, 2]), &g, 0.5).unwrap(), 0.0);
        // A = {(0,0), (1,0)}: one hit, one false positive.
        let pred = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((ciou(&pred, &g, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = consensus_map(&[], 2, 2, 1).unwrap();
        assert_eq!(ciou(&Tensor::zeros(&[2, 2]), &empty, 0.5).unwrap(), 1.0);
        assert!(ciou(&Tensor::zeros(&[3, 2]), &g, 0.5).is_err());
    }

    #[test]
    fn curve_cases() {
        let perfect = success_curve(&[1.0; 5]).unwrap();
        assert!((perfect.auc - 0.975).abs() < 1e-12);
        assert_eq!(perfect.points.len(), 21);
        assert_eq!(perfect.points[20].success_ratio, 0.0);
        assert_eq!(perfect.points[19].success_ratio, 1.0);

        let zero = success_curve(&[0.0; 4]).unwrap();
        assert!(zero.points.iter().all(|p| p.success_ratio == 0.0));
        assert_eq!(zero.auc, 0.0);

        let mixed = success_curve(&[0.2, 0.6, 1.0]).unwrap();
        assert!((mixed.success(0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(format!("{:.1}", mixed.ciou_at(0.5)), "66.7");
        assert!(success_curve(&[]).is_err());
    }

    #[test]
    fn curve_is_monotone_and_quantized() {
        let mut rng = seeded_rng(4);
        for n in [1, 2, 7, 30] {
            let scores: Vec<f64> = (0..n).map(|_| rng.draw_uniform()).collect();
            let c = success_curve(&scores).unwrap();
            for w in c.points.windows(2) {
                assert!(w[1].success_ratio <= w[0].success_ratio);
            }
            for p in &c.points {
                let k = p.success_ratio * n as f64;
                assert!((k - k.round()).abs() < 1e-9);
            }
            assert!((0.0..=1.0).contains(&c.auc));
        }
    }

    #[test]
    fn ciou_invariant_to_monotone_rescaling() {
        let mut rng = seeded_rng(5);
        let g = consensus_map(&[bx(2, 1, 6, 5), bx(4, 3, 8, 8)], 8, 8, 2).unwrap();
        for _ in 0..20 {
            let pred =
                Tensor::new(vec![8, 8], (0..64).map(|_| rng.draw_uniform()).collect()).unwrap();
            // x ↦ x³ maps the level 0.5 to 0.125 and preserves the super-level set.
            let cubed = pred.map(|x| x.powi(3));
            assert_eq!(
                ciou(&pred, &g, 0.5).unwrap(),
                ciou(&cubed, &g, 0.125).unwrap()
            );
        }
    }
}
