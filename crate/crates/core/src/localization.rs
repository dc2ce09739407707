//! Response maps, min-max normalization, thresholded sounding regions,
//! bilinear upsampling and PGM heatmap export.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::encoders::{patch_responses, AudioEmbedding, VisualFeatureMap};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    /// `grid_rows × grid_cols`.
    pub values: Tensor,
    pub normalized: bool,
    /// Set when normalization met a constant map.
    pub degenerate: bool,
}

impl ResponseMap {
    pub fn raw(values: Tensor) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::invalid("response maps are 2-D"));
        }
        Ok(Self {
            values,
            normalized: false,
            degenerate: false,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }
}

/// Patch coordinates `(row, col)` of a thresholded map.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingRegion {
    pub indices: BTreeSet<(usize, usize)>,
    pub threshold: f64,
}

impl SoundingRegion {
    /// Row-major flat patch indices for a grid with `cols` columns.
    pub fn flat_indices(&self, cols: usize) -> Vec<usize> {
        self.indices.iter().map(|&(r, c)| r * cols + c).collect()
    }
}

/// `R[i,j] = ⟨v̂[i,j], a⟩` with each patch vector L2-normalized first.
pub fn response_map(v: &VisualFeatureMap, a: &AudioEmbedding) -> Result<ResponseMap> {
    if v.dim() != a.values.len() {
        return Err(Error::Shape {
            op: "response_map",
            expected: vec![v.dim()],
            actual: a.values.shape().to_vec(),
        });
    }
    let (rows, cols) = v.grid();
    let r = patch_responses(v.values.data(), v.dim(), a.as_slice());
    ResponseMap::raw(Tensor::new(vec![rows, cols], r)?)
}

/// `(R − min R) / (max R − min R)`; a constant map becomes all zeros and is
/// flagged degenerate.
pub fn minmax_normalize(r: &ResponseMap) -> Result<ResponseMap> {
    if let Some(&bad) = r.values.data().iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "response map".into(),
            value: bad,
        });
    }
    let (lo, hi) = (r.values.min(), r.values.max());
    let range = hi - lo;
    if range == 0.0 {
        return Ok(ResponseMap {
            values: Tensor::zeros(r.values.shape()),
            normalized: true,
            degenerate: true,
        });
    }
    Ok(ResponseMap {
        values: r.values.map(|x| ((x - lo) / range).clamp(0.0, 1.0)),
        normalized: true,
        degenerate: false,
    })
}

/// Patches whose normalized value strictly exceeds `delta_v`.
pub fn threshold_region(r: &ResponseMap, delta_v: f64) -> SoundingRegion {
    let (_, cols) = r.grid();
    let indices = r
        .values
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > delta_v)
        .map(|(i, _)| (i / cols, i % cols))
        .collect();
    SoundingRegion {
        indices,
        threshold: delta_v,
    }
}

/// Bilinear interpolation with align-corners semantics: source cell
/// centers `0` and `n−1` land on target pixels `0` and `N−1`.
pub fn upsample_bilinear(r: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    if r.ndim() != 2 {
        return Err(Error::invalid("upsample_bilinear expects a 2-D map"));
    }
    let (h, w) = (r.shape()[0], r.shape()[1]);
    if rows < h || cols < w {
        return Err(Error::invalid(format!(
            "target {rows}x{cols} is smaller than source {h}x{w}"
        )));
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let src = r.data();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let (y0, y1, fy) = coord(i, rows, h);
        for j in 0..cols {
            let (x0, x1, fx) = coord(j, cols, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![rows, cols], out)
}

/// Binary PGM (`P5`, maxval 255) with `byte = round_half_up(255 · value)`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    if map.ndim() != 2 {
        return Err(Error::invalid("heatmaps are 2-D"));
    }
    if let Some(bad) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "heatmap value {bad} outside [0, 1]"
        )));
    }
    let (rows, cols) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|v| (255.0 * v + 0.5).floor() as u8));
    Ok(out)
}

pub fn export_heatmap(map: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_pgm(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
