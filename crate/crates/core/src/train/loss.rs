//! The baseline contrastive loss and the iterative objective with intra-frame
//! negatives and the inter-frame relation matrix, with hand-derived gradients.

use crate::error::{Error, Result};
use crate::numcore::dot;
use crate::numcore::ops::{log_sum_exp, softmax, weighted_log_sum_exp, weighted_softmax};

/// Binary `k × k` matrix; `y[i][j] = 1` marks audio `j` as a positive for image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    k: usize,
    y: Vec<f64>,
}

impl RelationMatrix {
    pub fn identity(k: usize) -> Self {
        let mut y = vec![0.0; k * k];
        for i in 0..k {
            y[i * k + i] = 1.0;
        }
        Self { k, y }
    }

    pub fn ones(k: usize) -> Self {
        Self {
            k,
            y: vec![1.0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("relation matrix must be square"));
        }
        let y = rows
            .iter()
            .flatten()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Ok(Self { k, y })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.y[i * self.k + j] > 0.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.y[i * self.k..(i + 1) * self.k]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.k)
    }

    /// Number of off-diagonal positives.
    pub fn off_diagonal_positives(&self) -> usize {
        (0..self.k)
            .flat_map(|i| (0..self.k).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j))
            .count()
    }
}

/// `y[i][j] = 1` iff `⟨ã_i, ã_j⟩ ≥ δa`. The diagonal is pinned to 1 for
/// `δa ≤ 1`, where unit-norm self-similarity would pass up to rounding.
pub fn relation_matrix(audio: &[Vec<f64>], delta_a: f64) -> RelationMatrix {
    let k = audio.len();
    let mut y = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let hit = if i == j && delta_a <= 1.0 {
                true
            } else {
                dot(&audio[i], &audio[j]) >= delta_a
            };
            if hit {
                y[i * k + j] = 1.0;
                y[j * k + i] = 1.0;
            }
        }
    }
    RelationMatrix { k, y }
}

/// Loss value with the per-instance terms `L_i` (mean of which is `value`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub terms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: LossValue,
    pub d_visual: Vec<Vec<f64>>,
    pub d_audio: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeGrad {
    pub loss: LossValue,
    pub d_plus: Vec<Vec<f64>>,
    pub d_minus: Vec<Option<Vec<f64>>>,
    pub d_audio: Vec<Vec<f64>>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

fn check_dims<'a>(
    vectors: impl IntoIterator<Item = &'a [f64]>,
    d: usize,
    what: &str,
) -> Result<()> {
    for v in vectors {
        if v.len() != d {
            return Err(Error::invalid(format!(
                "{what} has dimension {}, expected {d}",
                v.len()
            )));
        }
    }
    Ok(())
}

fn check_batch(visual: &[Vec<f64>], audio: &[Vec<f64>]) -> Result<usize> {
    let k = audio.len();
    if k == 0 {
        return Err(Error::invalid("loss needs at least one instance"));
    }
    if visual.len() != k {
        return Err(Error::invalid(format!(
            "{} visual vectors for {k} audio vectors",
            visual.len()
        )));
    }
    let d = audio[0].len();
    check_dims(audio.iter().map(Vec::as_slice), d, "audio embedding")?;
    check_dims(visual.iter().map(Vec::as_slice), d, "visual feature")?;
    Ok(d)
}

fn scores(v: &[f64], audio: &[Vec<f64>], tau: f64) -> Vec<f64> {
    audio.iter().map(|a| dot(v, a) / tau).collect()
}

fn finish(terms: Vec<f64>) -> LossValue {
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    LossValue { value, terms }
}

pub fn contrastive_loss(visual: &[Vec<f64>], audio: &[Vec<f64>], tau: f64) -> Result<LossValue> {
    check_tau(tau)?;
    check_batch(visual, audio)?;
    let terms = visual
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = scores(v, audio, tau);
            log_sum_exp(&s) - s[i]
        })
        .collect();
    Ok(finish(terms))
}

pub fn contrastive_loss_grad(
    visual: &[Vec<f64>],
    audio: &[Vec<f64>],
    tau: f64,
) -> Result<ContrastiveGrad> {
    check_tau(tau)?;
    let d = check_batch(visual, audio)?;
    let k = audio.len();
    let inv_k = 1.0 / k as f64;
    let mut terms = Vec::with_capacity(k);
    let mut d_visual = vec![vec![0.0; d]; k];
    let mut d_audio = vec![vec![0.0; d]; k];
    for (i, v) in visual.iter().enumerate() {
        let s = scores(v, audio, tau);
        terms.push(log_sum_exp(&s) - s[i]);
        let mut g = softmax(&s);
        g[i] -= 1.0;
        for (j, gj) in g.iter().enumerate() {
            let c = gj * inv_k / tau;
            for t in 0..d {
                d_visual[i][t] += c * audio[j][t];
                d_audio[j][t] += c * v[t];
            }
        }
    }
    Ok(ContrastiveGrad {
        loss: finish(terms),
        d_visual,
        d_audio,
    })
}

fn check_iterative(
    v_plus: &[Vec<f64>],
    v_minus: &[Option<Vec<f64>>],
    audio: &[Vec<f64>],
    y: &RelationMatrix,
) -> Result<usize> {
    let d = check_batch(v_plus, audio)?;
    let k = audio.len();
    if v_minus.len() != k || y.k() != k {
        return Err(Error::invalid(format!(
            "iterative loss got {} negatives and a {}x{} relation matrix for {k} instances",
            v_minus.len(),
            y.k(),
            y.k()
        )));
    }
    check_dims(
        v_minus.iter().flatten().map(Vec::as_slice),
        d,
        "non-sounding feature",
    )?;
    if let Some(i) = (0..k).find(|&i| y.row(i).iter().all(|&w| w == 0.0)) {
        return Err(Error::invalid(format!(
            "relation matrix row {i} has no positive"
        )));
    }
    Ok(d)
}

/// `L_i = log Σ_j (e^{s⁻_ij} + e^{s⁺_ij}) − log Σ_j y_ij e^{s⁺_ij}` with
/// `s^±_ij = ⟨v^±_i, a_j⟩/τ`; absent `v⁻_i` drops its terms.
fn iterative_term(s_plus: &[f64], s_minus: Option<&[f64]>, y_row: &[f64]) -> (f64, Vec<f64>) {
    let mut all = s_plus.to_vec();
    if let Some(sm) = s_minus {
        all.extend_from_slice(sm);
    }
    (log_sum_exp(&all) - weighted_log_sum_exp(s_plus, y_row), all)
}

pub fn iterative_loss(
    v_plus: &[Vec<f64>],
    v_minus: &[Option<Vec<f64>>],
    audio: &[Vec<f64>],
    y: &RelationMatrix,
    tau: f64,
) -> Result<LossValue> {
    check_tau(tau)?;
    check_iterative(v_plus, v_minus, audio, y)?;
    let terms = v_plus
        .iter()
        .zip(v_minus)
        .enumerate()
        .map(|(i, (vp, vm))| {
            let sp = scores(vp, audio, tau);
            let sm = vm.as_ref().map(|v| scores(v, audio, tau));
            iterative_term(&sp, sm.as_deref(), y.row(i)).0
        })
        .collect();
    Ok(finish(terms))
}

pub fn iterative_loss_grad(
    v_plus: &[Vec<f64>],
    v_minus: &[Option<Vec<f64>>],
    audio: &[Vec<f64>],
    y: &RelationMatrix,
    tau: f64,
) -> Result<IterativeGrad> {
    check_tau(tau)?;
    let d = check_iterative(v_plus, v_minus, audio, y)?;
    let k = audio.len();
    let inv_k = 1.0 / k as f64;
    let mut terms = Vec::with_capacity(k);
    let mut d_plus = vec![vec![0.0; d]; k];
    let mut d_minus: Vec<Option<Vec<f64>>> = v_minus
        .iter()
        .map(|v| v.as_ref().map(|_| vec![0.0; d]))
        .collect();
    let mut d_audio = vec![vec![0.0; d]; k];
    for i in 0..k {
        let sp = scores(&v_plus[i], audio, tau);
        let sm = v_minus[i].as_ref().map(|v| scores(v, audio, tau));
        let (term, all) = iterative_term(&sp, sm.as_deref(), y.row(i));
        terms.push(term);
        let p = softmax(&all);
        let q = weighted_softmax(&sp, y.row(i));
        for j in 0..k {
            let c = (p[j] - q[j]) * inv_k / tau;
            for t in 0..d {
                d_plus[i][t] += c * audio[j][t];
                d_audio[j][t] += c * v_plus[i][t];
            }
        }
        if let (Some(vm), Some(dm)) = (&v_minus[i], &mut d_minus[i]) {
            for j in 0..k {
                let c = p[k + j] * inv_k / tau;
                for t in 0..d {
                    dm[t] += c * audio[j][t];
                    d_audio[j][t] += c * vm[t];
                }
            }
        }
    }
    Ok(IterativeGrad {
        loss: finish(terms),
        d_plus,
        d_minus,
        d_audio,
    })
}
