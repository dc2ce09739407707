//! Two-stage training: the contrastive baseline for the initial epochs, then
//! the iterative objective driven by pseudo-labels from the previous epoch.

mod loss;
mod objective;
mod pseudo;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use loss::{
    contrastive_loss, contrastive_loss_grad, iterative_loss, iterative_loss_grad, relation_matrix,
    ContrastiveGrad, IterativeGrad, LossValue, RelationMatrix,
};
pub use objective::{BatchObjective, LossCounters, LossKind, PoolPlan};
pub use pseudo::{
    compute_pseudo_labels, negative_plan, positive_plan, sample_nonsounding_feature,
    sample_patches, sample_sounding_feature, split_patches, Batch, InstanceLabels, PseudoLabels,
};

use crate::dataset::Sample;
use crate::encoders::{init_params, take_snapshot, Encoder, Snapshot};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, EvalConfig};
use crate::numcore::{ParamVector, Rng};

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5a0f;
const STREAM_SAMPLE: u64 = 0x3c21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Batch size.
    pub k: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// Threshold on the normalized snapshot response map.
    pub delta_v: f64,
    /// Audio-similarity threshold of the relation matrix.
    pub delta_a: f64,
    pub total_epochs: usize,
    pub initial_epochs: usize,
    pub learning_rate: f64,
    /// Maximum number of patches pooled per side.
    pub sample_count: usize,
    pub seed: u64,
    pub renorm_pooled: bool,
    /// Use intra-frame negatives `v⁻`.
    pub intra: bool,
    /// Use the inter-frame relation matrix; identity otherwise.
    pub inter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 32,
            tau: 0.1,
            delta_v: 0.8,
            delta_a: 0.6,
            total_epochs: 30,
            initial_epochs: 10,
            learning_rate: 0.02,
            sample_count: 16,
            seed: 0,
            renorm_pooled: true,
            intra: true,
            inter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be ≥ 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !self.delta_v.is_finite() {
            return Err(Error::invalid("delta_v must be finite"));
        }
        if !(0.0..=1.0).contains(&self.delta_a) {
            return Err(Error::invalid(format!(
                "delta_a must lie in [0, 1], got {}",
                self.delta_a
            )));
        }
        if self.initial_epochs > self.total_epochs {
            return Err(Error::invalid(format!(
                "initial_epochs {} exceeds total_epochs {}",
                self.initial_epochs, self.total_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.sample_count == 0 {
            return Err(Error::invalid("sample_count must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Initial,
    Itr,
    ItrIntra,
    ItrInter,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Initial,
        Variant::Itr,
        Variant::ItrIntra,
        Variant::ItrInter,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Initial => "initial",
            Variant::Itr => "itr",
            Variant::ItrIntra => "itr-intra",
            Variant::ItrInter => "itr-inter",
            Variant::Full => "full",
        }
    }

    /// The base config transformed for this variant. `Initial` stops after the
    /// contrastive initialization stage.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = *base;
        match self {
            Variant::Initial => cfg.total_epochs = cfg.initial_epochs,
            Variant::Itr => (cfg.intra, cfg.inter) = (false, false),
            Variant::ItrIntra => (cfg.intra, cfg.inter) = (true, false),
            Variant::ItrInter => (cfg.intra, cfg.inter) = (false, true),
            Variant::Full => (cfg.intra, cfg.inter) = (true, true),
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

pub fn ablation_variants(base: &TrainConfig) -> Vec<(Variant, TrainConfig)> {
    Variant::ALL
        .into_iter()
        .map(|v| (v, v.apply(base)))
        .collect()
}

/// Pool plans and relation matrix for one batch under `cfg`, drawn from the
/// snapshot's pseudo-labels. `rngs[i]` drives instance `i`'s patch sampling.
pub fn iterative_kind(
    encoder: &Encoder,
    labels: &PseudoLabels,
    cfg: &TrainConfig,
    rngs: &mut [Rng],
) -> Result<LossKind> {
    let m = encoder.cfg.num_patches();
    let plans = labels
        .instances
        .iter()
        .zip(rngs.iter_mut())
        .map(|(l, rng)| {
            let positive = positive_plan(&l.positive, m, cfg.sample_count, rng)?;
            let negative = if cfg.intra {
                negative_plan(&l.negative, cfg.sample_count, rng)?
            } else {
                None
            };
            Ok(PoolPlan { positive, negative })
        })
        .collect::<Result<Vec<_>>>()?;
    let relation = if cfg.inter {
        relation_matrix(&labels.audio_vectors(), cfg.delta_a)
    } else {
        RelationMatrix::identity(labels.instances.len())
    };
    Ok(LossKind::Iterative { plans, relation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Contrastive,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
    pub batches: usize,
    pub contrastive_evals: u64,
    pub iterative_evals: u64,
    /// Mean fraction of patches labelled sounding / non-sounding (iterative stage).
    pub positive_fraction: Option<f64>,
    pub negative_fraction: Option<f64>,
    /// Mean off-diagonal positives per relation-matrix row (iterative stage).
    pub relation_density: Option<f64>,
    #[serde(rename = "ciou_at_0.5")]
    pub ciou_at_0_5: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn contrastive_evals(&self) -> u64 {
        self.records.iter().map(|r| r.contrastive_evals).sum()
    }

    pub fn iterative_evals(&self) -> u64 {
        self.records.iter().map(|r| r.iterative_evals).sum()
    }

    pub fn record(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    pub fn csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,mean_loss,ciou_at_0.5,auc\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                r.mean_loss,
                opt(r.ciou_at_0_5),
                opt(r.auc)
            ));
        }
        s
    }
}

/// Where training starts: fresh parameters or the end of a completed epoch.
#[derive(Debug, Clone)]
pub struct Resume {
    pub params: ParamVector,
    pub epoch: usize,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub log: TrainLog,
}

pub struct TrainInputs<'a> {
    pub encoder: &'a Encoder,
    pub train: &'a [Sample],
    /// Evaluated at the end of every epoch when present.
    pub test: Option<&'a [Sample]>,
    pub eval: EvalConfig,
}

/// Batches for one epoch: a seeded shuffle cut into chunks of `k`. A trailing
/// chunk of fewer than two instances is dropped (no contrast possible).
pub fn epoch_batches(n: usize, k: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, &[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);
    order
        .chunks(k)
        .filter(|c| c.len() >= 2 || (k == 1 && c.len() == 1))
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn initial_params(encoder: &Encoder, cfg: &TrainConfig) -> Result<ParamVector> {
    init_params(&encoder.cfg, &mut Rng::derive(cfg.seed, &[STREAM_INIT]))
}

struct EpochStats {
    loss_sum: f64,
    batches: usize,
    pos: f64,
    neg: f64,
    rel: f64,
    instances: usize,
}

fn run_epoch(
    inputs: &TrainInputs,
    cfg: &TrainConfig,
    epoch: usize,
    params: &mut ParamVector,
    snapshot: Option<&Snapshot>,
    counters: &LossCounters,
) -> Result<EpochStats> {
    let encoder = inputs.encoder;
    let m = encoder.cfg.num_patches() as f64;
    let mut stats = EpochStats {
        loss_sum: 0.0,
        batches: 0,
        pos: 0.0,
        neg: 0.0,
        rel: 0.0,
        instances: 0,
    };
    for (b, idx) in epoch_batches(inputs.train.len(), cfg.k, cfg.seed, epoch)
        .into_iter()
        .enumerate()
    {
        let batch = Batch::new(idx.iter().map(|&i| &inputs.train[i]).collect())?;
        let kind = match snapshot {
            None => LossKind::Contrastive,
            Some(snap) => {
                let labels = compute_pseudo_labels(encoder, snap, &batch, cfg.delta_v)?;
                let mut rngs: Vec<Rng> = batch
                    .ids()
                    .into_iter()
                    .map(|id| Rng::derive(cfg.seed, &[STREAM_SAMPLE, epoch as u64, id]))
                    .collect();
                let kind = iterative_kind(encoder, &labels, cfg, &mut rngs)?;
                for l in &labels.instances {
                    stats.pos += l.positive.len() as f64 / m;
                    stats.neg += l.negative.len() as f64 / m;
                }
                if let LossKind::Iterative { relation, .. } = &kind {
                    stats.rel += relation.off_diagonal_positives() as f64;
                }
                stats.instances += batch.len();
                kind
            }
        };
        let objective = BatchObjective {
            encoder,
            batch: &batch,
            tau: cfg.tau,
            kind,
            counters: Some(counters),
        };
        let (loss, g) = objective.evaluate(params, true)?;
        let g = g.expect("gradient requested");
        if !loss.value.is_finite() || !g.is_finite() {
            let terms: Vec<String> = batch
                .ids()
                .iter()
                .zip(&loss.terms)
                .map(|(id, t)| format!("{id}:{t}"))
                .collect();
            return Err(Error::Diverged {
                epoch,
                batch: b,
                detail: format!(
                    "loss {} (gradient finite: {}); terms {}",
                    loss.value,
                    g.is_finite(),
                    terms.join(" ")
                ),
            });
        }
        params.axpy(-cfg.learning_rate, &g)?;
        params.round_to_f32();
        stats.loss_sum += loss.value;
        stats.batches += 1;
    }
    if stats.batches == 0 {
        return Err(Error::invalid(format!(
            "training split of {} instances yields no batch of size k={}",
            inputs.train.len(),
            cfg.k
        )));
    }
    Ok(stats)
}

/// Trains from scratch or from `resume`, calling `on_epoch` after every
/// completed epoch with the parameters at that point.
pub fn train(
    inputs: &TrainInputs,
    cfg: &TrainConfig,
    resume: Option<Resume>,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamVector, &TrainLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if inputs.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if inputs.encoder.cfg.renorm_pooled != cfg.renorm_pooled {
        return Err(Error::invalid(
            "encoder and training config disagree on renorm_pooled",
        ));
    }
    let (mut params, start, mut log) = match resume {
        Some(r) => {
            if r.epoch > cfg.total_epochs {
                return Err(Error::invalid(format!(
                    "resume epoch {} is past total_epochs {}",
                    r.epoch, cfg.total_epochs
                )));
            }
            (r.params, r.epoch, r.log)
        }
        None => (initial_params(inputs.encoder, cfg)?, 0, TrainLog::default()),
    };
    let mut snapshot = (start > 0).then(|| take_snapshot(&params, start));
    for epoch in start + 1..=cfg.total_epochs {
        let counters = LossCounters::default();
        let iterative = epoch > cfg.initial_epochs;
        let snap = if iterative { snapshot.as_ref() } else { None };
        let stats = run_epoch(inputs, cfg, epoch, &mut params, snap, &counters)?;
        snapshot = Some(take_snapshot(&params, epoch));
        let (ciou, auc) = match inputs.test {
            Some(test) => {
                let r = evaluate_corpus(inputs.encoder, &params, test, &inputs.eval, None)?;
                (Some(r.ciou_at_0_5), Some(r.auc))
            }
            None => (None, None),
        };
        let per_instance = |x: f64| (stats.instances > 0).then(|| x / stats.instances as f64);
        let record = EpochRecord {
            epoch,
            stage: if iterative {
                Stage::Iterative
            } else {
                Stage::Contrastive
            },
            mean_loss: stats.loss_sum / stats.batches as f64,
            batches: stats.batches,
            contrastive_evals: counters.contrastive(),
            iterative_evals: counters.iterative(),
            positive_fraction: per_instance(stats.pos),
            negative_fraction: per_instance(stats.neg),
            relation_density: per_instance(stats.rel),
            ciou_at_0_5: ciou,
            auc,
        };
        log.records.push(record.clone());
        on_epoch(&record, &params, &log)?;
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                tau: 0.0,
                ..Default::default()
            },
            TrainConfig {
                delta_a: 1.5,
                ..Default::default()
            },
            TrainConfig {
                initial_epochs: 40,
                ..Default::default()
            },
            TrainConfig {
                sample_count: 0,
                ..Default::default()
            },
            TrainConfig {
                k: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(TrainConfig {
            delta_v: -1.0,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn config_json_fields() {
        let json = serde_json::to_value(TrainConfig::default()).unwrap();
        let keys: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        for k in [
            "k",
            "tau",
            "delta_v",
            "delta_a",
            "total_epochs",
            "initial_epochs",
            "learning_rate",
            "sample_count",
            "seed",
            "renorm_pooled",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
        assert!(serde_json::from_str::<TrainConfig>(r#"{"k": 4, "bogus": 1}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"k": 4}"#).unwrap();
        assert_eq!(partial.k, 4);
        assert_eq!(partial.tau, 0.1);
    }

    #[test]
    fn variants_are_config_transforms() {
        let base = TrainConfig::default();
        let v = ablation_variants(&base);
        assert_eq!(v.len(), 5);
        let initial = Variant::Initial.apply(&base);
        assert_eq!(initial.total_epochs, base.initial_epochs);
        assert!(!Variant::Itr.apply(&base).intra && !Variant::Itr.apply(&base).inter);
        assert!(Variant::ItrIntra.apply(&base).intra && !Variant::ItrIntra.apply(&base).inter);
        assert!(!Variant::ItrInter.apply(&base).intra && Variant::ItrInter.apply(&base).inter);
        assert_eq!(Variant::Full.apply(&base), base);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert!(v.apply(&base).validate().is_ok());
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn batches_cover_split_deterministically() {
        let b = epoch_batches(10, 4, 3, 1);
        assert_eq!(b.len(), 3);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(10, 4, 3, 1));
        assert_ne!(b, epoch_batches(10, 4, 3, 2));
        // 9 = 4 + 4 + 1: the singleton is dropped.
        assert_eq!(epoch_batches(9, 4, 3, 1).concat().len(), 8);
    }

    #[test]
    fn csv_has_exact_columns() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 1,
                stage: Stage::Contrastive,
                mean_loss: 1.5,
                batches: 2,
                contrastive_evals: 2,
                iterative_evals: 0,
                positive_fraction: None,
                negative_fraction: None,
                relation_density: None,
                ciou_at_0_5: Some(12.5),
                auc: Some(0.25),
            }],
        };
        assert_eq!(
            log.csv(),
            "epoch,mean_loss,ciou_at_0.5,auc\n1,1.5,12.5,0.25\n"
        );
    }
}
