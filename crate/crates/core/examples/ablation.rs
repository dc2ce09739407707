//! Trains every ablation variant over a few seeds on the default synthetic
//! corpus and prints per-epoch test metrics.

use std::time::Instant;

use avloc::corpus::{generate_split, split_ids, CorpusConfig, Split};
use avloc::dataset::prepare;
use avloc::dsp::LogMelConfig;
use avloc::encoders::{Encoder, EncoderConfig};
use avloc::eval::EvalConfig;
use avloc::train::{train, TrainConfig, TrainInputs, Variant};

fn main() -> avloc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(3, |s| s.parse().unwrap());
    let base: TrainConfig = match args.get(2) {
        Some(json) => serde_json::from_str(json).unwrap(),
        None => TrainConfig::default(),
    };
    let variants: Vec<Variant> = match args.get(3) {
        Some(list) => list.split(',').map(|v| v.parse().unwrap()).collect(),
        None => Variant::ALL.to_vec(),
    };
    let corpus = CorpusConfig::default();
    let mel = LogMelConfig::default();
    for seed in 0..seeds {
        let tr = prepare(
            &generate_split(&corpus, seed, split_ids(&corpus, Split::Train))?,
            &mel,
        )?;
        let te = prepare(
            &generate_split(&corpus, seed, split_ids(&corpus, Split::Test))?,
            &mel,
        )?;
        let encoder = Encoder::new(EncoderConfig {
            renorm_pooled: base.renorm_pooled,
            ..EncoderConfig::default()
        })?;
        let inputs = TrainInputs {
            encoder: &encoder,
            train: &tr,
            test: Some(&te),
            eval: EvalConfig::default(),
        };
        for &v in &variants {
            let cfg = TrainConfig {
                seed,
                ..v.apply(&base)
            };
            let t = Instant::now();
            let out = train(&inputs, &cfg, None, |_, _, _| Ok(()))?;
            let curve: Vec<String> = out
                .log
                .records
                .iter()
                .map(|r| format!("{:.0}", r.ciou_at_0_5.unwrap()))
                .collect();
            let last = out.log.records.last().unwrap();
            println!(
                "seed {seed} {:<9} ciou {:>5.1} auc {:.3} pos {:.2} neg {:.2} rel {:.2} loss {:.3} [{:.0}s] {}",
                v.name(),
                last.ciou_at_0_5.unwrap(),
                last.auc.unwrap(),
                last.positive_fraction.unwrap_or(0.0),
                last.negative_fraction.unwrap_or(0.0),
                last.relation_density.unwrap_or(0.0),
                last.mean_loss,
                t.elapsed().as_secs_f64(),
                curve.join(" ")
            );
        }
    }
    Ok(())
}
