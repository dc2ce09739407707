use avloc::corpus::{generate_split, split_ids, CorpusConfig, Split};
use avloc::dataset::{prepare, Sample};
use avloc::dsp::LogMelConfig;
use avloc::encoders::{Encoder, EncoderConfig};
use avloc::eval::{audio_retrieval, evaluate_corpus, EvalConfig};
use avloc::train::{initial_params, train, TrainConfig, TrainInputs};

fn split(seed: u64, which: Split) -> Vec<Sample> {
    let cfg = CorpusConfig::default();
    let inst = generate_split(&cfg, seed, split_ids(&cfg, which)).unwrap();
    prepare(&inst, &LogMelConfig::default()).unwrap()
}

#[test]
fn untrained_model_localizes_poorly() {
    let encoder = Encoder::new(EncoderConfig::default()).unwrap();
    let test = split(0, Split::Test);
    let mut total = 0.0;
    for seed in 0..5 {
        let params = initial_params(
            &encoder,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        total += evaluate_corpus(&encoder, &params, &test, &EvalConfig::default(), None)
            .unwrap()
            .ciou_at_0_5;
    }
    assert!(
        total / 5.0 < 20.0,
        "untrained mean cIoU@0.5 {:.1}",
        total / 5.0
    );
}

#[test]
fn trained_audio_embeddings_retrieve_shared_classes() {
    let encoder = Encoder::new(EncoderConfig::default()).unwrap();
    let (tr, te) = (split(0, Split::Train), split(0, Split::Test));
    let inputs = TrainInputs {
        encoder: &encoder,
        train: &tr,
        test: None,
        eval: EvalConfig::default(),
    };
    let out = train(&inputs, &TrainConfig::default(), None, |_, _, _| Ok(())).unwrap();
    let (mut shared, mut total) = (0usize, 0usize);
    for q in &te {
        for id in audio_retrieval(&encoder, &out.params, &te, q.id, 3).unwrap() {
            let hit = te.iter().find(|s| s.id == id).unwrap();
            shared += usize::from(
                hit.sounding_classes
                    .iter()
                    .any(|c| q.sounding_classes.contains(c)),
            );
            total += 1;
        }
    }
    let frac = shared as f64 / total as f64;
    assert!(
        frac >= 0.6,
        "top-3 retrievals sharing a sounding class: {frac:.2}"
    );
}

#[test]
fn degenerate_iterative_config_follows_the_contrastive_trajectory() {
    let corpus = CorpusConfig {
        num_train: 64,
        num_test: 8,
        ..CorpusConfig::default()
    };
    let mel = LogMelConfig::default();
    let tr = prepare(
        &generate_split(&corpus, 5, split_ids(&corpus, Split::Train)).unwrap(),
        &mel,
    )
    .unwrap();
    let encoder = Encoder::new(EncoderConfig::default()).unwrap();
    let inputs = TrainInputs {
        encoder: &encoder,
        train: &tr,
        test: None,
        eval: EvalConfig::default(),
    };
    let base = TrainConfig {
        total_epochs: 6,
        initial_epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    // Every patch is positive, none negative, and only the diagonal of y is set.
    let reduced = TrainConfig {
        delta_v: -1.0,
        delta_a: 1.0,
        sample_count: encoder.cfg.num_patches(),
        ..base
    };
    let contrastive = TrainConfig {
        initial_epochs: base.total_epochs,
        ..base
    };
    let a = train(&inputs, &reduced, None, |_, _, _| Ok(())).unwrap();
    let b = train(&inputs, &contrastive, None, |_, _, _| Ok(())).unwrap();
    assert!(a.log.iterative_evals() > 0 && b.log.iterative_evals() == 0);
    for (ra, rb) in a.log.records.iter().zip(&b.log.records) {
        assert!(
            (ra.mean_loss - rb.mean_loss).abs() < 1e-9,
            "epoch {}: {} vs {}",
            ra.epoch,
            ra.mean_loss,
            rb.mean_loss
        );
    }
    let worst = (0..a.params.len())
        .map(|i| (a.params.coord(i) - b.params.coord(i)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "parameters differ by {worst:e}");
}
