use hrne::data::{feature_path, load_clips, save_features, synth_generate, Manifest, ManifestRecord, SynthConfig};
use hrne::encoder::{AttentionFlags, EncoderConfig, EncoderVariant};
use hrne::eval::Smoothing;
use hrne::numerics::{norm_inf_diff, Vector};
use hrne::training::{evaluate, EvalClip, Example};
use hrne::vocab::build_vocab;
use hrne::{load_checkpoint, save_checkpoint, train, CaptionModel, ModelConfig, Rng, TrainConfig};
use proptest::prelude::*;

fn small_config(variant: EncoderVariant, dim: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            chunk_len: 4,
            stride: 4,
            input_dim: dim,
            embed_dim: 8,
            hidden1: 12,
            hidden2: 12,
            attention: AttentionFlags {
                frames: true,
                chunks: true,
                decoder: true,
            },
            variant,
            levels: 2,
        },
        vocab_size,
        word_embed: 8,
        dec_hidden: 12,
        deep_dim: 8,
        max_len: 8,
        max_frames: 20,
        ..ModelConfig::default()
    }
}

#[test]
fn files_to_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        num_clips: 10,
        segments: 2,
        segment_len: 5,
        dim: 6,
        ..SynthConfig::default()
    };
    let ds = synth_generate(&mut Rng::new(1), &cfg).unwrap();
    let mut manifest = Manifest::default();
    for (i, clip) in ds.clips.iter().enumerate() {
        let id = format!("v{i}");
        save_features(feature_path(dir.path(), &id), &clip.features).unwrap();
        manifest.records.push(ManifestRecord {
            id: id.clone(),
            caption: format!("{}.", clip.caption.join(" ").to_uppercase()),
        });
    }
    let manifest = Manifest::parse(&manifest.to_text()).unwrap();
    let clips = load_clips(dir.path(), &manifest).unwrap();
    assert_eq!(clips.len(), 10);
    assert_eq!(clips[0].captions[0], ds.clips[0].caption);

    let corpus: Vec<Vec<String>> = clips.iter().flat_map(|c| c.captions.clone()).collect();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let mut model = CaptionModel::new(small_config(EncoderVariant::Hrne, 6, vocab.len()), 3).unwrap();
    let frames: Vec<Vec<Vector>> = clips.iter().map(|c| model.prepare_frames(&c.features).unwrap()).collect();
    assert!(frames.iter().all(|f| f.len() == 20));
    let examples: Vec<Example> = clips
        .iter()
        .zip(&frames)
        .map(|(c, f)| Example {
            frames: f.clone(),
            caption: vocab.encode_caption(&c.captions[0]),
        })
        .collect();
    let val: Vec<EvalClip> = clips
        .iter()
        .zip(&frames)
        .map(|(c, f)| EvalClip {
            frames: f.clone(),
            references: c.captions.clone(),
        })
        .collect();
    let tc = TrainConfig {
        batch_size: 4,
        max_epochs: 4,
        dropout: 0.2,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &vocab, &examples, &val, &tc).unwrap();
    assert_eq!(outcome.updates, 3 * outcome.history.len());
    assert!(outcome.loss_curve().iter().all(|l| l.is_finite()));

    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &outcome.best).unwrap();
    let restored = load_checkpoint(&path).unwrap().to_model().unwrap();
    let a = evaluate(&model, &vocab, &val, Smoothing::AddOne).unwrap();
    let b = evaluate(&restored, &vocab, &val, Smoothing::AddOne).unwrap();
    assert_eq!(a.hypotheses.len(), 10);
    assert!(b.bleu.bleu.iter().all(|s| (0.0..=1.0).contains(s)));
    assert!(b.token_accuracy >= 0.0 && b.token_accuracy <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segment_permutations_only_matter_to_ordered_encoders(seed in 0u64..1_000, rot in 1usize..4) {
        let cfg = SynthConfig { num_clips: 1, segments: 4, segment_len: 4, dim: 5, ..SynthConfig::default() };
        let ds = synth_generate(&mut Rng::new(seed), &cfg).unwrap();
        let clip = &ds.clips[0];
        let mut order = clip.segments.clone();
        order.rotate_left(rot);
        prop_assume!(order != clip.segments);
        let noise: Vec<Vector> = clip.features.frames().iter().enumerate().map(|(t, f)| {
            f.iter().zip(&ds.prototypes[clip.segments[t / 4]]).map(|(a, b)| a - b).collect()
        }).collect();
        let permuted = ds.render(&order, &noise).unwrap();
        prop_assert_ne!(&permuted.caption, &clip.caption);

        let mut config = small_config(EncoderVariant::MeanPool, 5, 6);
        config.encoder.attention = AttentionFlags::NONE;
        let pool = CaptionModel::new(config.clone(), seed).unwrap();
        let gap = norm_inf_diff(
            &pool.encode(clip.features.frames()).unwrap().v,
            &pool.encode(permuted.features.frames()).unwrap().v,
        );
        prop_assert!(gap <= 1e-9, "meanpool gap {}", gap);

        config.encoder.variant = EncoderVariant::Hrne;
        config.init.scale = 0.5;
        let hrne = CaptionModel::new(config, seed).unwrap();
        let gap = norm_inf_diff(
            &hrne.encode(clip.features.frames()).unwrap().v,
            &hrne.encode(permuted.features.frames()).unwrap().v,
        );
        prop_assert!(gap > 1e-6, "hrne gap {}", gap);
    }
}
