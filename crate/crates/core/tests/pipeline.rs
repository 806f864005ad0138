use it2p::datagen::{build_t2p_dataset, read_dataset, write_dataset, DatasetConfig, Split};
use it2p::grounding::{self, grounding_accuracy, mc_statistics, train_t2p, T2PConfig};
use it2p::heatmap::Heatmap;
use it2p::language::Vocab;
use it2p::train::{LrSchedule, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(vocab: &Vocab) -> T2PConfig {
    T2PConfig { stem_channels: 4, channels: vec![4, 4, 4], embed_dim: 8, hidden: 8, lang_dim: 4, ..T2PConfig::desk(vocab.len()) }
}

#[test]
fn dataset_survives_disk() {
    let vocab = Vocab::standard();
    let ds = build_t2p_dataset(&DatasetConfig::desk(3).with_scenes(5), &vocab).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, &vocab, dir.path()).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn trained_checkpoint_round_trips() {
    let vocab = Vocab::standard();
    let ds = build_t2p_dataset(&DatasetConfig::desk(5).with_scenes(4), &vocab).unwrap();
    let images = ds.image_tensors::<f32>();
    let train: Vec<_> = ds.grounding_examples(Split::Train, None).into_iter().take(16).collect();
    let tc = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, schedule: LrSchedule::Constant, dropout: 0.1, seed: 2 };
    let (model, log) = train_t2p(&images, &train, small(&vocab), &tc, Some(&train), None).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.final_loss().unwrap().is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t2p.ckpt");
    model.save(&path, &vocab, 2, Some(&log)).unwrap();
    let back = grounding::T2PModel::<f32>::load(&path, &vocab).unwrap();
    let ex = &train[0];
    assert_eq!(
        back.forward_tensor(&images[ex.image], &ex.words, None).unwrap(),
        model.forward_tensor(&images[ex.image], &ex.words, None).unwrap()
    );
    assert_eq!(grounding_accuracy(&back, &images, &train).unwrap(), log.epochs[1].metric.unwrap());

    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let a = back.forward_tensor(&images[ex.image], &ex.words, Some(&mut r1)).unwrap();
    let b = model.forward_tensor(&images[ex.image], &ex.words, Some(&mut r2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn precisions_agree() {
    let vocab = Vocab::standard();
    let ds = build_t2p_dataset(&DatasetConfig::desk(6).with_scenes(2), &vocab).unwrap();
    let ex = &ds.grounding_examples(Split::Train, None)[0];
    let h32 = grounding::T2PModel::<f32>::new(small(&vocab), 4)
        .unwrap()
        .forward_tensor(&ds.image_tensors::<f32>()[ex.image], &ex.words, None)
        .unwrap();
    let h64 = grounding::T2PModel::<f64>::new(small(&vocab), 4)
        .unwrap()
        .forward_tensor(&ds.image_tensors::<f64>()[ex.image], &ex.words, None)
        .unwrap();
    let worst = h32.data().iter().zip(h64.data()).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");

    let stack: Vec<Heatmap<f64>> = (0..5).map(|i| Heatmap::from_vec(2, vec![i as f64; 4]).unwrap()).collect();
    let (mp, mu) = mc_statistics(&stack).unwrap();
    assert_eq!(mp.data(), &[2.0; 4]);
    assert!(mu.data().iter().all(|&u| (u - 2f64.sqrt()).abs() < 1e-12));
}
