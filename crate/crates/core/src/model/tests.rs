use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{make_batches, CaptionBatch, ImageFeatureStore};
use crate::numerics::BnMode;
use crate::synthetic::random_corpus;

struct Fixture {
    model: GroundedModel<f64>,
    batch: CaptionBatch,
}

fn fixture(v: usize, d: usize, c: usize, p: usize, seed: u64) -> Fixture {
    let (emb, feats, recs) = random_corpus(v, d, p, 6, 5, seed).unwrap();
    let model = GroundedModel::<f32>::new(&emb, c, p, c, seed)
        .unwrap()
        .cast::<f64>();
    let batch = make_batches(&recs, &feats, v, 6, true, seed)
        .unwrap()
        .remove(0);
    Fixture { model, batch }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(
        &[rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn lm_only(mask: &str) -> TrainConfig {
    TrainConfig {
        loss_mask: mask.parse().unwrap(),
        reg_enabled: false,
        ..Default::default()
    }
}

#[test]
fn ground_words_identity_and_zero_row() {
    let emb =
        EmbeddingTable::from_pairs([("a", vec![1.0, 2.0, 3.0]), ("b", vec![0.0; 3])]).unwrap();
    let mut m = GroundedModel::<f64>::new(&emb, 3, 2, 3, 0).unwrap();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.row_mut(i)[i] = 1.0;
    }
    *m.store.value_mut(m.mapping) = eye;
    let g = m.ground_words(&[0, 1]).unwrap();
    assert_eq!(g[0], vec![1.0, 2.0, 3.0]);
    assert_eq!(g[1], vec![0.0; 3]);
    assert!(m.ground_words(&[2]).is_err());
}

#[test]
fn ground_words_matches_matmul_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let emb = EmbeddingTable::from_pairs((0..3).map(|i| {
        (
            format!("w{i}"),
            vec![rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)],
        )
    }))
    .unwrap();
    let mut m = GroundedModel::<f64>::new(&emb, 4, 2, 4, 0).unwrap();
    let mm = random_tensor(2, 4, &mut rng);
    *m.store.value_mut(m.mapping) = mm.clone();
    let got = m.ground_words(&[0, 1, 2]).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            let want: f64 = (0..2).map(|k| emb.row(i)[k] as f64 * mm.row(k)[j]).sum();
            assert!((got[i][j] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn project_image_cases() {
    let f = fixture(5, 3, 4, 6, 1);
    let mut m = f.model;
    let zero = m.project_image(&[0.0; 6]).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
    assert!(m.project_image(&[0.0; 5]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w1, b1) = (random_tensor(6, 4, &mut rng), random_tensor(1, 4, &mut rng));
    let (w2, b2) = (random_tensor(4, 4, &mut rng), random_tensor(1, 4, &mut rng));
    *m.store.value_mut(m.proj_w1) = w1.clone();
    *m.store.value_mut(m.proj_b1) = b1.clone();
    *m.store.value_mut(m.proj_w2) = w2.clone();
    *m.store.value_mut(m.proj_b2) = b2.clone();
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let got = m.project_image(&x).unwrap();
    let hidden: Vec<f64> = (0..4)
        .map(|j| ((0..6).map(|i| x[i] * w1.row(i)[j]).sum::<f64>() + b1.data()[j]).tanh())
        .collect();
    for j in 0..4 {
        let want = (0..4).map(|i| hidden[i] * w2.row(i)[j]).sum::<f64>() + b2.data()[j];
        assert!((got[j] - want).abs() < 1e-6);
    }

    *m.store.value_mut(m.proj_w2) = Tensor::zeros(&[4, 4]);
    assert_eq!(m.project_image(&x).unwrap(), b2.data().to_vec());
}

#[test]
fn single_word_vocabulary_has_zero_lm_loss() {
    let emb = EmbeddingTable::from_pairs([("only", vec![0.3, -0.2])]).unwrap();
    let m = GroundedModel::<f64>::new(&emb, 3, 2, 3, 0).unwrap();
    let mut feats = ImageFeatureStore::new(2);
    feats.insert("i", vec![0.1, 0.2]).unwrap();
    let toks = [0usize, 0, 0];
    let b = CaptionBatch::from_rows(
        &[(&toks[..], "i", "i", 1), (&toks[..2], "i", "i", 1)],
        &feats,
    )
    .unwrap();
    for dir in [Direction::Forward, Direction::Backward] {
        assert_eq!(m.forward_lm_loss(&b, dir, BnMode::Train).unwrap(), 0.0);
    }
}

#[test]
fn untrained_loss_is_near_log_vocab() {
    let v = 40;
    let (emb, feats, recs) = random_corpus(v, 8, 6, 64, 6, 3).unwrap();
    // logits are near-uniform only while embedding rows are short
    let emb = emb.map_vectors(|x| 0.3 * x).unwrap();
    let m = GroundedModel::<f32>::new(&emb, 16, 6, 16, 3).unwrap();
    let batches = make_batches(&recs, &feats, v, 32, false, 3).unwrap();
    let mut sum = 0.0;
    for b in &batches {
        sum += m
            .forward_lm_loss(b, Direction::Forward, BnMode::Train)
            .unwrap() as f64;
    }
    let mean = sum / batches.len() as f64;
    let ln_v = (v as f64).ln();
    assert!((mean - ln_v).abs() < 0.15 * ln_v, "{mean} vs {ln_v}");
}

#[test]
fn lm_without_terms_is_an_error() {
    let f = fixture(5, 3, 4, 6, 1);
    let mut b = f.batch.clone();
    b.lengths.iter_mut().for_each(|l| *l = (*l).min(1));
    for r in 0..b.batch_size() {
        for t in 1..b.max_len {
            b.mask[r * b.max_len + t] = false;
            b.token_ids[r * b.max_len + t] = 0;
        }
    }
    assert!(f
        .model
        .forward_lm_loss(&b, Direction::Forward, BnMode::Train)
        .is_err());
}

#[test]
fn backward_equals_forward_on_reversed_batch() {
    let f = fixture(9, 4, 5, 3, 5);
    let mut swapped = f.model.clone();
    let (src, dst) = (f.model.gru_b.ids(), swapped.gru_f.ids());
    for (s, d) in src.iter().zip(&dst) {
        *swapped.store.value_mut(*d) = f.model.store.value(*s).clone();
    }
    for (s, d) in [
        (f.model.bn_b.gamma, swapped.bn_f.gamma),
        (f.model.bn_b.beta, swapped.bn_f.beta),
    ] {
        *swapped.store.value_mut(d) = f.model.store.value(s).clone();
    }
    swapped.bn_f.running_mean = f.model.bn_b.running_mean.clone();
    swapped.bn_f.running_var = f.model.bn_b.running_var.clone();
    for mode in [BnMode::Train, BnMode::Infer] {
        let bw = f
            .model
            .forward_lm_loss(&f.batch, Direction::Backward, mode)
            .unwrap();
        let fw = swapped
            .forward_lm_loss(&f.batch.reversed(), Direction::Forward, mode)
            .unwrap();
        assert!((bw - fw).abs() < 1e-12, "{bw} vs {fw}");
    }
}

#[test]
fn matcher_with_zero_head_is_ln2() {
    let f = fixture(6, 3, 4, 5, 2);
    let mut m = f.model;
    *m.store.value_mut(m.head_w) = Tensor::zeros(&[4, 1]);
    let l = m.matcher_loss(&f.batch, BnMode::Train).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-15);

    let mut all_pos = f.batch.clone();
    all_pos.match_label.iter_mut().for_each(|y| *y = 1);
    *m.store.value_mut(m.head_b) = Tensor::scalar(100.0);
    assert!(m.matcher_loss(&all_pos, BnMode::Train).unwrap() < 1e-40);
}

#[test]
fn regularizer_examples() {
    let emb = EmbeddingTable::from_pairs([("w", vec![1.0, 0.0])]).unwrap();
    let mut m = GroundedModel::<f64>::new(&emb, 2, 2, 2, 0).unwrap();
    assert_eq!(m.regularizer(0.001, 1.0), 0.0);
    // 60° away: cos = 0.5
    *m.store.value_mut(m.emb) = Tensor::row_vector(vec![0.5, 3f64.sqrt() / 2.0]);
    assert!((m.regularizer(0.001, 1.0) - 0.0005).abs() < 1e-15);
    assert_eq!(m.regularizer(0.0, 1.0), 0.0);
    *m.store.value_mut(m.emb) = Tensor::row_vector(vec![0.0, 2.0]);
    assert_eq!(m.regularizer(0.7, 0.0), 0.0);
    // zero row: cosine taken as 0
    *m.store.value_mut(m.emb) = Tensor::row_vector(vec![0.0, 0.0]);
    assert!((m.regularizer(1.0, 0.4) - 0.4).abs() < 1e-15);
}

#[test]
fn total_is_the_plain_sum() {
    let f = fixture(7, 3, 4, 5, 4);
    let mut m = f.model;
    // move T_e off its starting point so R is non-zero
    let e = m.store.value(m.emb).map(|x| x * 1.1 + 0.05);
    *m.store.value_mut(m.emb) = e;
    let cfg = TrainConfig {
        alpha: 0.3,
        ..Default::default()
    };
    let bd = m.total_loss(&f.batch, &cfg, BnMode::Train).unwrap();
    let (fw, bw, bin, r) = (
        bd.fw.unwrap(),
        bd.bw.unwrap(),
        bd.bin.unwrap(),
        bd.reg.unwrap(),
    );
    assert!(r > 0.0);
    assert_eq!(bd.total, fw + bw + bin + r);
    assert!(
        (fw - m
            .forward_lm_loss(&f.batch, Direction::Forward, BnMode::Train)
            .unwrap())
        .abs()
            < 1e-12
    );
    assert!((bin - m.matcher_loss(&f.batch, BnMode::Train).unwrap()).abs() < 1e-12);

    let only_fw = m
        .total_loss(&f.batch, &lm_only("fw"), BnMode::Train)
        .unwrap();
    assert_eq!((only_fw.bw, only_fw.bin, only_fw.reg), (None, None, None));
    assert_eq!(only_fw.total, only_fw.fw.unwrap());

    let zero_alpha = TrainConfig {
        alpha: 0.0,
        ..Default::default()
    };
    assert_eq!(
        m.total_loss(&f.batch, &zero_alpha, BnMode::Train)
            .unwrap()
            .reg,
        Some(0.0)
    );
}

#[test]
fn padding_does_not_change_losses() {
    let f = fixture(8, 3, 4, 5, 6);
    let cfg = TrainConfig {
        alpha: 0.2,
        ..Default::default()
    };
    let padded = f.batch.with_extra_padding(3);
    for mode in [BnMode::Train, BnMode::Infer] {
        let a = f.model.total_loss(&f.batch, &cfg, mode).unwrap();
        let b = f.model.total_loss(&padded, &cfg, mode).unwrap();
        for (x, y) in [(a.fw, b.fw), (a.bw, b.bw), (a.bin, b.bin), (a.reg, b.reg)] {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn decode_uses_live_storage() {
    let f = fixture(6, 3, 4, 5, 8);
    let mut m = f.model;
    let check = |m: &GroundedModel<f64>| {
        for (o, logits) in m
            .lm_trace(&f.batch, Direction::Forward, BnMode::Train)
            .unwrap()
        {
            assert_eq!(m.decode_logits_raw(&o), logits);
        }
    };
    check(&m);
    m.store.value_mut(m.mapping).data_mut()[3] += 0.5;
    m.store.value_mut(m.emb).data_mut()[1] -= 0.25;
    check(&m);
}

#[test]
fn mapping_changes_encode_and_decode() {
    let f = fixture(6, 3, 4, 5, 9);
    let mut m = f.model;
    let before_ground = m.ground_words(&[2]).unwrap();
    let o = Tensor::row_vector(vec![0.3, -0.1, 0.7, 0.2]);
    let before_logits = m.decode_logits_raw(&o);
    m.store.value_mut(m.mapping).data_mut()[0] += 1.0;
    assert_ne!(m.ground_words(&[2]).unwrap(), before_ground);
    assert_ne!(m.decode_logits_raw(&o), before_logits);
}

#[test]
fn grounding_is_linear() {
    let f = fixture(4, 3, 5, 2, 10);
    let m = f.model.mapping_matrix().clone();
    let ground =
        |u: &[f64]| crate::numerics::matmul(&Tensor::row_vector(u.to_vec()), &m).into_data();
    let (u, v) = ([0.2, -1.0, 0.5], [1.5, 0.3, -0.7]);
    let (a, b) = (2.5, -0.75);
    let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
    let lhs = ground(&mix);
    let (gu, gv) = (ground(&u), ground(&v));
    for j in 0..5 {
        assert!((lhs[j] - (a * gu[j] + b * gv[j])).abs() < 1e-12);
    }
}

#[test]
fn dropping_the_image_changes_the_loss() {
    let f = fixture(6, 3, 4, 5, 12);
    let mut b = f.batch.clone();
    let with = f
        .model
        .forward_lm_loss(&b, Direction::Forward, BnMode::Infer)
        .unwrap();
    b.image_feats.fill(0.0);
    let mut m = f.model.clone();
    *m.store.value_mut(m.proj_b2) = Tensor::zeros(&[1, 4]);
    let without = m
        .forward_lm_loss(&b, Direction::Forward, BnMode::Infer)
        .unwrap();
    assert_ne!(with, without);
}

#[test]
fn train_step_respects_freeze() {
    let (emb, feats, recs) = random_corpus(6, 3, 4, 8, 4, 13).unwrap();
    let mut m = GroundedModel::<f32>::new(&emb, 5, 4, 5, 13).unwrap();
    m.set_embeddings_frozen(true);
    let before = m.embeddings().clone();
    let cfg = TrainConfig {
        alpha: 0.5,
        beta: 0.5,
        batch_size: 4,
        ..Default::default()
    };
    let batch = make_batches(&recs, &feats, 6, 4, true, 1)
        .unwrap()
        .remove(0);
    let m_before = m.mapping_matrix().clone();
    let bd = train_step(&mut m, &batch, &cfg).unwrap();
    assert_eq!(m.embeddings(), &before);
    assert_ne!(m.mapping_matrix(), &m_before);
    // unchanged rows: cos = 1, so R = α·|β − 1|
    assert!((bd.reg.unwrap() - 0.25).abs() < 1e-6);
}

#[test]
fn train_step_updates_running_stats() {
    let (emb, feats, recs) = random_corpus(6, 3, 4, 8, 4, 14).unwrap();
    let mut m = GroundedModel::<f32>::new(&emb, 5, 4, 5, 14).unwrap();
    let batch = make_batches(&recs, &feats, 6, 8, true, 1)
        .unwrap()
        .remove(0);
    let cfg = TrainConfig {
        batch_size: 8,
        ..Default::default()
    };
    train_step(&mut m, &batch, &cfg).unwrap();
    assert!(m.bn_f.running_mean.iter().any(|&x| x != 0.0));
    assert!(m.bn_m.running_var.iter().any(|&x| x != 1.0));
    assert_eq!(m.store.step, 1);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (emb, feats, recs) = random_corpus(6, 3, 4, 8, 4, 15).unwrap();
    let mut m = GroundedModel::<f32>::new(&emb, 5, 4, 3, 15).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        grounded_dim: 5,
        projector_dim: Some(3),
        ..Default::default()
    };
    for b in make_batches(&recs, &feats, 6, 4, true, 2).unwrap() {
        train_step(&mut m, &b, &cfg).unwrap();
    }
    m.set_embeddings_frozen(true);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.ckpt");
    save_checkpoint(&m, Some(&cfg), &p).unwrap();
    let (back, cfg_back) = load_checkpoint(&p).unwrap();
    assert_eq!(cfg_back.as_ref(), Some(&cfg));
    assert_eq!(back.store.step, m.store.step);
    assert_eq!(
        back.store.mu_product.to_bits(),
        m.store.mu_product.to_bits()
    );
    assert_eq!(back, m);

    let p2 = dir.path().join("again.ckpt");
    save_checkpoint(&back, Some(&cfg), &p2).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"VGEMBCK1garbage").unwrap();
    assert!(load_checkpoint(&p).is_err());
    assert!(load_checkpoint(dir.path().join("missing")).is_err());
}

#[test]
fn patience_zero_stops_at_first_non_improving_epoch() {
    let (emb, feats, recs) = random_corpus(6, 3, 4, 12, 4, 16).unwrap();
    // a learning rate this large makes validation loss rise almost at once
    let cfg = TrainConfig {
        grounded_dim: 4,
        batch_size: 4,
        epochs: 30,
        patience: 0,
        lr: 0.5,
        ..Default::default()
    };
    let data = TrainData {
        embeddings: &emb,
        train: &recs[..8],
        val: &recs[8..],
        features: &feats,
    };
    let out = train(&cfg, &data).unwrap();
    let first_bad = out.log.iter().position(|e| !e.improved);
    if let Some(i) = first_bad {
        assert_eq!(out.log.len(), i + 1);
        assert!(out.stopped_early || out.log.len() == cfg.epochs);
    } else {
        assert_eq!(out.log.len(), cfg.epochs);
    }
    assert!(out.log.iter().take_while(|e| e.improved).count() >= 1);
}

#[test]
fn epoch_seeds_differ() {
    let s: std::collections::BTreeSet<u64> = (1..50).map(|e| epoch_seed(3, e)).collect();
    assert_eq!(s.len(), 49);
    assert_eq!(epoch_seed(3, 4), epoch_seed(3, 4));
}
