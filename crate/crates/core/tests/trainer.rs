mod common;

use common::{random_split, tiny_run};
use nepgpt::error::Error;
use nepgpt::model::Checkpoint;
use nepgpt::shards::SplitRole;
use nepgpt::tensor::Tensor;
use nepgpt::trainer::{
    adamw_step, checkpoint_name, train, MetricsRecord, OptimHyper, OptimState, RunConfig, Trainer,
    METRICS_HEADER,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

#[test]
fn split_micro_batches_match_one_large_batch() {
    let split = || random_split(SplitRole::Train, 4_000, 64, 3);
    let mut a = Trainer::new(tiny_run(64, 2, 2, 10), split(), None).unwrap();
    let mut b = Trainer::new(tiny_run(64, 4, 1, 10), split(), None).unwrap();
    let (la, ga) = a.accumulate().unwrap();
    let (lb, gb) = b.accumulate().unwrap();
    assert_eq!(a.cursor(), b.cursor());
    assert!((la - lb).abs() < 1e-6, "{la} {lb}");
    for (x, y) in ga.iter().zip(&gb) {
        assert!(max_abs_diff(x, y) < 1e-6);
    }

    let mut a = Trainer::new(tiny_run(64, 2, 2, 10), split(), None).unwrap();
    let mut b = Trainer::new(tiny_run(64, 4, 1, 10), split(), None).unwrap();
    a.step().unwrap();
    b.step().unwrap();
    for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
        assert!(max_abs_diff(x.data(), y.data()) < 1e-6);
    }
    assert_eq!(a.tokens_seen(), 4 * 8);
    assert_eq!(a.tokens_seen(), b.tokens_seen());
}

#[test]
fn paper_batch_token_accounting() {
    assert_eq!(RunConfig::default().tokens_per_step(), 524_288);
}

#[test]
fn resume_is_bit_identical() {
    let cfg = tiny_run(64, 2, 2, 10);
    let split = || random_split(SplitRole::Train, 500, 64, 9);
    let val = || Some(random_split(SplitRole::Val, 200, 64, 10));
    let mut full = Trainer::new(cfg, split(), val()).unwrap();
    full.run_until(10).unwrap();

    let mut first = Trainer::new(cfg, split(), val()).unwrap();
    first.run_until(5).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes, "mid".as_ref()).unwrap();
    let mut second = Trainer::resume(cfg, split(), val(), &ck).unwrap();
    second.run_until(10).unwrap();
    assert!(second.is_done());
    assert_eq!(full.checkpoint().to_bytes(), second.checkpoint().to_bytes());
}

#[test]
fn resume_refuses_other_config() {
    let cfg = tiny_run(64, 2, 1, 4);
    let mut t = Trainer::new(cfg, random_split(SplitRole::Train, 300, 64, 1), None).unwrap();
    t.run_until(1).unwrap();
    let ck = t.checkpoint();
    let mut other = cfg;
    other.optim.weight_decay = 0.0;
    let err = Trainer::resume(other, random_split(SplitRole::Train, 300, 64, 1), None, &ck).unwrap_err();
    assert!(matches!(err, Error::ConfigHashMismatch { .. }));
}

#[test]
fn vocab_mismatch_is_rejected() {
    let err = Trainer::new(tiny_run(64, 2, 1, 4), random_split(SplitRole::Train, 300, 32, 1), None)
        .unwrap_err();
    assert!(matches!(err, Error::VocabMismatch { .. }));
}

#[test]
fn too_little_data_is_rejected() {
    let err = Trainer::new(tiny_run(64, 8, 8, 4), random_split(SplitRole::Train, 100, 64, 1), None)
        .unwrap_err();
    assert!(matches!(err, Error::CorpusTooSmall(_)));
}

/// Scalar AdamW written out independently of the library.
fn reference_adamw(w: f64, g: f64, m: f64, v: f64, t: i32, lr: f64, h: &OptimHyper) -> (f64, f64, f64) {
    let m = h.beta1 * m + (1.0 - h.beta1) * g;
    let v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    let m_hat = m / (1.0 - h.beta1.powi(t));
    let v_hat = v / (1.0 - h.beta2.powi(t));
    let w = w - lr * (m_hat / (v_hat.sqrt() + h.epsilon) + h.weight_decay * w);
    (w, m, v)
}

#[test]
fn adamw_matches_scalar_reference() {
    let h = OptimHyper::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let w0: f64 = rng.random_range(-2.0..2.0);
        let mut params = vec![Tensor::<f64>::new(vec![1, 1], vec![w0]).unwrap()];
        let mut state = OptimState::zeros(&params);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let steps = rng.random_range(1..6);
        for t in 1..=steps {
            let g: f64 = rng.random_range(-3.0..3.0);
            let lr: f64 = rng.random_range(1e-5..1e-2);
            adamw_step(&mut params, &[true], &[vec![g]], &mut state, &h, lr).unwrap();
            (w, m, v) = reference_adamw(w, g, m, v, t, lr, &h);
        }
        let got = params[0].data()[0];
        worst = worst.max((got - w).abs() / w.abs().max(1e-12));
        assert_eq!(state.t, steps as u64);
        assert!((state.m[0][0] - m).abs() <= 1e-12 * m.abs().max(1.0));
        assert!((state.v[0][0] - v).abs() <= 1e-12 * v.abs().max(1.0));
    }
    assert!(worst < 1e-7, "{worst}");

    let mut p = vec![Tensor::<f32>::new(vec![1, 1], vec![1.0]).unwrap()];
    let mut s = OptimState::zeros(&p);
    adamw_step(&mut p, &[true], &[vec![0.5]], &mut s, &h, 6e-4).unwrap();
    assert!((p[0].data()[0] as f64 - 0.99934).abs() < 1e-7);
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(64, 2, 1, 6);
    cfg.train.log_every = 2;
    cfg.train.checkpoint_every = 4;
    let split = || random_split(SplitRole::Train, 400, 64, 4);
    let val = || Some(random_split(SplitRole::Val, 100, 64, 5));
    let summary = train(cfg, split(), val(), dir.path(), None).unwrap();
    assert_eq!(summary.steps, 6);
    assert_eq!(summary.tokens, 6 * 16);
    let names: Vec<String> = summary
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, [checkpoint_name(4), checkpoint_name(6)]);

    let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let rows: Vec<MetricsRecord> = lines.map(|l| MetricsRecord::parse(l).unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 2, 4, 5]);
    for r in &rows {
        let (v, p) = (r.val_loss.unwrap(), r.perplexity.unwrap());
        assert!((p / v.exp() - 1.0).abs() < 1e-6);
    }

    let resumed = train(cfg, split(), val(), dir.path(), Some(&summary.checkpoints[0])).unwrap();
    assert_eq!(resumed.steps, 6);
    let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
    assert_eq!(text.lines().filter(|l| *l == METRICS_HEADER).count(), 1);
    let again: Vec<MetricsRecord> = text.lines().skip(1).map(|l| MetricsRecord::parse(l).unwrap()).collect();
    assert_eq!(again.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 2, 4, 5]);
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!(a.val_loss, b.val_loss);
    }
}
