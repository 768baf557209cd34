mod common;

use cocoa_core::checkpoint::{load_encoder, save_encoder};
use cocoa_core::encoder::EncoderParams;
use cocoa_core::io::{export_embeddings, read_embeddings};
use cocoa_core::pipeline::{
    batch_sweep, finetune, label_curve, linear_probe, pretrain, Method, SweepGrid, TrainConfig,
};

use common::*;

fn config(method: Method, max_epochs: usize) -> TrainConfig {
    let mut c = TrainConfig {
        method,
        batch_size: 8,
        max_epochs,
        seed: 5,
        ..Default::default()
    };
    c.hyper.tau = 0.5;
    c.hyper.lambda = 8.0;
    c
}

#[test]
fn probe_leaves_encoder_untouched_and_finetune_does_not() {
    let (splits, enc) = small_splits(1);
    let params = EncoderParams::init(enc, 3).unwrap();
    let before = params.hash();
    let probe = linear_probe(&params, &splits, &config(Method::Cocoa, 3)).unwrap();
    assert_eq!(params.hash(), before);
    assert_eq!(probe.encoder.hash(), before);
    let ft = finetune(&params, &splits, &config(Method::Cocoa, 2), 1.0).unwrap();
    assert_eq!(params.hash(), before);
    assert_ne!(ft.encoder.hash(), before);
}

#[test]
fn runs_are_bit_reproducible() {
    let (splits, enc) = small_splits(2);
    for method in Method::SELF_SUPERVISED {
        let cfg = config(method, 2);
        let a = pretrain(&splits, &enc, &cfg).unwrap();
        let b = pretrain(&splits, &enc, &cfg).unwrap();
        assert_eq!(a.params.hash(), b.params.hash(), "{method}");
        assert_eq!(without_timing(&a.metrics), without_timing(&b.metrics), "{method}");
    }
    let cfg = config(Method::Cocoa, 2);
    let pre = pretrain(&splits, &enc, &cfg).unwrap();
    let x = finetune(&pre.params, &splits, &cfg, 0.5).unwrap();
    let y = finetune(&pre.params, &splits, &cfg, 0.5).unwrap();
    assert_eq!(x.encoder.hash(), y.encoder.hash());
    assert_eq!(x.test, y.test);
    let other = pretrain(&splits, &enc, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(other.params.hash(), pre.params.hash());
}

#[test]
fn early_stopping_honors_patience_and_budget() {
    let defaults = TrainConfig::default();
    assert_eq!((defaults.early_stop_patience, defaults.max_epochs), (5, 100));

    let (splits, enc) = small_splits(3);
    let cfg = TrainConfig { lr: 1e-2, ..config(Method::Cocoa, 100) };
    let pre = pretrain(&splits, &enc, &cfg).unwrap();
    let vals: Vec<f64> = pre.metrics.iter().map(|m| m.val_loss.unwrap()).collect();
    assert!(pre.epochs_run <= 100);
    if pre.epochs_run < 100 {
        assert_eq!(pre.epochs_run, pre.best_epoch + 5);
    }
    let best = vals[pre.best_epoch - 1];
    assert_eq!(best, pre.best_val_loss);
    assert!(vals.iter().all(|&v| v >= best));

    let short = pretrain(&splits, &enc, &config(Method::Cocoa, 3)).unwrap();
    assert_eq!(short.epochs_run, 3);
    assert_eq!(short.metrics.len(), 3);
}

#[test]
fn classification_stops_on_validation_f1() {
    let (splits, enc) = small_splits(4);
    let params = EncoderParams::init(enc, 0).unwrap();
    let out = linear_probe(&params, &splits, &TrainConfig { early_stop_patience: 2, ..config(Method::Cocoa, 100) })
        .unwrap();
    assert!(out.epochs_run < 100);
    assert_eq!(out.epochs_run, out.best_epoch + 2);
    let f1s: Vec<f64> = out.metrics.iter().map(|m| m.macro_f1.unwrap()).collect();
    assert_eq!(f1s[out.best_epoch - 1], out.val_f1);
    assert!(f1s.iter().all(|&f| f <= out.val_f1));
}

#[test]
fn pretrained_embeddings_cluster_by_class() {
    let (splits, enc) = small_splits(5);
    let pre = pretrain(&splits, &enc, &config(Method::Cocoa, 15)).unwrap();
    let batch = splits.test.full_batch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    let concat = pre.params.encode_concat(&batch).unwrap();
    export_embeddings(&concat, batch.labels.as_deref(), &path).unwrap();
    let (emb, labels) = read_embeddings(&path).unwrap();
    assert_eq!(emb, concat);
    let labels = labels.unwrap();

    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let (mut within, mut between) = ((0.0, 0), (0.0, 0));
    for i in 0..emb.rows() {
        for j in i + 1..emb.rows() {
            let s = cos(emb.row(i), emb.row(j));
            let slot = if labels[i] == labels[j] { &mut within } else { &mut between };
            slot.0 += s;
            slot.1 += 1;
        }
    }
    let (w, b) = (within.0 / within.1 as f64, between.0 / between.1 as f64);
    assert!(w > b, "within {w} between {b}");
}

#[test]
fn checkpoint_restores_pretrained_encoder() {
    let (splits, enc) = small_splits(6);
    let pre = pretrain(&splits, &enc, &config(Method::Infonce, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ckpt");
    save_encoder(&path, &pre.params, &[]).unwrap();
    let (back, extra) = load_encoder(&path).unwrap();
    assert!(extra.is_empty());
    assert_eq!(back.hash(), pre.params.hash());
    let batch = splits.val.full_batch().unwrap();
    assert_eq!(back.encode(&batch).unwrap(), pre.params.encode(&batch).unwrap());
}

#[test]
fn sweep_counts_match_formula() {
    let (splits, enc) = small_splits(7);
    let grid = SweepGrid {
        methods: vec![Method::Cocoa, Method::Cmc, Method::Barlow],
        batch_sizes: vec![4, 8],
        seeds: vec![0],
    };
    let rows = batch_sweep(&splits, &enc, &grid, &config(Method::Cocoa, 1), 2).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        match r.formula_count {
            Some(f) => assert_eq!(r.similarity_evaluations, f),
            None => assert_eq!(r.method, Method::Barlow),
        }
    }
    let serial = batch_sweep(&splits, &enc, &grid, &config(Method::Cocoa, 1), 1).unwrap();
    let strip = |rs: &[cocoa_core::pipeline::SweepRow]| {
        rs.iter().map(|r| (r.method, r.batch_size, r.macro_f1, r.similarity_evaluations)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&rows), strip(&serial));
}

#[test]
fn label_curve_reports_every_fraction() {
    let (splits, enc) = small_splits(8);
    let curve = label_curve(&splits, &enc, &config(Method::Supervised, 2), &[0.25, 1.0], &[0, 1]).unwrap();
    assert_eq!(curve.points.len(), 2);
    for p in &curve.points {
        assert_eq!(p.scores.len(), 2);
        let mean = p.scores.iter().sum::<f64>() / 2.0;
        assert!((p.mean_macro_f1 - mean).abs() < 1e-15);
        assert!(p.std_macro_f1 >= 0.0);
    }
    assert!(label_curve(&splits, &enc, &config(Method::Cocoa, 1), &[0.0], &[0]).is_err());
}
