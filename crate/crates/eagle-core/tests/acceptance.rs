//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use eagle_core::check;
use eagle_core::data::{synth::synth_generate, LesionKind, WindowSpec};
use eagle_core::loss::{bce, combined_loss, dice_loss, LossWeights};
use eagle_core::metrics::metrics;
use eagle_core::model::{Eagle, EagleConfig};
use eagle_core::tensor::Tensor;
use eagle_core::train::{
    checkpoint, evaluate, schedule::ProgressState, train_loop, OptimConfig, TrainOptions,
};
use std::time::Instant;

fn report(criterion: &str, passed: bool, detail: &str) {
    println!("[{}] criterion {criterion}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {criterion}: {detail}");
}

fn report_outcomes(criterion: &str, outcomes: &[check::CheckOutcome], elapsed_s: f64, budget_s: f64) {
    for o in outcomes {
        println!("  [{}] {}: {}", if o.passed { "ok" } else { "FAIL" }, o.name, o.detail);
    }
    let all = outcomes.iter().all(|o| o.passed);
    report(
        criterion,
        all && elapsed_s < budget_s,
        &format!("{} properties in {elapsed_s:.1}s (budget {budget_s:.0}s)", outcomes.len()),
    );
}

#[test]
fn criterion_1_haar_suite() {
    let start = Instant::now();
    let outcomes = check::haar_suite().unwrap();
    report_outcomes("1 (haar)", &outcomes, start.elapsed().as_secs_f64(), 10.0);
}

#[test]
fn criterion_2_scan_oracle_suite() {
    let start = Instant::now();
    let outcomes = check::scan_suite().unwrap();
    report_outcomes("2 (scan oracle)", &outcomes, start.elapsed().as_secs_f64(), 30.0);
}

#[test]
fn criterion_3_gradient_suite() {
    let start = Instant::now();
    let outcomes = check::grad_suite().unwrap();
    report_outcomes("3 (gradients)", &outcomes, start.elapsed().as_secs_f64(), 120.0);
}

#[test]
fn criterion_4_shape_suite() {
    let start = Instant::now();
    let outcomes = check::shape_suite().unwrap();
    report_outcomes("4 (shapes)", &outcomes, start.elapsed().as_secs_f64(), 60.0);
}

#[test]
fn criterion_5_loss_metric_fixtures() {
    let y = Tensor::<f64>::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let half = Tensor::<f64>::from_vec(&[4], vec![0.5; 4]).unwrap();
    let v = bce(&y, &half).unwrap().item();
    let bce_ok = (v - std::f64::consts::LN_2).abs() < 1e-6;

    let a = Tensor::<f64>::from_vec(&[4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let b = Tensor::<f64>::from_vec(&[4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let disjoint = dice_loss(&a, &b).unwrap().item();
    let dice_ok = (disjoint - 1.0).abs() < 1e-6;

    let p = Tensor::<f64>::from_vec(&[4], vec![0.7, 0.2, 0.9, 0.4]).unwrap();
    let sum = dice_loss(&y, &p).unwrap().item() + bce(&y, &p).unwrap().item();
    let both = combined_loss(&y, &p, &LossWeights::default()).unwrap().item();
    let combined_ok = (both - sum).abs() < 1e-12;

    // 4 positives, prediction covers 2 plus 2 false positives
    let yt = Tensor::<f64>::from_vec(&[8], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let pt = Tensor::<f64>::from_vec(&[8], vec![0.9, 0.8, 0.1, 0.2, 0.7, 0.6, 0.0, 0.0]).unwrap();
    let m = metrics(&yt, &pt, 0.5).unwrap();
    let count_ok = m.dsc == 0.5 && m.precision == 0.5 && m.recall == 0.5;

    println!("  bce(0.5) = {v:.9} (ln 2 = {:.9})", std::f64::consts::LN_2);
    println!("  dice(disjoint) = {disjoint:.9}");
    println!("  combined = dice + bce: {both:.9} vs {sum:.9}");
    println!("  counting fixture: dsc/precision/recall = {}/{}/{}", m.dsc, m.precision, m.recall);
    report(
        "5 (loss/metric fixtures)",
        bce_ok && dice_ok && combined_ok && count_ok,
        "four pinned fixtures",
    );
}

#[test]
fn criterion_6_windowing() {
    let spec = WindowSpec::default();
    let raw = Tensor::<f64>::from_vec(&[5], vec![-40.0, 35.0, 110.0, 200.0, -500.0]).unwrap();
    let got = eagle_core::data::window_hu(&raw, &spec).unwrap().to_vec();
    let want = [0.0, 0.5, 1.0, 1.0, 0.0];
    println!("  HU [-40, 35, 110, 200, -500] -> {got:?}");
    report("6 (windowing)", got == want, "exact window endpoints");
}

#[test]
fn criterion_7_schedule_fixtures() {
    // halving at the 6th flat epoch
    let mut st = ProgressState::new(1e-3, 5, 0.5, 30);
    let mut halved_at = None;
    for epoch in 1..=6 {
        if st.observe_validation(1.0).lr_reduced && halved_at.is_none() {
            halved_at = Some(epoch);
        }
    }
    let plateau_ok = halved_at == Some(6) && (st.lr - 5e-4).abs() < 1e-18;

    // stop exactly at best + 30
    let mut st2 = ProgressState::new(1e-3, 5, 0.5, 30);
    let mut stopped_after = None;
    for epoch in 1..=60 {
        let loss = if epoch <= 3 { 1.0 / epoch as f64 } else { 0.9 };
        st2.observe_validation(loss);
        if st2.should_stop() {
            stopped_after = Some(epoch);
            break;
        }
    }
    let stop_ok = stopped_after == Some(33);
    println!("  lr halved at epoch {halved_at:?}; early stop after epoch {stopped_after:?}");
    report("7 (scheduler/early stop)", plateau_ok && stop_ok, "step-through fixtures exact");
}

#[test]
fn criterion_8_overfit_sanity() {
    let start = Instant::now();
    let samples = synth_generate::<f32>(16, 0xea61e, LesionKind::Synthetic, 64).unwrap();
    let cfg = EagleConfig::tiny();
    let model = Eagle::<f32>::new(cfg, 0xea61e).unwrap();
    let opts = TrainOptions {
        optim: OptimConfig {
            max_epochs: 200,
            early_stop_patience: 200, // the fixture tracks train DSC, not early stopping
            ..Default::default()
        },
        seed: 0xea61e,
        ..Default::default()
    };
    // validation = the training set: the fixture measures memorization, and
    // the observer stops as soon as the bar is reached
    let mut reached = None;
    let mut last_dsc = 0.0;
    train_loop(&model, &samples, &samples, &opts, None, |record| {
        last_dsc = record.dsc;
        if record.dsc >= 0.95 && reached.is_none() {
            reached = Some(record.epoch);
        }
        reached.is_none()
    })
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "  train DSC >= 0.95 first reached at epoch {reached:?} (final {last_dsc:.4}) in {elapsed:.0}s"
    );
    report(
        "8 (overfit sanity)",
        reached.is_some() && elapsed < 1800.0,
        &format!("threshold 0.95 within 200 epochs, {elapsed:.0}s < 1800s"),
    );
}

#[test]
fn criterion_9_determinism_and_checkpoint_roundtrip() {
    let samples = synth_generate::<f32>(8, 77, LesionKind::Synthetic, 64).unwrap();
    let (train, val) = samples.split_at(6);
    let cfg = EagleConfig {
        channels: [4, 8, 16, 32, 64],
        depths: [1, 1, 1, 1],
        decoder_depths: [1, 1, 1, 1],
        cbam_reduction: 4,
        ssm_state_dim: 2,
        ..Default::default()
    };
    let opts = TrainOptions {
        optim: OptimConfig {
            max_epochs: 3,
            ..Default::default()
        },
        seed: 11,
        ..Default::default()
    };
    let dir_a = std::env::temp_dir().join(format!("eagle_acc_det_a_{}", std::process::id()));
    let dir_b = std::env::temp_dir().join(format!("eagle_acc_det_b_{}", std::process::id()));
    for d in [&dir_a, &dir_b] {
        let _ = std::fs::remove_dir_all(d);
    }
    let model_a = Eagle::<f32>::new(cfg.clone(), 11).unwrap();
    let out_a = train_loop(&model_a, train, val, &opts, Some(&dir_a), |_| true).unwrap();
    let model_b = Eagle::<f32>::new(cfg.clone(), 11).unwrap();
    let out_b = train_loop(&model_b, train, val, &opts, Some(&dir_b), |_| true).unwrap();
    let logs_identical = std::fs::read(dir_a.join("metrics.jsonl")).unwrap()
        == std::fs::read(dir_b.join("metrics.jsonl")).unwrap();
    println!(
        "  identical seeded runs: records equal = {}, logs byte-equal = {logs_identical}",
        out_a.records == out_b.records
    );

    // restoring best.ckpt must reproduce the evaluation recorded for the
    // epoch that produced it, bitwise
    let (loaded, header) = checkpoint::load::<f32>(&dir_a.join("best.ckpt")).unwrap();
    let (loss_loaded, m_loaded) = evaluate(&loaded, val, &LossWeights::default(), 0.5, 4).unwrap();
    let best_record = out_a
        .records
        .iter()
        .find(|r| r.epoch as u64 == header.epoch)
        .expect("best epoch is in the history");
    let roundtrip_ok = loss_loaded == best_record.val_loss
        && m_loaded.dsc == best_record.dsc
        && m_loaded.precision == best_record.precision
        && m_loaded.recall == best_record.recall;
    println!(
        "  checkpoint round-trip: restored eval loss {loss_loaded} vs recorded {}",
        best_record.val_loss
    );
    report(
        "9 (determinism)",
        out_a.records == out_b.records && logs_identical && roundtrip_ok,
        "seeded runs identical; checkpoint save/load evaluates bitwise",
    );
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
}
