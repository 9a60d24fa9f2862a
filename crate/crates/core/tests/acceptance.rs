// Acceptance run: one PASS/FAIL line per criterion, then a single assert.
// Lines go straight to stderr so they show without --nocapture.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::density::{fit, grid_mass, planar_flow, Mixture};
use common::flowcheck::{composed_checks, layer_checks};
use common::gradsuite::{all_cases, FD_TOLERANCE};
use common::roc::{brute_roc, eer_on_curve, pair_auc, random_series};
use common::{synth, video_of, FULL_LAYOUT_ROWS};
use itae::checkpoint::hash_dir;
use itae::config::RunConfig;
use itae::data::{
    clips_from_video, write_synthetic, AnomalyMode, AnomalySpan, ClipSpec, SyntheticSceneConfig,
};
use itae::itae::{EncoderMode, ItaeConfig, ItaeModel, VideoClip};
use itae::metrics::roc_auc_eer;
use itae::pipeline::{
    cmd_sweep, cmd_train_itae, cmd_train_nf, evaluate, fit_flows, fit_itae, score_video,
    sweep_lambda, sweep_table, Flows, RunLayout,
};
use itae::scoring::{ScoreSeries, LAMBDA_GRID};
use itae::Shape5;

// libtest captures print! and eprint!, not direct writes to the handle
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stderr(), $($arg)*);
    }};
}

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

/// Run one criterion, time it, print its line. A panic counts as FAIL.
fn criterion(n: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let took = t0.elapsed();
    let in_time = budget.is_none_or(|b| took <= b);
    let ok = v.ok && in_time;
    let budget_note = match budget {
        Some(b) if !in_time => format!(", over the {}s budget", b.as_secs()),
        Some(b) => format!(", budget {}s", b.as_secs()),
        None => String::new(),
    };
    say!(
        "{} [{n}] {name}: {} ({:.1}s{budget_note})",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64()
    );
    ok
}

fn flow_correctness() -> Verdict {
    let tol = 1e-6;
    let mut checks = Vec::new();
    for seed in 0..3 {
        checks.extend(layer_checks(seed));
        checks.extend(composed_checks(seed));
    }
    let worst =
        |f: fn(&common::flowcheck::LayerCheck) -> f64| checks.iter().map(f).fold(0.0, f64::max);
    let bad: Vec<&str> = checks
        .iter()
        .filter(|c| !c.ok(tol))
        .map(|c| c.name.as_str())
        .collect();
    verdict(
        bad.is_empty(),
        format!(
            "{} checks, worst round trip {:.1e}, logdet gap {:.1e}, antisymmetry {:.1e}{}",
            checks.len(),
            worst(|c| c.roundtrip),
            worst(|c| c.logdet_gap),
            worst(|c| c.antisymmetry),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failing {bad:?}")
            }
        ),
    )
}

fn likelihood_conservation() -> Verdict {
    let mut stack = planar_flow(4, 0);
    let before = grid_mass(&stack, 6.0, 0.05);
    fit(&mut stack, &Mixture::standard().sample(2000, 1), 15, 0);
    let after = grid_mass(&stack, 6.0, 0.05);
    verdict(
        (before - 1.0).abs() <= 0.02 && (after - 1.0).abs() <= 0.02,
        format!("mass over [-6,6]^2 before {before:.4}, after {after:.4}"),
    )
}

fn gradient_integrity() -> Verdict {
    let mut worst = (0.0, "", 0);
    let mut failing = Vec::new();
    let mut count = 0;
    for seed in 0..5 {
        for (name, err) in all_cases(seed) {
            count += 1;
            if err.is_nan() || err >= FD_TOLERANCE {
                failing.push(format!("{name}@{seed}"));
            }
            if err > worst.0 || err.is_nan() {
                worst = (err, name, seed);
            }
        }
    }
    verdict(
        failing.is_empty(),
        format!(
            "{count} cases over 5 seeds, worst {:.1e} ({} seed {}){}",
            worst.0,
            worst.1,
            worst.2,
            if failing.is_empty() {
                String::new()
            } else {
                format!("; failing {failing:?}")
            }
        ),
    )
}

fn shape_fidelity() -> Verdict {
    let trace = |cfg: ItaeConfig, s: Shape5| -> Vec<(String, [usize; 5])> {
        ItaeModel::new(cfg)
            .unwrap()
            .trace_shapes(s)
            .unwrap()
            .into_iter()
            .map(|l| (l.layer, l.shape.0))
            .collect()
    };
    let find = |rows: &[(String, [usize; 5])], name: &str| {
        rows.iter().find(|(n, _)| n == name).map(|r| r.1)
    };
    let mut wrong = Vec::new();
    let full = trace(ItaeConfig::full(3), Shape5::new(1, 3, 16, 256, 256));
    for (name, [c, t, h, w]) in FULL_LAYOUT_ROWS {
        if find(&full, name) != Some([1, c, t, h, w]) {
            wrong.push(format!("full {name}: {:?}", find(&full, name)));
        }
    }
    // 64x64, T = 8: time halves, space quarters, gray output
    let desk = trace(ItaeConfig::full(1), Shape5::new(1, 1, 8, 64, 64));
    for (name, [c, t, h, w]) in FULL_LAYOUT_ROWS {
        let c = if name == "decoder.deconv4" { 1 } else { c };
        if find(&desk, name) != Some([1, c, t / 2, h / 4, w / 4]) {
            wrong.push(format!("desk {name}: {:?}", find(&desk, name)));
        }
    }
    verdict(
        wrong.is_empty(),
        format!(
            "{} rows at 256^2/T=16 and {} scaled rows at 64^2/T=8 {wrong:?}",
            FULL_LAYOUT_ROWS.len(),
            FULL_LAYOUT_ROWS.len()
        ),
    )
}

fn metric_oracle() -> Verdict {
    let (mut auc_gap, mut eer_bad, mut frames) = (0.0f64, 0, 0);
    for seed in 0..100 {
        let (s, l) = random_series(seed);
        frames = frames.max(s.len());
        let roc = roc_auc_eer(&s, &l).unwrap();
        auc_gap = auc_gap.max((roc.auc - pair_auc(&s, &l)).abs());
        if !eer_on_curve(&brute_roc(&s, &l), roc.eer) {
            eer_bad += 1;
        }
    }
    verdict(
        auc_gap < 1e-9 && eer_bad == 0,
        format!("100 series up to {frames} frames, max AUC gap {auc_gap:.1e}, EER off the crossing in {eer_bad}"),
    )
}

/// Scores from the synthetic run, kept for the sweep.
struct SynthRun {
    speed: ScoreSeries,
    shape: ScoreSeries,
}

fn desk() -> RunConfig {
    RunConfig {
        eval_stride: 1,
        ..RunConfig::desk()
    }
}

fn synthetic_end_to_end(out: &mut Option<SynthRun>) -> Verdict {
    let cfg = desk();
    let spec = ClipSpec::new("synthetic", cfg.clip_len, cfg.tau, (64, 64));
    // four normal scenes of 57 frames: 4 x 50 = 200 clips
    let mut train: Vec<VideoClip> = Vec::new();
    for s in 0..4 {
        let v = video_of(&synth(100 + s, 57, &[]), "train");
        train.extend(clips_from_video(&v, &spec).unwrap());
    }
    assert_eq!(train.len(), 200);

    let (model, _) = fit_itae(&cfg, &train).unwrap();
    let (flows, _) = fit_flows(&cfg, &model, &train).unwrap();
    let ablation = RunConfig {
        itae_mode: EncoderMode::StaticOnly,
        nf_static: false,
        nf_dynamic: false,
        lambda: 0.0,
        ..cfg.clone()
    };
    let (static_model, _) = fit_itae(&ablation, &train).unwrap();

    let test = |mode, seed| {
        let spans = [
            AnomalySpan {
                start: 30,
                end: 60,
                mode,
            },
            AnomalySpan {
                start: 100,
                end: 130,
                mode,
            },
        ];
        let sv = synth(seed, 160, &spans);
        let v = video_of(&sv, "test");
        let full = score_video(&cfg, &model, &flows, &v, Some(&sv.labels)).unwrap();
        let only = score_video(
            &ablation,
            &static_model,
            &Flows::default(),
            &v,
            Some(&sv.labels),
        )
        .unwrap();
        (full, only)
    };
    let (speed, speed_only) = test(AnomalyMode::SpeedDouble, 7);
    let (shape, _) = test(AnomalyMode::ShapeSwap, 8);
    let auc = |s: &ScoreSeries, l: f64| evaluate(s, l).unwrap().auc;
    let (a_speed, a_shape, a_ablation) = (
        auc(&speed, cfg.lambda),
        auc(&shape, cfg.lambda),
        auc(&speed_only, 0.0),
    );
    *out = Some(SynthRun { speed, shape });
    verdict(
        a_speed >= 0.85 && a_shape >= 0.85 && a_speed > a_ablation,
        format!(
            "fused AUC speed {a_speed:.4}, shape-swap {a_shape:.4}; static-only on speed {a_ablation:.4} (need fused > static-only)"
        ),
    )
}

fn two_step_isolation() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let scene = SyntheticSceneConfig {
        canvas: 32,
        objects: 2,
        seed: 5,
        ..Default::default()
    };
    write_synthetic(
        &itae::data::generate_synthetic(&scene, 24, &[]).unwrap(),
        root.join("train"),
    )
    .unwrap();
    let cfg = RunConfig {
        train_dir: Some(root.join("train")),
        out_dir: root.join("run"),
        resize_h: 32,
        resize_w: 32,
        train_stride: 2,
        itae_epochs: 1,
        nf_epochs: 1,
        ..RunConfig::desk()
    };
    cmd_train_itae(&cfg).unwrap();
    let dir = RunLayout::new(&cfg).itae();
    let before = hash_dir(&dir).unwrap();
    let outcome = cmd_train_nf(&cfg).unwrap();
    let after = hash_dir(&dir).unwrap();
    verdict(
        before == after
            && outcome.itae_hash_before == outcome.itae_hash_after
            && outcome.itae_hash_after == after,
        format!(
            "checkpoint sha256 {} before and after train-nf",
            &after[..16]
        ),
    )
}

fn lambda_sweep(run: Option<&SynthRun>) -> Verdict {
    let Some(run) = run else {
        return verdict(false, "no synthetic scores (criterion 6 did not finish)");
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut ok = LAMBDA_GRID == [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    for (name, series) in [("speed", &run.speed), ("shape-swap", &run.shape)] {
        let csv = tmp.path().join(format!("{name}.csv"));
        series.save_csv(&csv).unwrap();
        let from_file = cmd_sweep(&csv, None::<&Path>, &LAMBDA_GRID).unwrap();
        let in_memory = sweep_lambda(series, &LAMBDA_GRID).unwrap();
        ok &= from_file.len() == 6
            && from_file
                .iter()
                .zip(&in_memory)
                .all(|(a, b)| a.0 == b.0 && (a.1.auc - b.1.auc).abs() < 1e-12)
            && from_file
                .iter()
                .all(|(_, m)| m.auc.is_finite() && m.eer.is_finite());
        say!("    {name}:");
        for line in sweep_table(&from_file).lines() {
            say!("      {line}");
        }
        let aucs: Vec<String> = from_file
            .iter()
            .map(|(l, m)| format!("{l}:{:.3}", m.auc))
            .collect();
        lines.push(format!("{name} {}", aucs.join(" ")));
    }
    verdict(ok, format!("6-row tables, {}", lines.join("; ")))
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let mut results = vec![criterion(
        1,
        "flow inverse and log-determinant",
        Some(secs(30)),
        flow_correctness,
    )];
    results.push(criterion(
        2,
        "density integrates to one",
        Some(secs(60)),
        likelihood_conservation,
    ));
    results.push(criterion(
        3,
        "gradients match finite differences",
        Some(secs(120)),
        gradient_integrity,
    ));
    results.push(criterion(4, "layer output sizes", None, shape_fidelity));
    results.push(criterion(
        5,
        "AUC and EER against brute force",
        None,
        metric_oracle,
    ));
    let mut run = None;
    results.push(criterion(
        6,
        "synthetic end to end",
        Some(secs(900)),
        || synthetic_end_to_end(&mut run),
    ));
    results.push(criterion(
        7,
        "autoencoder frozen during flow training",
        None,
        two_step_isolation,
    ));
    results.push(criterion(8, "lambda sweep", None, || {
        lambda_sweep(run.as_ref())
    }));
    let passed = results.iter().filter(|&&ok| ok).count();
    say!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
