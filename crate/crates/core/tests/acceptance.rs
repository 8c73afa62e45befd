//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits non-zero if any failed.
//!
//! The two ablation studies train 27 models on the default synthetic dataset
//! and take roughly 25 minutes on one core; `TWEENFORGE_SKIP_ABLATIONS=1`
//! leaves them out.

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tweenforge::gradcheck::{run_gradcheck, GradcheckConfig};
use tweenforge::heads::{ais_combine, head_forward, FrameContext, HeadKind};
use tweenforge::io::{checkpoint_from_bytes, checkpoint_to_bytes};
use tweenforge::metrics::{npss, plain_l1, stl1};
use tweenforge::model::{Model, ModelConfig};
use tweenforge::nn::bilstm_forward;
use tweenforge::pose::{build_masked_sequence, prev_next, NormalizationStats};
use tweenforge::rotation::{rotmatrix_to_6d, sixd_to_rotmatrix, Mat3, Quat};
use tweenforge::schedule::{dba_extract, DbaParams, Provenance};
use tweenforge::synthgen::{default_character, generate_dataset, StyleParams};
use tweenforge::training::{evaluate, fit_split, holdout_split, ScheduleMode, TrainConfig};
use tweenforge::{CharacterSpec, MotionSequence, Schedule};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn gradient_correctness() -> Outcome {
    let cfg = GradcheckConfig::tiny();
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..5 {
        let r = run_gradcheck(&cfg, seed).expect("gradcheck runs");
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped_kinks;
    }
    let took = t0.elapsed();
    // A handful of scalars may sit within one step of a ReLU or |x| kink;
    // more than 1% would mean the check is not checking much.
    outcome(
        worst < 1e-4 && took < Duration::from_secs(60) && skipped * 100 < checked,
        format!("max relative error {worst:.3e} over 5 seeds ({checked} scalars, {skipped} at kinks), {took:.1?}"),
    )
}

/// Dyadic values keep every sum exact, so agreement can be tested with `==`.
fn dyadic_seq(r: &mut ChaCha8Rng, n: usize, d: usize) -> MotionSequence {
    let v: Vec<f64> = (0..n * d).map(|_| r.random_range(-16..=16) as f64 / 8.0).collect();
    MotionSequence::from_flat(v, n, d, Vec::new(), 0, 24.0).unwrap()
}

fn random_schedule(r: &mut ChaCha8Rng, n: usize) -> Schedule {
    let mut idx: Vec<usize> = (1..n - 1).filter(|_| r.random_bool(0.3)).collect();
    idx.insert(0, 0);
    idx.push(n - 1);
    Schedule::new(idx, n, Provenance::User).unwrap()
}

/// Exhaustive search over every admissible shift, taking the minimum cost.
fn brute_stl1(gt: &MotionSequence, pred: &MotionSequence, sched: &Schedule) -> f64 {
    let n = gt.num_frames() as i64;
    let mut total = 0.0;
    for w in sched.indices().windows(2) {
        let (k, len) = (w[0] as i64, (w[1] - w[0]) as i64);
        let mut best = f64::INFINITY;
        for delta in -len..=len {
            if k + delta < 0 || k + delta + len > n {
                continue;
            }
            let mut cost = 0.0;
            for j in 0..len {
                let g = gt.frame((k + j) as usize);
                let p = pred.frame((k + delta + j) as usize);
                cost += g.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
            best = best.min(cost);
        }
        total += best;
    }
    total / n as f64
}

fn stl1_oracle() -> Outcome {
    let mut r = rng(11);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.random_range(2..=16);
        let d = r.random_range(1..=3);
        let gt = dyadic_seq(&mut r, n, d);
        let pred = dyadic_seq(&mut r, n, d);
        let sched = random_schedule(&mut r, n);
        if stl1(&gt, &pred, &sched).unwrap() != brute_stl1(&gt, &pred, &sched) {
            mismatches += 1;
        }
    }
    let gt = MotionSequence::from_channel(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    let pred = MotionSequence::from_channel(&[0.0, 1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 7.0]).unwrap();
    let sched = Schedule::new(vec![0, 3, 7], 8, Provenance::User).unwrap();
    let (s, l) = (stl1(&gt, &pred, &sched).unwrap(), plain_l1(&gt, &pred).unwrap());
    outcome(
        mismatches == 0 && s == 0.125 && l == 0.5,
        format!("{mismatches}/200 mismatches; worked example STL1 {s}, plain L1 {l}"),
    )
}

fn stl1_bound() -> Outcome {
    let mut r = rng(12);
    let mut violations = 0;
    let mut nonzero_self = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=32);
        let d = r.random_range(1..=4);
        let v: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let gt = MotionSequence::from_flat(v, n, d, Vec::new(), 0, 24.0).unwrap();
        let w: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let pred = MotionSequence::from_flat(w, n, d, Vec::new(), 0, 24.0).unwrap();
        let sched = random_schedule(&mut r, n);
        // The unshifted cost of every segment, accumulated segment by segment
        // so the rounding matches a metric that sums segment costs.
        let frame_cost = |t: usize| gt.frame(t).iter().zip(pred.frame(t)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let seg_l1: f64 = sched
            .indices()
            .windows(2)
            .map(|w| (w[0]..w[1]).map(frame_cost).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        if stl1(&gt, &pred, &sched).unwrap() > seg_l1 {
            violations += 1;
        }
        if stl1(&gt, &gt, &sched).unwrap() != 0.0 {
            nonzero_self += 1;
        }
    }
    outcome(
        violations == 0 && nonzero_self == 0,
        format!("{violations}/1000 bound violations, {nonzero_self}/1000 non-zero STL1(gt, gt)"),
    )
}

fn rotation_fidelity() -> Outcome {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let axis = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let angle = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let m = Mat3::from_axis_angle(axis, angle);
        let back = sixd_to_rotmatrix(&rotmatrix_to_6d(&m).unwrap()).unwrap();
        worst = worst.max(m.max_abs_diff(&back));
    }
    let mid = Quat::from_matrix(&Mat3::IDENTITY)
        .slerp(&Quat::from_matrix(&Mat3::rot_z(FRAC_PI_2)), 0.5)
        .to_matrix();
    let mid_err = mid.max_abs_diff(&Mat3::rot_z(FRAC_PI_2 / 2.0));
    outcome(
        worst < 1e-9 && mid_err < 1e-9,
        format!("6D round trip max error {worst:.2e}; slerp midpoint error {mid_err:.2e}"),
    )
}

fn head_model(spec: &CharacterSpec, head: HeadKind, seed: u64) -> Model {
    let cfg = ModelConfig::for_spec(spec, head, 8, 1);
    Model::new(spec.clone(), cfg, NormalizationStats::identity(spec.dim()), seed).unwrap()
}

fn head_identities() -> Outcome {
    let spec = default_character();
    let data = generate_dataset(&spec, &StyleParams::default(), 3, 32, 5).unwrap();
    let mut failures = Vec::new();
    let mut r = rng(14);
    for (si, seq) in data.sequences.iter().enumerate() {
        let sched = &data.block_schedules[si];
        let model = head_model(&spec, HeadKind::Ais, si as u64);
        let masked = build_masked_sequence(seq, sched).unwrap();
        let input = tweenforge::nn::Tensor::from_vec(seq.num_frames(), spec.dim() + 1, masked.rows.clone());
        let hidden = bilstm_forward(&input, &model.store, &model.encoder).unwrap();
        for t in 0..seq.num_frames() {
            let (l, rr) = prev_next(sched, t);
            let ctx = FrameContext {
                prev: seq.frame(l),
                next: seq.frame(rr),
                t,
                l,
                r: rr,
            };
            let h = &hidden.data()[t * hidden.cols()..(t + 1) * hidden.cols()];
            let out = head_forward(h, &ctx, &model.store, &model.head, &spec).unwrap();
            let ais = out.ais.unwrap();
            if sched.contains(t) && ais.interp != seq.frame(t) {
                failures.push(format!("interp at keypose {t}"));
            }
            // Arbitrary gates, including the extremes.
            let d = spec.dim();
            let alpha: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
            let zeros = vec![0.0; d];
            let ones = vec![1.0; d];
            if sched.contains(t) {
                for a in [&alpha, &zeros, &ones] {
                    let o = ais_combine(a, &zeros, seq.frame(t), seq.frame(t), &ais.synth).unwrap();
                    if o.interp != seq.frame(t) {
                        failures.push(format!("interp with custom alpha at {t}"));
                    }
                }
            }
            let b0 = ais_combine(&ais.alpha, &zeros, ctx.prev, ctx.next, &ais.synth).unwrap();
            let b1 = ais_combine(&ais.alpha, &ones, ctx.prev, ctx.next, &ais.synth).unwrap();
            if b0.pred != b0.interp {
                failures.push(format!("beta=0 at {t}"));
            }
            if b1.pred != ais.synth {
                failures.push(format!("beta=1 at {t}"));
            }
        }

        // FixedGate: mean of the two paths of its own MLPs.
        let fg = head_model(&spec, HeadKind::FixedGate, 40 + si as u64);
        let hidden = bilstm_forward(&input, &fg.store, &fg.encoder).unwrap();
        for t in 0..seq.num_frames() {
            let (l, rr) = prev_next(sched, t);
            let ctx = FrameContext {
                prev: seq.frame(l),
                next: seq.frame(rr),
                t,
                l,
                r: rr,
            };
            let h = &hidden.data()[t * hidden.cols()..(t + 1) * hidden.cols()];
            let out = head_forward(h, &ctx, &fg.store, &fg.head, &spec).unwrap();
            let alpha = tweenforge::nn::mlp_forward(h, &fg.store, fg.head.alpha.as_ref().unwrap()).unwrap();
            let synth = tweenforge::nn::mlp_forward(h, &fg.store, fg.head.synth.as_ref().unwrap()).unwrap();
            let interp = tweenforge::heads::interp_path(&alpha, seq.frame(l), seq.frame(rr));
            let mean: Vec<f64> = interp.iter().zip(&synth).map(|(a, b)| (a + b) / 2.0).collect();
            if out.pred != mean {
                failures.push(format!("fixed gate mean at {t}"));
            }
        }

        // InterpOffset with a zeroed synthesis MLP equals InterpOnly sharing
        // the same encoder and alpha weights.
        let mut io = head_model(&spec, HeadKind::InterpOffset, 80 + si as u64);
        for id in io.head.synth.as_ref().unwrap().param_ids() {
            io.store.get_mut(id).data_mut().fill(0.0);
        }
        let mut only = head_model(&spec, HeadKind::InterpOnly, 0);
        for (dst, src) in only
            .encoder
            .param_ids()
            .into_iter()
            .chain(only.head.alpha.as_ref().unwrap().param_ids())
            .zip(io.encoder.param_ids().into_iter().chain(io.head.alpha.as_ref().unwrap().param_ids()))
        {
            let v = io.store.get(src).clone();
            *only.store.get_mut(dst) = v;
        }
        let (a, _, _) = io.predict_model_space(seq, sched).unwrap();
        let (b, _, _) = only.predict_model_space(seq, sched).unwrap();
        if a.frames() != b.frames() {
            failures.push("interp_offset with zero synth".into());
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "all identities exact on 3 untrained models per head".to_string()
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

fn dba_reconstruction() -> Outcome {
    let spec = default_character();
    let data = generate_dataset(&spec, &StyleParams::pure_step(), 50, 96, 21).unwrap();
    let params = DbaParams::default();
    let (mut hit, mut total, mut unstable) = (0, 0, 0);
    for (seq, gt) in data.sequences.iter().zip(&data.block_schedules) {
        let a = dba_extract(seq, &params).unwrap();
        let b = dba_extract(seq, &params).unwrap();
        if a != b {
            unstable += 1;
        }
        total += gt.keypose_count();
        hit += gt
            .indices()
            .iter()
            .filter(|&&g| a.indices().iter().any(|&k| k.abs_diff(g) <= 1))
            .count();
    }
    let constant = MotionSequence::new(vec![vec![0.5; 3]; 40], Vec::new(), 24.0).unwrap();
    let c = dba_extract(&constant, &params).unwrap();
    let recall = hit as f64 / total as f64;
    outcome(
        recall >= 0.95 && unstable == 0 && c.indices() == [0, 39],
        format!(
            "recall within 1 frame {:.1}% ({hit}/{total}); {unstable} nondeterministic; constant -> {:?}",
            100.0 * recall,
            c.indices()
        ),
    )
}

struct Ablation {
    heads: Outcome,
    schedules: Outcome,
}

fn train_eval(
    spec: &CharacterSpec,
    train: &[MotionSequence],
    val: &[MotionSequence],
    head: HeadKind,
    mode: ScheduleMode,
    seed: u64,
) -> f64 {
    let cfg = TrainConfig {
        hidden_size: 32,
        num_layers: 1,
        batch_size: 16,
        epochs: 30,
        learning_rate: 3e-3,
        head,
        seed,
        schedule_mode: mode,
        ..TrainConfig::default()
    };
    let (model, _) = fit_split(spec, train, val, &cfg).expect("training runs");
    evaluate(&model, val, ScheduleMode::Dba, None, &cfg.dba, 0)
        .expect("evaluation runs")
        .total
        .stl1
}

fn ablations() -> Ablation {
    let spec = default_character();
    let data = generate_dataset(&spec, &StyleParams::default(), 300, 96, 7).unwrap();
    let (tr, va) = holdout_split(300, 0.05, 0);
    let train: Vec<_> = tr.iter().map(|&i| data.sequences[i].clone()).collect();
    let val: Vec<_> = va.iter().map(|&i| data.sequences[i].clone()).collect();
    let aug2 = ScheduleMode::DbaAugmented(2);

    let t0 = Instant::now();
    let mut ais_time = Duration::ZERO;
    let mut results: Vec<(HeadKind, Vec<f64>)> = Vec::new();
    for head in HeadKind::ALL {
        let mut scores = Vec::new();
        for seed in 0..3 {
            let ts = Instant::now();
            let s = train_eval(&spec, &train, &val, head, aug2, seed);
            if head == HeadKind::Ais {
                ais_time += ts.elapsed();
            }
            eprintln!("  head {head:<16} seed {seed}: held-out STL1 {s:.4}");
            scores.push(s);
        }
        results.push((head, scores));
    }
    let heads_time = t0.elapsed();
    let med = |k: HeadKind| median(&results.iter().find(|(h, _)| *h == k).unwrap().1);
    let best = results.iter().map(|(_, s)| median(s)).fold(f64::INFINITY, f64::min);
    let (ais, direct, fixed) = (med(HeadKind::Ais), med(HeadKind::DirectSynthesis), med(HeadKind::FixedGate));
    let listing: Vec<String> = results.iter().map(|(h, s)| format!("{h} {:.4}", median(s))).collect();
    let heads = outcome(
        ais < direct && ais < fixed && ais <= 1.1 * best && heads_time < Duration::from_secs(1800),
        format!("medians: {}; {:.1} min", listing.join(", "), heads_time.as_secs_f64() / 60.0),
    );

    let t1 = Instant::now();
    let random: Vec<f64> = (0..3)
        .map(|seed| {
            let s = train_eval(&spec, &train, &val, HeadKind::Ais, ScheduleMode::Random(0.9), seed);
            eprintln!("  ais random_0.9 seed {seed}: held-out STL1 {s:.4}");
            s
        })
        .collect();
    let sched_time = ais_time + t1.elapsed();
    let rnd = median(&random);
    let schedules = outcome(
        ais < rnd && sched_time < Duration::from_secs(1800),
        format!(
            "median STL1 dba_aug_level_2 {ais:.4} vs random_0.9 {rnd:.4}; {:.1} min",
            sched_time.as_secs_f64() / 60.0
        ),
    );
    Ablation { heads, schedules }
}

fn reproducibility() -> Outcome {
    let spec = default_character();
    let data = generate_dataset(&spec, &StyleParams::default(), 20, 48, 3).unwrap();
    let cfg = TrainConfig {
        hidden_size: 8,
        num_layers: 1,
        batch_size: 4,
        epochs: 2,
        schedule_mode: ScheduleMode::DbaAugmented(2),
        seed: 9,
        ..TrainConfig::default()
    };
    let (tr, va) = holdout_split(20, 0.1, 9);
    let train: Vec<_> = tr.iter().map(|&i| data.sequences[i].clone()).collect();
    let val: Vec<_> = va.iter().map(|&i| data.sequences[i].clone()).collect();
    let (m1, r1) = fit_split(&spec, &train, &val, &cfg).unwrap();
    let (m2, r2) = fit_split(&spec, &train, &val, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same_losses = bits(&r1.step_losses) == bits(&r2.step_losses);
    let (b1, b2) = (checkpoint_to_bytes(&m1).unwrap(), checkpoint_to_bytes(&m2).unwrap());
    let loaded = checkpoint_from_bytes(&b1, Some(&spec)).unwrap();
    let round_trip = bits(&loaded.store.flatten()) == bits(&m1.store.flatten())
        && checkpoint_to_bytes(&loaded).unwrap() == b1;
    outcome(
        same_losses && b1 == b2 && round_trip,
        format!(
            "{} step losses identical: {same_losses}; checkpoints identical: {}; save/load exact: {round_trip}",
            r1.step_losses.len(),
            b1 == b2
        ),
    )
}

fn npss_properties() -> Outcome {
    let mut r = rng(15);
    let mut self_nonzero = 0;
    let mut worst_offset: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(4..=64);
        let d = r.random_range(1..=4);
        let v: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = MotionSequence::from_flat(v.clone(), n, d, Vec::new(), 0, 24.0).unwrap();
        if npss(&x, &x).unwrap() != 0.0 {
            self_nonzero += 1;
        }
        let offsets: Vec<f64> = (0..d).map(|_| r.random_range(-10.0..10.0)).collect();
        let shifted: Vec<f64> = v.iter().enumerate().map(|(i, a)| a + offsets[i % d]).collect();
        let y = MotionSequence::from_flat(shifted, n, d, Vec::new(), 0, 24.0).unwrap();
        worst_offset = worst_offset.max(npss(&x, &y).unwrap());
    }
    let n = 64;
    let sin = |bin: f64| -> MotionSequence {
        let v: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * bin * t as f64 / n as f64).sin())
            .collect();
        MotionSequence::from_channel(&v).unwrap()
    };
    let two = npss(&sin(4.0), &sin(8.0)).unwrap();
    outcome(
        self_nonzero == 0 && worst_offset < 1e-12 && (two - 4.0).abs() < 1e-12,
        format!(
            "{self_nonzero}/200 non-zero NPSS(x, x); max offset drift {worst_offset:.1e}; two sinusoids {two}"
        ),
    )
}

fn main() {
    // `cargo test` forwards name filters to every target; one that does not
    // match this suite skips it.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(&f)) {
        return;
    }
    let (mut total, mut failed) = (0, 0);
    let mut check = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        total += 1;
        failed += usize::from(!o.pass);
    };
    check("gradient correctness", gradient_correctness());
    check("STL1 oracle equivalence", stl1_oracle());
    check("STL1 bound and identity", stl1_bound());
    check("rotation fidelity", rotation_fidelity());
    check("head identities", head_identities());
    check("DBA reconstruction", dba_reconstruction());
    check("NPSS properties", npss_properties());
    check("reproducibility", reproducibility());
    // Set for quick iterations; the ablations are then reported as skipped.
    if std::env::var_os("TWEENFORGE_SKIP_ABLATIONS").is_some() {
        println!("SKIP ablation ordering: TWEENFORGE_SKIP_ABLATIONS is set");
    } else {
        let ab = ablations();
        check("ablation ordering, heads", ab.heads);
        check("ablation ordering, schedules", ab.schedules);
    }
    println!("acceptance: {} passed, {failed} failed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
