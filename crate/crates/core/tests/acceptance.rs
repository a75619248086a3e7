//! Acceptance suite: one pass/fail line per criterion (visible with
//! `cargo test --test acceptance -- --nocapture`). Criteria 1-6 and 9 are
//! property/oracle checks that finish in seconds; 7 and 8 train real models
//! over five seeds and dominate the runtime. Criterion 10 (CLI determinism)
//! lives in the CLI crate's integration tests.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamkd::autodiff::Tensor;
use streamkd::chunk::{avg_lookahead_ms, build_chunk_mask, stream_infer, ChunkSpec, Frames};
use streamkd::fst::{
    brute_force_logz, build_decoding_graph, build_denominator_graph, forward_backward,
    HmmTopology, Wfst,
};
use streamkd::lfmmi::{mmi_objective, objective_gradcheck, ObjectiveWeights};
use streamkd::model::{
    init_streaming_from, share_teacher_params, AcousticModel, AttentionMask, DeskModel,
    ModelConfig,
};
use streamkd::toydata::{gen_toy_task, ToyTask, Utterance};
use streamkd::train::{
    bench_rtf, distill_step, evaluate_wer, lr_at, make_pseudo_supervision, train_teacher,
    Ablation, AugmentConfig, DistillConfig, MaskSpec, TeacherConfig, TriStateSchedule,
};

type Check = std::result::Result<String, String>;

fn report(results: &mut Vec<(usize, bool)>, n: usize, what: &str, r: Check) {
    let (pass, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("criterion {n} ({}): {what} — {detail}", if pass { "PASS" } else { "FAIL" });
    results.push((n, pass));
}

// ---------------------------------------------------------------- criterion 1

/// Generator written independently of the library's internal test helpers.
fn random_acceptor(rng: &mut ChaCha8Rng, num_pdfs: usize) -> Wfst {
    loop {
        let n = rng.gen_range(2..=6);
        let mut g = Wfst::new(n);
        for _ in 0..rng.gen_range(n..=3 * n) {
            g.add_arc(
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(1..=num_pdfs),
                0,
                rng.gen_range(-2.0..0.5),
            );
        }
        g.set_final(rng.gen_range(0..n), rng.gen_range(-1.0..0.0));
        if let Ok(t) = g.trim() {
            if t.num_arcs() > 0 {
                return t;
            }
        }
    }
}

fn c1_forward_backward_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let num_pdfs = rng.gen_range(1..=4);
        let g = random_acceptor(&mut rng, num_pdfs);
        let t = rng.gen_range(1..=8);
        let ll = Tensor::new(
            vec![t, num_pdfs + 1],
            (0..t * (num_pdfs + 1)).map(|_| rng.gen_range(-3.0..1.0)).collect(),
        );
        let Ok(brute) = brute_force_logz(&g, &ll) else { continue };
        let (logz, occ) = forward_backward(&g, &ll).map_err(|e| e.to_string())?;
        worst = worst.max((logz - brute).abs());
        if (logz - brute).abs() > 1e-10 {
            return Err(format!("instance {checked}: logz {logz} vs brute {brute}"));
        }
        for ti in 0..t {
            let sum: f64 = (0..occ.cols()).map(|j| occ.at(ti, j)).sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(format!("instance {checked} frame {ti}: occupancy sum {sum}"));
            }
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1} s (limit 10 s)"));
    }
    Ok(format!("100 instances, worst |Δ logZ| {worst:.2e}, occupancy sums ±1e-10, {secs:.2} s"))
}

// ---------------------------------------------------------------- criterion 2

fn c2_gradients() -> Check {
    let start = Instant::now();
    let err = objective_gradcheck(20).map_err(|e| e.to_string())?;
    if err > 1e-6 {
        return Err(format!("max FD rel err {err:.3e} > 1e-6"));
    }
    // The analytic MMI gradient is numerator-minus-denominator occupancies
    // bitwise by construction.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    let mut den = Wfst::new(1);
    den.add_arc(0, 0, 1, 0, -0.2);
    den.add_arc(0, 0, 2, 0, -0.3);
    den.set_final(0, 0.0);
    let mut num = Wfst::new(3);
    num.add_arc(0, 1, 1, 0, 0.0);
    num.add_arc(1, 2, 2, 0, 0.0);
    num.set_final(2, 0.0);
    let ll = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (v, g) = mmi_objective(&ll, &num, &den).map_err(|e| e.to_string())?;
    let (zn, on) = forward_backward(&num, &ll).map_err(|e| e.to_string())?;
    let (zd, od) = forward_backward(&den, &ll).map_err(|e| e.to_string())?;
    if v != zn - zd {
        return Err("value is not logZ(num) - logZ(den) bitwise".into());
    }
    for i in 0..g.data().len() {
        if g.data()[i] != on.data()[i] - od.data()[i] {
            return Err(format!("gradient entry {i} is not occ_num - occ_den bitwise"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s (limit 60 s)"));
    }
    Ok(format!("20 seeds per objective, max FD rel err {err:.3e}, occupancy identity bitwise, {secs:.2} s"))
}

// ---------------------------------------------------------------- criterion 3

fn c3_hand_case() -> Check {
    let mut den = Wfst::new(2);
    den.add_arc(0, 1, 1, 0, 0.0);
    den.add_arc(0, 1, 2, 0, 0.0);
    den.set_final(1, 0.0);
    let mut num = Wfst::new(2);
    num.add_arc(0, 1, 1, 0, 0.0);
    num.set_final(1, 0.0);
    let ll = Tensor::zeros(1, 3);
    let (v, g) = mmi_objective(&ll, &num, &den).map_err(|e| e.to_string())?;
    let dv = (v - 0.5f64.ln()).abs();
    let d1 = (g.at(0, 1) - 0.5).abs();
    let d2 = (g.at(0, 2) + 0.5).abs();
    if dv > 1e-12 || d1 > 1e-12 || d2 > 1e-12 {
        return Err(format!("value {v}, grads ({}, {})", g.at(0, 1), g.at(0, 2)));
    }
    Ok(format!("value log(1/2) ±{dv:.1e}, grads ±0.5 within ({d1:.1e}, {d2:.1e})"))
}

// ---------------------------------------------------------------- criterion 4

fn tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        cnn_channels_first_two: rng.gen_range(3..=4),
        cnn_channels_rest: rng.gen_range(4..=6),
        cnn_kernels: vec![4, 3, 2],
        cnn_strides: vec![4, 2, 1],
        encoder_dim: if rng.gen_bool(0.5) { 4 } else { 8 },
        ffn_dim: 8,
        blocks: rng.gen_range(1..=2),
        heads: 2,
        num_pdfs: 5,
        group_norm: true,
        causal_cnn: true,
        sample_rate: 8000,
        frame_duration_ms: 1.0,
    }
}

fn c4_streaming_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let config = tiny_config(&mut rng);
        let model = AcousticModel::new_seeded(config, rng.gen()).map_err(|e| e.to_string())?;
        let samples = rng.gen_range(24..=96);
        let wav: Vec<f64> = (0..samples).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let spec = ChunkSpec::new(
            Frames::Finite(rng.gen_range(0..=6)),
            Frames::Finite(rng.gen_range(1..=5)),
            1.0,
        )
        .map_err(|e| e.to_string())?;
        let frames = model.config().frames_for_samples(wav.len());
        let mask = build_chunk_mask(frames, &spec);
        let (_, masked) =
            model.forward(&wav, &AttentionMask::Explicit(mask)).map_err(|e| e.to_string())?;
        let streamed = stream_infer(&model, &wav, &spec).map_err(|e| e.to_string())?;
        for i in 0..masked.data().len() {
            let (a, b) = (masked.data()[i], streamed.data()[i]);
            let rel = (a - b).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
            if rel > 1e-5 {
                return Err(format!("trial {trial}: rel err {rel:.2e} > 1e-5"));
            }
        }
        // (inf, inf) spec equals the full-context forward bitwise.
        let full_spec = ChunkSpec::full_context(1.0);
        let all = build_chunk_mask(frames, &full_spec);
        let (_, via_mask) =
            model.forward(&wav, &AttentionMask::Explicit(all)).map_err(|e| e.to_string())?;
        let (_, full) = model.forward(&wav, &AttentionMask::Full).map_err(|e| e.to_string())?;
        if via_mask.data() != full.data() {
            return Err(format!("trial {trial}: (inf,inf) mask differs from full forward"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.1} s (limit 30 s)"));
    }
    Ok(format!("20 triples, worst rel err {worst:.2e}; (inf,inf) bitwise equal; {secs:.2} s"))
}

// ------------------------------------------------------------- criteria 5 & 6

fn c5_lookahead() -> Check {
    let spec = ChunkSpec::new(Frames::Finite(600), Frames::Finite(48), 20.0)
        .map_err(|e| e.to_string())?;
    let la = avg_lookahead_ms(&spec).map_err(|e| e.to_string())?;
    if la == 480.0 {
        Ok("avg lookahead of (600, 48) @ 20 ms frames is exactly 480 ms".into())
    } else {
        Err(format!("got {la}"))
    }
}

fn c6_schedule_boundaries() -> Check {
    let peak = 5e-4;
    let s = TriStateSchedule::new(peak, 1000).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let at = |step| lr_at(step, &s).map_err(|e| e.to_string());
    let checks = [(100, peak), (500, peak), (1000, 0.05 * peak)];
    for (step, want) in checks {
        let got = at(step)?;
        if rel(got, want) > 1e-15 {
            return Err(format!("step {step}: {got} vs {want}"));
        }
    }
    Ok("10% = peak, 50% = peak, final = 0.05 x peak, all within 1e-15 rel".into())
}

// ------------------------------------------------- shared pipeline for 7 & 8

struct SeedOutcome {
    teacher_wer: f64,
    two_step_wer: f64,
    single_step_wer: f64,
    ablation_wer: [f64; 4],
}

fn default_task(seed: u64) -> ToyTask {
    gen_toy_task(seed, 20, 10, 50, 200, 20, 500).expect("default task")
}

fn distill_cfg(epochs: usize, weights: ObjectiveWeights, seed: u64) -> DistillConfig {
    let s = DeskModel::S2;
    DistillConfig {
        weights,
        epochs,
        peak_lr: 3e-4,
        grad_accum: 8,
        nominal_student_blocks: s.nominal_blocks(),
        skip_student_layers: s.skip_layers().to_vec(),
        augment: AugmentConfig::default(),
        seed,
    }
}

fn run_seed(seed: u64) -> SeedOutcome {
    let task = default_task(seed);
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let den = build_denominator_graph(&task.text_corpus, &task.lexicon, 2, 3, task.p_sil, &topo, seed)
        .expect("den graph");
    let decode =
        build_decoding_graph(&task.text_corpus, &task.lexicon, &topo, task.p_sil).expect("decode graph");
    let teacher_cfg = DeskModel::Teacher.config(topo.loglike_dim());
    let tc = TeacherConfig { epochs: 40, peak_lr: 1e-3, grad_accum: 8, seed };
    let (teacher, _) = train_teacher(&task, &teacher_cfg, &den, &tc).expect("teacher training");
    let teacher_wer = evaluate_wer(&teacher, &task.test, &decode, MaskSpec::Full).expect("teacher wer");
    let (sup, _) =
        make_pseudo_supervision(&teacher, &task.unlabeled, &den, 4, 10.0, None).expect("pseudo labels");
    let student_cfg = DeskModel::S2.config(teacher_cfg.num_pdfs);
    let weights = ObjectiveWeights::new(0.8, 1.0);
    let spec = ChunkSpec::new(Frames::Finite(8), Frames::Finite(4), 20.0).unwrap();
    // Tight distillation budgets: the warm-start advantage of the two-step
    // recipe is largest when neither method trains to saturation.
    let (e1, e2) = (4usize, 2usize);

    // Two-step: full-context distillation, then chunked.
    let s = share_teacher_params(&teacher, &student_cfg, seed).expect("shared init");
    let (s, _) = distill_step(&teacher, s, &task.unlabeled, &sup, &den, &distill_cfg(e1, weights, seed), MaskSpec::Full)
        .expect("distill step 1");
    let s = init_streaming_from(&s);
    let (s, _) = distill_step(&teacher, s, &task.unlabeled, &sup, &den, &distill_cfg(e2, weights, seed), MaskSpec::Chunk(spec))
        .expect("distill step 2");
    let two_step_wer = evaluate_wer(&s, &task.test, &decode, MaskSpec::Chunk(spec)).expect("two-step wer");

    // Single-step baseline: random init, chunked, identical total budget.
    let single_cfg = distill_cfg(e1 + e2, weights, seed);
    assert_eq!(single_cfg.epochs, e1 + e2, "budget mismatch");
    let s0 = AcousticModel::new_seeded(student_cfg.clone(), seed).expect("random init");
    let (s0, _) = distill_step(&teacher, s0, &task.unlabeled, &sup, &den, &single_cfg, MaskSpec::Chunk(spec))
        .expect("single-step distill");
    let single_step_wer = evaluate_wer(&s0, &task.test, &decode, MaskSpec::Chunk(spec)).expect("single-step wer");

    // M1-M4 ablation: one chunked distillation pass each from the shared init.
    let mut ablation_wer = [0.0f64; 4];
    for (i, m) in Ablation::ALL.into_iter().enumerate() {
        let s = share_teacher_params(&teacher, &student_cfg, seed).expect("shared init");
        let (s, _) = distill_step(&teacher, s, &task.unlabeled, &sup, &den, &distill_cfg(e1, m.weights(), seed), MaskSpec::Chunk(spec))
            .expect("ablation distill");
        ablation_wer[i] = evaluate_wer(&s, &task.test, &decode, MaskSpec::Chunk(spec)).expect("ablation wer");
    }

    SeedOutcome { teacher_wer, two_step_wer, single_step_wer, ablation_wer }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c7_two_step_vs_single_step(outcomes: &[SeedOutcome], secs: f64) -> Check {
    let two = mean(outcomes.iter().map(|o| o.two_step_wer));
    let single = mean(outcomes.iter().map(|o| o.single_step_wer));
    let wins = outcomes.iter().filter(|o| o.two_step_wer < o.single_step_wer).count();
    for (i, o) in outcomes.iter().enumerate() {
        println!(
            "  seed {}: teacher {:.3}  two-step {:.3}  single-step {:.3}",
            i + 1,
            o.teacher_wer,
            o.two_step_wer,
            o.single_step_wer
        );
    }
    let detail = format!(
        "mean WER two-step {two:.3} vs single-step {single:.3}, wins {wins}/5, {:.1} min",
        secs / 60.0
    );
    if secs >= 45.0 * 60.0 {
        return Err(format!("{detail} (limit 45 min)"));
    }
    if two < single && wins >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_ablation(outcomes: &[SeedOutcome]) -> Check {
    println!("  ablation table (mean WER over seeds 1-5):");
    let mut means = [0.0f64; 4];
    for (i, m) in Ablation::ALL.into_iter().enumerate() {
        means[i] = mean(outcomes.iter().map(|o| o.ablation_wer[i]));
        let w = m.weights();
        println!("    {}: alpha {} beta {} -> {:.3}", m.name(), w.alpha, w.beta, means[i]);
    }
    let (m1, m3) = (means[0], means[2]);
    let detail = format!("mean WER M3 {m3:.3} vs M1 {m1:.3}");
    if m3 < m1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 9

fn c9_rtf_ladder(task: &ToyTask) -> Check {
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let mut audio: Vec<Utterance> = Vec::new();
    let mut secs = 0.0;
    for u in task.test.iter().chain(&task.labeled).chain(&task.unlabeled) {
        secs += u.samples.len() as f64 / task.sample_rate as f64;
        audio.push(u.clone());
        if secs >= 10.5 {
            break;
        }
    }
    let mut rtfs = Vec::new();
    for m in DeskModel::ALL {
        let model = AcousticModel::new_seeded(m.config(topo.loglike_dim()), 1).map_err(|e| e.to_string())?;
        let rtf = bench_rtf(&model, &audio, MaskSpec::Full).map_err(|e| e.to_string())?;
        rtfs.push((m.name(), rtf));
    }
    let line = rtfs.iter().map(|(n, r)| format!("{n} {r:.4}")).collect::<Vec<_>>().join(", ");
    for w in rtfs.windows(2) {
        if w[1].1 >= w[0].1 {
            return Err(format!("not strictly decreasing: {line}"));
        }
    }
    let ratio = rtfs[0].1 / rtfs.last().unwrap().1;
    if ratio < 3.0 {
        return Err(format!("teacher/s5 ratio {ratio:.2} < 3: {line}"));
    }
    Ok(format!("{line}; teacher/s5 ratio {ratio:.1}"))
}

// --------------------------------------------------------------------- driver

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    report(&mut results, 1, "forward-backward vs brute-force oracle", c1_forward_backward_oracle());
    report(&mut results, 2, "objective gradient checks", c2_gradients());
    report(&mut results, 3, "hand-computed MMI case", c3_hand_case());
    report(&mut results, 4, "streaming equivalence", c4_streaming_equivalence());
    report(&mut results, 5, "latency arithmetic", c5_lookahead());
    report(&mut results, 6, "LR schedule boundaries", c6_schedule_boundaries());

    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> = (1..=5).map(run_seed).collect();
    let secs = start.elapsed().as_secs_f64();
    report(&mut results, 7, "two-step vs single-step over seeds 1-5", c7_two_step_vs_single_step(&outcomes, secs));
    report(&mut results, 8, "objective ablation M1-M4", c8_ablation(&outcomes));

    report(&mut results, 9, "RTF ladder", c9_rtf_ladder(&default_task(1)));

    let failed: Vec<usize> = results.iter().filter(|(_, p)| !p).map(|&(n, _)| n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
