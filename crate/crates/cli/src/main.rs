//! Experiment driver: each subcommand runs one pipeline stage and writes its
//! artifacts under `<out>/<stage>/`, so later stages can reuse earlier ones
//! without recomputation. Exit codes: 0 ok, 1 config or runtime error,
//! 2 missing dependency artifact.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use streamkd::chunk::{ChunkSpec, Frames};
use streamkd::fst::{build_decoding_graph, build_denominator_graph, HmmTopology, Lexicon, Wfst};
use streamkd::lfmmi::{objective_gradcheck, ObjectiveWeights};
use streamkd::model::{init_streaming_from, share_teacher_params, AcousticModel, DeskModel};
use streamkd::toydata::{gen_toy_task, read_manifest, write_manifest, ToyTask, Utterance};
use streamkd::train::{
    bench_rtf, distill_step, evaluate_wer, make_pseudo_supervision, train_teacher, Ablation,
    AugmentConfig, DistillConfig, MaskSpec, RunReport, TeacherConfig,
};

#[derive(Parser)]
#[command(name = "streamkd", about = "Two-step distillation pipeline for streaming acoustic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Key=value config file; flags below override individual keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// History frames for streaming students.
    #[arg(long, global = true)]
    hist: Option<usize>,
    /// Chunk frames for streaming students.
    #[arg(long, global = true)]
    chunk: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy task: lexicon, text corpus, WAVs, and manifests.
    #[command(name = "gen-data", after_help = config::help_for("gen-data"))]
    GenData,
    /// Estimate the denominator and decoding graphs from the text corpus.
    #[command(name = "build-den", after_help = config::help_for("build-den"))]
    BuildDen,
    /// Fine-tune the full-context teacher with LF-MMI on the labeled set.
    #[command(name = "train-teacher", after_help = config::help_for("train-teacher"))]
    TrainTeacher,
    /// Decode the unlabeled set with the teacher into numerator graphs.
    #[command(name = "pseudo-label", after_help = config::help_for("pseudo-label"))]
    PseudoLabel,
    /// Step 1: distill the teacher into a full-context student.
    #[command(name = "distill1", after_help = config::help_for("distill1"))]
    Distill1,
    /// Step 2: distill the step-1 student into a streaming student.
    #[command(name = "distill2", after_help = config::help_for("distill2"))]
    Distill2,
    /// Baseline: distill straight to a streaming student in one step.
    #[command(name = "single-step", after_help = config::help_for("single-step"))]
    SingleStep,
    /// Run the M1-M4 objective ablation and write a WER table.
    #[command(after_help = config::help_for("ablate"))]
    Ablate,
    /// Score every available checkpoint on the test set.
    #[command(after_help = config::help_for("eval"))]
    Eval,
    /// Benchmark single-thread RTF across the desk model ladder.
    #[command(name = "bench-rtf", after_help = config::help_for("bench-rtf"))]
    BenchRtf,
    /// Finite-difference check of all distillation objectives.
    #[command(after_help = config::help_for("gradcheck"))]
    Gradcheck,
}

enum CliError {
    MissingStage(String),
    Config(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::MissingStage(stage)) => {
            eprintln!("missing dependency artifact: run `streamkd {stage}` first");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(CliError::Config)?
        }
        None => ExperimentConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(CliError::Config);
    if let Some(s) = cli.seed {
        set("seed", s.to_string())?;
    }
    if let Some(o) = &cli.out {
        set("out", o.display().to_string())?;
    }
    if let Some(h) = cli.hist {
        set("hist", h.to_string())?;
    }
    if let Some(c) = cli.chunk {
        set("chunk", c.to_string())?;
    }
    if let Some(a) = cli.alpha {
        set("alpha", a.to_string())?;
    }
    if let Some(b) = cli.beta {
        set("beta", b.to_string())?;
    }
    Ok(cfg)
}

/// One command per run directory at a time.
struct Lock(PathBuf);

impl Lock {
    fn acquire(out: &Path) -> Result<Lock> {
        fs::create_dir_all(out).map_err(anyhow::Error::from)?;
        let path = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Config(
                format!("{} exists; another command is running in this run directory", path.display()),
            )),
            Err(e) => Err(anyhow::Error::from(e).into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if let Command::Gradcheck = cli.command {
        // Pure computation; needs neither artifacts nor the run lock.
        let err = objective_gradcheck(cfg.usize("gradcheck_seeds").map_err(CliError::Config)?)
            .map_err(anyhow::Error::from)?;
        println!("gradcheck: max rel err {err:.3e} over all objectives");
        if err > 1e-6 {
            return Err(CliError::Failed(anyhow::anyhow!("gradient check failed: {err:.3e} > 1e-6")));
        }
        return Ok(());
    }
    let out = cfg.out();
    let _lock = Lock::acquire(&out)?;
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::BuildDen => build_den(&cfg),
        Command::TrainTeacher => run_train_teacher(&cfg),
        Command::PseudoLabel => pseudo_label(&cfg),
        Command::Distill1 => distill1(&cfg),
        Command::Distill2 => distill2(&cfg),
        Command::SingleStep => single_step(&cfg),
        Command::Ablate => ablate(&cfg),
        Command::Eval => eval(&cfg),
        Command::BenchRtf => bench(&cfg),
        Command::Gradcheck => unreachable!(),
    }
}

fn key(cfg: &ExperimentConfig, k: &str) -> Result<usize> {
    cfg.usize(k).map_err(CliError::Config)
}

fn keyf(cfg: &ExperimentConfig, k: &str) -> Result<f64> {
    cfg.f64(k).map_err(CliError::Config)
}

fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let seed = cfg.seed().map_err(CliError::Config)?;
    let task = gen_toy_task(
        seed,
        key(cfg, "num_words")?,
        key(cfg, "num_phones")?,
        key(cfg, "labeled")?,
        key(cfg, "unlabeled")?,
        key(cfg, "test")?,
        key(cfg, "corpus")?,
    )
    .map_err(anyhow::Error::from)?;
    let dir = cfg.out().join("gen-data");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("lexicon.txt"), task.lexicon.format()).map_err(anyhow::Error::from)?;
    let corpus: String = task
        .text_corpus
        .iter()
        .map(|s| s.iter().map(|&w| task.lexicon.word(w)).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    fs::write(dir.join("corpus.txt"), corpus).map_err(anyhow::Error::from)?;
    for (name, utts) in [("labeled", &task.labeled), ("unlabeled", &task.unlabeled), ("test", &task.test)] {
        write_manifest(&dir, name, utts, &task.lexicon, task.sample_rate).map_err(anyhow::Error::from)?;
    }
    let meta = serde_json::json!({ "sample_rate": task.sample_rate, "p_sil": task.p_sil });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap() + "\n")
        .map_err(anyhow::Error::from)?;
    println!(
        "gen-data: {} labeled / {} unlabeled / {} test utterances under {}",
        task.labeled.len(),
        task.unlabeled.len(),
        task.test.len(),
        dir.display()
    );
    Ok(())
}

fn load_task(out: &Path) -> Result<ToyTask> {
    let dir = out.join("gen-data");
    if !dir.join("lexicon.txt").exists() {
        return Err(CliError::MissingStage("gen-data".into()));
    }
    let lexicon = Lexicon::parse(&fs::read_to_string(dir.join("lexicon.txt")).map_err(anyhow::Error::from)?)
        .map_err(anyhow::Error::from)?;
    let mut text_corpus = Vec::new();
    for line in fs::read_to_string(dir.join("corpus.txt")).map_err(anyhow::Error::from)?.lines() {
        let sentence: Option<Vec<_>> = line.split_whitespace().map(|w| lexicon.word_id(w)).collect();
        text_corpus.push(sentence.ok_or_else(|| anyhow::anyhow!("corpus.txt word not in lexicon"))?);
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).map_err(anyhow::Error::from)?)
            .map_err(anyhow::Error::from)?;
    let read = |name: &str| -> Result<Vec<Utterance>> {
        read_manifest(&dir.join(format!("{name}.tsv")), &lexicon).map_err(|e| anyhow::Error::from(e).into())
    };
    Ok(ToyTask {
        labeled: read("labeled")?,
        unlabeled: read("unlabeled")?,
        test: read("test")?,
        sample_rate: meta["sample_rate"].as_u64().unwrap() as usize,
        p_sil: meta["p_sil"].as_f64().unwrap(),
        lexicon,
        text_corpus,
    })
}

fn load_graph(out: &Path, file: &str) -> Result<Wfst> {
    let path = out.join("build-den").join(file);
    if !path.exists() {
        return Err(CliError::MissingStage("build-den".into()));
    }
    Ok(Wfst::read_text(&fs::read_to_string(path).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?)
}

fn build_den(cfg: &ExperimentConfig) -> Result<()> {
    let task = load_task(&cfg.out())?;
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let den = build_denominator_graph(
        &task.text_corpus,
        &task.lexicon,
        key(cfg, "ngram_order")?,
        key(cfg, "den_samples")?,
        task.p_sil,
        &topo,
        cfg.seed().map_err(CliError::Config)?,
    )
    .map_err(anyhow::Error::from)?;
    let decode = build_decoding_graph(&task.text_corpus, &task.lexicon, &topo, task.p_sil)
        .map_err(anyhow::Error::from)?;
    let dir = cfg.out().join("build-den");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("den.fst"), den.write_text()).map_err(anyhow::Error::from)?;
    fs::write(dir.join("decode.fst"), decode.write_text()).map_err(anyhow::Error::from)?;
    println!("build-den: denominator {} states / {} arcs", den.num_states(), den.num_arcs());
    Ok(())
}

fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    fs::write(dir.join("report.csv"), report.to_csv()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn load_checkpoint(out: &Path, stage: &str) -> Result<AcousticModel> {
    let path = out.join(stage).join(if stage == "train-teacher" { "teacher.ckpt" } else { "student.ckpt" });
    if !path.exists() {
        return Err(CliError::MissingStage(stage.into()));
    }
    Ok(AcousticModel::load(&path).map_err(anyhow::Error::from)?)
}

fn run_train_teacher(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let den = load_graph(&out, "den.fst")?;
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let model_cfg = cfg.teacher_model().map_err(CliError::Config)?.config(topo.loglike_dim());
    let tc = TeacherConfig {
        epochs: key(cfg, "teacher_epochs")?,
        peak_lr: keyf(cfg, "teacher_peak_lr")?,
        grad_accum: key(cfg, "grad_accum")?,
        seed: cfg.seed().map_err(CliError::Config)?,
    };
    let (teacher, report) = train_teacher(&task, &model_cfg, &den, &tc).map_err(anyhow::Error::from)?;
    let dir = out.join("train-teacher");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    teacher.save(&dir.join("teacher.ckpt")).map_err(anyhow::Error::from)?;
    write_report(&dir, &report)?;
    let last = report.steps.last().map(|s| s.total).unwrap_or(f64::NAN);
    println!("train-teacher: {} steps, final loss {last:.4}", report.steps.len());
    Ok(())
}

fn pseudo_label(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let den = load_graph(&out, "den.fst")?;
    let teacher = load_checkpoint(&out, "train-teacher")?;
    let dir = out.join("pseudo-label");
    let sup_dir = dir.join("sup");
    // The cache is keyed by utterance id only, so a rerun against a
    // retrained teacher must not reuse stale graphs.
    if sup_dir.exists() {
        fs::remove_dir_all(&sup_dir).map_err(anyhow::Error::from)?;
    }
    let (sup, skipped) = make_pseudo_supervision(
        &teacher,
        &task.unlabeled,
        &den,
        key(cfg, "nbest")?,
        keyf(cfg, "beam")?,
        Some(&sup_dir),
    )
    .map_err(anyhow::Error::from)?;
    fs::write(dir.join("summary.txt"), format!("labeled={} skipped={}\n", sup.len(), skipped))
        .map_err(anyhow::Error::from)?;
    println!("pseudo-label: {} graphs, {} skipped", sup.len(), skipped);
    Ok(())
}

fn load_supervision(out: &Path) -> Result<BTreeMap<String, Wfst>> {
    let dir = out.join("pseudo-label").join("sup");
    if !dir.is_dir() {
        return Err(CliError::MissingStage("pseudo-label".into()));
    }
    let mut sup = BTreeMap::new();
    for entry in fs::read_dir(&dir).map_err(anyhow::Error::from)? {
        let path = entry.map_err(anyhow::Error::from)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("fst") {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            let g = Wfst::read_text(&fs::read_to_string(&path).map_err(anyhow::Error::from)?)
                .map_err(anyhow::Error::from)?;
            sup.insert(id, g);
        }
    }
    if sup.is_empty() {
        return Err(CliError::MissingStage("pseudo-label".into()));
    }
    Ok(sup)
}

fn distill_config(cfg: &ExperimentConfig, epochs: usize, weights: ObjectiveWeights) -> Result<DistillConfig> {
    let student = cfg.student_model().map_err(CliError::Config)?;
    Ok(DistillConfig {
        weights,
        epochs,
        peak_lr: keyf(cfg, "distill_peak_lr")?,
        grad_accum: key(cfg, "grad_accum")?,
        nominal_student_blocks: student.nominal_blocks(),
        skip_student_layers: student.skip_layers().to_vec(),
        augment: AugmentConfig { p_apply: keyf(cfg, "augment_p")?, ..AugmentConfig::default() },
        seed: cfg.seed().map_err(CliError::Config)?,
    })
}

fn weights_from(cfg: &ExperimentConfig) -> Result<ObjectiveWeights> {
    Ok(ObjectiveWeights::new(keyf(cfg, "alpha")?, keyf(cfg, "beta")?))
}

fn chunk_spec(cfg: &ExperimentConfig, model: &AcousticModel) -> Result<ChunkSpec> {
    Ok(ChunkSpec::new(
        Frames::Finite(key(cfg, "hist")?),
        Frames::Finite(key(cfg, "chunk")?),
        model.config().frame_duration_ms,
    )
    .map_err(anyhow::Error::from)?)
}

fn run_distill(cfg: &ExperimentConfig, stage: &str) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let den = load_graph(&out, "den.fst")?;
    let teacher = load_checkpoint(&out, "train-teacher")?;
    let sup = load_supervision(&out)?;
    let student_cfg =
        cfg.student_model().map_err(CliError::Config)?.config(teacher.config().num_pdfs);
    let seed = cfg.seed().map_err(CliError::Config)?;
    let (student, epochs, mask) = match stage {
        "distill1" => (
            share_teacher_params(&teacher, &student_cfg, seed).map_err(anyhow::Error::from)?,
            key(cfg, "distill1_epochs")?,
            MaskSpec::Full,
        ),
        "distill2" => {
            let s1 = load_checkpoint(&out, "distill1")?;
            let s = init_streaming_from(&s1);
            let spec = chunk_spec(cfg, &s)?;
            (s, key(cfg, "distill2_epochs")?, MaskSpec::Chunk(spec))
        }
        "single-step" => {
            let s = AcousticModel::new_seeded(student_cfg, seed).map_err(anyhow::Error::from)?;
            let spec = chunk_spec(cfg, &s)?;
            // Same total budget as distill1 + distill2.
            (s, key(cfg, "distill1_epochs")? + key(cfg, "distill2_epochs")?, MaskSpec::Chunk(spec))
        }
        _ => unreachable!(),
    };
    let dcfg = distill_config(cfg, epochs, weights_from(cfg)?)?;
    let (student, report) =
        distill_step(&teacher, student, &task.unlabeled, &sup, &den, &dcfg, mask).map_err(anyhow::Error::from)?;
    let dir = out.join(stage);
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    student.save(&dir.join("student.ckpt")).map_err(anyhow::Error::from)?;
    write_report(&dir, &report)?;
    let last = report.steps.last().map(|s| s.total).unwrap_or(f64::NAN);
    println!("{stage}: {} steps, final loss {last:.4}", report.steps.len());
    Ok(())
}

fn distill1(cfg: &ExperimentConfig) -> Result<()> {
    run_distill(cfg, "distill1")
}

fn distill2(cfg: &ExperimentConfig) -> Result<()> {
    run_distill(cfg, "distill2")
}

fn single_step(cfg: &ExperimentConfig) -> Result<()> {
    run_distill(cfg, "single-step")
}

fn ablate(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let den = load_graph(&out, "den.fst")?;
    let decode = load_graph(&out, "decode.fst")?;
    let teacher = load_checkpoint(&out, "train-teacher")?;
    let sup = load_supervision(&out)?;
    let student_cfg =
        cfg.student_model().map_err(CliError::Config)?.config(teacher.config().num_pdfs);
    let seed = cfg.seed().map_err(CliError::Config)?;
    let epochs = key(cfg, "distill1_epochs")?;
    let mut csv = String::from("model,alpha,beta,wer\n");
    for m in Ablation::ALL {
        let w = m.weights();
        let student = share_teacher_params(&teacher, &student_cfg, seed).map_err(anyhow::Error::from)?;
        let spec = chunk_spec(cfg, &student)?;
        let dcfg = distill_config(cfg, epochs, w)?;
        let (student, _) = distill_step(&teacher, student, &task.unlabeled, &sup, &den, &dcfg, MaskSpec::Chunk(spec))
            .map_err(anyhow::Error::from)?;
        let wer = evaluate_wer(&student, &task.test, &decode, MaskSpec::Chunk(spec)).map_err(anyhow::Error::from)?;
        csv.push_str(&format!("{},{},{},{}\n", m.name(), w.alpha, w.beta, wer));
        println!("ablate {}: alpha {} beta {} -> WER {wer:.4}", m.name(), w.alpha, w.beta);
    }
    let dir = out.join("ablate");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("ablate.csv"), csv).map_err(anyhow::Error::from)?;
    Ok(())
}

fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let decode = load_graph(&out, "decode.fst")?;
    let teacher = load_checkpoint(&out, "train-teacher")?;
    let mut csv = String::from("model,context,wer\n");
    let mut score = |name: &str, model: &AcousticModel, mask: MaskSpec| -> Result<()> {
        let wer = evaluate_wer(model, &task.test, &decode, mask).map_err(anyhow::Error::from)?;
        let ctx = if matches!(mask, MaskSpec::Full) { "full" } else { "chunk" };
        csv.push_str(&format!("{name},{ctx},{wer}\n"));
        println!("eval {name} ({ctx}): WER {wer:.4}");
        Ok(())
    };
    score("teacher", &teacher, MaskSpec::Full)?;
    for stage in ["distill1", "distill2", "single-step"] {
        match load_checkpoint(&out, stage) {
            Ok(model) => {
                let mask = if stage == "distill1" {
                    MaskSpec::Full
                } else {
                    MaskSpec::Chunk(chunk_spec(cfg, &model)?)
                };
                score(stage, &model, mask)?;
            }
            Err(CliError::MissingStage(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let dir = out.join("eval");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("wer.csv"), csv).map_err(anyhow::Error::from)?;
    Ok(())
}

fn bench(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.out();
    let task = load_task(&out)?;
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let seed = cfg.seed().map_err(CliError::Config)?;
    let mut audio: Vec<Utterance> = Vec::new();
    let mut secs = 0.0;
    for u in task.test.iter().chain(&task.labeled).chain(&task.unlabeled) {
        secs += u.samples.len() as f64 / task.sample_rate as f64;
        audio.push(u.clone());
        if secs >= 10.5 {
            break;
        }
    }
    let mut csv = String::from("model,rtf\n");
    for m in DeskModel::ALL {
        let model = AcousticModel::new_seeded(m.config(topo.loglike_dim()), seed).map_err(anyhow::Error::from)?;
        let rtf = bench_rtf(&model, &audio, MaskSpec::Full).map_err(anyhow::Error::from)?;
        csv.push_str(&format!("{},{rtf:.6}\n", m.name()));
        println!("bench-rtf {}: {rtf:.4} ({:.1} s audio)", m.name(), secs);
    }
    let dir = out.join("bench-rtf");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("rtf.csv"), csv).map_err(anyhow::Error::from)?;
    Ok(())
}
