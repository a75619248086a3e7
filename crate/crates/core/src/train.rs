//! Training drivers: tri-state LR schedule, Adam, LF-MMI teacher
//! fine-tuning, pseudo-supervision generation, the distillation step shared
//! by the two-step pipeline and the single-step baseline, WER evaluation,
//! and single-thread RTF benchmarking.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};
use crate::chunk::{build_chunk_mask, ChunkError, ChunkSpec};
use crate::fst::{
    decode_nbest, numerator_from_lattice, numerator_from_transcript, viterbi_decode, FstError,
    HmmTopology, Wfst,
};
use crate::lfmmi::{
    hidden_loss, mmi_loss_on_tape, prediction_loss, total_loss, LayerMap, LfmmiError,
    ObjectiveWeights,
};
use crate::model::{AcousticModel, AttentionMask, ModelConfig, ModelError};
use crate::toydata::{augment, ToyDataError, ToyTask, Utterance};
use crate::wer::WerAccumulator;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("lr step {step} out of range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("no usable utterances: {0}")]
    NoUsableUtterances(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("benchmark needs at least {need} s of audio, got {got:.2} s")]
    NotEnoughAudio { need: usize, got: f64 },
    #[error("layer map mismatch: {0}")]
    LayerMapMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lfmmi(#[from] LfmmiError),
    #[error(transparent)]
    Fst(#[from] FstError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    ToyData(#[from] ToyDataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Warmup / hold / linear-decay schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriStateSchedule {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub hold_frac: f64,
    pub final_scale: f64,
}

impl TriStateSchedule {
    pub fn new(peak_lr: f64, total_steps: usize) -> Result<Self> {
        let s = TriStateSchedule {
            peak_lr,
            total_steps,
            warmup_frac: 0.10,
            hold_frac: 0.40,
            final_scale: 0.05,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && self.total_steps >= 1
            && (0.0..1.0).contains(&self.warmup_frac)
            && self.warmup_frac > 0.0
            && (0.0..1.0).contains(&self.hold_frac)
            && self.hold_frac > 0.0
            && self.warmup_frac + self.hold_frac < 1.0
            && (0.0..1.0).contains(&self.final_scale);
        if ok {
            Ok(())
        } else {
            Err(TrainError::BadSchedule(format!("{self:?}")))
        }
    }
}

/// Learning rate after `step` updates: linear 0 -> peak over the first 10%
/// of steps, constant peak for the next 40%, then linear decay to
/// `final_scale * peak` at `total_steps`; exact at every boundary.
pub fn lr_at(step: usize, schedule: &TriStateSchedule) -> Result<f64> {
    schedule.validate()?;
    let total = schedule.total_steps;
    if step > total {
        return Err(TrainError::StepOutOfRange { step, total });
    }
    let warm = ((schedule.warmup_frac * total as f64).round() as usize).max(1);
    let hold_end = ((schedule.warmup_frac + schedule.hold_frac) * total as f64).round() as usize;
    let p = schedule.peak_lr;
    Ok(if step <= warm {
        p * step as f64 / warm as f64
    } else if step <= hold_end {
        p
    } else if step == total {
        schedule.final_scale * p
    } else {
        let f = schedule.final_scale * p;
        let t = (step - hold_end) as f64 / (total - hold_end) as f64;
        p + (f - p) * t
    })
}

/// Adam over named tensors; moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.98, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

impl Adam {
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.data().len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.data().len()]);
            for ((x, &gi), (mi, vi)) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub hidden: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub final_wer: Option<f64>,
    pub rtf: Option<f64>,
    /// Wall clock is informational only and deliberately excluded from the
    /// serialized report so reruns stay byte-identical.
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,total,hidden,pred\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{},{}\n", s.step, s.lr, s.total, s.hidden, s.pred));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_apply: f64,
    pub vol: (f64, f64),
    pub pitch: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { p_apply: 0.5, vol: (0.3, 3.0), pitch: (0.9, 1.1) }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig { p_apply: 0.0, vol: (1.0, 1.0), pitch: (1.0, 1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub grad_accum: usize,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { epochs: 20, peak_lr: 5e-4, grad_accum: 8, seed: 0 }
    }
}

/// Which mask the trained/evaluated model runs under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSpec {
    Full,
    Chunk(ChunkSpec),
}

impl MaskSpec {
    fn mask_for(&self, frames: usize) -> AttentionMask {
        match self {
            MaskSpec::Full => AttentionMask::Full,
            MaskSpec::Chunk(spec) => AttentionMask::Explicit(build_chunk_mask(frames, spec)),
        }
    }
}

fn grads_by_name(tape: &Tape, loss: VarId, vars: impl Iterator<Item = (String, VarId)>) -> Result<BTreeMap<String, Tensor>> {
    let all = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, v) in vars {
        if let Some(g) = &all[v.index()] {
            out.insert(name, g.clone());
        }
    }
    Ok(out)
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match acc.get_mut(name) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
}

fn scale_grads(acc: &mut BTreeMap<String, Tensor>, c: f64) {
    for g in acc.values_mut() {
        for x in g.data_mut() {
            *x *= c;
        }
    }
}

/// Fine-tune a fresh full-context model on the labeled set with LF-MMI
/// (numerators from transcripts, minimizing the negated criterion).
/// Utterances whose numerator composition is empty are skipped with a
/// warning; if every utterance is skipped the run fails.
pub fn train_teacher(
    task: &ToyTask,
    config: &ModelConfig,
    den: &Wfst,
    cfg: &TeacherConfig,
) -> Result<(AcousticModel, RunReport)> {
    let start = Instant::now();
    if task.labeled.is_empty() {
        return Err(TrainError::NoUsableUtterances("labeled set is empty".into()));
    }
    let topo = HmmTopology::for_lexicon(&task.lexicon);
    let mut model = AcousticModel::new_seeded(config.clone(), cfg.seed)?;
    let steps_per_epoch = task.labeled.len().div_ceil(cfg.grad_accum);
    let schedule = TriStateSchedule::new(cfg.peak_lr, cfg.epochs * steps_per_epoch)?;
    let mut adam = Adam::default();
    let mut report = RunReport::default();
    let mut step = 0usize;

    // Numerators are utterance-level constants; build them once.
    let mut numerators: Vec<Option<Wfst>> = Vec::with_capacity(task.labeled.len());
    for u in &task.labeled {
        let words = u.transcript.as_ref().expect("labeled utterance");
        numerators.push(Some(numerator_from_transcript(words, &task.lexicon, &topo, true)?));
    }

    for _epoch in 0..cfg.epochs {
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut acc_n = 0usize;
        let mut acc_loss = 0.0;
        let flush = |acc: &mut BTreeMap<String, Tensor>,
                         acc_n: &mut usize,
                         acc_loss: &mut f64,
                         model: &mut AcousticModel,
                         adam: &mut Adam,
                         step: &mut usize,
                         report: &mut RunReport|
         -> Result<()> {
            if *acc_n == 0 {
                return Ok(());
            }
            scale_grads(acc, 1.0 / *acc_n as f64);
            let mut params: BTreeMap<String, Tensor> =
                model.params().map(|(n, t)| (n.to_string(), t.clone())).collect();
            *step += 1;
            let lr = lr_at(*step, &schedule)?;
            adam.step(&mut params, acc, lr);
            for (n, t) in params {
                model.set_param(&n, t);
            }
            let mean = *acc_loss / *acc_n as f64;
            report.steps.push(StepRecord { step: *step, lr, total: mean, hidden: 0.0, pred: mean });
            acc.clear();
            *acc_n = 0;
            *acc_loss = 0.0;
            Ok(())
        };
        let mut skipped = 0usize;
        for (u, num) in task.labeled.iter().zip(numerators.iter_mut()) {
            let Some(numerator) = num else {
                skipped += 1;
                continue;
            };
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let (_, out) = model.forward_on(&mut tape, &vars, &u.samples, &AttentionMask::Full)?;
            let loss = match mmi_loss_on_tape(&mut tape, out, numerator, den) {
                Ok(l) => l,
                Err(LfmmiError::SupervisionMismatch(e)) => {
                    log::warn!("skipping {}: numerator composition empty ({e})", u.id);
                    *num = None;
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let loss_val = tape.value(loss).item();
            let grads = grads_by_name(&tape, loss, vars.iter().map(|(n, v)| (n.to_string(), v)))?;
            accumulate(&mut acc, &grads);
            acc_n += 1;
            acc_loss += loss_val;
            if acc_n == cfg.grad_accum {
                flush(&mut acc, &mut acc_n, &mut acc_loss, &mut model, &mut adam, &mut step, &mut report)?;
            }
        }
        flush(&mut acc, &mut acc_n, &mut acc_loss, &mut model, &mut adam, &mut step, &mut report)?;
        if skipped == task.labeled.len() {
            return Err(TrainError::NoUsableUtterances("every numerator composition was empty".into()));
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Decode every unlabeled utterance with the frozen teacher and convert the
/// n-best lattice into a numerator graph. Graphs are cached as FST text
/// files keyed by utterance id; cached entries are reused bit-exactly.
/// Returns the supervision map and the number of skipped utterances.
pub fn make_pseudo_supervision(
    teacher: &AcousticModel,
    unlabeled: &[Utterance],
    den: &Wfst,
    n: usize,
    beam: f64,
    cache_dir: Option<&Path>,
) -> Result<(BTreeMap<String, Wfst>, usize)> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BTreeMap::new();
    let mut skipped = 0usize;
    for u in unlabeled {
        if let Some(dir) = cache_dir {
            let path = dir.join(format!("{}.fst", u.id));
            if path.exists() {
                out.insert(u.id.clone(), Wfst::read_text(&std::fs::read_to_string(&path)?)?);
                continue;
            }
        }
        let (_, loglikes) = teacher.forward(&u.samples, &AttentionMask::Full)?;
        let numerator = decode_nbest(den, &loglikes, n, beam)
            .and_then(|lat| numerator_from_lattice(&lat, true));
        match numerator {
            Ok(g) => {
                if let Some(dir) = cache_dir {
                    std::fs::write(dir.join(format!("{}.fst", u.id)), g.write_text())?;
                }
                out.insert(u.id.clone(), g);
            }
            Err(e) => {
                log::warn!("skipping {}: undecodable ({e})", u.id);
                skipped += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(TrainError::NoUsableUtterances("no utterance could be pseudo-labeled".into()));
    }
    Ok((out, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub weights: ObjectiveWeights,
    pub epochs: usize,
    pub peak_lr: f64,
    pub grad_accum: usize,
    /// Nominal student depth and skipped nominal layers for the g(i)=2i map.
    pub nominal_student_blocks: usize,
    pub skip_student_layers: Vec<usize>,
    pub augment: AugmentConfig,
    pub seed: u64,
}

/// Table 3 ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    M1,
    M2,
    M3,
    M4,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::M1, Ablation::M2, Ablation::M3, Ablation::M4];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::M1 => "M1",
            Ablation::M2 => "M2",
            Ablation::M3 => "M3",
            Ablation::M4 => "M4",
        }
    }

    pub fn weights(self) -> ObjectiveWeights {
        match self {
            Ablation::M1 => ObjectiveWeights::new(1.0, 0.0),
            Ablation::M2 => ObjectiveWeights::new(1.0, 1.0),
            Ablation::M3 => ObjectiveWeights::new(0.8, 1.0),
            Ablation::M4 => ObjectiveWeights::new(0.8, 0.8),
        }
    }
}

pub(crate) struct UtteranceLosses {
    pub grads: BTreeMap<String, Tensor>,
    pub total: f64,
    pub hidden: f64,
    pub pred: f64,
}

/// Forward teacher (full context) and student (under `mask`) on one
/// waveform and differentiate the combined distillation objective with
/// respect to student parameters and layer-map projections.
pub(crate) fn distill_utterance(
    teacher: &AcousticModel,
    student: &AcousticModel,
    map: &LayerMap,
    waveform: &[f64],
    numerator: &Wfst,
    den: &Wfst,
    weights: &ObjectiveWeights,
    mask: &AttentionMask,
) -> Result<UtteranceLosses> {
    let (teacher_hiddens, teacher_out) = teacher.forward(waveform, &AttentionMask::Full)?;
    let mut tape = Tape::new();
    let vars = student.bind(&mut tape, true);
    let proj_vars: Vec<VarId> =
        map.projections().iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let (student_hiddens, student_out) = student.forward_on(&mut tape, &vars, waveform, mask)?;
    let hidden = if weights.alpha == 1.0 {
        tape.constant(Tensor::scalar(0.0))
    } else {
        hidden_loss(&mut tape, &student_hiddens, &teacher_hiddens, map, &proj_vars)?
    };
    let pred = prediction_loss(&mut tape, student_out, &teacher_out, numerator, den, weights.beta)?;
    let loss = total_loss(&mut tape, hidden, pred, weights.alpha)?;
    let named = vars
        .iter()
        .map(|(n, v)| (n.to_string(), v))
        .chain(proj_vars.iter().enumerate().map(|(k, &v)| (format!("layermap.proj{k}"), v)));
    let grads = grads_by_name(&tape, loss, named)?;
    Ok(UtteranceLosses {
        grads,
        total: tape.value(loss).item(),
        hidden: tape.value(hidden).item(),
        pred: tape.value(pred).item(),
    })
}

/// One distillation pass: minimize the combined objective over the
/// pseudo-supervised unlabeled set. The teacher always runs full-context;
/// the student runs under `mask_spec` (full for step 1, chunked for step 2
/// and the single-step baseline). Zero epochs returns the student unchanged.
pub fn distill_step(
    teacher: &AcousticModel,
    student: AcousticModel,
    unlabeled: &[Utterance],
    supervision: &BTreeMap<String, Wfst>,
    den: &Wfst,
    cfg: &DistillConfig,
    mask_spec: MaskSpec,
) -> Result<(AcousticModel, RunReport)> {
    let start = Instant::now();
    let mut student = student;
    let mut map = crate::lfmmi::default_layer_map(
        cfg.nominal_student_blocks,
        teacher.config().blocks,
        &cfg.skip_student_layers,
    )?;
    if map.pairs().len() != student.config().blocks {
        return Err(TrainError::LayerMapMismatch(format!(
            "map covers {} student layers but the student has {} blocks",
            map.pairs().len(),
            student.config().blocks
        )));
    }
    map.init_projections(student.config().encoder_dim, teacher.config().encoder_dim, cfg.seed);
    let usable: Vec<&Utterance> =
        unlabeled.iter().filter(|u| supervision.contains_key(&u.id)).collect();
    if usable.is_empty() {
        return Err(TrainError::NoUsableUtterances("no supervised unlabeled utterances".into()));
    }
    let mut report = RunReport::default();
    if cfg.epochs == 0 {
        report.wall_clock_s = start.elapsed().as_secs_f64();
        return Ok((student, report));
    }
    let steps_per_epoch = usable.len().div_ceil(cfg.grad_accum);
    let schedule = TriStateSchedule::new(cfg.peak_lr, cfg.epochs * steps_per_epoch)?;
    let mut adam = Adam::default();
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut step = 0usize;
    let frame_samples = student.config().total_stride();

    for _epoch in 0..cfg.epochs {
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut acc_n = 0usize;
        let (mut acc_total, mut acc_hidden, mut acc_pred) = (0.0, 0.0, 0.0);
        for u in &usable {
            let numerator = &supervision[&u.id];
            let augmented = augment(&u.samples, &mut aug_rng, cfg.augment.p_apply, cfg.augment.vol, cfg.augment.pitch)?;
            // Pitch shifts change the frame count, which the cached
            // frame-synchronous numerator cannot absorb; fall back to the
            // clean audio for such draws.
            let waveform = if augmented.len() / frame_samples == u.samples.len() / frame_samples {
                augmented
            } else {
                u.samples.clone()
            };
            let frames = student.config().frames_for_samples(waveform.len());
            let mask = mask_spec.mask_for(frames);
            let losses = distill_utterance(teacher, &student, &map, &waveform, numerator, den, &cfg.weights, &mask)?;
            accumulate(&mut acc, &losses.grads);
            acc_n += 1;
            acc_total += losses.total;
            acc_hidden += losses.hidden;
            acc_pred += losses.pred;
            if acc_n == cfg.grad_accum || std::ptr::eq(*u, *usable.last().unwrap()) {
                scale_grads(&mut acc, 1.0 / acc_n as f64);
                let mut params: BTreeMap<String, Tensor> =
                    student.params().map(|(n, t)| (n.to_string(), t.clone())).collect();
                for (k, t) in map.projections().iter().enumerate() {
                    params.insert(format!("layermap.proj{k}"), t.clone());
                }
                step += 1;
                let lr = lr_at(step, &schedule)?;
                adam.step(&mut params, &acc, lr);
                for (k, _) in map.pairs().to_vec().iter().enumerate() {
                    map.set_projection(k, params.remove(&format!("layermap.proj{k}")).unwrap());
                }
                for (n, t) in params {
                    student.set_param(&n, t);
                }
                report.steps.push(StepRecord {
                    step,
                    lr,
                    total: acc_total / acc_n as f64,
                    hidden: acc_hidden / acc_n as f64,
                    pred: acc_pred / acc_n as f64,
                });
                acc.clear();
                acc_n = 0;
                acc_total = 0.0;
                acc_hidden = 0.0;
                acc_pred = 0.0;
            }
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((student, report))
}

/// Micro-averaged WER of Viterbi decoding against a word-labeled decoding
/// graph. (The denominator graph itself is phone-level and carries no word
/// labels, so evaluation decodes against the companion decoding graph.)
pub fn evaluate_wer(
    model: &AcousticModel,
    test: &[Utterance],
    decoding_graph: &Wfst,
    mask_spec: MaskSpec,
) -> Result<f64> {
    if test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let mut acc = WerAccumulator::default();
    for u in test {
        let reference = u.transcript.as_ref().ok_or(TrainError::EmptyTestSet)?;
        let frames = model.config().frames_for_samples(u.samples.len());
        let (_, loglikes) = model.forward(&u.samples, &mask_spec.mask_for(frames))?;
        let hypothesis = match viterbi_decode(decoding_graph, &loglikes) {
            Ok((words, _)) => words,
            Err(e) => {
                log::warn!("decoding {} failed ({e}); scoring as empty hypothesis", u.id);
                Vec::new()
            }
        };
        acc.add(reference, &hypothesis);
    }
    Ok(acc.wer())
}

/// Real-time factor: single-thread wall-clock inference time divided by
/// audio duration, median of 3 runs over the whole utterance list.
pub fn bench_rtf(model: &AcousticModel, utterances: &[Utterance], mask_spec: MaskSpec) -> Result<f64> {
    let rate = model.config().sample_rate as f64;
    let audio_s: f64 = utterances.iter().map(|u| u.samples.len() as f64 / rate).sum();
    if audio_s < 10.0 {
        return Err(TrainError::NotEnoughAudio { need: 10, got: audio_s });
    }
    let mut rtfs = Vec::with_capacity(3);
    for _ in 0..3 {
        let t0 = Instant::now();
        for u in utterances {
            let frames = model.config().frames_for_samples(u.samples.len());
            let (_, out) = model.forward(&u.samples, &mask_spec.mask_for(frames))?;
            std::hint::black_box(&out);
        }
        rtfs.push(t0.elapsed().as_secs_f64() / audio_s);
    }
    rtfs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(rtfs[1])
}
