//! Key=value experiment config with typed accessors. Unknown keys are
//! rejected so typos fail loudly instead of silently using a default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use streamkd::model::DeskModel;

/// Every recognized key with its default and a one-line description. The
/// per-command help text is generated from this table.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out", "runs/default", "output directory; every stage writes under <out>/<stage>/"),
    ("seed", "1", "master seed; all stage RNG streams derive from it"),
    ("num_words", "8", "toy task vocabulary size"),
    ("num_phones", "6", "toy task phone inventory size (excluding silence)"),
    ("labeled", "12", "labeled (transcribed) training utterances"),
    ("unlabeled", "24", "unlabeled utterances for distillation"),
    ("test", "10", "held-out test utterances"),
    ("corpus", "60", "text-only sentences for graph estimation"),
    ("ngram_order", "2", "phone n-gram order of the denominator graph"),
    ("den_samples", "3", "phone-sequence samples per corpus sentence"),
    ("teacher_model", "teacher", "desk config for the teacher (teacher|s1..s5)"),
    ("teacher_epochs", "6", "teacher fine-tuning epochs"),
    ("teacher_peak_lr", "0.0005", "teacher schedule peak learning rate"),
    ("grad_accum", "8", "utterances accumulated per optimizer step"),
    ("nbest", "4", "lattice depth for pseudo supervision"),
    ("beam", "10.0", "pruning beam for pseudo-label decoding"),
    ("student_model", "s2", "desk config for the student (s1..s5)"),
    ("distill1_epochs", "6", "epochs for the full-context distillation step"),
    ("distill2_epochs", "3", "epochs for the streaming distillation step"),
    ("distill_peak_lr", "0.0001", "distillation schedule peak learning rate"),
    ("alpha", "0.8", "prediction-vs-hidden loss weight in [0,1]"),
    ("beta", "1.0", "sequence-vs-MSE weight inside the prediction loss"),
    ("hist", "8", "history frames a chunk may attend to"),
    ("chunk", "4", "chunk size in frames for streaming students"),
    ("augment_p", "0.5", "per-utterance probability of volume/pitch augmentation"),
    ("gradcheck_seeds", "20", "random instances per objective in gradcheck"),
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS.iter().map(|&(k, d, _)| (k.to_string(), d.to_string())).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = ExperimentConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("line {}: expected key=value, got {raw:?}", ln + 1));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if !KEYS.iter().any(|&(k, _, _)| k == key) {
            return Err(format!("unknown config key {key:?}"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        // Force every typed accessor once so bad values fail at load time.
        self.out();
        self.seed()?;
        for k in ["num_words", "num_phones", "labeled", "unlabeled", "test", "corpus", "ngram_order", "den_samples", "teacher_epochs", "grad_accum", "nbest", "distill1_epochs", "distill2_epochs", "hist", "chunk", "gradcheck_seeds"] {
            self.usize(k)?;
        }
        for k in ["teacher_peak_lr", "beam", "distill_peak_lr", "alpha", "beta", "augment_p"] {
            self.f64(k)?;
        }
        for k in ["alpha", "beta", "augment_p"] {
            let v = self.f64(k)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{k} must be in [0,1], got {v}"));
            }
        }
        self.teacher_model()?;
        self.student_model()?;
        if self.usize("chunk")? == 0 {
            return Err("chunk must be >= 1".into());
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn usize(&self, key: &str) -> Result<usize, String> {
        self.raw(key).parse().map_err(|_| format!("{key} must be an unsigned integer, got {:?}", self.raw(key)))
    }

    pub fn f64(&self, key: &str) -> Result<f64, String> {
        self.raw(key).parse().map_err(|_| format!("{key} must be a number, got {:?}", self.raw(key)))
    }

    pub fn seed(&self) -> Result<u64, String> {
        self.raw("seed").parse().map_err(|_| format!("seed must be an unsigned integer, got {:?}", self.raw("seed")))
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn teacher_model(&self) -> Result<DeskModel, String> {
        DeskModel::parse(self.raw("teacher_model"))
            .ok_or_else(|| format!("teacher_model must be one of teacher,s1..s5, got {:?}", self.raw("teacher_model")))
    }

    pub fn student_model(&self) -> Result<DeskModel, String> {
        DeskModel::parse(self.raw("student_model"))
            .ok_or_else(|| format!("student_model must be one of teacher,s1..s5, got {:?}", self.raw("student_model")))
    }
}

/// Config keys each command reads, for `--help`.
pub fn keys_for(command: &str) -> Vec<&'static str> {
    let common = ["out", "seed"];
    let task = ["num_words", "num_phones", "labeled", "unlabeled", "test", "corpus"];
    let distill = ["student_model", "distill_peak_lr", "grad_accum", "alpha", "beta", "augment_p"];
    let mut keys: Vec<&str> = common.to_vec();
    match command {
        "gen-data" => keys.extend(task),
        "build-den" => keys.extend(["ngram_order", "den_samples"]),
        "train-teacher" => keys.extend(["teacher_model", "teacher_epochs", "teacher_peak_lr", "grad_accum"]),
        "pseudo-label" => keys.extend(["nbest", "beam"]),
        "distill1" => {
            keys.extend(distill);
            keys.push("distill1_epochs");
        }
        "distill2" => {
            keys.extend(distill);
            keys.extend(["distill2_epochs", "hist", "chunk"]);
        }
        "single-step" => {
            keys.extend(distill);
            keys.extend(["distill1_epochs", "distill2_epochs", "hist", "chunk"]);
        }
        "ablate" => {
            keys.extend(["student_model", "distill_peak_lr", "grad_accum", "augment_p"]);
            keys.extend(["distill1_epochs", "hist", "chunk"]);
        }
        "eval" => keys.extend(["hist", "chunk"]),
        "bench-rtf" => keys.extend(["hist", "chunk"]),
        "gradcheck" => {
            keys = vec!["gradcheck_seeds"];
        }
        _ => {}
    }
    keys
}

pub fn help_for(command: &str) -> String {
    let mut s = String::from("Config keys read by this command:\n");
    for key in keys_for(command) {
        let (_, default, desc) = KEYS.iter().find(|&&(k, _, _)| k == key).unwrap();
        s.push_str(&format!("  {key} (default {default}): {desc}\n"));
    }
    s
}
