//! Deterministic synthetic speech task: a seeded toy lexicon and bigram
//! grammar, phones rendered as band-limited tone patterns, labeled /
//! unlabeled / test splits, raw-audio volume/pitch augmentation, and the
//! WAV + manifest on-disk layout.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fst::{phones_from_text, FstError, Lexicon, PhoneId, WordId};

#[derive(Debug, Error)]
pub enum ToyDataError {
    #[error("infeasible toy task: {0}")]
    Infeasible(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("unknown phone id {0}")]
    UnknownPhone(usize),
    #[error("bad augmentation range: {0}")]
    BadRange(String),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Fst(#[from] FstError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, ToyDataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
    pub transcript: Option<Vec<WordId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub lexicon: Lexicon,
    /// Raw text for denominator-graph estimation; never paired with audio.
    pub text_corpus: Vec<Vec<WordId>>,
    pub labeled: Vec<Utterance>,
    pub unlabeled: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub sample_rate: usize,
    /// Silence-insertion probability used when sampling phone realizations.
    pub p_sil: f64,
}

/// Silence probability baked into generated audio and shared with graph
/// construction downstream.
pub const P_SIL: f64 = 0.2;

fn derive_seed(base: u64, salt: &str) -> u64 {
    // FNV-1a over the salt, mixed with the base seed.
    let mut h: u64 = 0xcbf29ce484222325 ^ base.wrapping_mul(0x9e3779b97f4a7c15);
    for b in salt.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-phone tone rendered for `dur` samples: two fixed sinusoids unique to
/// the phone plus noise roughly 20 dB down. Silence is noise only.
fn render_phone(out: &mut Vec<f64>, phone: PhoneId, silence: PhoneId, dur: usize, sample_rate: usize, rng: &mut ChaCha8Rng) {
    if phone == silence {
        for _ in 0..dur {
            out.push(rng.gen_range(-0.02..0.02));
        }
        return;
    }
    let idx = (phone - 1) as f64; // silence is 1; real phones start at 2
    let f1 = 220.0 + 130.0 * idx;
    let f2 = 3600.0 - 150.0 * idx;
    let w1 = 2.0 * std::f64::consts::PI * f1 / sample_rate as f64;
    let w2 = 2.0 * std::f64::consts::PI * f2 / sample_rate as f64;
    let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    for t in 0..dur {
        let s = 0.45 * (w1 * t as f64 + phase).sin() + 0.25 * (w2 * t as f64).sin();
        let noise = rng.gen_range(-0.05..0.05);
        out.push((s + noise).clamp(-1.0, 1.0));
    }
}

/// Render a phone sequence as audio: each phone lasts a seeded 80-120 ms.
/// Deterministic per (phones, seed).
pub fn synth_waveform(phones: &[PhoneId], num_phones: usize, seed: u64, sample_rate: usize) -> Result<Vec<f64>> {
    if phones.is_empty() {
        return Err(ToyDataError::Empty("phone sequence"));
    }
    for &p in phones {
        if p == 0 || p > num_phones {
            return Err(ToyDataError::UnknownPhone(p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &p in phones {
        let dur_ms = rng.gen_range(80.0..=120.0);
        let dur = (dur_ms * sample_rate as f64 / 1000.0).round() as usize;
        render_phone(&mut out, p, 1, dur, sample_rate, &mut rng);
    }
    Ok(out)
}

/// With probability `p_apply`, scale volume by a uniform draw from
/// `vol_range` and resample by a uniform pitch factor from `pitch_range`
/// (linear interpolation, so duration changes by 1/factor); otherwise the
/// input is returned unchanged, bitwise.
pub fn augment(
    samples: &[f64],
    rng: &mut ChaCha8Rng,
    p_apply: f64,
    vol_range: (f64, f64),
    pitch_range: (f64, f64),
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(ToyDataError::Empty("waveform"));
    }
    for (name, (lo, hi)) in [("volume", vol_range), ("pitch", pitch_range)] {
        if !(0.0 < lo && lo <= hi) {
            return Err(ToyDataError::BadRange(format!("{name} range [{lo}, {hi}]")));
        }
    }
    if !(rng.gen::<f64>() < p_apply) {
        return Ok(samples.to_vec());
    }
    let vol = rng.gen_range(vol_range.0..=vol_range.1);
    let pitch = rng.gen_range(pitch_range.0..=pitch_range.1);
    let n = samples.len();
    let new_len = ((n as f64) / pitch).round() as usize;
    let mut out = Vec::with_capacity(new_len);
    for i in 0..new_len {
        let pos = i as f64 * pitch;
        let lo = (pos.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let frac = pos - lo as f64;
        out.push((samples[lo] * (1.0 - frac) + samples[hi] * frac) * vol);
    }
    Ok(out)
}

/// Seeded bigram grammar over the word list: a start distribution plus one
/// successor distribution per word, with squared-uniform weights so some
/// transitions dominate.
struct ToyGrammar {
    /// cumulative[i] is the cumulative successor distribution for context i
    /// (index 0 = sentence start, i+1 = word id i+1... contexts are start +
    /// one per word).
    cumulative: Vec<Vec<f64>>,
}

impl ToyGrammar {
    fn new(num_words: usize, rng: &mut ChaCha8Rng) -> Self {
        let cumulative = (0..=num_words)
            .map(|_| {
                let mut w: Vec<f64> = (0..num_words).map(|_| rng.gen::<f64>().powi(2) + 1e-3).collect();
                let total: f64 = w.iter().sum();
                let mut acc = 0.0;
                for x in &mut w {
                    acc += *x / total;
                    *x = acc;
                }
                w
            })
            .collect();
        ToyGrammar { cumulative }
    }

    fn sample_sentence(&self, rng: &mut ChaCha8Rng) -> Vec<WordId> {
        let len = rng.gen_range(2..=6);
        let mut out = Vec::with_capacity(len);
        let mut ctx = 0usize;
        for _ in 0..len {
            let u: f64 = rng.gen();
            let next = self.cumulative[ctx].iter().position(|&c| u <= c).unwrap_or(self.cumulative[ctx].len() - 1);
            out.push(next + 1); // word ids start at 1
            ctx = next + 1;
        }
        out
    }
}

fn random_lexicon(num_words: usize, num_phones: usize, rng: &mut ChaCha8Rng) -> Result<Lexicon> {
    // Pronunciations are kept distinct across the whole lexicon so words
    // stay acoustically separable.
    let max_seqs: usize = (1..=3).map(|l: u32| num_phones.pow(l)).sum();
    let mut used: Vec<Vec<usize>> = Vec::new();
    let mut entries = Vec::with_capacity(num_words);
    for w in 0..num_words {
        let n_prons = rng.gen_range(1..=2usize);
        let mut prons = Vec::with_capacity(n_prons);
        for _ in 0..n_prons {
            if used.len() >= max_seqs {
                return Err(ToyDataError::Infeasible(format!(
                    "{num_words} words need more pronunciations than {num_phones} phones allow"
                )));
            }
            let pron = loop {
                let len = rng.gen_range(1..=3usize);
                let cand: Vec<usize> = (0..len).map(|_| rng.gen_range(0..num_phones)).collect();
                if !used.contains(&cand) {
                    break cand;
                }
            };
            used.push(pron.clone());
            prons.push(pron.iter().map(|&p| format!("q{p}")).collect::<Vec<String>>());
        }
        entries.push((format!("w{w}"), prons));
    }
    Ok(Lexicon::build(&entries)?)
}

/// Generate the full deterministic task: lexicon, denominator text corpus,
/// and labeled / unlabeled / test splits with synthesized audio.
pub fn gen_toy_task(
    seed: u64,
    num_words: usize,
    num_phones: usize,
    labeled_n: usize,
    unlabeled_n: usize,
    test_n: usize,
    corpus_n: usize,
) -> Result<ToyTask> {
    if num_words < 1 || labeled_n < 1 || unlabeled_n < 1 || test_n < 1 || corpus_n < 1 {
        return Err(ToyDataError::Infeasible("all counts must be >= 1".into()));
    }
    if num_phones < 2 {
        return Err(ToyDataError::Infeasible("need at least 2 phones".into()));
    }
    let sample_rate = 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "task"));
    let lexicon = random_lexicon(num_words, num_phones, &mut rng)?;
    let grammar = ToyGrammar::new(num_words, &mut rng);

    let mut corpus_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "corpus"));
    let text_corpus: Vec<Vec<WordId>> = (0..corpus_n).map(|_| grammar.sample_sentence(&mut corpus_rng)).collect();

    let synth_split = |prefix: &str, n: usize, keep_transcript: bool| -> Result<Vec<Utterance>> {
        (0..n)
            .map(|i| {
                let id = format!("{prefix}{i:04}");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id));
                let words = grammar.sample_sentence(&mut rng);
                let phones = phones_from_text(&words, &lexicon, &mut rng, P_SIL)?;
                let samples = synth_waveform(&phones, lexicon.num_phones(), derive_seed(seed, &format!("{id}.wav")), sample_rate)?;
                Ok(Utterance {
                    id,
                    samples,
                    transcript: keep_transcript.then_some(words),
                })
            })
            .collect()
    };
    Ok(ToyTask {
        labeled: synth_split("lab", labeled_n, true)?,
        unlabeled: synth_split("unl", unlabeled_n, false)?,
        test: synth_split("tst", test_n, true)?,
        lexicon,
        text_corpus,
        sample_rate,
        p_sil: P_SIL,
    })
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: usize) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, usize)> {
    let mut r = hound::WavReader::open(path)?;
    let rate = r.spec().sample_rate as usize;
    let samples: std::result::Result<Vec<i16>, _> = r.samples::<i16>().collect();
    Ok((samples?.into_iter().map(|s| s as f64 / 32767.0).collect(), rate))
}

/// Write a split to `dir`: one WAV per utterance plus a manifest with lines
/// `id<TAB>wav-path<TAB>transcript-or-"-"`. Returns the manifest path.
pub fn write_manifest(dir: &Path, name: &str, utts: &[Utterance], lexicon: &Lexicon, sample_rate: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for u in utts {
        let wav = dir.join(format!("{}.wav", u.id));
        write_wav(&wav, &u.samples, sample_rate)?;
        let text = match &u.transcript {
            Some(words) => words.iter().map(|&w| lexicon.word(w)).collect::<Vec<_>>().join(" "),
            None => "-".to_string(),
        };
        lines.push_str(&format!("{}\t{}\t{}\n", u.id, wav.display(), text));
    }
    let path = dir.join(format!("{name}.tsv"));
    std::fs::write(&path, lines)?;
    Ok(path)
}

pub fn read_manifest(path: &Path, lexicon: &Lexicon) -> Result<Vec<Utterance>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(ToyDataError::Manifest(format!("line {}: expected 3 tab-separated fields", ln + 1)));
        }
        let (samples, _rate) = read_wav(Path::new(parts[1]))?;
        let transcript = if parts[2] == "-" {
            None
        } else {
            Some(
                parts[2]
                    .split_whitespace()
                    .map(|w| {
                        lexicon
                            .word_id(w)
                            .ok_or_else(|| ToyDataError::Manifest(format!("line {}: unknown word {w}", ln + 1)))
                    })
                    .collect::<Result<Vec<WordId>>>()?,
            )
        };
        out.push(Utterance { id: parts[0].to_string(), samples, transcript });
    }
    Ok(out)
}
