//! Denominator graph estimation from raw text: sample phone sequences with
//! random pronunciations and optional silence, fit a phone n-gram, and expand
//! it through the one-state-per-phone topology into an epsilon-free acceptor.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{phones_from_text, FstError, HmmTopology, Lexicon, PhoneId, Result, Wfst, WordId, EPSILON};

const MAX_ORDER: usize = 4;
/// Probability mass reserved for unseen successors of a seen context.
const BACKOFF_MASS: f64 = 0.1;

/// Phone n-gram over the sampled corpus. Contexts shorter than `order - 1`
/// occur at sentence starts.
struct PhoneNgram {
    order: usize,
    /// Phones that actually occur in the samples; the model's alphabet.
    alphabet: Vec<PhoneId>,
    counts: BTreeMap<Vec<PhoneId>, BTreeMap<PhoneId, usize>>,
}

impl PhoneNgram {
    fn fit(samples: &[Vec<PhoneId>], order: usize) -> Self {
        let mut counts: BTreeMap<Vec<PhoneId>, BTreeMap<PhoneId, usize>> = BTreeMap::new();
        let mut seen: BTreeMap<PhoneId, ()> = BTreeMap::new();
        for seq in samples {
            for (i, &q) in seq.iter().enumerate() {
                seen.insert(q, ());
                let lo = i.saturating_sub(order - 1);
                let ctx: Vec<PhoneId> = seq[lo..i].to_vec();
                *counts.entry(ctx).or_default().entry(q).or_insert(0) += 1;
            }
        }
        PhoneNgram { order, alphabet: seen.into_keys().collect(), counts }
    }

    /// Maximum-likelihood successor distribution with uniform backoff mass
    /// for unseen successors; entirely unseen contexts are uniform.
    fn successors(&self, ctx: &[PhoneId]) -> Vec<(PhoneId, f64)> {
        let key: Vec<PhoneId> = ctx[ctx.len().saturating_sub(self.order - 1)..].to_vec();
        match self.counts.get(&key) {
            Some(c) => {
                let total: usize = c.values().sum();
                let unseen: Vec<PhoneId> =
                    self.alphabet.iter().copied().filter(|q| !c.contains_key(q)).collect();
                let mut out = Vec::with_capacity(self.alphabet.len());
                if unseen.is_empty() {
                    for (&q, &n) in c {
                        out.push((q, (n as f64 / total as f64).ln()));
                    }
                } else {
                    for (&q, &n) in c {
                        out.push((q, ((1.0 - BACKOFF_MASS) * n as f64 / total as f64).ln()));
                    }
                    let u = (BACKOFF_MASS / unseen.len() as f64).ln();
                    for q in unseen {
                        out.push((q, u));
                    }
                }
                out.sort_by_key(|&(q, _)| q);
                out
            }
            None => {
                let u = (1.0 / self.alphabet.len() as f64).ln();
                self.alphabet.iter().map(|&q| (q, u)).collect()
            }
        }
    }
}

/// Build the LF-MMI denominator graph from raw text.
///
/// Each sentence is expanded `num_samples_per_sentence` times through random
/// pronunciation choices and random silence insertion, a phone n-gram is
/// estimated on the samples, and the n-gram is expanded through the topology
/// into a trimmed epsilon-free pdf acceptor: one state per phone context,
/// a weight-0 self-loop per state (the HMM self-loop), and n-gram arcs
/// carrying the log-probabilities. Every context state is final with weight 0.
pub fn build_denominator_graph(
    corpus: &[Vec<WordId>],
    lexicon: &Lexicon,
    ngram_order: usize,
    num_samples_per_sentence: usize,
    p_sil: f64,
    topology: &HmmTopology,
    seed: u64,
) -> Result<Wfst> {
    if corpus.is_empty() {
        return Err(FstError::Empty("corpus"));
    }
    if ngram_order == 0 || ngram_order > MAX_ORDER {
        return Err(FstError::OrderTooLarge(ngram_order));
    }
    assert!(num_samples_per_sentence >= 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(corpus.len() * num_samples_per_sentence);
    for sentence in corpus {
        for _ in 0..num_samples_per_sentence {
            samples.push(phones_from_text(sentence, lexicon, &mut rng, p_sil)?);
        }
    }
    let ngram = PhoneNgram::fit(&samples, ngram_order);
    if ngram.alphabet.is_empty() {
        return Err(FstError::Empty("sampled phone corpus"));
    }

    // State key: last k phones, k = max(order-1, 1). The last phone carries
    // the self-loop; for order 1 every phone still gets its own state so the
    // self-loop stays well defined.
    let hist = ngram_order.saturating_sub(1).max(1);
    let mut g = Wfst::new(1);
    let mut state_of: BTreeMap<Vec<PhoneId>, usize> = BTreeMap::new();
    state_of.insert(Vec::new(), 0);
    let mut queue: Vec<Vec<PhoneId>> = vec![Vec::new()];
    let mut qi = 0;
    while qi < queue.len() {
        let key = queue[qi].clone();
        qi += 1;
        let src = state_of[&key];
        for (q, logp) in ngram.successors(&key) {
            let mut next: Vec<PhoneId> = key.clone();
            next.push(q);
            if next.len() > hist {
                next.remove(0);
            }
            let dst = match state_of.get(&next) {
                Some(&s) => s,
                None => {
                    let s = g.add_state();
                    state_of.insert(next.clone(), s);
                    queue.push(next.clone());
                    // HMM self-loop for the phone this state has just emitted.
                    g.add_arc(s, s, topology.pdf_of(q), EPSILON, 0.0);
                    g.set_final(s, 0.0);
                    s
                }
            };
            if dst == src {
                // Same context emitting the same phone again is already
                // covered by the weight-0 HMM self-loop; a parallel n-gram
                // arc would double-count those paths.
                continue;
            }
            g.add_arc(src, dst, topology.pdf_of(q), EPSILON, logp);
        }
    }
    let trimmed = g.trim()?;
    debug_assert!(!trimmed.has_epsilon_ilabels());
    Ok(trimmed)
}
