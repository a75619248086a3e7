//! Word-level decoding graph: a corpus-estimated word bigram expanded through
//! the lexicon and topology, with word output labels for WER scoring and
//! teacher lattice generation.

use std::collections::BTreeMap;

use super::{FstError, HmmTopology, Lexicon, Result, StateId, Wfst, WordId, EPSILON};

/// Sentence-end token for the word bigram (never a real word-id).
const EOS: WordId = usize::MAX;
const BACKOFF_MASS: f64 = 0.1;

struct WordBigram {
    /// counts[ctx][next]; ctx 0 is sentence start.
    counts: BTreeMap<WordId, BTreeMap<WordId, usize>>,
    vocab: Vec<WordId>,
}

impl WordBigram {
    fn fit(corpus: &[Vec<WordId>], lexicon: &Lexicon) -> Self {
        let mut counts: BTreeMap<WordId, BTreeMap<WordId, usize>> = BTreeMap::new();
        for sentence in corpus {
            let mut prev = 0;
            for &w in sentence {
                *counts.entry(prev).or_default().entry(w).or_insert(0) += 1;
                prev = w;
            }
            *counts.entry(prev).or_default().entry(EOS).or_insert(0) += 1;
        }
        WordBigram { counts, vocab: lexicon.word_ids().collect() }
    }

    /// log P(next | ctx) over vocab plus EOS, ML with uniform backoff mass
    /// for unseen successors.
    fn successors(&self, ctx: WordId) -> Vec<(WordId, f64)> {
        let mut events: Vec<WordId> = self.vocab.clone();
        events.push(EOS);
        match self.counts.get(&ctx) {
            Some(c) => {
                let total: usize = c.values().sum();
                let unseen: Vec<WordId> = events.iter().copied().filter(|w| !c.contains_key(w)).collect();
                let mut out = Vec::new();
                if unseen.is_empty() {
                    for (&w, &n) in c {
                        out.push((w, (n as f64 / total as f64).ln()));
                    }
                } else {
                    for (&w, &n) in c {
                        out.push((w, ((1.0 - BACKOFF_MASS) * n as f64 / total as f64).ln()));
                    }
                    let u = (BACKOFF_MASS / unseen.len() as f64).ln();
                    for w in unseen {
                        out.push((w, u));
                    }
                }
                out.sort_by_key(|&(w, _)| w);
                out
            }
            None => {
                let u = (1.0 / events.len() as f64).ln();
                events.into_iter().map(|w| (w, u)).collect()
            }
        }
    }
}

/// Build a decoding graph over the lexicon with a corpus word bigram.
///
/// Pronunciation chains are shared across word contexts; bigram weights ride
/// on the arcs entering each chain, which also carry the word output label.
/// Optional inter-word silence is modeled with probability `p_sil`.
pub fn build_decoding_graph(
    corpus: &[Vec<WordId>],
    lexicon: &Lexicon,
    topology: &HmmTopology,
    p_sil: f64,
) -> Result<Wfst> {
    if corpus.is_empty() {
        return Err(FstError::Empty("corpus"));
    }
    assert!((0.0..1.0).contains(&p_sil), "p_sil must be in [0, 1)");
    let lm = WordBigram::fit(corpus, lexicon);

    let mut g = Wfst::new(1);
    // Chain for (word, pron index): (first state, last state). Arc weights
    // inside a chain are 0; the entering arc carries LM weight and olabel.
    let mut chains: BTreeMap<(WordId, usize), (StateId, StateId)> = BTreeMap::new();
    for w in lexicon.word_ids() {
        for (pi, pron) in lexicon.pronunciations(w).iter().enumerate() {
            let mut first = 0;
            let mut prev = 0;
            for (i, &phone) in pron.iter().enumerate() {
                let s = g.add_state();
                g.add_arc(s, s, topology.pdf_of(phone), EPSILON, 0.0);
                if i == 0 {
                    first = s;
                } else {
                    g.add_arc(prev, s, topology.pdf_of(phone), EPSILON, 0.0);
                }
                prev = s;
            }
            chains.insert((w, pi), (first, prev));
        }
    }
    // Silence state per word context (plus sentence start, key 0).
    let mut sil_states: BTreeMap<WordId, StateId> = BTreeMap::new();
    let sil_pdf = topology.pdf_of(lexicon.silence_phone());

    // Exit points of each context: the pron-final states of that word, or the
    // start state for context 0.
    let exits = |ctx: WordId, chains: &BTreeMap<(WordId, usize), (StateId, StateId)>| -> Vec<StateId> {
        if ctx == 0 {
            vec![0]
        } else {
            (0..lexicon.pronunciations(ctx).len()).map(|pi| chains[&(ctx, pi)].1).collect()
        }
    };

    let no_sil = if p_sil > 0.0 { (1.0 - p_sil).ln() } else { 0.0 };
    let mut contexts: Vec<WordId> = vec![0];
    contexts.extend(lexicon.word_ids());
    for ctx in contexts {
        let exit_states = exits(ctx, &chains);
        let succ = lm.successors(ctx);
        // Optional silence hub for this context.
        let hub = if p_sil > 0.0 {
            let s = g.add_state();
            g.add_arc(s, s, sil_pdf, EPSILON, 0.0);
            for &e in &exit_states {
                g.add_arc(e, s, sil_pdf, EPSILON, p_sil.ln());
            }
            sil_states.insert(ctx, s);
            Some(s)
        } else {
            None
        };
        for &(w, logp) in &succ {
            if w == EOS {
                for &e in &exit_states {
                    g.set_final(e, logp + no_sil);
                }
                if let Some(h) = hub {
                    g.set_final(h, logp);
                }
                continue;
            }
            let prons = lexicon.pronunciations(w);
            let pron_w = -(prons.len() as f64).ln();
            for pi in 0..prons.len() {
                let (first, _) = chains[&(w, pi)];
                let pdf = topology.pdf_of(prons[pi][0]);
                for &e in &exit_states {
                    g.add_arc(e, first, pdf, w, logp + pron_w + no_sil);
                }
                if let Some(h) = hub {
                    g.add_arc(h, first, pdf, w, logp + pron_w);
                }
            }
        }
    }
    let trimmed = g.trim()?;
    debug_assert!(!trimmed.has_epsilon_ilabels());
    Ok(trimmed)
}
