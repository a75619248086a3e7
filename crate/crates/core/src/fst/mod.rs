//! Weighted finite-state acceptors over pdf-ids with word output labels.
//!
//! Graphs here are acceptors whose input labels are pdf-ids (label 0 is
//! epsilon) and whose output labels are word-ids (0 is epsilon). Weights are
//! log-probabilities. The same structure serves as denominator graph,
//! numerator graph, decoding graph, and lattice backbone.

pub(crate) mod algorithms;
mod decoding;
mod denominator;
mod numerator;

pub use algorithms::{brute_force_logz, decode_nbest, forward_backward, viterbi_decode};
pub use decoding::build_decoding_graph;
pub use denominator::build_denominator_graph;
pub use numerator::{numerator_from_lattice, numerator_from_transcript, phones_from_text};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

/// Input/output label; 0 is epsilon.
pub type Label = usize;
pub const EPSILON: Label = 0;

pub type StateId = usize;
pub type WordId = usize;
pub type PhoneId = usize;

#[derive(Debug, Error)]
pub enum FstError {
    #[error("out-of-vocabulary word: {0}")]
    OutOfVocabulary(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("n-gram order {0} not supported (max 4)")]
    OrderTooLarge(usize),
    #[error("empty composition: graph accepts no {0}-frame path")]
    EmptyComposition(usize),
    #[error("graph has an epsilon-input cycle")]
    EpsilonCycle,
    #[error("ilabel {ilabel} out of range for {m} pdfs")]
    IlabelOutOfRange { ilabel: Label, m: usize },
    #[error("brute-force path count exceeds cap of {0}")]
    PathCountExceeded(usize),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FstError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: f64,
}

/// Weighted acceptor. State 0 is always the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct Wfst {
    num_states: usize,
    arcs: Vec<Arc>,
    finals: BTreeMap<StateId, f64>,
}

impl Wfst {
    pub fn new(num_states: usize) -> Self {
        assert!(num_states >= 1, "a graph needs at least the start state");
        Wfst { num_states, arcs: Vec::new(), finals: BTreeMap::new() }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn start(&self) -> StateId {
        0
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn finals(&self) -> &BTreeMap<StateId, f64> {
        &self.finals
    }

    pub fn add_state(&mut self) -> StateId {
        self.num_states += 1;
        self.num_states - 1
    }

    pub fn add_arc(&mut self, src: StateId, dst: StateId, ilabel: Label, olabel: Label, weight: f64) {
        debug_assert!(src < self.num_states && dst < self.num_states);
        debug_assert!(weight.is_finite());
        self.arcs.push(Arc { src, dst, ilabel, olabel, weight });
    }

    pub fn set_final(&mut self, state: StateId, weight: f64) {
        debug_assert!(state < self.num_states);
        debug_assert!(weight.is_finite());
        self.finals.insert(state, weight);
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.finals.contains_key(&state)
    }

    /// Largest ilabel in the graph (0 if none).
    pub fn max_ilabel(&self) -> Label {
        self.arcs.iter().map(|a| a.ilabel).max().unwrap_or(0)
    }

    pub fn has_epsilon_ilabels(&self) -> bool {
        self.arcs.iter().any(|a| a.ilabel == EPSILON)
    }

    /// Arc indices grouped by source state.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            adj[a.src].push(i);
        }
        adj
    }

    fn reverse_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            adj[a.dst].push(i);
        }
        adj
    }

    /// True when every state lies on some start-to-final path.
    pub fn is_trimmed(&self) -> bool {
        let acc = self.accessible();
        let coacc = self.coaccessible();
        (0..self.num_states).all(|s| acc[s] && coacc[s])
    }

    fn accessible(&self) -> Vec<bool> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_states];
        let mut stack = vec![self.start()];
        seen[self.start()] = true;
        while let Some(s) = stack.pop() {
            for &ai in &adj[s] {
                let d = self.arcs[ai].dst;
                if !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
        seen
    }

    fn coaccessible(&self) -> Vec<bool> {
        let radj = self.reverse_adjacency();
        let mut seen = vec![false; self.num_states];
        let mut stack: Vec<StateId> = self.finals.keys().copied().collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &ai in &radj[s] {
                let d = self.arcs[ai].src;
                if !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
        seen
    }

    /// Copy with all useless states removed; state ids are renumbered but the
    /// start state stays 0. Arc order is preserved.
    pub fn trim(&self) -> Result<Wfst> {
        let acc = self.accessible();
        let coacc = self.coaccessible();
        let keep: Vec<bool> = (0..self.num_states).map(|s| acc[s] && coacc[s]).collect();
        if !keep[self.start()] {
            return Err(FstError::Empty("graph (start state reaches no final state)"));
        }
        let mut remap = vec![usize::MAX; self.num_states];
        let mut next = 0;
        for s in 0..self.num_states {
            if keep[s] {
                remap[s] = next;
                next += 1;
            }
        }
        let mut out = Wfst::new(next);
        for a in &self.arcs {
            if keep[a.src] && keep[a.dst] {
                out.add_arc(remap[a.src], remap[a.dst], a.ilabel, a.olabel, a.weight);
            }
        }
        for (&s, &w) in &self.finals {
            if keep[s] {
                out.set_final(remap[s], w);
            }
        }
        Ok(out)
    }

    /// Text dump: arc lines `src dst ilabel olabel weight`, then final lines
    /// `state weight`. Round-trips bit-exactly.
    pub fn write_text(&self) -> String {
        let mut s = String::new();
        for a in &self.arcs {
            writeln!(s, "{} {} {} {} {}", a.src, a.dst, a.ilabel, a.olabel, a.weight).unwrap();
        }
        for (&st, &w) in &self.finals {
            writeln!(s, "{} {}", st, w).unwrap();
        }
        s
    }

    pub fn read_text(text: &str) -> Result<Wfst> {
        let mut arcs = Vec::new();
        let mut finals = BTreeMap::new();
        let mut max_state = 0usize;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |d: &str| FstError::Parse { line: ln + 1, detail: d.to_string() };
            match toks.len() {
                5 => {
                    let src: usize = toks[0].parse().map_err(|_| bad("bad src"))?;
                    let dst: usize = toks[1].parse().map_err(|_| bad("bad dst"))?;
                    let il: usize = toks[2].parse().map_err(|_| bad("bad ilabel"))?;
                    let ol: usize = toks[3].parse().map_err(|_| bad("bad olabel"))?;
                    let w: f64 = toks[4].parse().map_err(|_| bad("bad weight"))?;
                    max_state = max_state.max(src).max(dst);
                    arcs.push(Arc { src, dst, ilabel: il, olabel: ol, weight: w });
                }
                2 => {
                    let st: usize = toks[0].parse().map_err(|_| bad("bad final state"))?;
                    let w: f64 = toks[1].parse().map_err(|_| bad("bad final weight"))?;
                    max_state = max_state.max(st);
                    finals.insert(st, w);
                }
                _ => return Err(bad("expected 5 fields (arc) or 2 fields (final)")),
            }
        }
        if finals.is_empty() {
            return Err(FstError::Empty("graph (no final states)"));
        }
        Ok(Wfst { num_states: max_state + 1, arcs, finals })
    }
}

/// Word table plus pronunciations. Word-ids and phone-ids start at 1;
/// 0 is epsilon in both spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
    word_index: BTreeMap<String, WordId>,
    /// Indexed by word-id - 1; each entry is a non-empty list of pronunciations.
    pronunciations: Vec<Vec<Vec<PhoneId>>>,
    phones: Vec<String>,
    silence_phone: PhoneId,
}

pub const SILENCE_WORD: &str = "<sil>";

impl Lexicon {
    /// Build from (word, pronunciations) pairs over named phones. The silence
    /// phone is created implicitly as its own phone named `SIL`.
    pub fn build(entries: &[(String, Vec<Vec<String>>)]) -> Result<Lexicon> {
        let mut phones: Vec<String> = vec!["SIL".to_string()];
        let mut phone_index: BTreeMap<String, PhoneId> = BTreeMap::new();
        phone_index.insert("SIL".to_string(), 1);
        let mut words = Vec::new();
        let mut word_index = BTreeMap::new();
        let mut prons: Vec<Vec<Vec<PhoneId>>> = Vec::new();
        for (word, variants) in entries {
            assert!(word != SILENCE_WORD, "{SILENCE_WORD} is reserved");
            let wid = match word_index.get(word) {
                Some(&id) => id,
                None => {
                    words.push(word.clone());
                    prons.push(Vec::new());
                    word_index.insert(word.clone(), words.len());
                    words.len()
                }
            };
            for v in variants {
                assert!(!v.is_empty(), "empty pronunciation for {word}");
                let seq: Vec<PhoneId> = v
                    .iter()
                    .map(|p| {
                        *phone_index.entry(p.clone()).or_insert_with(|| {
                            phones.push(p.clone());
                            phones.len()
                        })
                    })
                    .collect();
                prons[wid - 1].push(seq);
            }
        }
        Ok(Lexicon { words, word_index, pronunciations: prons, phones, silence_phone: 1 })
    }

    /// Parse the lexicon file format: one line per pronunciation,
    /// `WORD PHONE1 PHONE2 ...`; repeated WORD lines add alternatives.
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut entries: Vec<(String, Vec<Vec<String>>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let word = toks.next().unwrap().to_string();
            let phones: Vec<String> = toks.map(str::to_string).collect();
            if phones.is_empty() {
                return Err(FstError::Parse { line: ln + 1, detail: format!("no phones for {word}") });
            }
            if word == SILENCE_WORD {
                // Silence is implicit; its line only pins the phone name.
                continue;
            }
            match entries.iter_mut().find(|(w, _)| *w == word) {
                Some((_, vs)) => vs.push(phones),
                None => entries.push((word, vec![phones])),
            }
        }
        if entries.is_empty() {
            return Err(FstError::Empty("lexicon"));
        }
        Lexicon::build(&entries)
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", SILENCE_WORD, self.phones[0]).unwrap();
        for (i, w) in self.words.iter().enumerate() {
            for pron in &self.pronunciations[i] {
                let names: Vec<&str> = pron.iter().map(|&p| self.phones[p - 1].as_str()).collect();
                writeln!(s, "{} {}", w, names.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    /// Number of phones including silence; phone-ids are dense in `[1, P]`.
    pub fn num_phones(&self) -> usize {
        self.phones.len()
    }

    pub fn silence_phone(&self) -> PhoneId {
        self.silence_phone
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.word_index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id - 1]
    }

    pub fn pronunciations(&self, id: WordId) -> &[Vec<PhoneId>] {
        &self.pronunciations[id - 1]
    }

    pub fn word_ids(&self) -> impl Iterator<Item = WordId> + '_ {
        (1..=self.words.len()).into_iter()
    }
}

/// One emitting state per phone with a self-loop and a forward arc, both
/// weight 0; pdf-id(phone p) = p.
#[derive(Debug, Clone, Copy)]
pub struct HmmTopology {
    num_phones: usize,
}

impl HmmTopology {
    pub fn new(num_phones: usize) -> Self {
        HmmTopology { num_phones }
    }

    pub fn for_lexicon(lex: &Lexicon) -> Self {
        HmmTopology { num_phones: lex.num_phones() }
    }

    pub fn num_pdfs(&self) -> usize {
        self.num_phones
    }

    pub fn pdf_of(&self, phone: PhoneId) -> Label {
        debug_assert!(phone >= 1 && phone <= self.num_phones);
        phone
    }

    /// Columns of the per-frame log-likelihood matrix: pdfs 1..=P plus the
    /// unused epsilon column 0.
    pub fn loglike_dim(&self) -> usize {
        self.num_phones + 1
    }
}

/// One decoded hypothesis with its frame-level alignment and score split.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    /// One pdf-id per frame.
    pub ilabels: Vec<Label>,
    pub words: Vec<WordId>,
    /// Sum of arc weights plus final weight (graph/LM side).
    pub graph_weight: f64,
    /// Sum of per-frame log-likelihoods along the alignment.
    pub acoustic_weight: f64,
}

impl LatticePath {
    pub fn total_weight(&self) -> f64 {
        self.graph_weight + self.acoustic_weight
    }
}

/// A weighted set of decoded hypotheses; every path covers exactly
/// `frames` ilabel-consuming arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub frames: usize,
    pub paths: Vec<LatticePath>,
}

impl Lattice {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn best(&self) -> Option<&LatticePath> {
        self.paths
            .iter()
            .max_by(|a, b| a.total_weight().partial_cmp(&b.total_weight()).unwrap())
    }
}
