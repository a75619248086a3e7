//! Numerator graph construction: forced transcript expansion and
//! lattice-derived pseudo supervision.

use rand::Rng;

use super::{FstError, HmmTopology, Lattice, Lexicon, PhoneId, Result, Wfst, WordId, EPSILON};

/// Expand a sentence to a phone sequence: one pronunciation per word chosen
/// uniformly at random, and a silence phone inserted independently with
/// probability `p_sil` before the first word, between words, and after the
/// last word.
///
/// Draw order per call: silence before the sentence, then for each word a
/// pronunciation index followed by the silence decision after that word.
pub fn phones_from_text<R: Rng>(
    sentence: &[WordId],
    lexicon: &Lexicon,
    rng: &mut R,
    p_sil: f64,
) -> Result<Vec<PhoneId>> {
    assert!((0.0..=1.0).contains(&p_sil), "p_sil must be a probability");
    for &w in sentence {
        if w == 0 || w > lexicon.num_words() {
            return Err(FstError::OutOfVocabulary(format!("word-id {w}")));
        }
    }
    let mut phones = Vec::new();
    if p_sil > 0.0 && rng.gen_bool(p_sil) {
        phones.push(lexicon.silence_phone());
    }
    for &w in sentence {
        let prons = lexicon.pronunciations(w);
        let pick = if prons.len() == 1 { 0 } else { rng.gen_range(0..prons.len()) };
        phones.extend_from_slice(&prons[pick]);
        if p_sil > 0.0 && rng.gen_bool(p_sil) {
            phones.push(lexicon.silence_phone());
        }
    }
    Ok(phones)
}

/// Acceptor of all pdf-id sequences realizing the transcript: any
/// pronunciation per word, optional silence at boundaries when enabled,
/// self-loops from the topology. All weights 0.
pub fn numerator_from_transcript(
    words: &[WordId],
    lexicon: &Lexicon,
    topology: &HmmTopology,
    allow_optional_silence: bool,
) -> Result<Wfst> {
    if words.is_empty() {
        return Err(FstError::Empty("transcript"));
    }
    for &w in words {
        if w == 0 || w > lexicon.num_words() {
            return Err(FstError::OutOfVocabulary(format!("word-id {w}")));
        }
    }
    let sil = topology.pdf_of(lexicon.silence_phone());
    let mut g = Wfst::new(1);
    let mut frontier: Vec<usize> = vec![0];

    let add_optional_silence = |g: &mut Wfst, frontier: &mut Vec<usize>| {
        let s = g.add_state();
        for &f in frontier.iter() {
            g.add_arc(f, s, sil, EPSILON, 0.0);
        }
        g.add_arc(s, s, sil, EPSILON, 0.0);
        frontier.push(s);
    };

    if allow_optional_silence {
        add_optional_silence(&mut g, &mut frontier);
    }
    for &w in words {
        let mut next_frontier = Vec::new();
        for pron in lexicon.pronunciations(w) {
            let mut entry_sources = frontier.clone();
            let mut last = 0;
            for (pi, &phone) in pron.iter().enumerate() {
                let pdf = topology.pdf_of(phone);
                let s = g.add_state();
                let olabel = if pi == 0 { w } else { EPSILON };
                for &src in &entry_sources {
                    g.add_arc(src, s, pdf, olabel, 0.0);
                }
                g.add_arc(s, s, pdf, EPSILON, 0.0);
                entry_sources = vec![s];
                last = s;
            }
            next_frontier.push(last);
        }
        frontier = next_frontier;
        if allow_optional_silence {
            add_optional_silence(&mut g, &mut frontier);
        }
    }
    for &f in &frontier {
        g.set_final(f, 0.0);
    }
    g.trim()
}

/// Trimmed acceptor whose accepting paths and weights are exactly the
/// lattice's, usable as an LF-MMI numerator graph. With `include_acoustic`
/// the teacher's acoustic score stays baked into the path weight; otherwise
/// only the graph/LM part is kept.
pub fn numerator_from_lattice(lattice: &Lattice, include_acoustic: bool) -> Result<Wfst> {
    if lattice.is_empty() {
        return Err(FstError::Empty("lattice"));
    }
    // Prefix-tree union of the frame alignments; the full path weight sits on
    // the final weight of each leaf so per-path scores stay bitwise exact.
    let mut g = Wfst::new(1);
    // children[state] -> list of (ilabel, child state, arc olabel)
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for path in &lattice.paths {
        debug_assert_eq!(path.ilabels.len(), lattice.frames);
        let mut state = 0usize;
        for &il in &path.ilabels {
            let found = children[state].iter().find(|&&(l, _)| l == il).map(|&(_, c)| c);
            match found {
                Some(c) => state = c,
                None => {
                    let s = g.add_state();
                    children.push(Vec::new());
                    children[state].push((il, s));
                    // Output labels are dropped: the numerator is consumed
                    // only by forward-backward, which reads ilabels.
                    g.add_arc(state, s, il, EPSILON, 0.0);
                    state = s;
                }
            }
        }
        let w = if include_acoustic { path.total_weight() } else { path.graph_weight };
        if let Some(&existing) = g.finals().get(&state) {
            // Two distinct hypotheses with an identical frame alignment:
            // merge their mass.
            let merged = log_add(existing, w);
            g.set_final(state, merged);
        } else {
            g.set_final(state, w);
        }
    }
    g.trim()
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
