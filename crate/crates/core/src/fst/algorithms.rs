//! Forward-backward, Viterbi, brute-force enumeration, and n-best decoding
//! over acceptors paired with a frame-by-pdf log-likelihood matrix.

use super::{FstError, Label, Lattice, LatticePath, Result, StateId, Wfst, WordId, EPSILON};
use crate::autodiff::Tensor;
use rand_chacha::ChaCha8Rng;

const LOG_ZERO: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_inputs(graph: &Wfst, loglikes: &Tensor) -> Result<()> {
    let m = loglikes.cols();
    if loglikes.rows() == 0 {
        return Err(FstError::Empty("log-likelihood matrix"));
    }
    for a in graph.arcs() {
        if a.ilabel >= m {
            return Err(FstError::IlabelOutOfRange { ilabel: a.ilabel, m });
        }
    }
    Ok(())
}

/// Topological order of the epsilon-input subgraph, as arc indices. Errors if
/// the subgraph has a cycle.
fn epsilon_topo_arcs(graph: &Wfst) -> Result<Vec<usize>> {
    let eps_arcs: Vec<usize> = (0..graph.num_arcs())
        .filter(|&i| graph.arcs()[i].ilabel == EPSILON)
        .collect();
    if eps_arcs.is_empty() {
        return Ok(eps_arcs);
    }
    // Kahn's algorithm on states restricted to epsilon arcs.
    let n = graph.num_states();
    let mut indeg = vec![0usize; n];
    for &i in &eps_arcs {
        indeg[graph.arcs()[i].dst] += 1;
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in &eps_arcs {
        out[graph.arcs()[i].src].push(i);
    }
    let mut queue: Vec<StateId> = (0..n).filter(|&s| indeg[s] == 0).collect();
    let mut order = Vec::with_capacity(eps_arcs.len());
    let mut qi = 0;
    while qi < queue.len() {
        let s = queue[qi];
        qi += 1;
        for &ai in &out[s] {
            order.push(ai);
            let d = graph.arcs()[ai].dst;
            indeg[d] -= 1;
            if indeg[d] == 0 {
                queue.push(d);
            }
        }
    }
    if order.len() != eps_arcs.len() {
        return Err(FstError::EpsilonCycle);
    }
    Ok(order)
}

/// Log-semiring forward-backward. Returns the total log-probability of all
/// accepting T-frame paths and the per-frame pdf occupancies.
pub fn forward_backward(graph: &Wfst, loglikes: &Tensor) -> Result<(f64, Tensor)> {
    check_inputs(graph, loglikes)?;
    let t_max = loglikes.rows();
    let m = loglikes.cols();
    let n = graph.num_states();
    let eps_order = epsilon_topo_arcs(graph)?;

    // alpha[t][s]: log-sum over paths consuming t frames ending in s,
    // epsilon-closed at each time index.
    let mut alpha = vec![vec![LOG_ZERO; n]; t_max + 1];
    alpha[0][graph.start()] = 0.0;
    for t in 0..=t_max {
        for &ai in &eps_order {
            let a = &graph.arcs()[ai];
            let v = alpha[t][a.src];
            if v != LOG_ZERO {
                alpha[t][a.dst] = log_add(alpha[t][a.dst], v + a.weight);
            }
        }
        if t == t_max {
            break;
        }
        let (cur, next) = {
            let (lo, hi) = alpha.split_at_mut(t + 1);
            (&lo[t], &mut hi[0])
        };
        for a in graph.arcs() {
            if a.ilabel == EPSILON {
                continue;
            }
            let v = cur[a.src];
            if v != LOG_ZERO {
                next[a.dst] = log_add(next[a.dst], v + a.weight + loglikes.at(t, a.ilabel));
            }
        }
    }

    let mut logz = LOG_ZERO;
    for (&s, &w) in graph.finals() {
        logz = log_add(logz, alpha[t_max][s] + w);
    }
    if logz == LOG_ZERO {
        return Err(FstError::EmptyComposition(t_max));
    }

    // beta[t][s]: log-sum over suffix paths from s consuming frames t..T.
    let mut beta = vec![vec![LOG_ZERO; n]; t_max + 1];
    for (&s, &w) in graph.finals() {
        beta[t_max][s] = w;
    }
    for t in (0..=t_max).rev() {
        for &ai in eps_order.iter().rev() {
            let a = &graph.arcs()[ai];
            let v = beta[t][a.dst];
            if v != LOG_ZERO {
                beta[t][a.src] = log_add(beta[t][a.src], a.weight + v);
            }
        }
        if t == 0 {
            break;
        }
        let (prev, cur) = {
            let (lo, hi) = beta.split_at_mut(t);
            (&mut lo[t - 1], &hi[0])
        };
        for a in graph.arcs() {
            if a.ilabel == EPSILON {
                continue;
            }
            let v = cur[a.dst];
            if v != LOG_ZERO {
                prev[a.src] = log_add(prev[a.src], a.weight + loglikes.at(t - 1, a.ilabel) + v);
            }
        }
    }

    let mut occ = Tensor::zeros(t_max, m);
    for t in 0..t_max {
        for a in graph.arcs() {
            if a.ilabel == EPSILON {
                continue;
            }
            let va = alpha[t][a.src];
            let vb = beta[t + 1][a.dst];
            if va != LOG_ZERO && vb != LOG_ZERO {
                let p = (va + a.weight + loglikes.at(t, a.ilabel) + vb - logz).exp();
                occ.data_mut()[t * m + a.ilabel] += p;
            }
        }
    }
    Ok((logz, occ))
}

const BRUTE_FORCE_CAP: usize = 1_000_000;

/// Independent oracle for [`forward_backward`]: enumerates every accepting
/// T-frame path explicitly and log-sum-exps the path scores.
pub fn brute_force_logz(graph: &Wfst, loglikes: &Tensor) -> Result<f64> {
    check_inputs(graph, loglikes)?;
    epsilon_topo_arcs(graph)?; // reject epsilon cycles up front
    let t_max = loglikes.rows();
    let adj = graph.adjacency();
    let mut scores: Vec<f64> = Vec::new();
    let mut visited = 0usize;

    // Depth-first over (state, frames consumed, score so far).
    fn recurse(
        graph: &Wfst,
        adj: &[Vec<usize>],
        loglikes: &Tensor,
        t_max: usize,
        state: StateId,
        t: usize,
        score: f64,
        eps_depth: usize,
        scores: &mut Vec<f64>,
        visited: &mut usize,
    ) -> Result<()> {
        if t == t_max {
            if let Some(&w) = graph.finals().get(&state) {
                *visited += 1;
                if *visited > BRUTE_FORCE_CAP {
                    return Err(FstError::PathCountExceeded(BRUTE_FORCE_CAP));
                }
                scores.push(score + w);
            }
        }
        for &ai in &adj[state] {
            let a = &graph.arcs()[ai];
            if a.ilabel == EPSILON {
                if eps_depth > graph.num_states() {
                    return Err(FstError::EpsilonCycle);
                }
                recurse(graph, adj, loglikes, t_max, a.dst, t, score + a.weight, eps_depth + 1, scores, visited)?;
            } else if t < t_max {
                let s = score + a.weight + loglikes.at(t, a.ilabel);
                recurse(graph, adj, loglikes, t_max, a.dst, t + 1, s, 0, scores, visited)?;
            }
        }
        Ok(())
    }

    recurse(graph, &adj, loglikes, t_max, graph.start(), 0, 0.0, 0, &mut scores, &mut visited)?;
    if scores.is_empty() {
        return Err(FstError::EmptyComposition(t_max));
    }
    let mut z = LOG_ZERO;
    for s in scores {
        z = log_add(z, s);
    }
    Ok(z)
}

/// Max-probability accepting path. Returns the non-epsilon output labels
/// along it and the path score. Ties break toward the lowest arc index.
pub fn viterbi_decode(graph: &Wfst, loglikes: &Tensor) -> Result<(Vec<WordId>, f64)> {
    let (words, score, _) = viterbi_with_alignment(graph, loglikes)?;
    Ok((words, score))
}

/// Viterbi that also reports the frame-level pdf alignment.
pub fn viterbi_with_alignment(graph: &Wfst, loglikes: &Tensor) -> Result<(Vec<WordId>, f64, Vec<Label>)> {
    check_inputs(graph, loglikes)?;
    let t_max = loglikes.rows();
    let n = graph.num_states();
    let eps_order = epsilon_topo_arcs(graph)?;

    // score[t][s] with backpointer (previous state snapshot index, arc).
    let mut score = vec![vec![LOG_ZERO; n]; t_max + 1];
    // back[t][s] = (arc index, consumed_frame) of the arc that produced this value.
    let mut back: Vec<Vec<Option<usize>>> = vec![vec![None; n]; t_max + 1];
    score[0][graph.start()] = 0.0;
    for t in 0..=t_max {
        for &ai in &eps_order {
            let a = &graph.arcs()[ai];
            let v = score[t][a.src];
            if v != LOG_ZERO && v + a.weight > score[t][a.dst] {
                score[t][a.dst] = v + a.weight;
                back[t][a.dst] = Some(ai);
            }
        }
        if t == t_max {
            break;
        }
        for (ai, a) in graph.arcs().iter().enumerate() {
            if a.ilabel == EPSILON {
                continue;
            }
            let v = score[t][a.src];
            if v == LOG_ZERO {
                continue;
            }
            let s = v + a.weight + loglikes.at(t, a.ilabel);
            if s > score[t + 1][a.dst] {
                score[t + 1][a.dst] = s;
                back[t + 1][a.dst] = Some(ai);
            }
        }
    }

    let mut best: Option<(StateId, f64)> = None;
    for (&s, &w) in graph.finals() {
        let v = score[t_max][s];
        if v != LOG_ZERO {
            let total = v + w;
            if best.map_or(true, |(_, b)| total > b) {
                best = Some((s, total));
            }
        }
    }
    let (mut state, total) = best.ok_or(FstError::EmptyComposition(t_max))?;

    // Backtrack: at each (t, state) pop epsilon arcs first, then the
    // frame-consuming arc.
    let mut t = t_max;
    let mut rev_arcs: Vec<usize> = Vec::new();
    loop {
        match back[t][state] {
            Some(ai) => {
                let a = &graph.arcs()[ai];
                rev_arcs.push(ai);
                state = a.src;
                if a.ilabel != EPSILON {
                    t -= 1;
                }
            }
            None => break,
        }
    }
    debug_assert_eq!(t, 0);
    debug_assert_eq!(state, graph.start());

    let mut words = Vec::new();
    let mut align = Vec::new();
    for &ai in rev_arcs.iter().rev() {
        let a = &graph.arcs()[ai];
        if a.olabel != EPSILON {
            words.push(a.olabel);
        }
        if a.ilabel != EPSILON {
            align.push(a.ilabel);
        }
    }
    Ok((words, total, align))
}

/// Exact n-best: the top `n` distinct accepting paths whose total score is
/// within `beam` of the best, as a lattice with per-path weights preserved.
pub fn decode_nbest(graph: &Wfst, loglikes: &Tensor, n: usize, beam: f64) -> Result<Lattice> {
    assert!(n >= 1, "n must be >= 1");
    assert!(beam > 0.0, "beam must be positive");
    check_inputs(graph, loglikes)?;
    epsilon_topo_arcs(graph)?;
    let t_max = loglikes.rows();
    let adj = graph.adjacency();

    // Backward Viterbi scores as an admissible A* heuristic: h[t][s] is the
    // best achievable suffix score from s with frames t..T.
    let n_states = graph.num_states();
    let mut h = vec![vec![LOG_ZERO; n_states]; t_max + 1];
    for (&s, &w) in graph.finals() {
        h[t_max][s] = w;
    }
    let eps_order = epsilon_topo_arcs(graph)?;
    for t in (0..=t_max).rev() {
        for &ai in eps_order.iter().rev() {
            let a = &graph.arcs()[ai];
            let v = h[t][a.dst];
            if v != LOG_ZERO && a.weight + v > h[t][a.src] {
                h[t][a.src] = a.weight + v;
            }
        }
        if t == 0 {
            break;
        }
        for a in graph.arcs() {
            if a.ilabel == EPSILON {
                continue;
            }
            let v = h[t][a.dst];
            if v == LOG_ZERO {
                continue;
            }
            let s = a.weight + loglikes.at(t - 1, a.ilabel) + v;
            if s > h[t - 1][a.src] {
                h[t - 1][a.src] = s;
            }
        }
    }
    let best_total = h[0][graph.start()];
    if best_total == LOG_ZERO {
        return Err(FstError::EmptyComposition(t_max));
    }

    // Best-first search over partial paths; every popped node has the exact
    // best-completion bound f = g + h.
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;
    struct Item {
        f: f64,
        g: f64,
        state: StateId,
        t: usize,
        arcs: Vec<usize>,
    }
    impl PartialEq for Item {
        fn eq(&self, other: &Self) -> bool {
            self.f == other.f
        }
    }
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> Ordering {
            self.f.partial_cmp(&other.f).unwrap_or(Ordering::Equal)
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Item { f: best_total, g: 0.0, state: graph.start(), t: 0, arcs: Vec::new() });
    let mut paths: Vec<LatticePath> = Vec::new();
    let threshold = best_total - beam;
    // Generous expansion cap; n-best on desk-scale graphs stays tiny.
    let mut expansions = 0usize;
    while let Some(item) = heap.pop() {
        if paths.len() >= n || item.f < threshold {
            break;
        }
        expansions += 1;
        if expansions > 5_000_000 {
            break;
        }
        if item.t == t_max && graph.finals().contains_key(&item.state) {
            let final_w = graph.finals()[&item.state];
            let mut ilabels = Vec::with_capacity(t_max);
            let mut words = Vec::new();
            let mut graph_weight = final_w;
            let mut acoustic_weight = 0.0;
            let mut t = 0;
            for &ai in &item.arcs {
                let a = &graph.arcs()[ai];
                graph_weight += a.weight;
                if a.olabel != EPSILON {
                    words.push(a.olabel);
                }
                if a.ilabel != EPSILON {
                    acoustic_weight += loglikes.at(t, a.ilabel);
                    ilabels.push(a.ilabel);
                    t += 1;
                }
            }
            paths.push(LatticePath { ilabels, words, graph_weight, acoustic_weight });
            // A final node may still have outgoing epsilon arcs, but any
            // extension consumes no frame and would duplicate coverage only
            // through distinct arcs, so fall through and expand as well.
        }
        for &ai in &adj[item.state] {
            let a = &graph.arcs()[ai];
            let (g, t) = if a.ilabel == EPSILON {
                (item.g + a.weight, item.t)
            } else if item.t < t_max {
                (item.g + a.weight + loglikes.at(item.t, a.ilabel), item.t + 1)
            } else {
                continue;
            };
            let f = g + h[t][a.dst];
            if f == LOG_ZERO || f < threshold {
                continue;
            }
            let mut arcs = item.arcs.clone();
            arcs.push(ai);
            heap.push(Item { f, g, state: a.dst, t, arcs });
        }
    }
    if paths.is_empty() {
        return Err(FstError::EmptyComposition(t_max));
    }
    Ok(Lattice { frames: t_max, paths })
}

/// Random trimmed acceptor over `1..=num_pdfs`, for oracle comparisons and
/// gradient checks.
pub(crate) fn random_graph(rng: &mut ChaCha8Rng, max_states: usize, num_pdfs: usize) -> Wfst {
    use rand::Rng;
    loop {
        let n = rng.gen_range(2..=max_states);
        let mut g = Wfst::new(n);
        let arcs = rng.gen_range(n..=3 * n);
        for _ in 0..arcs {
            let src = rng.gen_range(0..n);
            let dst = rng.gen_range(0..n);
            let il = rng.gen_range(1..=num_pdfs);
            let ol = rng.gen_range(0..=2);
            let w: f64 = rng.gen_range(-2.0..0.5);
            g.add_arc(src, dst, il, ol, w);
        }
        for s in 0..n {
            if rng.gen_bool(0.4) {
                g.set_final(s, rng.gen_range(-1.0..0.0));
            }
        }
        if g.finals().is_empty() {
            g.set_final(n - 1, 0.0);
        }
        if let Ok(t) = g.trim() {
            if t.num_arcs() > 0 {
                return t;
            }
        }
    }
}

pub(crate) fn random_loglikes(rng: &mut ChaCha8Rng, t: usize, m: usize) -> Tensor {
    use rand::Rng;
    Tensor::new(vec![t, m], (0..t * m).map(|_| rng.gen_range(-3.0..1.0)).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fst::numerator_from_lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_arc_graph() -> Wfst {
        let mut g = Wfst::new(2);
        g.add_arc(0, 1, 1, 0, 0.0);
        g.set_final(1, 0.0);
        g
    }

    #[test]
    fn single_arc() {
        let g = single_arc_graph();
        // pdf 1 occupies column 1; column 0 is the unused epsilon column.
        let ll = Tensor::from_rows(&[vec![0.0, 0.0]]);
        let (logz, occ) = forward_backward(&g, &ll).unwrap();
        assert_eq!(logz, 0.0);
        assert_eq!(occ.at(0, 1), 1.0);
        assert_eq!(brute_force_logz(&g, &ll).unwrap(), 0.0);
    }

    #[test]
    fn two_parallel_arcs_split_evenly() {
        let mut g = Wfst::new(2);
        g.add_arc(0, 1, 1, 0, 0.0);
        g.add_arc(0, 1, 2, 0, 0.0);
        g.set_final(1, 0.0);
        let ll = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let (logz, occ) = forward_backward(&g, &ll).unwrap();
        assert!((logz - 2.0_f64.ln()).abs() < 1e-12);
        assert!((occ.at(0, 1) - 0.5).abs() < 1e-12);
        assert!((occ.at(0, 2) - 0.5).abs() < 1e-12);
        assert!((brute_force_logz(&g, &ll).unwrap() - logz).abs() < 1e-12);
    }

    #[test]
    fn linear_chain_single_path() {
        let mut g = Wfst::new(4);
        g.add_arc(0, 1, 1, 0, -0.5);
        g.add_arc(1, 2, 2, 0, -0.25);
        g.add_arc(2, 3, 1, 0, 0.0);
        g.set_final(3, -0.125);
        let ll = Tensor::from_rows(&[vec![0.0, -1.0, -2.0], vec![0.0, -3.0, -4.0], vec![0.0, -5.0, -6.0]]);
        let want = -0.5 - 0.25 - 0.125 + (-1.0) + (-4.0) + (-5.0);
        assert!((brute_force_logz(&g, &ll).unwrap() - want).abs() < 1e-12);
        let (logz, _) = forward_backward(&g, &ll).unwrap();
        assert!((logz - want).abs() < 1e-12);
    }

    #[test]
    fn empty_composition_errors() {
        let g = single_arc_graph();
        let ll = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(forward_backward(&g, &ll), Err(FstError::EmptyComposition(2))));
        assert!(matches!(brute_force_logz(&g, &ll), Err(FstError::EmptyComposition(2))));
    }

    #[test]
    fn forward_backward_matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 100 {
            let num_pdfs = rng.gen_range(1..=4);
            let g = random_graph(&mut rng, 6, num_pdfs);
            let t = rng.gen_range(1..=8);
            let ll = random_loglikes(&mut rng, t, num_pdfs + 1);
            let brute = match brute_force_logz(&g, &ll) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let (logz, occ) = forward_backward(&g, &ll).unwrap();
            assert!((logz - brute).abs() <= 1e-10, "logz {logz} vs brute {brute}");
            for ti in 0..t {
                let sum: f64 = (0..occ.cols()).map(|j| occ.at(ti, j)).sum();
                assert!((sum - 1.0).abs() <= 1e-10, "frame {ti} occupancy sum {sum}");
            }
            checked += 1;
        }
    }

    #[test]
    fn occupancies_are_the_loglike_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let num_pdfs = rng.gen_range(1..=3);
            let g = random_graph(&mut rng, 5, num_pdfs);
            let t = rng.gen_range(1..=5);
            let ll = random_loglikes(&mut rng, t, num_pdfs + 1);
            let (_, occ) = match forward_backward(&g, &ll) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let eps = 1e-5;
            for ti in 0..t {
                for j in 1..=num_pdfs {
                    let mut lp = ll.clone();
                    lp.data_mut()[ti * (num_pdfs + 1) + j] += eps;
                    let mut lm = ll.clone();
                    lm.data_mut()[ti * (num_pdfs + 1) + j] -= eps;
                    let zp = forward_backward(&g, &lp).unwrap().0;
                    let zm = forward_backward(&g, &lm).unwrap().0;
                    let fd = (zp - zm) / (2.0 * eps);
                    let a = occ.at(ti, j);
                    assert!((a - fd).abs() / a.abs().max(1.0) <= 1e-6, "occ {a} vs fd {fd}");
                }
            }
        }
    }

    #[test]
    fn viterbi_picks_the_best_path() {
        let mut g = Wfst::new(2);
        g.add_arc(0, 1, 1, 7, -1.0);
        g.add_arc(0, 1, 2, 9, -2.0);
        g.set_final(1, 0.0);
        let ll = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let (words, score) = viterbi_decode(&g, &ll).unwrap();
        assert_eq!(words, vec![7]);
        assert!((score + 1.0).abs() < 1e-12);
    }

    #[test]
    fn viterbi_matches_brute_force_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 30 {
            let num_pdfs = rng.gen_range(1..=3);
            let g = random_graph(&mut rng, 5, num_pdfs);
            let t = rng.gen_range(1..=6);
            let ll = random_loglikes(&mut rng, t, num_pdfs + 1);
            let lat = match decode_nbest(&g, &ll, 1_000_000, 1e9) {
                Ok(l) => l,
                Err(_) => continue,
            };
            let best = lat.best().unwrap().total_weight();
            let (_, score) = viterbi_decode(&g, &ll).unwrap();
            assert!((score - best).abs() <= 1e-10, "viterbi {score} vs enumerated best {best}");
            checked += 1;
        }
    }

    #[test]
    fn nbest_keeps_only_the_best_path_when_n_is_one() {
        let mut g = Wfst::new(2);
        g.add_arc(0, 1, 1, 1, -1.0);
        g.add_arc(0, 1, 2, 2, -2.0);
        g.set_final(1, 0.0);
        let ll = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let lat = decode_nbest(&g, &ll, 1, 10.0).unwrap();
        assert_eq!(lat.paths.len(), 1);
        assert_eq!(lat.paths[0].words, vec![1]);
    }

    #[test]
    fn nbest_saturates_to_all_paths_within_beam() {
        let mut g = Wfst::new(2);
        g.add_arc(0, 1, 1, 1, -1.0);
        g.add_arc(0, 1, 2, 2, -2.0);
        g.add_arc(0, 1, 3, 3, -30.0); // outside beam
        g.set_final(1, 0.0);
        let ll = Tensor::from_rows(&[vec![0.0, 0.0, 0.0, 0.0]]);
        let lat = decode_nbest(&g, &ll, 10, 10.0).unwrap();
        assert_eq!(lat.paths.len(), 2);
    }

    #[test]
    fn full_nbest_lattice_carries_the_graph_mass() {
        // With beam large and n unbounded, the n-best union scored by
        // forward_backward equals the graph's own logZ.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 10 {
            let num_pdfs = rng.gen_range(1..=3);
            let g = random_graph(&mut rng, 4, num_pdfs);
            let t = rng.gen_range(1..=4);
            let ll = random_loglikes(&mut rng, t, num_pdfs + 1);
            let logz = match forward_backward(&g, &ll) {
                Ok((z, _)) => z,
                Err(_) => continue,
            };
            let lat = decode_nbest(&g, &ll, 1_000_000, 1e9).unwrap();
            let num = numerator_from_lattice(&lat, true).unwrap();
            // The numerator holds graph+LM weight per path; acoustic part is
            // re-added by forward_backward, so score against zero loglikes
            // plus the original acoustic terms baked in per path.
            let (nz, _) = forward_backward(&num, &ll).unwrap();
            // Lattice paths bake in the teacher acoustic score, so compare
            // against logsumexp of path totals instead.
            let mut want = f64::NEG_INFINITY;
            for p in &lat.paths {
                want = log_add(want, p.graph_weight + p.acoustic_weight);
            }
            assert!((want - logz).abs() <= 1e-9, "path sum {want} vs logz {logz}");
            // And numerator_from_lattice(include_acoustic=true) double-counts
            // acoustics when rescored with the same loglikes: each path scores
            // graph + 2*acoustic.
            let mut want2 = f64::NEG_INFINITY;
            for p in &lat.paths {
                want2 = log_add(want2, p.graph_weight + 2.0 * p.acoustic_weight);
            }
            assert!((nz - want2).abs() <= 1e-9);
            checked += 1;
        }
    }
}
