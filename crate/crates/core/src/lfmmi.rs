//! Distillation objectives: hidden-layer MSE with layer mapping and trainable
//! projections, the LF-MMI sequence criterion, and their weighted
//! combinations into the prediction-layer and total distillation losses.

use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};
use crate::fst::{forward_backward, FstError, Wfst};

#[derive(Debug, Error)]
pub enum LfmmiError {
    #[error("supervision mismatch: {0}")]
    SupervisionMismatch(FstError),
    #[error(transparent)]
    Fst(#[from] FstError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("student/teacher sequence length mismatch: {student} vs {teacher}")]
    LengthMismatch { student: usize, teacher: usize },
    #[error("layer map: student layer {student} maps to teacher layer {teacher}, but the teacher has {depth} blocks")]
    MapExceedsTeacher { student: usize, teacher: usize, depth: usize },
}

pub type Result<T> = std::result::Result<T, LfmmiError>;

/// Loss interpolation weights: `alpha` weighs the prediction objective
/// against the hidden objective, `beta` weighs the sequence-level term
/// against MSE inside the prediction objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl ObjectiveWeights {
    pub fn new(alpha: f64, beta: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0,1]");
        assert!((0.0..=1.0).contains(&beta), "beta must be in [0,1]");
        ObjectiveWeights { alpha, beta }
    }
}

/// Maps student blocks to teacher blocks, with one trainable projection
/// matrix per pair to bridge the dimensions.
#[derive(Debug, Clone)]
pub struct LayerMap {
    /// (student block, teacher block), both 1-based, student strictly
    /// increasing.
    pairs: Vec<(usize, usize)>,
    /// One `d_student x d_teacher` matrix per pair.
    projections: Vec<Tensor>,
}

impl LayerMap {
    /// Explicit pairs with zero projections; call [`init_projections`]
    /// (or set them directly) before use.
    ///
    /// [`init_projections`]: LayerMap::init_projections
    pub fn new(pairs: Vec<(usize, usize)>) -> LayerMap {
        LayerMap { pairs, projections: Vec::new() }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn projections(&self) -> &[Tensor] {
        &self.projections
    }

    pub fn projections_mut(&mut self) -> &mut [Tensor] {
        &mut self.projections
    }

    pub fn set_projection(&mut self, i: usize, t: Tensor) {
        self.projections[i] = t;
    }

    /// Fan-in scaled uniform init, fixed seed.
    pub fn init_projections(&mut self, d_student: usize, d_teacher: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / d_student as f64).sqrt();
        self.projections = (0..self.pairs.len())
            .map(|_| {
                Tensor::new(
                    vec![d_student, d_teacher],
                    (0..d_student * d_teacher).map(|_| rng.gen_range(-bound..bound)).collect(),
                )
            })
            .collect();
    }
}

/// Layer map g(i) = 2i over nominal student layers `1..=student_blocks`,
/// minus the skip set. The surviving pairs are re-ranked onto the actual
/// student blocks in order: a skip set of size k means the student model has
/// `student_blocks - k` blocks, and the i-th surviving mapping targets the
/// i-th student block while keeping its original teacher target `2i`.
pub fn default_layer_map(
    student_blocks: usize,
    teacher_blocks: usize,
    skip_student_layers: &[usize],
) -> Result<LayerMap> {
    let mut pairs = Vec::new();
    let mut rank = 0;
    for i in 1..=student_blocks {
        if skip_student_layers.contains(&i) {
            continue;
        }
        rank += 1;
        let teacher = 2 * i;
        if teacher > teacher_blocks {
            return Err(LfmmiError::MapExceedsTeacher { student: i, teacher, depth: teacher_blocks });
        }
        pairs.push((rank, teacher));
    }
    Ok(LayerMap { pairs, projections: Vec::new() })
}

/// Sum over mapped pairs of MSE between the projected student hidden and the
/// teacher hidden. `student_hiddens` is indexed by student block (0-based);
/// `projection_vars` must be tape leaves aligned with `map.pairs()`. Teacher
/// hiddens enter as constants.
pub fn hidden_loss(
    tape: &mut Tape,
    student_hiddens: &[VarId],
    teacher_hiddens: &[Tensor],
    map: &LayerMap,
    projection_vars: &[VarId],
) -> Result<VarId> {
    assert_eq!(projection_vars.len(), map.pairs.len(), "one projection per mapped pair");
    let mut total: Option<VarId> = None;
    for (k, &(si, ti)) in map.pairs.iter().enumerate() {
        let hs = student_hiddens[si - 1];
        let ht = &teacher_hiddens[ti - 1];
        let l_s = tape.value(hs).rows();
        if l_s != ht.rows() {
            return Err(LfmmiError::LengthMismatch { student: l_s, teacher: ht.rows() });
        }
        let projected = tape.matmul(hs, projection_vars[k])?;
        let target = tape.constant(ht.clone());
        let mse = tape.mse_reduce(projected, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, mse)?,
            None => mse,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

/// The LF-MMI criterion: `logZ(numerator) - logZ(denominator)` with its
/// analytic gradient w.r.t. the log-likelihoods, which is numerator minus
/// denominator occupancies by construction. The training loss is the
/// negation (the objective is maximized).
pub fn mmi_objective(loglikes: &Tensor, numerator: &Wfst, denominator: &Wfst) -> Result<(f64, Tensor)> {
    let (zn, occ_n) = forward_backward(numerator, loglikes).map_err(|e| match e {
        FstError::EmptyComposition(t) => LfmmiError::SupervisionMismatch(FstError::EmptyComposition(t)),
        other => LfmmiError::Fst(other),
    })?;
    let (zd, occ_d) = forward_backward(denominator, loglikes)?;
    let mut grad = occ_n;
    for (g, d) in grad.data_mut().iter_mut().zip(occ_d.data()) {
        *g -= d;
    }
    Ok((zn - zd, grad))
}

/// Record `-MMI_distill` on the tape as a spliced scalar so the analytic
/// occupancy gradient flows into the log-likelihood node.
pub fn mmi_loss_on_tape(
    tape: &mut Tape,
    loglikes: VarId,
    numerator: &Wfst,
    denominator: &Wfst,
) -> Result<VarId> {
    let (value, mut grad) = mmi_objective(tape.value(loglikes), numerator, denominator)?;
    for g in grad.data_mut() {
        *g = -*g;
    }
    Ok(tape.spliced_scalar(loglikes, -value, grad)?)
}

/// Prediction-layer objective: `beta * (-MMI_distill) + (1-beta) *
/// MSE(student_out, teacher_out)`. The teacher output is a constant.
pub fn prediction_loss(
    tape: &mut Tape,
    student_out: VarId,
    teacher_out: &Tensor,
    numerator: &Wfst,
    denominator: &Wfst,
    beta: f64,
) -> Result<VarId> {
    assert!((0.0..=1.0).contains(&beta), "beta must be in [0,1]");
    let shape = tape.value(student_out).shape().to_vec();
    if shape != teacher_out.shape() {
        return Err(LfmmiError::LengthMismatch { student: shape[0], teacher: teacher_out.rows() });
    }
    if beta == 0.0 {
        let target = tape.constant(teacher_out.clone());
        return Ok(tape.mse_reduce(student_out, target)?);
    }
    let mmi = mmi_loss_on_tape(tape, student_out, numerator, denominator)?;
    if beta == 1.0 {
        return Ok(mmi);
    }
    let target = tape.constant(teacher_out.clone());
    let mse = tape.mse_reduce(student_out, target)?;
    let a = tape.scale(mmi, beta)?;
    let b = tape.scale(mse, 1.0 - beta)?;
    Ok(tape.add(a, b)?)
}

/// Total distillation loss: `(1-alpha) * hidden + alpha * pred`.
pub fn total_loss(tape: &mut Tape, hidden: VarId, pred: VarId, alpha: f64) -> Result<VarId> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0,1]");
    let h = tape.scale(hidden, 1.0 - alpha)?;
    let p = tape.scale(pred, alpha)?;
    Ok(tape.add(h, p)?)
}

/// Central finite-difference verification of every objective (ε=1e-4) on
/// `num_seeds` random instances each; returns the maximum relative error
/// observed across mmi_objective, hidden_loss, prediction_loss, and
/// total_loss.
pub fn objective_gradcheck(num_seeds: usize) -> Result<f64> {
    let mut max_err: f64 = 0.0;
    let eps = 1e-4;
    let symmetric = |n: usize| {
        let mut den = Wfst::new(2);
        for p in 1..=n {
            den.add_arc(0, 1, p, 0, 0.0);
        }
        den.set_final(1, 0.0);
        den
    };
    let den2 = symmetric(2);
    let mut num1 = Wfst::new(2);
    num1.add_arc(0, 1, 1, 0, 0.0);
    num1.set_final(1, 0.0);

    for seed in 0..num_seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE ^ seed);

        // mmi_objective: analytic occupancy gradient vs central differences
        // on a random graph with an n-best lattice numerator.
        let (graph, num, ll) = loop {
            let g = crate::fst::algorithms::random_graph(&mut rng, 5, 3);
            let t = rng.gen_range(1..=4);
            let ll = crate::fst::algorithms::random_loglikes(&mut rng, t, 4);
            let Ok(lat) = crate::fst::decode_nbest(&g, &ll, 3, 20.0) else { continue };
            let Ok(num) = crate::fst::numerator_from_lattice(&lat, false) else { continue };
            if mmi_objective(&ll, &num, &g).is_ok() {
                break (g, num, ll);
            }
        };
        let (_, grad) = mmi_objective(&ll, &num, &graph)?;
        for i in 0..ll.data().len() {
            let mut lp = ll.clone();
            lp.data_mut()[i] += eps;
            let mut lm = ll.clone();
            lm.data_mut()[i] -= eps;
            let fd = (mmi_objective(&lp, &num, &graph)?.0 - mmi_objective(&lm, &num, &graph)?.0)
                / (2.0 * eps);
            let a = grad.data()[i];
            max_err = max_err.max((a - fd).abs() / a.abs().max(1.0));
        }

        // hidden_loss over student hidden + projection leaves.
        let rt = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        let hs0 = rt(&mut rng, 4, 3);
        let w0 = rt(&mut rng, 3, 5);
        let ht = rt(&mut rng, 4, 5);
        let map = default_layer_map(1, 2, &[])?;
        let teacher = vec![Tensor::zeros(1, 1), ht.clone()];
        let err = crate::autodiff::grad_check(
            |tape, vars| {
                hidden_loss(tape, &[vars[0]], &teacher, &map, &[vars[1]])
                    .map_err(|_| AutodiffError::NonScalarLoss(vec![]))
            },
            &[hs0, w0],
            eps,
        )?;
        max_err = max_err.max(err);

        // prediction_loss at an interior beta.
        let s = rt(&mut rng, 2, 3);
        let t_out = rt(&mut rng, 2, 3);
        let mut num2 = Wfst::new(3);
        num2.add_arc(0, 1, 1, 0, 0.0);
        num2.add_arc(1, 2, 2, 0, 0.0);
        num2.set_final(2, 0.0);
        let den_chain = {
            let mut d = Wfst::new(1);
            d.add_arc(0, 0, 1, 0, 0.0);
            d.add_arc(0, 0, 2, 0, 0.0);
            d.set_final(0, 0.0);
            d
        };
        let err = crate::autodiff::grad_check(
            |tape, vars| {
                prediction_loss(tape, vars[0], &t_out, &num2, &den_chain, 0.8)
                    .map_err(|_| AutodiffError::NonScalarLoss(vec![]))
            },
            &[s],
            eps,
        )?;
        max_err = max_err.max(err);

        // total_loss through both branches.
        let s1 = rt(&mut rng, 1, 3);
        let hs1 = rt(&mut rng, 4, 3);
        let w1 = rt(&mut rng, 3, 5);
        let teacher1 = teacher.clone();
        let map1 = default_layer_map(1, 2, &[])?;
        let (den2c, num1c) = (den2.clone(), num1.clone());
        let err = crate::autodiff::grad_check(
            |tape, vars| {
                let h = hidden_loss(tape, &[vars[1]], &teacher1, &map1, &[vars[2]])
                    .map_err(|_| AutodiffError::NonScalarLoss(vec![]))?;
                let p = prediction_loss(tape, vars[0], &Tensor::zeros(1, 3), &num1c, &den2c, 0.8)
                    .map_err(|_| AutodiffError::NonScalarLoss(vec![]))?;
                total_loss(tape, h, p, 0.8).map_err(|_| AutodiffError::NonScalarLoss(vec![]))
            },
            &[s1, hs1, w1],
            eps,
        )?;
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::Rng;

    fn randt(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    /// Symmetric two-pdf denominator and one-pdf numerator of the
    /// hand-computed MMI case.
    fn symmetric_pair() -> (Wfst, Wfst) {
        let mut den = Wfst::new(2);
        den.add_arc(0, 1, 1, 0, 0.0);
        den.add_arc(0, 1, 2, 0, 0.0);
        den.set_final(1, 0.0);
        let mut num = Wfst::new(2);
        num.add_arc(0, 1, 1, 0, 0.0);
        num.set_final(1, 0.0);
        (den, num)
    }

    #[test]
    fn hidden_loss_zero_when_projection_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = randt(&mut rng, 3, 4);
        let map = default_layer_map(1, 2, &[]).unwrap();
        let mut tape = Tape::new();
        let hs = tape.constant(h.clone());
        let w = tape.leaf(identity(4), true);
        let loss = hidden_loss(&mut tape, &[hs], &[Tensor::zeros(1, 1), h.clone()], &map, &[w]).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn hidden_loss_single_pair_mean_of_squares() {
        // H^S W = [[1, 1]], H^T = [[0, 0]] -> MSE 1.0
        let map = default_layer_map(1, 2, &[]).unwrap();
        let mut tape = Tape::new();
        let hs = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
        let w = tape.leaf(identity(2), true);
        let teacher = vec![Tensor::zeros(1, 1), Tensor::zeros(1, 2)];
        let loss = hidden_loss(&mut tape, &[hs], &teacher, &map, &[w]).unwrap();
        assert_eq!(tape.value(loss).item(), 1.0);
    }

    #[test]
    fn hidden_loss_length_mismatch_rejected() {
        let map = default_layer_map(1, 2, &[]).unwrap();
        let mut tape = Tape::new();
        let hs = tape.constant(Tensor::zeros(3, 2));
        let w = tape.leaf(identity(2), true);
        let teacher = vec![Tensor::zeros(1, 1), Tensor::zeros(4, 2)];
        assert!(matches!(
            hidden_loss(&mut tape, &[hs], &teacher, &map, &[w]),
            Err(LfmmiError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hidden_loss_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let hs0 = randt(&mut rng, 4, 3);
            let w0 = randt(&mut rng, 3, 5);
            let ht = randt(&mut rng, 4, 5);
            let map = default_layer_map(1, 2, &[]).unwrap();
            let teacher = vec![Tensor::zeros(1, 1), ht.clone()];
            let err = grad_check(
                |tape, vars| {
                    hidden_loss(tape, &[vars[0]], &teacher, &map, &[vars[1]])
                        .map_err(|_| AutodiffError::NonScalarLoss(vec![]))
                },
                &[hs0.clone(), w0.clone()],
                1e-4,
            )
            .unwrap();
            assert!(err <= 1e-6, "err {err}");
        }
    }

    #[test]
    fn mmi_zero_when_numerator_equals_denominator() {
        let (den, _) = symmetric_pair();
        let ll = Tensor::from_rows(&[vec![0.0, 0.3, -0.7]]);
        let (v, g) = mmi_objective(&ll, &den, &den).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x.abs() <= 1e-15));
    }

    #[test]
    fn mmi_hand_computed_symmetric_case() {
        let (den, num) = symmetric_pair();
        let ll = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let (v, g) = mmi_objective(&ll, &num, &den).unwrap();
        assert!((v - 0.5f64.ln()).abs() <= 1e-12);
        assert!((g.at(0, 1) - 0.5).abs() <= 1e-12);
        assert!((g.at(0, 2) + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn mmi_nonpositive_when_numerator_is_a_subset() {
        let (den, num) = symmetric_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let ll = randt(&mut rng, 1, 3);
            let (v, _) = mmi_objective(&ll, &num, &den).unwrap();
            assert!(v <= 1e-12);
        }
    }

    #[test]
    fn mmi_is_shift_invariant_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (den, num) = symmetric_pair();
        for _ in 0..10 {
            let ll = randt(&mut rng, 1, 3);
            let (v0, _) = mmi_objective(&ll, &num, &den).unwrap();
            let c = rng.gen_range(-3.0..3.0);
            let mut shifted = ll.clone();
            for x in shifted.data_mut() {
                *x += c;
            }
            let (v1, _) = mmi_objective(&shifted, &num, &den).unwrap();
            assert!((v0 - v1).abs() <= 1e-9, "shift by {c}: {v0} vs {v1}");
        }
    }

    #[test]
    fn mmi_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..20 {
            let g = crate::fst::algorithms::random_graph(&mut rng, 5, 3);
            let t = rng.gen_range(1..=4);
            let ll = crate::fst::algorithms::random_loglikes(&mut rng, t, 4);
            let lat = match crate::fst::decode_nbest(&g, &ll, 3, 20.0) {
                Ok(l) => l,
                Err(_) => continue,
            };
            let num = crate::fst::numerator_from_lattice(&lat, false).unwrap();
            let (_, grad) = match mmi_objective(&ll, &num, &g) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let eps = 1e-4;
            for i in 0..ll.data().len() {
                let mut lp = ll.clone();
                lp.data_mut()[i] += eps;
                let mut lm = ll.clone();
                lm.data_mut()[i] -= eps;
                let vp = mmi_objective(&lp, &num, &g).unwrap().0;
                let vm = mmi_objective(&lm, &num, &g).unwrap().0;
                let fd = (vp - vm) / (2.0 * eps);
                let a = grad.data()[i];
                assert!((a - fd).abs() / a.abs().max(1.0) <= 1e-6, "seed {seed}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn prediction_loss_beta_zero_is_pure_mse() {
        let (den, num) = symmetric_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = randt(&mut rng, 1, 3);
        let t = randt(&mut rng, 1, 3);
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone(), true);
        let loss = prediction_loss(&mut tape, sv, &t, &num, &den, 0.0).unwrap();
        let mut tape2 = Tape::new();
        let sv2 = tape2.leaf(s, true);
        let tv2 = tape2.constant(t);
        let mse = tape2.mse_reduce(sv2, tv2).unwrap();
        assert_eq!(tape.value(loss).item(), tape2.value(mse).item());
    }

    #[test]
    fn prediction_loss_beta_one_is_negated_mmi() {
        let (den, num) = symmetric_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = randt(&mut rng, 1, 3);
        let t = randt(&mut rng, 1, 3);
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone(), true);
        let loss = prediction_loss(&mut tape, sv, &t, &num, &den, 1.0).unwrap();
        let (v, _) = mmi_objective(&s, &num, &den).unwrap();
        assert_eq!(tape.value(loss).item(), -v);
    }

    #[test]
    fn prediction_loss_combination_and_gradcheck() {
        let (den, num) = symmetric_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = randt(&mut rng, 1, 3);
        let t = randt(&mut rng, 1, 3);
        let beta = 0.8;
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone(), true);
        let loss = prediction_loss(&mut tape, sv, &t, &num, &den, beta).unwrap();
        let (v, _) = mmi_objective(&s, &num, &den).unwrap();
        let mse: f64 = {
            let diff: f64 = s.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            diff / s.data().len() as f64
        };
        let want = beta * (-v) + (1.0 - beta) * mse;
        assert!((tape.value(loss).item() - want).abs() <= 1e-12);

        let err = grad_check(
            |tape, vars| {
                prediction_loss(tape, vars[0], &t, &num, &den, beta)
                    .map_err(|_| AutodiffError::NonScalarLoss(vec![]))
            },
            &[s],
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6, "err {err}");
    }

    #[test]
    fn total_loss_is_the_weighted_sum() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::scalar(1.0), true);
        let p = tape.leaf(Tensor::scalar(2.0), true);
        let l = total_loss(&mut tape, h, p, 0.8).unwrap();
        assert!((tape.value(l).item() - 1.8).abs() <= 1e-15);
        let l1 = total_loss(&mut tape, h, p, 1.0).unwrap();
        assert_eq!(tape.value(l1).item(), 2.0);
        let l0 = total_loss(&mut tape, h, p, 0.0).unwrap();
        assert_eq!(tape.value(l0).item(), 1.0);
    }

    #[test]
    fn default_layer_map_doubles_indices() {
        let map = default_layer_map(12, 24, &[]).unwrap();
        let want: Vec<(usize, usize)> = (1..=12).map(|i| (i, 2 * i)).collect();
        assert_eq!(map.pairs(), &want[..]);
        let single = default_layer_map(1, 2, &[]).unwrap();
        assert_eq!(single.pairs(), &[(1, 2)]);
    }

    #[test]
    fn default_layer_map_with_skips_reranks_students() {
        let map = default_layer_map(12, 24, &[4, 8]).unwrap();
        assert_eq!(map.pairs().len(), 10);
        let teachers: Vec<usize> = map.pairs().iter().map(|&(_, t)| t).collect();
        assert_eq!(teachers, vec![2, 4, 6, 10, 12, 14, 18, 20, 22, 24]);
        let students: Vec<usize> = map.pairs().iter().map(|&(s, _)| s).collect();
        assert_eq!(students, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn gradcheck_suite_is_tight() {
        let err = objective_gradcheck(3).unwrap();
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn default_layer_map_rejects_shallow_teachers() {
        assert!(matches!(
            default_layer_map(4, 6, &[]),
            Err(LfmmiError::MapExceedsTeacher { .. })
        ));
    }
}
