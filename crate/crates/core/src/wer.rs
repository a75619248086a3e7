//! Word error rate via Levenshtein edit distance over word-id sequences.

/// Minimum number of substitutions, deletions, and insertions turning
/// `reference` into `hypothesis`.
pub fn edit_distance(reference: &[usize], hypothesis: &[usize]) -> usize {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Accumulates (S+D+I, N) across utterances for a micro-averaged WER.
#[derive(Debug, Default, Clone, Copy)]
pub struct WerAccumulator {
    pub errors: usize,
    pub ref_words: usize,
}

impl WerAccumulator {
    pub fn add(&mut self, reference: &[usize], hypothesis: &[usize]) {
        self.errors += edit_distance(reference, hypothesis);
        self.ref_words += reference.len();
    }

    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            f64::NAN
        } else {
            self.errors as f64 / self.ref_words as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_have_zero_distance() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
    }

    #[test]
    fn one_substitution_in_three() {
        let mut acc = WerAccumulator::default();
        acc.add(&[1, 2, 3], &[1, 9, 3]);
        assert!((acc.wer() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn insertions_and_deletions_count() {
        assert_eq!(edit_distance(&[1, 2], &[1, 2, 3]), 1);
        assert_eq!(edit_distance(&[1, 2, 3], &[2, 3]), 1);
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2], &[]), 2);
    }

    #[test]
    fn micro_average_pools_errors_over_words() {
        let mut acc = WerAccumulator::default();
        acc.add(&[1, 2, 3, 4], &[1, 2, 3, 4]);
        acc.add(&[5, 6], &[5, 7]);
        assert!((acc.wer() - 1.0 / 6.0).abs() < 1e-15);
    }
}
