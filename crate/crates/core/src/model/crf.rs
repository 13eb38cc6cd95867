//! Linear-chain CRF: log-likelihood as a graph node (trainable) and Viterbi
//! decoding over plain matrices.
//!
//! A path y scores start[y1] + sum_t emissions[t][y_t] + sum_t of
//! T(y_t -> y_t+1), plus end[y_L]. Transition parameters are stored
//! transposed, indexed as trans[to][from], so the forward recursion fits
//! the row-broadcast add and the row-wise logsumexp of the graph.

use super::ModelError;
use crate::graph::{Graph, NodeId};
use crate::matrix::Matrix;

fn onehot_col(g: &mut Graph, k: usize, idx: usize) -> NodeId {
    let mut m = Matrix::zeros(k, 1);
    m.set(idx, 0, 1.0);
    g.input(m)
}

/// Log-partition logZ over all K^L paths by the forward algorithm.
///
/// `emissions` are per-step 1 x K nodes; `transitions` is the K x K
/// parameter node indexed [to][from]; `start`/`end` are 1 x K.
pub fn crf_log_partition(
    g: &mut Graph,
    emissions: &[NodeId],
    transitions: NodeId,
    start: NodeId,
    end: NodeId,
) -> Result<NodeId, ModelError> {
    if emissions.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    // alpha_t is a 1 x K row.
    let mut alpha = g.add(start, emissions[0])?;
    for &e_t in &emissions[1..] {
        // m[to][from] = transitions[to][from] + alpha[from]
        let m = g.add(transitions, alpha)?;
        let lse = g.logsumexp_row(m); // 1 x K, entry `to`
        alpha = g.add(lse, e_t)?;
    }
    let final_scores = g.add(alpha, end)?;
    Ok(g.logsumexp_row(final_scores)) // 1 x 1
}

/// Negative log-likelihood -(score(gold) - logZ) of one sentence.
pub fn crf_log_likelihood(
    g: &mut Graph,
    emissions: &[NodeId],
    transitions: NodeId,
    start: NodeId,
    end: NodeId,
    gold: &[usize],
    k: usize,
) -> Result<NodeId, ModelError> {
    if emissions.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if gold.len() != emissions.len() {
        return Err(ModelError::GoldLength {
            expected: emissions.len(),
            got: gold.len(),
        });
    }
    if let Some(&idx) = gold.iter().find(|&&idx| idx >= k) {
        return Err(ModelError::TagIndexOutOfRange { idx, k });
    }

    let log_z = crf_log_partition(g, emissions, transitions, start, end)?;

    // Gold path score via one-hot column picks.
    let first = onehot_col(g, k, gold[0]);
    let mut score = g.matmul(start, first)?;
    for (t, &y) in gold.iter().enumerate() {
        let pick = onehot_col(g, k, y);
        let e = g.matmul(emissions[t], pick)?;
        score = g.add(score, e)?;
    }
    for w in gold.windows(2) {
        let (from, to) = (w[0], w[1]);
        let row = g.row_select(transitions, to)?; // 1 x K over `from`
        let pick = onehot_col(g, k, from);
        let tr = g.matmul(row, pick)?;
        score = g.add(score, tr)?;
    }
    let last = onehot_col(g, k, *gold.last().unwrap());
    let e_end = g.matmul(end, last)?;
    score = g.add(score, e_end)?;

    let neg_score = g.scale(score, -1.0);
    Ok(g.add(log_z, neg_score)?)
}

/// Plain-matrix CRF scores for decoding; `transitions` indexed [to][from].
pub struct CrfScores<'a> {
    pub transitions: &'a Matrix,
    pub start: &'a Matrix,
    pub end: &'a Matrix,
}

/// Path score under the same model as `crf_log_likelihood`.
pub fn crf_path_score(emissions: &Matrix, scores: &CrfScores, path: &[usize]) -> f64 {
    assert_eq!(path.len(), emissions.rows());
    let mut s = scores.start.get(0, path[0]) + emissions.get(0, path[0]);
    for (t, w) in path.windows(2).enumerate() {
        s += scores.transitions.get(w[1], w[0]) + emissions.get(t + 1, w[1]);
    }
    s + scores.end.get(0, *path.last().unwrap())
}

/// Viterbi decode: an argmax-scoring tag sequence, ties broken toward the
/// lowest tag index at every backtracking step.
pub fn crf_viterbi(emissions: &Matrix, scores: &CrfScores) -> Vec<usize> {
    let len = emissions.rows();
    let k = emissions.cols();
    assert!(len >= 1);
    let mut delta: Vec<f64> = (0..k)
        .map(|j| scores.start.get(0, j) + emissions.get(0, j))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(len.saturating_sub(1));
    for t in 1..len {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut ptr = vec![0usize; k];
        for to in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for (from, &d) in delta.iter().enumerate() {
                let cand = d + scores.transitions.get(to, from);
                if cand > best {
                    best = cand;
                    arg = from;
                }
            }
            next[to] = best + emissions.get(t, to);
            ptr[to] = arg;
        }
        delta = next;
        back.push(ptr);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0usize;
    for (j, &d) in delta.iter().enumerate() {
        let cand = d + scores.end.get(0, j);
        if cand > best {
            best = cand;
            last = j;
        }
    }
    let mut path = vec![last];
    for ptr in back.iter().rev() {
        last = ptr[last];
        path.push(last);
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nll_of(
        emissions: &Matrix,
        trans_to_from: &Matrix,
        start: &Matrix,
        end: &Matrix,
        gold: &[usize],
    ) -> f64 {
        let mut g = Graph::new();
        let k = emissions.cols();
        let e_nodes: Vec<NodeId> = (0..emissions.rows())
            .map(|t| g.input(Matrix::from_vec(1, k, emissions.row(t).to_vec())))
            .collect();
        let tr = g.parameter(trans_to_from.clone());
        let st = g.parameter(start.clone());
        let en = g.parameter(end.clone());
        let nll = crf_log_likelihood(&mut g, &e_nodes, tr, st, en, gold, k).unwrap();
        g.forward(nll).unwrap()
    }

    /// Brute-force oracle: enumerate all K^L paths.
    fn enumerate_paths(len: usize, k: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::with_capacity(paths.len() * k);
            for p in &paths {
                for j in 0..k {
                    let mut q = p.clone();
                    q.push(j);
                    next.push(q);
                }
            }
            paths = next;
        }
        paths
    }

    fn brute_force_logz(emissions: &Matrix, scores: &CrfScores) -> f64 {
        let paths = enumerate_paths(emissions.rows(), emissions.cols());
        let path_scores: Vec<f64> = paths
            .iter()
            .map(|p| crf_path_score(emissions, scores, p))
            .collect();
        let m = path_scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        m + path_scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        len: usize,
        k: usize,
    ) -> (Matrix, Matrix, Matrix, Matrix) {
        let r = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
        };
        (
            Matrix::from_vec(len, k, r(rng, len * k)),
            Matrix::from_vec(k, k, r(rng, k * k)),
            Matrix::from_vec(1, k, r(rng, k)),
            Matrix::from_vec(1, k, r(rng, k)),
        )
    }

    #[test]
    fn uniform_scores_give_log_path_count() {
        // K=2, L=2, all scores zero: NLL = log 4 for any gold path.
        let emissions = Matrix::zeros(2, 2);
        let trans = Matrix::zeros(2, 2);
        let start = Matrix::zeros(1, 2);
        let end = Matrix::zeros(1, 2);
        for gold in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let nll = nll_of(&emissions, &trans, &start, &end, &gold);
            assert!((nll - 4.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logz_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let len = rng.random_range(1..=4usize);
            let k = rng.random_range(1..=3usize);
            let (em, tr, st, en) = random_instance(&mut rng, len, k);
            let scores = CrfScores {
                transitions: &tr,
                start: &st,
                end: &en,
            };
            // NLL of any gold path = logZ - score(gold).
            let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
            let nll = nll_of(&em, &tr, &st, &en, &gold);
            let logz = brute_force_logz(&em, &scores);
            let gold_score = crf_path_score(&em, &scores, &gold);
            assert!(
                (nll - (logz - gold_score)).abs() < 1e-8,
                "nll {nll} vs {}",
                logz - gold_score
            );
        }
    }

    #[test]
    fn crf_distribution_normalizes() {
        // sum over all gold paths of exp(-NLL) must be 1.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let (em, tr, st, en) = random_instance(&mut rng, 3, 2);
            let total: f64 = enumerate_paths(3, 2)
                .iter()
                .map(|p| (-nll_of(&em, &tr, &st, &en, p)).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "sum = {total}");
        }
    }

    #[test]
    fn gold_equals_dominant_path_gives_near_zero_nll() {
        // Strongly separated scores: margin > 15 makes NLL < 1e-3.
        let mut em = Matrix::zeros(3, 2);
        em.set(0, 0, 20.0);
        em.set(1, 1, 20.0);
        em.set(2, 0, 20.0);
        let trans = Matrix::zeros(2, 2);
        let start = Matrix::zeros(1, 2);
        let end = Matrix::zeros(1, 2);
        let nll = nll_of(&em, &trans, &start, &end, &[0, 1, 0]);
        assert!(nll.abs() < 1e-3, "nll = {nll}");
    }

    #[test]
    fn single_tag_viterbi() {
        let emissions = Matrix::from_vec(4, 1, vec![0.3, -0.1, 0.9, 0.0]);
        let trans = Matrix::zeros(1, 1);
        let start = Matrix::zeros(1, 1);
        let end = Matrix::zeros(1, 1);
        let scores = CrfScores {
            transitions: &trans,
            start: &start,
            end: &end,
        };
        assert_eq!(crf_viterbi(&emissions, &scores), vec![0, 0, 0, 0]);
    }

    #[test]
    fn two_by_two_example() {
        let emissions = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let trans = Matrix::zeros(2, 2);
        let start = Matrix::zeros(1, 2);
        let end = Matrix::zeros(1, 2);
        let scores = CrfScores {
            transitions: &trans,
            start: &start,
            end: &end,
        };
        let path = crf_viterbi(&emissions, &scores);
        assert_eq!(path, vec![0, 1]);
        assert_eq!(crf_path_score(&emissions, &scores, &path), 3.0);
    }

    #[test]
    fn viterbi_matches_exhaustive_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let (em, tr, st, en) = random_instance(&mut rng, 5, 3);
            let scores = CrfScores {
                transitions: &tr,
                start: &st,
                end: &en,
            };
            let path = crf_viterbi(&em, &scores);
            let best = enumerate_paths(5, 3)
                .iter()
                .map(|p| crf_path_score(&em, &scores, p))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = crf_path_score(&em, &scores, &path);
            assert_eq!(got, best, "viterbi {got} vs brute force {best}");
        }
    }

    #[test]
    fn viterbi_beats_random_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (em, tr, st, en) = random_instance(&mut rng, 8, 4);
        let scores = CrfScores {
            transitions: &tr,
            start: &st,
            end: &en,
        };
        let best = crf_path_score(&em, &scores, &crf_viterbi(&em, &scores));
        for _ in 0..100 {
            let p: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
            assert!(crf_path_score(&em, &scores, &p) <= best);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // All-zero scores: every path ties; the decode must be all zeros.
        let emissions = Matrix::zeros(3, 4);
        let trans = Matrix::zeros(4, 4);
        let start = Matrix::zeros(1, 4);
        let end = Matrix::zeros(1, 4);
        let scores = CrfScores {
            transitions: &trans,
            start: &start,
            end: &end,
        };
        assert_eq!(crf_viterbi(&emissions, &scores), vec![0, 0, 0]);
    }

    #[test]
    fn gold_index_out_of_range_is_an_error() {
        let mut g = Graph::new();
        let e = g.input(Matrix::zeros(1, 2));
        let tr = g.parameter(Matrix::zeros(2, 2));
        let st = g.parameter(Matrix::zeros(1, 2));
        let en = g.parameter(Matrix::zeros(1, 2));
        assert!(matches!(
            crf_log_likelihood(&mut g, &[e], tr, st, en, &[5], 2),
            Err(ModelError::TagIndexOutOfRange { idx: 5, k: 2 })
        ));
    }

    #[test]
    fn crf_gradients_pass_finite_differences() {
        use crate::graph::check_gradients;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (em, tr, st, en) = random_instance(&mut rng, 3, 3);
        let gold = vec![2, 0, 1];
        let err = check_gradients(
            |g, ps| {
                let e_nodes: Vec<NodeId> =
                    (0..3).map(|t| g.row_select(ps[0], t).unwrap()).collect();
                crf_log_likelihood(g, &e_nodes, ps[1], ps[2], ps[3], &gold, 3).unwrap()
            },
            &[em, tr, st, en],
            1e-5,
        );
        assert!(err < 1e-6, "err = {err}");
    }
}
