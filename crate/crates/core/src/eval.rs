//! Metrics and the analysis pipeline: token-level macro-F1, per-label scores
//! and confusion matrices, invalid-BIO counting, ten-best selection,
//! Mann-Whitney U significance, and normalized learning-delta curves.

pub mod report;

use crate::data::{KLabel, TagSet};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and prediction shapes differ: {gold} vs {pred} tokens")]
    ShapeMismatch { gold: usize, pred: usize },
    #[error("no completed run records")]
    EmptyRecords,
    #[error("missing scores for {k}")]
    MissingK { k: KLabel },
    #[error("STL(1K) must be positive to normalize curves, got {0}")]
    NonPositiveBase(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LabelScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn flatten_check(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if gold.len() != pred.len() || gold.iter().zip(pred).any(|(g, p)| g.len() != p.len()) {
        return Err(EvalError::ShapeMismatch {
            gold: gold.iter().map(|s| s.len()).sum(),
            pred: pred.iter().map(|s| s.len()).sum(),
        });
    }
    Ok((
        gold.iter().flatten().copied().collect(),
        pred.iter().flatten().copied().collect(),
    ))
}

/// Token-level precision/recall/F1 per label. A label with no true positives
/// scores zero, including labels absent from both gold and prediction; this
/// matches explicit-label-list macro averaging.
pub fn per_label_scores(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
    labels: &[usize],
) -> Result<Vec<(usize, LabelScore)>, EvalError> {
    let (g, p) = flatten_check(gold, pred)?;
    Ok(labels
        .iter()
        .map(|&label| {
            let mut s = LabelScore::default();
            for (&gi, &pi) in g.iter().zip(&p) {
                match (gi == label, pi == label) {
                    (true, true) => s.tp += 1,
                    (false, true) => s.fp += 1,
                    (true, false) => s.fn_ += 1,
                    _ => {}
                }
            }
            s.precision = if s.tp + s.fp > 0 {
                s.tp as f64 / (s.tp + s.fp) as f64
            } else {
                0.0
            };
            s.recall = if s.tp + s.fn_ > 0 {
                s.tp as f64 / (s.tp + s.fn_) as f64
            } else {
                0.0
            };
            s.f1 = if s.precision + s.recall > 0.0 {
                2.0 * s.precision * s.recall / (s.precision + s.recall)
            } else {
                0.0
            };
            (label, s)
        })
        .collect())
}

/// Unweighted mean over `labels` of per-label F1.
pub fn macro_f1(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
    labels: &[usize],
) -> Result<f64, EvalError> {
    let scores = per_label_scores(gold, pred, labels)?;
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().map(|(_, s)| s.f1).sum::<f64>() / scores.len() as f64)
}

/// Invalid-BIO structure in a predicted tag sequence. `o_then_i` counts O
/// followed by any I tag; sequence-initial I and cross-type I are tallied
/// separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InvalidBioCounts {
    pub o_then_i: usize,
    pub initial_i: usize,
    pub type_mismatch: usize,
}

impl InvalidBioCounts {
    pub fn total(&self) -> usize {
        self.o_then_i + self.initial_i + self.type_mismatch
    }
}

pub fn count_invalid_bio(pred: &[usize], tags: &TagSet) -> InvalidBioCounts {
    let mut counts = InvalidBioCounts::default();
    let mut prev: Option<usize> = None;
    for &tag in pred {
        if tags.is_i(tag) {
            match prev {
                None => counts.initial_i += 1,
                Some(p) if p == TagSet::O => counts.o_then_i += 1,
                Some(p) => {
                    if tags.type_of(p) != tags.type_of(tag) {
                        counts.type_mismatch += 1;
                    }
                }
            }
        }
        prev = Some(tag);
    }
    counts
}

/// Dev/test score pair used by selection and significance; `run_id` breaks
/// dev-score ties toward earlier runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRun {
    pub run_id: String,
    pub dev: f64,
    pub test: f64,
}

#[derive(Clone, Debug)]
pub struct TopK {
    pub mean_test: f64,
    pub selected: Vec<ScoredRun>,
    /// True when fewer than k completed records were available.
    pub used_all: bool,
}

/// Mean test score over the k best records by dev score.
pub fn select_top_k(records: &[ScoredRun], k: usize) -> Result<TopK, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut sorted: Vec<ScoredRun> = records.to_vec();
    sorted.sort_by(|a, b| {
        b.dev
            .partial_cmp(&a.dev)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    let used_all = sorted.len() < k;
    sorted.truncate(k);
    let mean_test = sorted.iter().map(|r| r.test).sum::<f64>() / sorted.len() as f64;
    Ok(TopK {
        mean_test,
        selected: sorted,
        used_all,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MwuMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug)]
pub struct MwuResult {
    /// U statistic of the first sample.
    pub u_a: f64,
    pub u_b: f64,
    pub p_two_sided: f64,
    pub method: MwuMethod,
}

fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].partial_cmp(&pooled[j]).unwrap());
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Survival function of the standard normal via an erfc approximation
/// (Numerical Recipes 6.2.2, |error| < 1.2e-7).
fn normal_sf(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.5 * x);
    let tau = t
        * (-x * x - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    let erfc_x = tau;
    if z >= 0.0 {
        erfc_x / 2.0
    } else {
        1.0 - erfc_x / 2.0
    }
}

fn exact_two_sided_p(ranks: &[f64], na: usize, nb: usize, u_observed: f64) -> f64 {
    let n = na + nb;
    let mean = (na * nb) as f64 / 2.0;
    let observed = (u_observed - mean).abs();
    let base = (na * (na + 1)) as f64 / 2.0;
    let mut count = 0usize;
    let mut total = 0usize;
    let mut pick: Vec<usize> = (0..na).collect();
    loop {
        total += 1;
        let r: f64 = pick.iter().map(|&i| ranks[i]).sum();
        let u = r - base;
        if (u - mean).abs() >= observed - 1e-9 {
            count += 1;
        }
        // Advance to the next combination of na indices out of n.
        let mut i = na;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if pick[i] < n - (na - i) {
                pick[i] += 1;
                for j in i + 1..na {
                    pick[j] = pick[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    count as f64 / total as f64
}

/// Rank-sum U with midrank tie handling. Exact two-sided p by enumerating all
/// C(n, n_a) rank assignments when n <= 12, otherwise the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MwuResult {
    assert!(!a.is_empty() && !b.is_empty());
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let r_a: f64 = ranks[..na].iter().sum();
    let u_a = r_a - (na * (na + 1)) as f64 / 2.0;
    let u_b = (na * nb) as f64 - u_a;
    let mean = (na * nb) as f64 / 2.0;

    if na + nb <= 12 {
        return MwuResult {
            u_a,
            u_b,
            p_two_sided: exact_two_sided_p(&ranks, na, nb, u_a),
            method: MwuMethod::Exact,
        };
    }

    let n = (na + nb) as f64;
    // Tie correction over groups of equal pooled values.
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return MwuResult {
            u_a,
            u_b,
            p_two_sided: 1.0,
            method: MwuMethod::NormalApprox,
        };
    }
    let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = (2.0 * normal_sf(z)).min(1.0);
    MwuResult {
        u_a,
        u_b,
        p_two_sided: p,
        method: MwuMethod::NormalApprox,
    }
}

/// One point of the normalized learning-delta curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub dataset: String,
    pub k: KLabel,
    pub stl_norm: f64,
    pub mtl_norm: f64,
    pub delta: f64,
}

/// Normalizes both score curves by STL(1K) and takes their difference:
/// delta(k) = MTL(k)/STL(1K) - STL(k)/STL(1K).
pub fn build_curves(
    dataset: &str,
    stl: &BTreeMap<KLabel, f64>,
    mtl: &BTreeMap<KLabel, f64>,
) -> Result<Vec<CurvePoint>, EvalError> {
    for k in KLabel::ALL {
        if !stl.contains_key(&k) || !mtl.contains_key(&k) {
            return Err(EvalError::MissingK { k });
        }
    }
    let base = stl[&KLabel::K1];
    if base <= 0.0 {
        return Err(EvalError::NonPositiveBase(base));
    }
    Ok(KLabel::ALL
        .iter()
        .map(|&k| {
            let stl_norm = stl[&k] / base;
            let mtl_norm = mtl[&k] / base;
            CurvePoint {
                dataset: dataset.to_string(),
                k,
                stl_norm,
                mtl_norm,
                delta: mtl_norm - stl_norm,
            }
        })
        .collect())
}

/// Token-level confusion counts; rows are gold, columns predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Full tag-level confusion plus a collapsed type-level view (B-t and I-t
/// merged into t, O kept).
pub fn confusion(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
    tags: &TagSet,
) -> Result<(ConfusionMatrix, ConfusionMatrix), EvalError> {
    let (g, p) = flatten_check(gold, pred)?;
    let k = tags.tag_count();
    let mut tag_counts = vec![vec![0usize; k]; k];
    for (&gi, &pi) in g.iter().zip(&p) {
        tag_counts[gi][pi] += 1;
    }
    let tag_level = ConfusionMatrix {
        labels: tags.tags().to_vec(),
        counts: tag_counts,
    };

    let n_types = tags.types().len() + 1; // O first
    let collapse = |idx: usize| -> usize {
        match tags.type_of(idx) {
            None => 0,
            Some(t) => 1 + tags.types().iter().position(|x| x == t).unwrap(),
        }
    };
    let mut type_counts = vec![vec![0usize; n_types]; n_types];
    for (&gi, &pi) in g.iter().zip(&p) {
        type_counts[collapse(gi)][collapse(pi)] += 1;
    }
    let mut labels = vec!["O".to_string()];
    labels.extend(tags.types().iter().cloned());
    let type_level = ConfusionMatrix {
        labels,
        counts: type_counts,
    };
    Ok((tag_level, type_level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seqs(v: &[&[usize]]) -> Vec<Vec<usize>> {
        v.iter().map(|s| s.to_vec()).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = seqs(&[&[0, 1, 2], &[2, 1]]);
        assert_eq!(macro_f1(&gold, &gold.clone(), &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn hand_worked_two_label_case() {
        // gold [A,A,B], pred [A,B,B]: F1(A) = 2/3, F1(B) = 2/3.
        let gold = seqs(&[&[0, 0, 1]]);
        let pred = seqs(&[&[0, 1, 1]]);
        let f1 = macro_f1(&gold, &pred, &[0, 1]).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-4, "macro = {f1}");
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gold = seqs(&[&[0, 0, 0]]);
        let pred = seqs(&[&[1, 1, 1]]);
        assert_eq!(macro_f1(&gold, &pred, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn absent_labels_contribute_zero() {
        // Label 2 appears in neither gold nor pred; it still divides.
        let gold = seqs(&[&[0, 1]]);
        let pred = seqs(&[&[0, 1]]);
        let with = macro_f1(&gold, &pred, &[0, 1, 2]).unwrap();
        assert!((with - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let gold = seqs(&[&[0, 1]]);
        let pred = seqs(&[&[0, 1, 1]]);
        assert!(matches!(
            macro_f1(&gold, &pred, &[0, 1]),
            Err(EvalError::ShapeMismatch { .. })
        ));
    }

    /// Independent recomputation of macro-F1 from scratch counting, the
    /// oracle for the random-instance property.
    fn macro_f1_oracle(gold: &[Vec<usize>], pred: &[Vec<usize>], labels: &[usize]) -> f64 {
        let g: Vec<usize> = gold.iter().flatten().copied().collect();
        let p: Vec<usize> = pred.iter().flatten().copied().collect();
        let mut sum = 0.0;
        for &l in labels {
            let tp = g
                .iter()
                .zip(&p)
                .filter(|(&gi, &pi)| gi == l && pi == l)
                .count() as f64;
            let pred_l = p.iter().filter(|&&x| x == l).count() as f64;
            let gold_l = g.iter().filter(|&&x| x == l).count() as f64;
            let prec = if pred_l > 0.0 { tp / pred_l } else { 0.0 };
            let rec = if gold_l > 0.0 { tp / gold_l } else { 0.0 };
            sum += if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
        }
        sum / labels.len() as f64
    }

    #[test]
    fn matches_independent_recomputation_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(2..6usize);
            let sents = rng.random_range(1..5usize);
            let gold: Vec<Vec<usize>> = (0..sents)
                .map(|_| {
                    (0..rng.random_range(1..12usize))
                        .map(|_| rng.random_range(0..k))
                        .collect()
                })
                .collect();
            let pred: Vec<Vec<usize>> = gold
                .iter()
                .map(|s| s.iter().map(|_| rng.random_range(0..k)).collect())
                .collect();
            let labels: Vec<usize> = (0..k).collect();
            let ours = macro_f1(&gold, &pred, &labels).unwrap();
            let oracle = macro_f1_oracle(&gold, &pred, &labels);
            assert!((ours - oracle).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ours));
        }
    }

    #[test]
    fn permutation_and_relabeling_invariance() {
        let gold = seqs(&[&[0, 1, 2, 0], &[2, 2, 1], &[0, 0, 0, 1, 2]]);
        let pred = seqs(&[&[0, 2, 2, 0], &[2, 0, 1], &[1, 0, 0, 1, 2]]);
        let labels = [0usize, 1, 2];
        let base = macro_f1(&gold, &pred, &labels).unwrap();

        // Sentence permutation.
        let perm = [2usize, 0, 1];
        let gold_p: Vec<Vec<usize>> = perm.iter().map(|&i| gold[i].clone()).collect();
        let pred_p: Vec<Vec<usize>> = perm.iter().map(|&i| pred[i].clone()).collect();
        assert_eq!(base, macro_f1(&gold_p, &pred_p, &labels).unwrap());

        // Consistent relabeling 0->2, 1->0, 2->1 leaves the mean unchanged.
        let relabel = |v: &Vec<Vec<usize>>| -> Vec<Vec<usize>> {
            v.iter()
                .map(|s| s.iter().map(|&x| (x + 2) % 3).collect())
                .collect()
        };
        let relabeled = macro_f1(&relabel(&gold), &relabel(&pred), &labels).unwrap();
        assert!((base - relabeled).abs() < 1e-15);
    }

    #[test]
    fn invalid_bio_counting() {
        let tags = TagSet::from_types(&["x", "y"]);
        let seq: Vec<usize> = ["O", "I-x", "B-x", "I-x", "O", "I-y"]
            .iter()
            .map(|t| tags.index_of(t).unwrap())
            .collect();
        let counts = count_invalid_bio(&seq, &tags);
        assert_eq!(counts.o_then_i, 2);
        assert_eq!(counts.initial_i, 0);
        assert_eq!(counts.type_mismatch, 0);

        let all_o = vec![0usize; 5];
        assert_eq!(count_invalid_bio(&all_o, &tags).total(), 0);

        let initial = vec![tags.index_of("I-x").unwrap(), 0];
        let c = count_invalid_bio(&initial, &tags);
        assert_eq!(c.initial_i, 1);
        assert_eq!(c.o_then_i, 0);

        let mismatch = vec![tags.index_of("B-x").unwrap(), tags.index_of("I-y").unwrap()];
        assert_eq!(count_invalid_bio(&mismatch, &tags).type_mismatch, 1);
    }

    #[test]
    fn top_k_selection_by_dev_score() {
        let records = vec![
            ScoredRun {
                run_id: "r0".into(),
                dev: 0.5,
                test: 0.4,
            },
            ScoredRun {
                run_id: "r1".into(),
                dev: 0.7,
                test: 0.6,
            },
            ScoredRun {
                run_id: "r2".into(),
                dev: 0.6,
                test: 0.9,
            },
        ];
        let top = select_top_k(&records, 2).unwrap();
        assert!((top.mean_test - 0.75).abs() < 1e-12);
        assert_eq!(top.selected[0].run_id, "r1");
        assert!(!top.used_all);

        let best = select_top_k(&records, 1).unwrap();
        assert_eq!(best.selected[0].run_id, "r1");
        assert!((best.mean_test - 0.6).abs() < 1e-12);

        // Ties go to the earlier run id.
        let tied: Vec<ScoredRun> = (0..4)
            .map(|i| ScoredRun {
                run_id: format!("r{i}"),
                dev: 0.5,
                test: i as f64,
            })
            .collect();
        let t = select_top_k(&tied, 2).unwrap();
        assert_eq!(t.selected[0].run_id, "r0");
        assert_eq!(t.selected[1].run_id, "r1");

        assert!(matches!(select_top_k(&[], 3), Err(EvalError::EmptyRecords)));
        let short = select_top_k(&records, 10).unwrap();
        assert!(short.used_all);
        assert_eq!(short.selected.len(), 3);
    }

    #[test]
    fn mwu_hand_case() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(r.u_a, 0.0);
        assert_eq!(r.u_b, 4.0);
        assert_eq!(r.method, MwuMethod::Exact);
        assert!(
            (r.p_two_sided - 2.0 / 6.0).abs() < 1e-3,
            "p = {}",
            r.p_two_sided
        );
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let r = mann_whitney_u(&a, &a);
        assert_eq!(r.u_a, r.u_b);
        assert_eq!(r.u_a, 4.5);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn mwu_exact_agrees_with_normal_approx() {
        // |a| = |b| = 6 uses the exact method; the approximation on the same
        // data must land within 0.05.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..100 {
            let a: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.2).collect();
            let exact = mann_whitney_u(&a, &b);
            assert_eq!(exact.method, MwuMethod::Exact);
            let approx = {
                let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
                let ranks = midranks(&pooled);
                let r_a: f64 = ranks[..6].iter().sum();
                let u_a = r_a - 21.0;
                let mean = 18.0;
                let var: f64 = 36.0 / 12.0 * 13.0; // no ties in random f64 draws
                let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
                (2.0 * normal_sf(z)).min(1.0)
            };
            assert!(
                (exact.p_two_sided - approx).abs() < 0.05,
                "trial {trial}: exact {} vs approx {approx}",
                exact.p_two_sided
            );
        }
    }

    #[test]
    fn normal_sf_sane() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_sf(1.96) - 0.0249979).abs() < 5e-5);
        assert!((normal_sf(-1.96) - 0.9750021).abs() < 5e-5);
    }

    #[test]
    fn curve_points_from_published_fixture() {
        let stl: BTreeMap<KLabel, f64> = [
            (KLabel::K1, 31.30),
            (KLabel::K6, 38.89),
            (KLabel::K12, 42.85),
            (KLabel::K21, 43.34),
        ]
        .into_iter()
        .collect();
        let mtl: BTreeMap<KLabel, f64> = [
            (KLabel::K1, 37.10),
            (KLabel::K6, 42.14),
            (KLabel::K12, 45.63),
            (KLabel::K21, 47.39),
        ]
        .into_iter()
        .collect();
        let points = build_curves("var", &stl, &mtl).unwrap();
        assert_eq!(points.len(), 4);
        let p1 = &points[0];
        assert_eq!(p1.k, KLabel::K1);
        assert!((p1.stl_norm - 1.0).abs() < 1e-12);
        assert!((p1.delta - 0.1853).abs() < 1e-4);
        let p21 = points.iter().find(|p| p.k == KLabel::K21).unwrap();
        assert!((p21.stl_norm - 1.3847).abs() < 1e-4);
        assert!((p21.delta - 0.1294).abs() < 1e-4);
        for p in &points {
            assert!(p.delta > 0.0);
            assert_eq!(p.delta > 0.0, mtl[&p.k] > stl[&p.k]);
        }
    }

    #[test]
    fn curves_require_all_k_and_positive_base() {
        let mut stl: BTreeMap<KLabel, f64> = BTreeMap::new();
        stl.insert(KLabel::K1, 10.0);
        let mtl = stl.clone();
        assert!(matches!(
            build_curves("d", &stl, &mtl),
            Err(EvalError::MissingK { .. })
        ));
        let zeros: BTreeMap<KLabel, f64> = KLabel::ALL.iter().map(|&k| (k, 0.0)).collect();
        assert!(matches!(
            build_curves("d", &zeros, &zeros),
            Err(EvalError::NonPositiveBase(_))
        ));
    }

    #[test]
    fn confusion_matrices() {
        let tags = TagSet::from_types(&["claim"]);
        let b = tags.index_of("B-claim").unwrap();
        let i = tags.index_of("I-claim").unwrap();
        let gold = seqs(&[&[b, i, 0]]);
        let pred = seqs(&[&[i, i, 0]]);
        let (tag_level, type_level) = confusion(&gold, &pred, &tags).unwrap();
        assert_eq!(tag_level.total(), 3);
        // Gold B-claim predicted I-claim: off-diagonal at the tag level...
        assert_eq!(tag_level.counts[b][i], 1);
        // ...but diagonal in the collapsed type view.
        assert_eq!(type_level.counts[1][1], 2);
        assert_eq!(type_level.counts[0][0], 1);

        let (diag, _) = confusion(&gold, &gold.clone(), &tags).unwrap();
        for (r, row) in diag.counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if r != c {
                    assert_eq!(v, 0);
                }
            }
        }
    }
}
