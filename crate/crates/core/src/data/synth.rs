//! Synthetic corpus generator for tests and demos.
//!
//! Sentences are runs of filler tokens interrupted by typed spans. Every span
//! opens with a boundary-cue word drawn from a lexicon that is shared between
//! any two specs built with the same `lexicon_seed`, while span-interior words
//! are type-specific. Two tasks generated with the same lexicon seed but
//! disjoint type names therefore share segmentation structure (where spans
//! start and stop) but not label spaces.

use crate::util::{derive_seed, fnv1a64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub task_id: String,
    /// Sampling stream for document content.
    pub seed: u64,
    /// Keyed lexicons and embedding vectors; share it to share cue and filler
    /// vocabulary (and thus embeddings) across tasks.
    pub lexicon_seed: u64,
    pub types: Vec<String>,
    pub n_docs: usize,
    pub sentences_per_doc: usize,
    pub tokens_per_sentence: usize,
    pub cue_words: usize,
    pub filler_words: usize,
    pub words_per_type: usize,
    /// Probability that an outside position opens a span.
    pub span_rate: f64,
    pub mean_span_len: usize,
    pub embed_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task_id: "synth".into(),
            seed: 1,
            lexicon_seed: 1,
            types: vec!["alpha".into(), "beta".into()],
            n_docs: 20,
            sentences_per_doc: 5,
            tokens_per_sentence: 12,
            cue_words: 24,
            filler_words: 40,
            words_per_type: 8,
            span_rate: 0.25,
            mean_span_len: 3,
            embed_dim: 12,
        }
    }
}

impl SynthSpec {
    /// Every word this spec can emit.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words = Vec::new();
        for j in 0..self.cue_words {
            words.push(format!("cue{j}"));
        }
        for j in 0..self.filler_words {
            words.push(format!("f{j}"));
        }
        for t in &self.types {
            for j in 0..self.words_per_type {
                words.push(format!("w_{t}_{j}"));
            }
        }
        words
    }
}

/// Emits a corpus in the interchange format.
pub fn generate_corpus(spec: &SynthSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, fnv1a64(b"synth-corpus")));
    let mut out = String::new();
    for d in 0..spec.n_docs {
        out.push_str(&format!("#doc {}_{d:04}\n", spec.task_id));
        for _ in 0..spec.sentences_per_doc {
            let lo = (spec.tokens_per_sentence * 3 / 4).max(3);
            let hi = spec.tokens_per_sentence * 5 / 4;
            let target = rng.random_range(lo..=hi.max(lo + 1));
            let mut emitted = 0usize;
            while emitted < target {
                let open_span = !spec.types.is_empty() && rng.random::<f64>() < spec.span_rate;
                if open_span {
                    let ty = &spec.types[rng.random_range(0..spec.types.len())];
                    let max_len = (2 * spec.mean_span_len).saturating_sub(2).max(2);
                    let len = rng.random_range(2..=max_len);
                    let cue = rng.random_range(0..spec.cue_words);
                    out.push_str(&format!("cue{cue}\tB-{ty}\n"));
                    emitted += 1;
                    for _ in 1..len {
                        let w = rng.random_range(0..spec.words_per_type);
                        out.push_str(&format!("w_{ty}_{w}\tI-{ty}\n"));
                        emitted += 1;
                    }
                } else {
                    let f = rng.random_range(0..spec.filler_words);
                    out.push_str(&format!("f{f}\tO\n"));
                    emitted += 1;
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Deterministic embedding vector for a word: a pure function of the word
/// and the lexicon seed, so separately generated tables agree on shared
/// vocabulary.
pub fn embedding_vector(word: &str, dim: usize, lexicon_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(lexicon_seed, fnv1a64(word.as_bytes())));
    (0..dim).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Embedding file text covering the given words.
pub fn embeddings_text<I, S>(words: I, dim: usize, lexicon_seed: u64) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut sorted: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
    sorted.sort();
    sorted.dedup();
    let mut out = String::new();
    for w in &sorted {
        out.push_str(w);
        for v in embedding_vector(w, dim, lexicon_seed) {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_corpus;

    #[test]
    fn generated_corpus_parses_cleanly() {
        let spec = SynthSpec::default();
        let text = generate_corpus(&spec);
        let (ds, report) = parse_corpus(&spec.task_id, &text).unwrap();
        assert_eq!(ds.documents.len(), spec.n_docs);
        assert_eq!(ds.tag_set.tag_count(), 5);
        assert_eq!(report.total_normalized(), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(generate_corpus(&spec), generate_corpus(&spec));
        let other = SynthSpec {
            seed: 2,
            ..SynthSpec::default()
        };
        assert_ne!(generate_corpus(&spec), generate_corpus(&other));
    }

    #[test]
    fn shared_lexicon_seed_means_shared_vectors() {
        let a = embedding_vector("cue3", 8, 99);
        let b = embedding_vector("cue3", 8, 99);
        let c = embedding_vector("cue3", 8, 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn embeddings_text_round_trips_through_loader() {
        let spec = SynthSpec::default();
        let text = embeddings_text(spec.vocabulary(), spec.embed_dim, spec.lexicon_seed);
        let vocab: std::collections::HashSet<String> = spec.vocabulary().into_iter().collect();
        let table = crate::data::load_embeddings(&text, &vocab).unwrap();
        assert_eq!(table.dim(), spec.embed_dim);
        assert_eq!(table.len(), vocab.len());
    }

    #[test]
    fn token_budget_roughly_met() {
        let spec = SynthSpec {
            n_docs: 50,
            sentences_per_doc: 6,
            tokens_per_sentence: 20,
            ..SynthSpec::default()
        };
        let (ds, _) = parse_corpus("t", &generate_corpus(&spec)).unwrap();
        let expected = 50 * 6 * 20;
        let actual = ds.token_count();
        assert!(
            actual as f64 > expected as f64 * 0.8 && (actual as f64) < expected as f64 * 1.2,
            "{actual} vs {expected}"
        );
    }
}
