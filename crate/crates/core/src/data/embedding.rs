//! Word embedding tables: text-format loader with vocabulary filtering.

use super::DataError;
use std::collections::{HashMap, HashSet};

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>, unknown: Vec<f64>) -> Self {
        assert_eq!(unknown.len(), dim);
        assert!(vectors.values().all(|v| v.len() == dim));
        EmbeddingTable {
            dim,
            vectors,
            unknown,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }

    pub fn unknown(&self) -> &[f64] {
        &self.unknown
    }

    /// Vector for a token: exact match, then case-fold fallback, then the
    /// unknown vector.
    pub fn lookup(&self, surface: &str) -> &[f64] {
        if let Some(v) = self.vectors.get(surface) {
            return v;
        }
        let lower = surface.to_lowercase();
        if lower != surface {
            if let Some(v) = self.vectors.get(&lower) {
                return v;
            }
        }
        &self.unknown
    }
}

/// Loads a text embedding stream, keeping only words useful for `vocab`
/// (the words themselves and their lowercase forms). The unknown vector is
/// the mean of the retained vectors. An optional `count dim` header line is
/// auto-detected. The first occurrence of a repeated word wins. Coverage of
/// less than 30% of the vocabulary is an error.
pub fn load_embeddings(input: &str, vocab: &HashSet<String>) -> Result<EmbeddingTable, DataError> {
    let mut keep: HashSet<String> = HashSet::with_capacity(vocab.len() * 2);
    for w in vocab {
        keep.insert(w.clone());
        keep.insert(w.to_lowercase());
    }

    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;

    for (line_no, raw) in input.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap();
        let rest: Vec<&str> = fields.collect();
        if line_no == 0 && rest.len() == 1 {
            // "count dim" header.
            if word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
        }
        let d = dim.get_or_insert(rest.len());
        if rest.len() != *d {
            return Err(DataError::RaggedDimension {
                line: line_no + 1,
                got: rest.len(),
                expected: *d,
            });
        }
        if !keep.contains(word) || vectors.contains_key(word) {
            continue;
        }
        let values: Result<Vec<f64>, _> = rest.iter().map(|v| v.parse::<f64>()).collect();
        match values {
            Ok(v) => {
                vectors.insert(word.to_string(), v);
            }
            Err(_) => {
                return Err(DataError::MalformedLine {
                    line: line_no + 1,
                    content: line.to_string(),
                })
            }
        }
    }

    let covered = vocab
        .iter()
        .filter(|w| vectors.contains_key(*w) || vectors.contains_key(&w.to_lowercase()))
        .count();
    if vocab.is_empty() || (covered as f64) < 0.30 * vocab.len() as f64 {
        return Err(DataError::InsufficientCoverage {
            covered,
            total: vocab.len(),
        });
    }

    let dim = dim.unwrap_or(0);
    let mut unknown = vec![0.0; dim];
    for v in vectors.values() {
        for (u, x) in unknown.iter_mut().zip(v) {
            *u += x;
        }
    }
    let n = vectors.len() as f64;
    for u in unknown.iter_mut() {
        *u /= n;
    }

    Ok(EmbeddingTable::new(dim, vectors, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> HashSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn two_word_table_with_mean_unknown() {
        let table = load_embeddings(
            "alpha 1.0 2.0 3.0\nbeta 3.0 4.0 5.0\n",
            &vocab(&["alpha", "beta"]),
        )
        .unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.get("alpha").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(table.unknown(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn header_line_detected() {
        let table =
            load_embeddings("2 3\nalpha 1 2 3\nbeta 3 4 5\n", &vocab(&["alpha", "beta"])).unwrap();
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn first_occurrence_wins() {
        let table = load_embeddings(
            "alpha 1 1\nalpha 9 9\nbeta 2 2\n",
            &vocab(&["alpha", "beta"]),
        )
        .unwrap();
        assert_eq!(table.get("alpha").unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn ragged_dimension_rejected() {
        assert!(matches!(
            load_embeddings("alpha 1 2\nbeta 1 2 3\n", &vocab(&["alpha", "beta"])),
            Err(DataError::RaggedDimension { line: 2, .. })
        ));
    }

    #[test]
    fn low_coverage_rejected() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let v: HashSet<String> = words.iter().cloned().collect();
        // Only 2 of 10 covered.
        assert!(matches!(
            load_embeddings("w0 1 2\nw1 3 4\n", &v),
            Err(DataError::InsufficientCoverage {
                covered: 2,
                total: 10
            })
        ));
    }

    #[test]
    fn case_fold_fallback() {
        let table =
            load_embeddings("tourism 1 0\nnature 0 1\n", &vocab(&["Tourism", "nature"])).unwrap();
        // Exact word, lowercase fallback, unknown terminal.
        assert_eq!(table.lookup("nature"), &[0.0, 1.0]);
        assert_eq!(table.lookup("Tourism"), &[1.0, 0.0]);
        assert_eq!(table.lookup("unseen"), table.unknown());
    }
}
