//! Sentence-level mini-batching over a document split.

use super::Dataset;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Points at one sentence of one document in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SentenceRef {
    pub doc: usize,
    pub sent: usize,
}

impl SentenceRef {
    pub fn resolve<'a>(&self, dataset: &'a Dataset) -> &'a [super::Token] {
        &dataset.documents[self.doc].sentences[self.sent]
    }
}

/// Shuffles all sentences of the given documents and groups them into
/// ceil(n / batch_size) batches; every sentence lands in exactly one batch.
pub fn make_batches(
    dataset: &Dataset,
    docs: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<SentenceRef>> {
    assert!(batch_size >= 1);
    let mut sentences: Vec<SentenceRef> = docs
        .iter()
        .flat_map(|&doc| {
            (0..dataset.documents[doc].sentences.len()).map(move |sent| SentenceRef { doc, sent })
        })
        .collect();
    sentences.shuffle(rng);
    sentences.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, TagSet, Token};
    use rand::SeedableRng;

    fn dataset(sentences_per_doc: &[usize]) -> Dataset {
        let documents = sentences_per_doc
            .iter()
            .enumerate()
            .map(|(i, &n)| Document {
                doc_id: format!("d{i}"),
                sentences: (0..n)
                    .map(|j| {
                        vec![Token {
                            surface: format!("w{i}_{j}"),
                            tag: 0,
                        }]
                    })
                    .collect(),
            })
            .collect();
        Dataset {
            id: "b".into(),
            documents,
            tag_set: TagSet::from_types(&["x"]),
        }
    }

    #[test]
    fn seven_sentences_one_batch_of_seven() {
        let ds = dataset(&[7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&ds, &[0], 32, &mut rng);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 7);
    }

    #[test]
    fn sixty_four_sentences_two_full_batches() {
        let ds = dataset(&[64]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&ds, &[0], 32, &mut rng);
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 32));
    }

    #[test]
    fn batches_partition_the_input() {
        let ds = dataset(&[5, 9, 3]);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = make_batches(&ds, &[0, 1, 2], 4, &mut rng);
            let mut seen: Vec<SentenceRef> = batches.into_iter().flatten().collect();
            seen.sort();
            let mut expected: Vec<SentenceRef> = (0..3)
                .flat_map(|doc| {
                    (0..ds.documents[doc].sentences.len())
                        .map(move |sent| SentenceRef { doc, sent })
                })
                .collect();
            expected.sort();
            assert_eq!(seen, expected);
        }
    }
}
