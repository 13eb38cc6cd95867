//! Corpus types, the BIO tag algebra, sparsity scenarios, embeddings,
//! batching, and the union-of-datasets merge.

mod batch;
mod corpus;
mod embedding;
mod scenario;
pub mod synth;
mod tagset;

pub use batch::{make_batches, SentenceRef};
pub use corpus::{bundled_sample, parse_corpus, ParseReport};
pub use embedding::{load_embeddings, EmbeddingTable};
pub use scenario::{build_scenarios, KLabel, ScenarioManifest, ScenarioSet, SparsityScenario};
pub use tagset::{parse_tag_name, TagKind, TagSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed token line: {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: unknown tag prefix in {tag:?} (expected O, B-<type> or I-<type>)")]
    UnknownTagPrefix { line: usize, tag: String },
    #[error("line {line}: type name {name:?} must match [a-z0-9_]+")]
    BadTypeName { line: usize, name: String },
    #[error("duplicate document id {id:?}")]
    DuplicateDocId { id: String },
    #[error("dataset {dataset:?} has {tokens} tokens; at least {required} required")]
    InsufficientData {
        dataset: String,
        tokens: usize,
        required: usize,
    },
    #[error("line {line}: embedding row has {got} dims, expected {expected}")]
    RaggedDimension {
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("embeddings cover {covered} of {total} vocabulary words (below 30%)")]
    InsufficientCoverage { covered: usize, total: usize },
    #[error("scenario manifest: {0}")]
    BadManifest(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Index into the owning dataset's tag set.
    pub tag: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<Token>>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub documents: Vec<Document>,
    pub tag_set: TagSet,
}

impl Dataset {
    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| d.token_count()).sum()
    }

    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    /// Same tag set, restricted to the given documents (by index, in order).
    pub fn subset(&self, doc_indices: &[usize]) -> Dataset {
        Dataset {
            id: self.id.clone(),
            documents: doc_indices
                .iter()
                .map(|&i| self.documents[i].clone())
                .collect(),
            tag_set: self.tag_set.clone(),
        }
    }

    /// Distinct surface forms.
    pub fn vocabulary(&self) -> std::collections::HashSet<String> {
        let mut vocab = std::collections::HashSet::new();
        for doc in &self.documents {
            for sent in &doc.sentences {
                for tok in sent {
                    vocab.insert(tok.surface.clone());
                }
            }
        }
        vocab
    }
}

/// Pools main and auxiliary data into one dataset over the union label space.
///
/// Identically named component types are merged; every token is re-indexed
/// into the union tag set. With no auxiliaries this is the identity.
pub fn union_datasets(main: &Dataset, auxes: &[&Dataset]) -> Dataset {
    let mut types: Vec<String> = main.tag_set.types().to_vec();
    for aux in auxes {
        for t in aux.tag_set.types() {
            if !types.contains(t) {
                types.push(t.clone());
            }
        }
    }
    types.sort();
    let tag_set = TagSet::from_types(&types);

    let remap = |ds: &Dataset| -> Vec<Document> {
        ds.documents
            .iter()
            .map(|doc| Document {
                doc_id: doc.doc_id.clone(),
                sentences: doc
                    .sentences
                    .iter()
                    .map(|sent| {
                        sent.iter()
                            .map(|tok| Token {
                                surface: tok.surface.clone(),
                                tag: tag_set
                                    .index_of(ds.tag_set.name(tok.tag))
                                    .expect("union tag set covers every source tag"),
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect()
    };

    let mut documents = remap(main);
    for aux in auxes {
        documents.extend(remap(aux));
    }
    Dataset {
        id: if auxes.is_empty() {
            main.id.clone()
        } else {
            format!("{}+union", main.id)
        },
        documents,
        tag_set,
    }
}

/// Re-expresses predicted tags from `from` in `to`'s index space; tags whose
/// name is absent from `to` become O. Used when scoring a union-trained model
/// on the main task.
pub fn map_tags_to(from: &TagSet, to: &TagSet, pred: &[usize]) -> Vec<usize> {
    pred.iter()
        .map(|&idx| to.index_of(from.name(idx)).unwrap_or(TagSet::O))
        .collect()
}
