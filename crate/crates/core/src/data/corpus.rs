//! Corpus interchange format parser.
//!
//! One token per line as `surface<TAB>tag` (a single space also accepted),
//! blank line ends a sentence, `#doc <id>` starts a document. Tags are `O`
//! or `B-<type>` / `I-<type>` with type names matching `[a-z0-9_]+`.

use super::tagset::{parse_tag_name, TagKind, TagSet};
use super::{DataError, Dataset, Document, Token};

/// Counts of gold-tag repairs applied while parsing.
///
/// I tags that open a sentence, follow O, or follow a different component
/// type cannot be trained against; they are rewritten to B of the same type
/// and counted here.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub sentence_initial_i: usize,
    pub i_after_o: usize,
    pub i_type_mismatch: usize,
}

impl ParseReport {
    pub fn total_normalized(&self) -> usize {
        self.sentence_initial_i + self.i_after_o + self.i_type_mismatch
    }
}

fn valid_type_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn split_line(line: &str) -> Option<(&str, &str)> {
    if let Some((surface, tag)) = line.split_once('\t') {
        return Some((surface, tag));
    }
    // Tolerate single-space separation for hand-written fixtures.
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    let surface = parts.next()?;
    let tag = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    Some((surface, tag))
}

/// Parses a corpus stream into a dataset with an alphabetically ordered
/// inferred tag set, normalizing un-trainable gold I tags to B.
pub fn parse_corpus(id: &str, input: &str) -> Result<(Dataset, ParseReport), DataError> {
    struct RawDoc {
        id: String,
        sentences: Vec<Vec<(String, String)>>,
    }

    let mut docs: Vec<RawDoc> = Vec::new();
    let mut current: Vec<Vec<(String, String)>> = Vec::new();
    let mut sentence: Vec<(String, String)> = Vec::new();
    let mut doc_id: Option<String> = None;
    let mut implicit_docs = 0usize;
    let mut types: Vec<String> = Vec::new();

    let flush_sentence = |sentence: &mut Vec<(String, String)>,
                          current: &mut Vec<Vec<(String, String)>>| {
        if !sentence.is_empty() {
            current.push(std::mem::take(sentence));
        }
    };

    let flush_doc = |doc_id: &mut Option<String>,
                     current: &mut Vec<Vec<(String, String)>>,
                     docs: &mut Vec<RawDoc>,
                     implicit_docs: &mut usize| {
        if !current.is_empty() {
            let id = doc_id.take().unwrap_or_else(|| {
                let id = format!("doc_{implicit_docs}");
                *implicit_docs += 1;
                id
            });
            docs.push(RawDoc {
                id,
                sentences: std::mem::take(current),
            });
        }
        *doc_id = None;
    };

    for (line_no, raw) in input.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim_end_matches(['\r']);
        if line.trim().is_empty() {
            flush_sentence(&mut sentence, &mut current);
            continue;
        }
        // A header is exactly "#doc" optionally followed by an id; a token
        // surface such as "#doctor" is not one.
        if let Some(rest) = line.strip_prefix("#doc") {
            if rest.is_empty() || rest.starts_with([' ', '\t']) {
                flush_sentence(&mut sentence, &mut current);
                flush_doc(&mut doc_id, &mut current, &mut docs, &mut implicit_docs);
                doc_id = Some(rest.trim().to_string()).filter(|s| !s.is_empty());
                continue;
            }
        }
        let (surface, tag) = split_line(line).ok_or(DataError::MalformedLine {
            line: line_no,
            content: line.to_string(),
        })?;
        if surface.is_empty() {
            return Err(DataError::MalformedLine {
                line: line_no,
                content: line.to_string(),
            });
        }
        match parse_tag_name(tag) {
            Some(TagKind::Outside) => {}
            Some(TagKind::Begin(t)) | Some(TagKind::Inside(t)) => {
                if !valid_type_name(t) {
                    return Err(DataError::BadTypeName {
                        line: line_no,
                        name: t.to_string(),
                    });
                }
                if !types.iter().any(|x| x == t) {
                    types.push(t.to_string());
                }
            }
            None => {
                return Err(DataError::UnknownTagPrefix {
                    line: line_no,
                    tag: tag.to_string(),
                })
            }
        }
        sentence.push((surface.to_string(), tag.to_string()));
    }
    flush_sentence(&mut sentence, &mut current);
    flush_doc(&mut doc_id, &mut current, &mut docs, &mut implicit_docs);

    // Scenario manifests resolve documents by id.
    let mut seen_ids = std::collections::HashSet::new();
    for doc in &docs {
        if !seen_ids.insert(&doc.id) {
            return Err(DataError::DuplicateDocId { id: doc.id.clone() });
        }
    }

    types.sort();
    let tag_set = TagSet::from_types(&types);

    let mut report = ParseReport::default();
    let documents = docs
        .into_iter()
        .map(|raw| {
            let sentences = raw
                .sentences
                .into_iter()
                .map(|sent| {
                    let mut prev: Option<usize> = None;
                    sent.into_iter()
                        .map(|(surface, tag)| {
                            let idx = normalize_tag(&tag_set, &tag, prev, &mut report);
                            prev = Some(idx);
                            Token { surface, tag: idx }
                        })
                        .collect()
                })
                .collect();
            Document {
                doc_id: raw.id,
                sentences,
            }
        })
        .collect();

    Ok((
        Dataset {
            id: id.to_string(),
            documents,
            tag_set,
        },
        report,
    ))
}

fn normalize_tag(tags: &TagSet, tag: &str, prev: Option<usize>, report: &mut ParseReport) -> usize {
    let idx = tags.index_of(tag).expect("tag observed during scan");
    if !tags.is_i(idx) {
        return idx;
    }
    let ty = tags.type_of(idx).unwrap().to_string();
    match prev {
        None => {
            report.sentence_initial_i += 1;
            tags.index_of(&format!("B-{ty}")).unwrap()
        }
        Some(p) if p == TagSet::O => {
            report.i_after_o += 1;
            tags.index_of(&format!("B-{ty}")).unwrap()
        }
        Some(p) => {
            if tags.type_of(p) == Some(ty.as_str()) {
                idx
            } else {
                report.i_type_mismatch += 1;
                tags.index_of(&format!("B-{ty}")).unwrap()
            }
        }
    }
}

/// Tiny bundled corpus used by examples and smoke tests.
pub fn bundled_sample() -> &'static str {
    include_str!("sample.conll")
}
