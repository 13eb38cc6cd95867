//! The BIO tag algebra: {O} plus {B,I} x T for a set of component types T.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Index 0 is always O; type j owns B at 1+2j and I at 2+2j.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    types: Vec<String>,
    tags: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagKind<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl TagSet {
    /// Builds the tag list O, B-t1, I-t1, ... in the order the types are given.
    pub fn from_types<S: AsRef<str>>(types: &[S]) -> TagSet {
        let types: Vec<String> = types.iter().map(|t| t.as_ref().to_string()).collect();
        let mut tags = Vec::with_capacity(2 * types.len() + 1);
        tags.push("O".to_string());
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TagSet { types, tags, index }
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn ensure_index(&mut self) {
        if self.index.len() != self.tags.len() {
            self.rebuild_index();
        }
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// 2 * |T| + 1.
    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub const O: usize = 0;

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        if self.index.len() == self.tags.len() {
            self.index.get(tag).copied()
        } else {
            self.tags.iter().position(|t| t == tag)
        }
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.tags[idx]
    }

    pub fn is_b(&self, idx: usize) -> bool {
        idx != Self::O && (idx - 1).is_multiple_of(2)
    }

    pub fn is_i(&self, idx: usize) -> bool {
        idx != Self::O && (idx - 1) % 2 == 1
    }

    /// Component type of a non-O tag.
    pub fn type_of(&self, idx: usize) -> Option<&str> {
        if idx == Self::O {
            None
        } else {
            Some(&self.types[(idx - 1) / 2])
        }
    }

    pub fn b_of(&self, type_idx: usize) -> usize {
        1 + 2 * type_idx
    }

    pub fn i_of(&self, type_idx: usize) -> usize {
        2 + 2 * type_idx
    }

    /// False exactly when `from` is O and `to` is an I tag.
    pub fn valid_transition(&self, from: usize, to: usize) -> bool {
        !(from == Self::O && self.is_i(to))
    }

    /// Sequence-initial I tags are invalid.
    pub fn valid_start(&self, tag: usize) -> bool {
        !self.is_i(tag)
    }

    pub fn kind<'a>(&'a self, idx: usize) -> TagKind<'a> {
        if idx == Self::O {
            TagKind::Outside
        } else if self.is_b(idx) {
            TagKind::Begin(self.type_of(idx).unwrap())
        } else {
            TagKind::Inside(self.type_of(idx).unwrap())
        }
    }
}

/// Splits a surface tag string into its kind, without any tag set context.
pub fn parse_tag_name(tag: &str) -> Option<TagKind<'_>> {
    if tag == "O" {
        return Some(TagKind::Outside);
    }
    if let Some(t) = tag.strip_prefix("B-") {
        return Some(TagKind::Begin(t));
    }
    if let Some(t) = tag.strip_prefix("I-") {
        return Some(TagKind::Inside(t));
    }
    None
}
