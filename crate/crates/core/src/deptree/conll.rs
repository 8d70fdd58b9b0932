//! CoNLL-X reading and writing.
//!
//! Columns used: ID, FORM, LEMMA, CPOSTAG, POSTAG, FEATS, HEAD, DEPREL.
//! Anything after DEPREL is ignored. Lines starting with `#` are kept as
//! block comments.

use log::warn;

use super::{DepTree, Token, TreeError, ROOT};
use crate::error::{Error, Result};

const MIN_COLUMNS: usize = 8;

/// How to treat trees that violate the single-root or projectivity
/// assumptions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConllPolicy {
    /// Drop non-projective trees (counted) instead of failing.
    pub skip_nonprojective: bool,
    /// Re-attach extra ROOT dependents under the first one.
    pub reattach_extra_roots: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedTree {
    /// Comment lines preceding or inside the block, without the leading `#`.
    pub comments: Vec<String>,
    pub tree: DepTree,
    /// 0-based index of the block in the input.
    pub block: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ConllDocument {
    pub entries: Vec<AnnotatedTree>,
    /// Block indices dropped under [`ConllPolicy::skip_nonprojective`].
    pub skipped_nonprojective: Vec<usize>,
}

impl ConllDocument {
    pub fn trees(&self) -> Vec<DepTree> {
        self.entries.iter().map(|e| e.tree.clone()).collect()
    }

    pub fn into_trees(self) -> Vec<DepTree> {
        self.entries.into_iter().map(|e| e.tree).collect()
    }
}

/// Parses CoNLL text with the default (strict) policy.
pub fn parse_conll(text: &str) -> Result<Vec<DepTree>> {
    Ok(parse_conll_with(text, ConllPolicy::default())?.into_trees())
}

pub fn parse_conll_with(text: &str, policy: ConllPolicy) -> Result<ConllDocument> {
    let mut doc = ConllDocument::default();
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    let mut block = 0usize;

    let mut finish = |comments: &mut Vec<String>, tokens: &mut Vec<Token>, block: &mut usize| -> Result<()> {
        if tokens.is_empty() {
            // Comment-only paragraphs attach to the next block.
            return Ok(());
        }
        let toks = std::mem::take(tokens);
        let cmts = std::mem::take(comments);
        let idx = *block;
        *block += 1;
        match build_tree(toks, policy) {
            Ok(tree) => {
                doc.entries.push(AnnotatedTree {
                    comments: cmts,
                    tree,
                    block: idx,
                });
                Ok(())
            }
            Err(TreeError::NonProjective) if policy.skip_nonprojective => {
                warn!("skipping non-projective tree in block {idx}");
                doc.skipped_nonprojective.push(idx);
                Ok(())
            }
            Err(source) => Err(Error::Tree { block: idx, source }),
        }
    };

    for (lineno, raw) in text.split('\n').enumerate() {
        let line = raw.trim_end_matches('\r');
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            finish(&mut comments, &mut tokens, &mut block)?;
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        tokens.push(parse_row(line, line_no, tokens.len() + 1)?);
    }
    finish(&mut comments, &mut tokens, &mut block)?;
    Ok(doc)
}

fn parse_row(line: &str, line_no: usize, expected: usize) -> Result<Token> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < MIN_COLUMNS {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected at least {MIN_COLUMNS} tab-separated columns, found {}", cols.len()),
        });
    }
    let index: usize = cols[0].parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("token id `{}` is not an integer", cols[0]),
    })?;
    if index != expected {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("token id {index} out of sequence, expected {expected}"),
        });
    }
    let head: usize = cols[6].parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("head `{}` is not an integer", cols[6]),
    })?;
    let opt = |s: &str| (s != "_").then(|| s.to_string());
    Ok(Token {
        index,
        form: cols[1].to_string(),
        lemma: opt(cols[2]),
        cpos: opt(cols[3]),
        pos: opt(cols[4]),
        feats: opt(cols[5]),
        head,
        label: opt(cols[7]),
    })
}

fn build_tree(mut tokens: Vec<Token>, policy: ConllPolicy) -> std::result::Result<DepTree, TreeError> {
    if policy.reattach_extra_roots {
        let roots: Vec<usize> = tokens.iter().filter(|t| t.head == ROOT).map(|t| t.index).collect();
        if let Some((&first, rest)) = roots.split_first() {
            for &r in rest {
                tokens[r - 1].head = first;
            }
        }
    }
    let tree = DepTree::new(tokens)?;
    if !tree.is_projective() {
        return Err(TreeError::NonProjective);
    }
    Ok(tree)
}

/// Renders one tree as a 10-column CoNLL-X block (with trailing blank line).
pub fn write_conll(tree: &DepTree, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let field = |o: &Option<String>| o.as_deref().unwrap_or("_").to_string();
    for t in tree.tokens() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t_\t_\n",
            t.index,
            t.form,
            field(&t.lemma),
            field(&t.cpos),
            field(&t.pos),
            field(&t.feats),
            t.head,
            field(&t.label)
        ));
    }
    out.push('\n');
    out
}
