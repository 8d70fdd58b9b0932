//! Dependency trees, breadth-first generation order, edge typing and
//! dependency paths.
//!
//! Nodes are addressed by sentence position: `0` is the artificial ROOT and
//! `1..=n` are the tokens. ROOT has exactly one dependent, which is treated
//! as its first right dependent.
//!
//! A tree is generated top-down and breadth-first. For each node, its left
//! dependents are produced closest-first, then its right dependents
//! closest-first. Each generation step adds one edge of one of four types:
//! the first left/right dependent hangs off its head ([`EdgeType::Left`],
//! [`EdgeType::Right`]); every further dependent hangs off its adjacent,
//! closer sibling ([`EdgeType::NxLeft`], [`EdgeType::NxRight`]).

mod conll;
mod path;

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

pub use conll::{parse_conll, parse_conll_with, write_conll, AnnotatedTree, ConllDocument, ConllPolicy};
pub use path::{reconstruct_from_paths, DependencyPath, PathStep, PathWord};

/// Position of the artificial ROOT node.
pub const ROOT: usize = 0;

/// Structural problems detected when assembling a tree.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("empty sentence")]
    Empty,
    #[error("token {index}: expected index {expected}")]
    BadIndex { index: usize, expected: usize },
    #[error("token {index}: head {head} is out of range")]
    HeadOutOfRange { index: usize, head: usize },
    #[error("token {0} is its own head")]
    SelfLoop(usize),
    #[error("{0} tokens are attached to ROOT")]
    MultipleRoots(usize),
    #[error("cycle through token {0}")]
    Cycle(usize),
    #[error("tree is not projective")]
    NonProjective,
}

/// The four generation edge types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    Left,
    Right,
    NxLeft,
    NxRight,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::Left,
        EdgeType::Right,
        EdgeType::NxLeft,
        EdgeType::NxRight,
    ];

    pub fn index(self) -> usize {
        match self {
            EdgeType::Left => 0,
            EdgeType::Right => 1,
            EdgeType::NxLeft => 2,
            EdgeType::NxRight => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Left => "left",
            EdgeType::Right => "right",
            EdgeType::NxLeft => "nx-left",
            EdgeType::NxRight => "nx-right",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeType::Left => "Left",
            EdgeType::Right => "Right",
            EdgeType::NxLeft => "Nx-Left",
            EdgeType::NxRight => "Nx-Right",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based sentence position.
    pub index: usize,
    pub form: String,
    pub lemma: Option<String>,
    pub cpos: Option<String>,
    pub pos: Option<String>,
    pub feats: Option<String>,
    /// Governor position, `0` for ROOT.
    pub head: usize,
    pub label: Option<String>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, head: usize) -> Self {
        Token {
            index,
            form: form.into(),
            lemma: None,
            cpos: None,
            pos: None,
            feats: None,
            head,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_pos(mut self, pos: impl Into<String>) -> Self {
        self.pos = Some(pos.into());
        self
    }
}

/// One generation step in breadth-first order, on node positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeStep {
    /// BFS index of the generated node (1-based).
    pub t: usize,
    /// BFS index of the predecessor (`0` for ROOT).
    pub t_prime: usize,
    pub edge: EdgeType,
    /// Sentence position of the generated node.
    pub node: usize,
    /// Sentence position of the predecessor.
    pub pred: usize,
}

/// A generation step with vocabulary ids attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeEvent {
    pub t: usize,
    pub t_prime: usize,
    pub z: EdgeType,
    pub word: u32,
    pub pred_word: u32,
    pub node: usize,
    pub pred: usize,
}

/// A structurally valid dependency tree with ordered dependent lists.
///
/// Construction checks single-rootedness and acyclicity but not
/// projectivity; see [`DepTree::is_projective`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    tokens: Vec<Token>,
    left_deps: Vec<Vec<usize>>,
    right_deps: Vec<Vec<usize>>,
}

impl DepTree {
    pub fn new(tokens: Vec<Token>) -> Result<Self, TreeError> {
        let n = tokens.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        let mut roots = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(TreeError::BadIndex {
                    index: tok.index,
                    expected: i + 1,
                });
            }
            if tok.head > n {
                return Err(TreeError::HeadOutOfRange {
                    index: tok.index,
                    head: tok.head,
                });
            }
            if tok.head == tok.index {
                return Err(TreeError::SelfLoop(tok.index));
            }
            if tok.head == ROOT {
                roots += 1;
            }
        }
        match roots {
            0 => {
                // Every token has a head, so the head graph must loop somewhere.
                return Err(TreeError::Cycle(first_cycle(&tokens).unwrap_or(1)));
            }
            1 => {}
            k => return Err(TreeError::MultipleRoots(k)),
        }
        if let Some(v) = first_cycle(&tokens) {
            return Err(TreeError::Cycle(v));
        }

        let mut left_deps = vec![Vec::new(); n + 1];
        let mut right_deps = vec![Vec::new(); n + 1];
        for tok in &tokens {
            if tok.index < tok.head {
                left_deps[tok.head].push(tok.index);
            } else {
                right_deps[tok.head].push(tok.index);
            }
        }
        for deps in &mut left_deps {
            deps.sort_unstable_by(|a, b| b.cmp(a));
        }
        for deps in &mut right_deps {
            deps.sort_unstable();
        }
        Ok(DepTree {
            tokens,
            left_deps,
            right_deps,
        })
    }

    /// Builds an unlabeled tree from forms and heads.
    pub fn from_heads<S: AsRef<str>>(forms: &[S], heads: &[usize]) -> Result<Self, TreeError> {
        assert_eq!(forms.len(), heads.len(), "forms and heads differ in length");
        let tokens = forms
            .iter()
            .zip(heads)
            .enumerate()
            .map(|(i, (form, &head))| Token::new(i + 1, form.as_ref(), head))
            .collect();
        DepTree::new(tokens)
    }

    /// Number of tokens, ROOT excluded.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Token at 1-based position `index`.
    pub fn token(&self, index: usize) -> &Token {
        &self.tokens[index - 1]
    }

    pub fn form(&self, index: usize) -> &str {
        &self.tokens[index - 1].form
    }

    pub fn head(&self, index: usize) -> usize {
        self.tokens[index - 1].head
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Left dependents of `node`, closest to the head first.
    pub fn left_deps(&self, node: usize) -> &[usize] {
        &self.left_deps[node]
    }

    /// Right dependents of `node`, closest to the head first.
    pub fn right_deps(&self, node: usize) -> &[usize] {
        &self.right_deps[node]
    }

    /// The single dependent of ROOT.
    pub fn root_word(&self) -> usize {
        self.right_deps[ROOT][0]
    }

    /// Same forms and heads; labels and tags are ignored.
    pub fn same_structure(&self, other: &DepTree) -> bool {
        self.len() == other.len()
            && self
                .tokens
                .iter()
                .zip(&other.tokens)
                .all(|(a, b)| a.form == b.form && a.head == b.head)
    }

    /// True iff every subtree covers a contiguous span of positions, which
    /// is equivalent to every token between a head and its dependent being
    /// dominated by that head.
    pub fn is_projective(&self) -> bool {
        let n = self.len();
        let mut lo: Vec<usize> = (0..=n).collect();
        let mut hi: Vec<usize> = (0..=n).collect();
        let mut size = vec![1usize; n + 1];
        // Children are finished before parents when walking reverse BFS.
        let order = self.bfs_order();
        for &v in order.iter().rev() {
            let h = self.head(v);
            lo[h] = lo[h].min(lo[v]);
            hi[h] = hi[h].max(hi[v]);
            size[h] += size[v];
        }
        (0..=n).all(|v| hi[v] - lo[v] + 1 == size[v])
    }

    /// Token positions in generation order, ROOT excluded.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut queue = VecDeque::from([ROOT]);
        while let Some(v) = queue.pop_front() {
            for &d in self.left_deps[v].iter().chain(&self.right_deps[v]) {
                order.push(d);
                queue.push_back(d);
            }
        }
        order
    }

    /// Predecessor of a token and the edge type that generates it.
    pub fn predecessor(&self, node: usize) -> (usize, EdgeType) {
        let h = self.head(node);
        if node < h {
            let deps = &self.left_deps[h];
            let k = deps.iter().position(|&d| d == node).expect("dependent lists out of sync");
            if k == 0 {
                (h, EdgeType::Left)
            } else {
                (deps[k - 1], EdgeType::NxLeft)
            }
        } else {
            let deps = &self.right_deps[h];
            let k = deps.iter().position(|&d| d == node).expect("dependent lists out of sync");
            if k == 0 {
                (h, EdgeType::Right)
            } else {
                (deps[k - 1], EdgeType::NxRight)
            }
        }
    }

    /// Generation steps in BFS order.
    pub fn edge_steps(&self) -> Vec<EdgeStep> {
        let order = self.bfs_order();
        let mut bfs_index = vec![0usize; self.len() + 1];
        for (k, &v) in order.iter().enumerate() {
            bfs_index[v] = k + 1;
        }
        order
            .iter()
            .map(|&node| {
                let (pred, edge) = self.predecessor(node);
                EdgeStep {
                    t: bfs_index[node],
                    t_prime: bfs_index[pred],
                    edge,
                    node,
                    pred,
                }
            })
            .collect()
    }

    /// Generation events with vocabulary ids. `word_ids[p]` is the id of the
    /// word at position `p`; `word_ids[0]` is the ROOT id.
    pub fn edge_events(&self, word_ids: &[u32]) -> Vec<EdgeEvent> {
        assert_eq!(word_ids.len(), self.len() + 1, "one id per position plus ROOT");
        self.edge_steps()
            .into_iter()
            .map(|s| EdgeEvent {
                t: s.t,
                t_prime: s.t_prime,
                z: s.edge,
                word: word_ids[s.node],
                pred_word: word_ids[s.pred],
                node: s.node,
                pred: s.pred,
            })
            .collect()
    }

    /// Depth of each position, ROOT at 0.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.len() + 1];
        for v in self.bfs_order() {
            depth[v] = depth[self.head(v)] + 1;
        }
        depth
    }

    /// Graphviz rendering, one node per token.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = format!("digraph \"{}\" {{\n  n0 [label=\"ROOT\"];\n", escape_dot(name));
        for tok in &self.tokens {
            out.push_str(&format!(
                "  n{} [label=\"{}\"];\n",
                tok.index,
                escape_dot(&tok.form)
            ));
        }
        for tok in &self.tokens {
            match &tok.label {
                Some(l) => out.push_str(&format!(
                    "  n{} -> n{} [label=\"{}\"];\n",
                    tok.head,
                    tok.index,
                    escape_dot(l)
                )),
                None => out.push_str(&format!("  n{} -> n{};\n", tok.head, tok.index)),
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// First token found on a head cycle, if any.
fn first_cycle(tokens: &[Token]) -> Option<usize> {
    let n = tokens.len();
    // 0 = unvisited, 1 = on current walk, 2 = reaches ROOT.
    let mut mark = vec![0u8; n + 1];
    mark[ROOT] = 2;
    for start in 1..=n {
        let mut walk = Vec::new();
        let mut v = start;
        while mark[v] == 0 {
            mark[v] = 1;
            walk.push(v);
            v = tokens[v - 1].head;
        }
        if mark[v] == 1 {
            return Some(v);
        }
        for w in walk {
            mark[w] = 2;
        }
    }
    None
}
