use std::collections::HashMap;
use std::fmt;

use super::{DepTree, EdgeType, Token, ROOT};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PathWord {
    Root,
    Word(String),
}

impl fmt::Display for PathWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathWord::Root => f.write_str("ROOT"),
            PathWord::Word(w) => f.write_str(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub word: PathWord,
    pub edge: EdgeType,
}

impl PathStep {
    pub fn new(word: PathWord, edge: EdgeType) -> Self {
        PathStep { word, edge }
    }
}

/// Sequence of ⟨predecessor word, edge type⟩ tuples from ROOT down to a node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DependencyPath(pub Vec<PathStep>);

impl DependencyPath {
    pub fn steps(&self) -> &[PathStep] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for DependencyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "<{}, {}>", s.word, s.edge)?;
        }
        f.write_str(")")
    }
}

impl DepTree {
    /// Dependency path of the node at `node`; empty for ROOT.
    pub fn dependency_path(&self, node: usize) -> DependencyPath {
        let mut steps = Vec::new();
        let mut v = node;
        while v != ROOT {
            let (pred, edge) = self.predecessor(v);
            let word = if pred == ROOT {
                PathWord::Root
            } else {
                PathWord::Word(self.form(pred).to_string())
            };
            steps.push(PathStep { word, edge });
            v = pred;
        }
        steps.reverse();
        DependencyPath(steps)
    }

    /// `(form, path)` for every token in sentence order.
    pub fn all_paths(&self) -> Vec<(String, DependencyPath)> {
        (1..=self.len())
            .map(|v| (self.form(v).to_string(), self.dependency_path(v)))
            .collect()
    }
}

/// Rebuilds the unique projective tree whose dependency paths are `paths`.
///
/// A path identifies its node: two nodes with equal paths would have equal
/// predecessors and equal edge types, and every node has at most one
/// successor per edge type. Input order is irrelevant.
pub fn reconstruct_from_paths(paths: &[(String, DependencyPath)]) -> Result<DepTree> {
    let n = paths.len();
    if n == 0 {
        return Err(Error::Data("no paths to reconstruct from".into()));
    }
    let fail = |i: usize, msg: String| Error::Reconstruct {
        word: paths[i].0.clone(),
        msg,
    };

    let mut by_path: HashMap<&[PathStep], usize> = HashMap::with_capacity(n);
    for (i, (_, p)) in paths.iter().enumerate() {
        if p.is_empty() {
            return Err(fail(i, "empty path on a non-ROOT word".into()));
        }
        if by_path.insert(p.steps(), i).is_some() {
            return Err(fail(i, format!("duplicate path {p}")));
        }
    }

    // Node ids: 0 = ROOT, i + 1 = paths[i].
    let mut pred = vec![0usize; n + 1];
    let mut edge = vec![EdgeType::Right; n + 1];
    let mut succ = vec![[None::<usize>; 4]; n + 1];
    for (i, (_, p)) in paths.iter().enumerate() {
        let steps = p.steps();
        let last = &steps[steps.len() - 1];
        let prefix = &steps[..steps.len() - 1];
        let pnode = if prefix.is_empty() {
            if last.word != PathWord::Root || last.edge != EdgeType::Right {
                return Err(fail(i, format!("top-level step must be <ROOT, Right>, got {p}")));
            }
            0
        } else {
            let j = *by_path
                .get(prefix)
                .ok_or_else(|| fail(i, format!("no word carries the prefix of {p}")))?;
            if last.word != PathWord::Word(paths[j].0.clone()) {
                return Err(fail(
                    i,
                    format!("predecessor is `{}`, path names `{}`", paths[j].0, last.word),
                ));
            }
            j + 1
        };
        let slot = &mut succ[pnode][last.edge.index()];
        if let Some(other) = *slot {
            return Err(fail(
                i,
                format!("conflicts with `{}` for the same {} edge", paths[other - 1].0, last.edge),
            ));
        }
        *slot = Some(i + 1);
        pred[i + 1] = pnode;
        edge[i + 1] = last.edge;
    }

    // Nx edges continue a sibling chain on the same side.
    for v in 1..=n {
        let ok = match edge[v] {
            EdgeType::NxLeft => pred[v] != 0 && matches!(edge[pred[v]], EdgeType::Left | EdgeType::NxLeft),
            EdgeType::NxRight => {
                let p = pred[v];
                p != 0 && matches!(edge[p], EdgeType::Right | EdgeType::NxRight) && !(edge[p] == EdgeType::Right && pred[p] == 0)
            }
            EdgeType::Left | EdgeType::Right => true,
        };
        if !ok {
            let msg = if edge[v] == EdgeType::NxRight && pred[v] != 0 && pred[pred[v]] == 0 {
                "ROOT can only have one dependent".to_string()
            } else {
                format!("{} edge from a node that is not on that side", edge[v])
            };
            return Err(fail(v - 1, msg));
        }
    }

    let chain = |start: Option<usize>, next: EdgeType| {
        let mut out = Vec::new();
        let mut cur = start;
        while let Some(c) = cur {
            out.push(c);
            cur = succ[c][next.index()];
        }
        out
    };
    let mut left = vec![Vec::new(); n + 1];
    let mut right = vec![Vec::new(); n + 1];
    for v in 0..=n {
        left[v] = chain(succ[v][EdgeType::Left.index()], EdgeType::NxLeft);
        right[v] = chain(succ[v][EdgeType::Right.index()], EdgeType::NxRight);
    }

    // In-order walk: farthest left dependent first, head, then right dependents.
    let mut position = vec![0usize; n + 1];
    let mut order = Vec::with_capacity(n);
    enum Frame {
        Expand(usize),
        Emit(usize),
    }
    let mut stack = vec![Frame::Expand(0)];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Emit(v) => order.push(v),
            Frame::Expand(v) => {
                for &r in right[v].iter().rev() {
                    stack.push(Frame::Expand(r));
                }
                if v != 0 {
                    stack.push(Frame::Emit(v));
                }
                for &l in left[v].iter() {
                    stack.push(Frame::Expand(l));
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::Data("path set does not form a single tree".into()));
    }
    for (k, &v) in order.iter().enumerate() {
        position[v] = k + 1;
    }

    let mut parent = vec![0usize; n + 1];
    for v in 0..=n {
        for &d in left[v].iter().chain(&right[v]) {
            parent[d] = v;
        }
    }
    let tokens = order
        .iter()
        .enumerate()
        .map(|(k, &v)| Token::new(k + 1, paths[v - 1].0.clone(), position[parent[v]]))
        .collect();
    DepTree::new(tokens).map_err(|e| Error::Tree { block: 0, source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deptree::tests::figure_tree;

    fn step(word: &str, edge: EdgeType) -> PathStep {
        let word = if word == "ROOT" {
            PathWord::Root
        } else {
            PathWord::Word(word.into())
        };
        PathStep { word, edge }
    }

    #[test]
    fn figure_paths() {
        let tree = figure_tree();
        assert_eq!(
            tree.dependency_path(10).0,
            [
                step("ROOT", EdgeType::Right),
                step("sold", EdgeType::Right),
                step("cars", EdgeType::NxRight)
            ]
        );
        assert_eq!(
            tree.dependency_path(4).0,
            [
                step("ROOT", EdgeType::Right),
                step("sold", EdgeType::Left),
                step("year", EdgeType::NxLeft)
            ]
        );
        assert!(tree.dependency_path(ROOT).is_empty());
        assert_eq!(
            tree.dependency_path(10).to_string(),
            "(<ROOT, Right>, <sold, Right>, <cars, Nx-Right>)"
        );
    }

    #[test]
    fn figure_round_trip() {
        let tree = figure_tree();
        let mut paths = tree.all_paths();
        paths.reverse();
        let rebuilt = reconstruct_from_paths(&paths).unwrap();
        assert!(rebuilt.same_structure(&tree));
    }

    #[test]
    fn single_path() {
        let paths = vec![("a".to_string(), DependencyPath(vec![step("ROOT", EdgeType::Right)]))];
        let tree = reconstruct_from_paths(&paths).unwrap();
        assert_eq!(tree.heads(), [0]);
        assert_eq!(tree.form(1), "a");
    }

    #[test]
    fn inconsistent_sets_rejected() {
        let root = step("ROOT", EdgeType::Right);
        // gap: missing the node "b" that "c" hangs off
        let gap = vec![
            ("a".to_string(), DependencyPath(vec![root.clone()])),
            (
                "c".to_string(),
                DependencyPath(vec![root.clone(), step("a", EdgeType::Left), step("b", EdgeType::Left)]),
            ),
        ];
        match reconstruct_from_paths(&gap).unwrap_err() {
            Error::Reconstruct { word, .. } => assert_eq!(word, "c"),
            e => panic!("unexpected {e}"),
        }
        // two first-left dependents of the same head
        let conflict = vec![
            ("a".to_string(), DependencyPath(vec![root.clone()])),
            ("b".to_string(), DependencyPath(vec![root.clone(), step("a", EdgeType::Left)])),
            ("c".to_string(), DependencyPath(vec![root.clone(), step("a", EdgeType::Left)])),
        ];
        assert!(reconstruct_from_paths(&conflict).is_err());
        // wrong predecessor word
        let mislabeled = vec![
            ("a".to_string(), DependencyPath(vec![root.clone()])),
            ("b".to_string(), DependencyPath(vec![root.clone(), step("x", EdgeType::Left)])),
        ];
        assert!(reconstruct_from_paths(&mislabeled).is_err());
        // second ROOT dependent
        let two_roots = vec![
            ("a".to_string(), DependencyPath(vec![root.clone()])),
            ("b".to_string(), DependencyPath(vec![root.clone(), step("a", EdgeType::NxRight)])),
        ];
        assert!(reconstruct_from_paths(&two_roots).is_err());
        // Nx-Left hanging off a right dependent
        let wrong_side = vec![
            ("a".to_string(), DependencyPath(vec![root.clone()])),
            ("b".to_string(), DependencyPath(vec![root.clone(), step("a", EdgeType::Right)])),
            (
                "c".to_string(),
                DependencyPath(vec![root, step("a", EdgeType::Right), step("b", EdgeType::NxLeft)]),
            ),
        ];
        assert!(reconstruct_from_paths(&wrong_side).is_err());
    }
}
