//! Top-down tree LSTM language models.
//!
//! A sentence is scored by generating its dependency tree breadth-first
//! from ROOT. Each token is predicted from the hidden state of its
//! predecessor (head or adjacent closer sibling) by one of four LSTM
//! stacks, selected by the generating edge type. All four stacks share
//! the embedding matrix, the output layer and the per-node state table.
//!
//! [`Variant::LdTreeLstm`] additionally summarises a head's left
//! dependents (farthest first) with a fifth LSTM and feeds the summary to
//! the stack that generates the head's first right dependent.

mod backward;
mod checkpoint;
mod forward;
mod params;
mod seq;
mod suite;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::{backward_tree, nll_output_grads, nll_tree, BackwardResult};
pub use checkpoint::{Checkpoint, Dtype, VocabRef, CHECKPOINT_MAGIC};
pub use forward::{
    initial_states, ld_summary, log_prob_tree, node_log_probs, trace_tree, LdContext, Trace, TraceOptions, TraceStats,
};
pub use params::{ModelParams, StackView, StackViewMut, LN_Z_INIT};
pub use seq::SeqLstm;
pub use suite::{gradcheck_suite, random_projective_tree, SuiteConfig, SuiteReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "TreeLSTM")]
    TreeLstm,
    #[serde(rename = "LdTreeLSTM")]
    LdTreeLstm,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::TreeLstm => "TreeLSTM",
            Variant::LdTreeLstm => "LdTreeLSTM",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "treelstm" | "tree" => Ok(Variant::TreeLstm),
            "ldtreelstm" | "ld" => Ok(Variant::LdTreeLstm),
            _ => Err(Error::Config(format!("unknown model variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeLmConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    /// Hidden size `d`.
    pub hidden: usize,
    /// Embedding size `s`.
    pub embed: usize,
    pub layers: usize,
    /// Dropout on the inputs of layers above the first; training only.
    pub dropout: f64,
    /// Value of every entry of the ROOT hidden state.
    pub h0_fill: f64,
    /// Parameters start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    pub forget_bias: f64,
}

impl TreeLmConfig {
    /// Defaults: `s = d/2` (at least 1), dropout 0.5, ROOT fill 0.01,
    /// init range 0.1, forget-gate bias 1.
    pub fn new(variant: Variant, vocab_size: usize, hidden: usize, layers: usize) -> Self {
        TreeLmConfig {
            variant,
            vocab_size,
            hidden,
            embed: (hidden / 2).max(1),
            layers,
            dropout: 0.5,
            h0_fill: 0.01,
            init_range: 0.1,
            forget_bias: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.layers == 0 {
            return Err(Error::Config("hidden size, embedding size and layers must be at least 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary must contain at least ROOT and UNK".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.h0_fill.is_finite() || !self.init_range.is_finite() || !self.forget_bias.is_finite() {
            return Err(Error::Config("non-finite initialisation setting".into()));
        }
        Ok(())
    }

    pub fn is_ld(&self) -> bool {
        self.variant == Variant::LdTreeLstm
    }

    /// Width of the first-layer input of the stack for `edge`.
    pub fn input_width(&self, edge: crate::deptree::EdgeType) -> usize {
        if self.is_ld() && edge == crate::deptree::EdgeType::Right {
            self.embed + self.hidden
        } else {
            self.embed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TreeLmConfig::new(Variant::TreeLstm, 10, 8, 2);
        assert_eq!(c.embed, 4);
        assert_eq!(c.h0_fill, 0.01);
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.layers = 0;
        assert!(bad.validate().is_err());
        assert_eq!(TreeLmConfig::new(Variant::TreeLstm, 10, 1, 1).embed, 1);
    }

    #[test]
    fn variant_names() {
        assert_eq!("LdTreeLSTM".parse::<Variant>().unwrap(), Variant::LdTreeLstm);
        assert_eq!(Variant::TreeLstm.to_string(), "TreeLSTM");
        assert_eq!(serde_json::to_string(&Variant::LdTreeLstm).unwrap(), "\"LdTreeLSTM\"");
        assert!("gru".parse::<Variant>().is_err());
    }
}
