//! Sentence completion, k-best reranking, attachment scores, add-edge
//! classifiers and tree generation.

mod classify;
mod generate;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use classify::{
    classifier_rows, train_classifiers, ClassifierBundle, ClassifierRow, ClassifierTrainConfig, ClassifierTrainReport,
    CLASSIFIER_MAGIC,
};
pub use generate::{generate, generate_many, GenLimits, Generated};

use crate::corpus::{CompletionQuestion, KBestGroup, Vocab};
use crate::deptree::DepTree;
use crate::error::{Error, Result};
use crate::treelm::{log_prob_tree, Checkpoint, ModelParams, TreeLmConfig};

/// A frozen tree language model together with its vocabulary.
#[derive(Clone, Debug)]
pub struct TreeModel {
    pub config: TreeLmConfig,
    pub params: ModelParams,
    pub vocab: Vocab,
}

impl TreeModel {
    pub fn new(config: TreeLmConfig, params: ModelParams, vocab: Vocab) -> Result<Self> {
        params.check_shapes(&config)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} words, model expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        Ok(TreeModel { config, params, vocab })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, vocab: Vocab) -> Result<Self> {
        ckpt.verify_vocab(&vocab)?;
        TreeModel::new(ckpt.config, ckpt.params, vocab)
    }

    /// `log P(S | T)` with out-of-vocabulary forms mapped to UNK.
    pub fn score(&self, tree: &DepTree) -> Result<f64> {
        log_prob_tree(&self.params, &self.config, &self.vocab.encode(tree))
    }
}

/// Index of the largest score; ties go to the lowest index and NaN never
/// wins.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub id: String,
    pub chosen: usize,
    pub gold: usize,
    pub scores: Vec<f64>,
}

impl CompletionResult {
    pub fn correct(&self) -> bool {
        self.chosen == self.gold
    }

    /// `qid<TAB>chosen<TAB>gold<TAB>scores` with comma-separated scores.
    pub fn tsv_line(&self) -> String {
        let scores: Vec<String> = self.scores.iter().map(|s| s.to_string()).collect();
        format!("{}\t{}\t{}\t{}", self.id, self.chosen, self.gold, scores.join(","))
    }
}

/// Picks the candidate with the highest tree probability.
pub fn complete(model: &TreeModel, question: &CompletionQuestion) -> Result<CompletionResult> {
    let scores = question.candidates.iter().map(|t| model.score(t)).collect::<Result<Vec<f64>>>()?;
    Ok(CompletionResult {
        id: question.id.clone(),
        chosen: argmax_first(&scores),
        gold: question.gold,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionSummary {
    pub results: Vec<CompletionResult>,
    pub accuracy: f64,
}

impl CompletionSummary {
    pub fn to_tsv(&self) -> String {
        self.results.iter().map(|r| r.tsv_line() + "\n").collect()
    }
}

/// Answers every question (in parallel, results in input order).
pub fn eval_completion(model: &TreeModel, questions: &[CompletionQuestion]) -> Result<CompletionSummary> {
    let results = questions.par_iter().map(|q| complete(model, q)).collect::<Result<Vec<_>>>()?;
    let correct = results.iter().filter(|r| r.correct()).count();
    Ok(CompletionSummary {
        accuracy: correct as f64 / results.len().max(1) as f64,
        results,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankResult {
    pub id: String,
    /// Position of the selected candidate within the group.
    pub chosen: usize,
    pub model_scores: Vec<f64>,
    /// Scores the choice was made on: model scores, plus the weighted
    /// parser scores when interpolation is enabled.
    pub combined: Vec<f64>,
}

/// Selects the candidate with the highest model log-probability, or with
/// the highest `model + weight · parser` score when `parser_weight` is set.
/// Ties go to the better parser rank.
pub fn rerank(model: &TreeModel, group: &KBestGroup, parser_weight: Option<f64>) -> Result<RerankResult> {
    if group.candidates.is_empty() {
        return Err(Error::Data(format!("k-best group {} has no candidates", group.id)));
    }
    if group.candidates.windows(2).any(|w| w[0].rank >= w[1].rank) {
        return Err(Error::Data(format!("k-best group {} is not sorted by rank", group.id)));
    }
    let model_scores = group.candidates.iter().map(|c| model.score(&c.tree)).collect::<Result<Vec<f64>>>()?;
    let combined = match parser_weight {
        None => model_scores.clone(),
        Some(w) => group
            .candidates
            .iter()
            .zip(&model_scores)
            .map(|(c, m)| {
                c.parser_score
                    .map(|p| m + w * p)
                    .ok_or_else(|| Error::Data(format!("group {} rank {} has no parser score", group.id, c.rank)))
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    Ok(RerankResult {
        id: group.id.clone(),
        chosen: argmax_first(&combined),
        model_scores,
        combined,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankSummary {
    pub results: Vec<RerankResult>,
    pub score: AttachmentScore,
    /// Attachment score of the parser's top candidates.
    pub baseline: AttachmentScore,
}

/// Reranks every group and scores the selections against gold.
pub fn eval_rerank(model: &TreeModel, groups: &[KBestGroup], parser_weight: Option<f64>) -> Result<RerankSummary> {
    let results = groups
        .par_iter()
        .map(|g| rerank(model, g, parser_weight))
        .collect::<Result<Vec<_>>>()?;
    let chosen: Vec<(&DepTree, &DepTree)> = groups
        .iter()
        .zip(&results)
        .map(|(g, r)| (&g.candidates[r.chosen].tree, &g.gold))
        .collect();
    let top: Vec<(&DepTree, &DepTree)> = groups.iter().map(|g| (&g.candidates[0].tree, &g.gold)).collect();
    Ok(RerankSummary {
        score: eval_attachment(&chosen)?,
        baseline: eval_attachment(&top)?,
        results,
    })
}

/// Score table: `sid<TAB>rank<TAB>model<TAB>parser<TAB>combined<TAB>chosen`.
pub fn rerank_table(groups: &[KBestGroup], results: &[RerankResult]) -> String {
    let mut s = String::from("sid\trank\tmodel_score\tparser_score\tcombined\tchosen\n");
    for (g, r) in groups.iter().zip(results) {
        for (i, c) in g.candidates.iter().enumerate() {
            let parser = c.parser_score.map_or_else(|| "_".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                g.id,
                c.rank,
                r.model_scores[i],
                parser,
                r.combined[i],
                u8::from(i == r.chosen)
            );
        }
    }
    s
}

/// Gold POS tags excluded from attachment scoring.
pub const PUNCT_TAGS: [&str; 5] = ["``", "''", ":", ",", "."];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttachmentScore {
    pub uas: f64,
    pub las: f64,
    /// Scored tokens (punctuation excluded).
    pub tokens: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
}

fn is_punct(tree: &DepTree, i: usize) -> bool {
    let tok = tree.token(i);
    tok.pos
        .as_deref()
        .or(tok.cpos.as_deref())
        .is_some_and(|p| PUNCT_TAGS.contains(&p))
}

/// UAS and LAS of `(predicted, gold)` pairs. Tokens whose gold POS tag is
/// punctuation are skipped; both scores are 0 when nothing is scored.
pub fn eval_attachment(pairs: &[(&DepTree, &DepTree)]) -> Result<AttachmentScore> {
    let mut s = AttachmentScore::default();
    for (k, (pred, gold)) in pairs.iter().enumerate() {
        if pred.len() != gold.len() {
            return Err(Error::Data(format!(
                "pair {}: predicted tree has {} tokens, gold has {}",
                k + 1,
                pred.len(),
                gold.len()
            )));
        }
        for i in 1..=gold.len() {
            if is_punct(gold, i) {
                continue;
            }
            s.tokens += 1;
            if pred.head(i) == gold.head(i) {
                s.correct_heads += 1;
                if pred.token(i).label == gold.token(i).label {
                    s.correct_labeled += 1;
                }
            }
        }
    }
    if s.tokens > 0 {
        s.uas = s.correct_heads as f64 / s.tokens as f64;
        s.las = s.correct_labeled as f64 / s.tokens as f64;
    }
    Ok(s)
}
