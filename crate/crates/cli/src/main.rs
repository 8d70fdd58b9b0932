//! `dtlm`: build vocabularies, train tree language models and run the
//! downstream tasks from the command line.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use deptree_lm::corpus::{load_kbest, load_questions, split_validation, EncodedTree, Vocab};
use deptree_lm::deptree::{parse_conll_with, write_conll, ConllPolicy, DepTree, EdgeType};
use deptree_lm::error::Category;
use deptree_lm::tasks::{
    eval_attachment, eval_completion, eval_rerank, generate_many, rerank_table, train_classifiers, ClassifierBundle,
    ClassifierTrainConfig, GenLimits, TreeModel,
};
use deptree_lm::trainer::{evaluate_nll, train, Objective, RunDir, TrainData};
use deptree_lm::treelm::{gradcheck_suite, Checkpoint, Dtype, SuiteConfig, Variant};
use deptree_lm::{Error, Result};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dtlm", version, about = "Dependency-tree LSTM language models")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary file from CoNLL trees.
    BuildVocab(BuildVocabArgs),
    /// Train a model; writes checkpoints, report and resolved config.
    Train(TrainArgs),
    /// Print `log_prob<TAB>n_tokens<TAB>per-token log_prob` per tree.
    Score(ScoreArgs),
    /// Answer five-candidate completion questions.
    Complete(CompleteArgs),
    /// Rerank k-best parses with the model.
    Rerank(RerankArgs),
    /// Train the four add-edge classifiers used for generation.
    TrainClassifiers(TrainClassifiersArgs),
    /// Sample trees from a model and its classifiers.
    Generate(GenerateArgs),
    /// Finite-difference check of the model gradients on random trees.
    Gradcheck(GradcheckArgs),
    /// Attachment scores of predicted trees, or model perplexity.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct InputPolicy {
    /// Drop non-projective trees instead of failing.
    #[arg(long, default_value_t = false)]
    skip_nonprojective: bool,
}

impl InputPolicy {
    fn policy(&self) -> ConllPolicy {
        ConllPolicy {
            skip_nonprojective: self.skip_nonprojective,
            ..ConllPolicy::default()
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Vocabulary file [default: the one referenced by the checkpoint].
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<TreeModel> {
        let (ckpt, vocab) = match &self.vocab {
            Some(v) => (Checkpoint::load(&self.ckpt)?, Vocab::load(v)?),
            None => Checkpoint::load_with_vocab(&self.ckpt)?,
        };
        TreeModel::from_checkpoint(ckpt, vocab)
    }
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    /// CoNLL input files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output vocabulary file.
    #[arg(long)]
    out: PathBuf,
    /// Words seen this many times or fewer map to UNK.
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Lowercase every form.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    lowercase: bool,
    #[command(flatten)]
    input_policy: InputPolicy,
}

/// Every flag here overrides the matching `--config` value only when
/// given on the command line.
#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training trees (CoNLL).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation trees [default: held out of the training trees].
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vocabulary file [default: built from the training trees].
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Trees held out for validation when --valid is absent.
    #[arg(long, default_value_t = 4000)]
    valid_size: usize,
    /// Words seen this many times or fewer map to UNK.
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Lowercase every form when building the vocabulary.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    lowercase: bool,
    /// Drop non-projective trees instead of failing.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    skip_nonprojective: bool,
    /// Model variant: treelstm or ldtreelstm.
    #[arg(long, default_value = "ldtreelstm", value_parser = parse_variant)]
    variant: Variant,
    /// Hidden size d.
    #[arg(long = "d", default_value_t = 300)]
    hidden: usize,
    /// Word embedding size s [default: d/2].
    #[arg(long)]
    embed: Option<usize>,
    /// LSTM layers per stack.
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Dropout on inputs of layers above the first.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Parameters start uniform in [-r, r].
    #[arg(long, default_value_t = 0.1)]
    init_range: f64,
    /// Training objective: nll or nce.
    #[arg(long, default_value = "nll", value_parser = parse_objective)]
    objective: Objective,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Global gradient-norm clipping threshold.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    /// NCE noise samples per token.
    #[arg(long = "k", default_value_t = 20)]
    noise_samples: usize,
    /// Initial value of the learned ln Z.
    #[arg(long, default_value_t = 9.0)]
    ln_z_init: f64,
    /// Relative validation improvement below which the lr halves.
    #[arg(long, default_value_t = 1e-3)]
    halving_threshold: f64,
    /// Stop once lr < factor * initial lr.
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    min_lr_factor: f64,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    /// Seed for initialisation, validation split, shuffling, dropout and noise.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Gradient-reduction lanes per batch (part of the result's identity).
    #[arg(long, default_value_t = 8)]
    lanes: usize,
    /// Checkpoint precision: f64 or f32.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CoNLL trees to score.
    #[arg(long)]
    input: PathBuf,
    /// Output file [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    input_policy: InputPolicy,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Question bundles (CoNLL with qid= and gold= comments).
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output TSV [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    input_policy: InputPolicy,
}

#[derive(Args, Debug)]
struct RerankArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Gold trees with sid= comments.
    #[arg(long)]
    gold: PathBuf,
    /// K-best candidates with sid= and rank= comments.
    #[arg(long)]
    kbest: PathBuf,
    /// Candidates considered per sentence.
    #[arg(long = "k", default_value_t = 10)]
    k: usize,
    /// Interpolate with parser scores: model + w * parser.
    #[arg(long)]
    parser_weight: Option<f64>,
    /// Selected trees (CoNLL) [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-candidate score table (TSV).
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    input_policy: InputPolicy,
}

#[derive(Args, Debug)]
struct TrainClassifiersArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training trees (CoNLL).
    #[arg(long)]
    input: PathBuf,
    /// Output classifier bundle.
    #[arg(long)]
    out: PathBuf,
    /// Hidden units per classifier.
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    /// AdaGrad learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    input_policy: InputPolicy,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Classifier bundle from train-classifiers.
    #[arg(long)]
    classifiers: PathBuf,
    /// Trees to sample.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    max_nodes: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Dependents per side of one head.
    #[arg(long, default_value_t = 10)]
    max_arity: usize,
    /// Softmax temperature; 0 picks the most probable word.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Never emit UNK.
    #[arg(long, default_value_t = false)]
    forbid_unk: bool,
    /// Sample classifier decisions instead of thresholding at 0.5.
    #[arg(long, default_value_t = false)]
    sample_decisions: bool,
    /// Output CoNLL [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the trees in Graphviz DOT format.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model variant: treelstm or ldtreelstm.
    #[arg(long, default_value = "ldtreelstm", value_parser = parse_variant)]
    variant: Variant,
    /// Hidden size d.
    #[arg(long = "d", default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Random trees to check.
    #[arg(long, default_value_t = 20)]
    trees: usize,
    /// Largest tree size.
    #[arg(long, default_value_t = 10)]
    max_nodes: usize,
    #[arg(long, default_value_t = 12)]
    vocab_size: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted trees; scored against --gold.
    #[arg(long, requires = "gold", conflicts_with = "ckpt")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Checkpoint; reports perplexity on --input.
    #[arg(long, requires = "input")]
    ckpt: Option<PathBuf>,
    /// Vocabulary file [default: the one referenced by the checkpoint].
    #[arg(long, requires = "ckpt")]
    vocab: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    input_policy: InputPolicy,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dtype(s: &str) -> std::result::Result<Dtype, String> {
    match s.to_ascii_lowercase().as_str() {
        "f64" => Ok(Dtype::F64),
        "f32" => Ok(Dtype::F32),
        _ => Err(format!("unknown dtype `{s}` (expected f64 or f32)")),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

/// Writes to `path`, or to stdout when it is absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|e| Error::Io {
                    context: "writing stdout".into(),
                    source: e,
                })
        }
    }
}

fn read_trees(path: &Path, policy: ConllPolicy) -> Result<Vec<DepTree>> {
    let doc = parse_conll_with(&read_text(path)?, policy)?;
    if !doc.skipped_nonprojective.is_empty() {
        log::warn!(
            "{}: skipped {} non-projective trees",
            path.display(),
            doc.skipped_nonprojective.len()
        );
    }
    Ok(doc.into_trees())
}

fn build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let mut trees = Vec::new();
    for p in &args.input {
        trees.extend(read_trees(p, args.input_policy.policy())?);
    }
    let vocab = Vocab::build(&trees, args.min_count, args.lowercase)?;
    vocab.save(&args.out)?;
    println!("words\t{}\nsha256\t{}", vocab.len(), vocab.digest());
    Ok(())
}

fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Config file values, overridden by flags given on the command line.
fn resolve_run_config(args: &TrainArgs, m: &ArgMatches, threads: Option<usize>) -> Result<RunConfig> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($id:literal => $target:expr, $value:expr;)*) => {
            $(if given(m, $id) { $target = $value; })*
        };
    }
    set! {
        "train" => c.data.train, args.train.clone();
        "valid" => c.data.valid, args.valid.clone();
        "out" => c.out, args.out.clone();
        "vocab" => c.data.vocab, args.vocab.clone();
        "valid_size" => c.data.valid_size, args.valid_size;
        "min_count" => c.data.min_count, args.min_count;
        "lowercase" => c.data.lowercase, args.lowercase;
        "skip_nonprojective" => c.data.skip_nonprojective, args.skip_nonprojective;
        "variant" => c.model.variant, args.variant;
        "hidden" => c.model.hidden, args.hidden;
        "embed" => c.model.embed, args.embed;
        "layers" => c.model.layers, args.layers;
        "dropout" => c.model.dropout, args.dropout;
        "init_range" => c.model.init_range, args.init_range;
        "objective" => c.train.objective, args.objective;
        "batch_size" => c.train.batch_size, args.batch_size;
        "lr" => c.train.lr, args.lr;
        "clip" => c.train.clip, args.clip;
        "noise_samples" => c.train.noise_samples, args.noise_samples;
        "ln_z_init" => c.train.ln_z_init, args.ln_z_init;
        "halving_threshold" => c.train.halving_threshold, args.halving_threshold;
        "min_lr_factor" => c.train.min_lr_factor, args.min_lr_factor;
        "max_epochs" => c.train.max_epochs, args.max_epochs;
        "seed" => c.train.seed, args.seed;
        "lanes" => c.train.lanes, args.lanes;
        "dtype" => c.dtype, args.dtype;
    }
    if let Some(t) = threads {
        c.threads = t;
    }
    Ok(c)
}

fn run_train(args: &TrainArgs, m: &ArgMatches, threads: Option<usize>) -> Result<()> {
    let mut c = resolve_run_config(args, m, threads)?;
    c.train.validate()?;
    init_pool(c.threads)?;
    let train_path = c.data.train.clone().ok_or_else(|| Error::Config("no training data (--train)".into()))?;
    let out = c.out.clone().ok_or_else(|| Error::Config("no run directory (--out)".into()))?;
    let policy = ConllPolicy {
        skip_nonprojective: c.data.skip_nonprojective,
        ..ConllPolicy::default()
    };
    let all = read_trees(&train_path, policy)?;
    let (train_trees, valid_trees) = match &c.data.valid {
        Some(v) => (all, read_trees(v, policy)?),
        None => split_validation(all, c.data.valid_size, c.train.seed)?,
    };
    let vocab = match &c.data.vocab {
        Some(p) => Vocab::load(p)?,
        None => Vocab::build(&train_trees, c.data.min_count, c.data.lowercase)?,
    };
    let model_cfg = c.model.resolve(vocab.len())?;
    let encode = |trees: &[DepTree]| -> Vec<EncodedTree> { trees.iter().map(|t| vocab.encode(t)).collect() };
    let (train_enc, valid_enc) = (encode(&train_trees), encode(&valid_trees));
    log::info!(
        "training on {} trees, validating on {}, vocabulary {}",
        train_enc.len(),
        valid_enc.len(),
        vocab.len()
    );
    let run = RunDir {
        path: out.clone(),
        vocab: Some(vocab.clone()),
        resolved_config: Some(c.to_json()),
        dtype: c.dtype,
    };
    let data = TrainData {
        train: &train_enc,
        valid: &valid_enc,
        noise: None,
    };
    let outcome = train(&c.train, &model_cfg, None, data, Some(&run))?;
    let r = &outcome.report;
    println!(
        "run\t{}\nepochs\t{}\nbest_epoch\t{}\ninitial_valid_nll\t{}\nbest_valid_nll\t{}\nconverged\t{}",
        out.display(),
        r.epochs.len(),
        r.best_epoch,
        r.initial_valid_nll,
        r.best_valid_nll,
        r.converged
    );
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let model = args.model.load()?;
    let trees = read_trees(&args.input, args.input_policy.policy())?;
    let mut out = String::new();
    for t in &trees {
        let lp = model.score(t)?;
        let _ = writeln!(out, "{lp}\t{}\t{}", t.len(), lp / t.len() as f64);
    }
    emit(args.output.as_deref(), &out)
}

fn complete(args: &CompleteArgs) -> Result<()> {
    let model = args.model.load()?;
    let paths: Vec<&Path> = args.input.iter().map(PathBuf::as_path).collect();
    let questions = load_questions(&paths, args.input_policy.policy())?;
    let summary = eval_completion(&model, &questions)?;
    emit(args.output.as_deref(), &summary.to_tsv())?;
    eprintln!("accuracy\t{}\t({} questions)", summary.accuracy, summary.results.len());
    Ok(())
}

fn rerank(args: &RerankArgs) -> Result<()> {
    let model = args.model.load()?;
    let groups = load_kbest(&args.gold, &args.kbest, args.k, args.input_policy.policy())?;
    let summary = eval_rerank(&model, &groups, args.parser_weight)?;
    let mut conll = String::new();
    for (g, r) in groups.iter().zip(&summary.results) {
        let c = &g.candidates[r.chosen];
        conll.push_str(&write_conll(&c.tree, &[format!("sid={}", g.id), format!("rank={}", c.rank)]));
    }
    emit(args.output.as_deref(), &conll)?;
    if let Some(t) = &args.table {
        write_text(t, &rerank_table(&groups, &summary.results))?;
    }
    eprintln!(
        "reranked\tuas {}\tlas {}\nparser top-1\tuas {}\tlas {}",
        summary.score.uas, summary.score.las, summary.baseline.uas, summary.baseline.las
    );
    Ok(())
}

fn run_train_classifiers(args: &TrainClassifiersArgs) -> Result<()> {
    let model = args.model.load()?;
    let trees = read_trees(&args.input, args.input_policy.policy())?;
    let encoded: Vec<EncodedTree> = trees.iter().map(|t| model.vocab.encode(t)).collect();
    let config = ClassifierTrainConfig {
        hidden: args.hidden,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let (bundle, report) = train_classifiers(&model.params, &model.config, &encoded, &config)?;
    bundle.save(&args.out)?;
    let mut out = String::from("edge\trows\tpositives\tfinal_loss\ttrain_accuracy\tmajority_accuracy\n");
    for e in EdgeType::ALL {
        let i = e.index();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.name(),
            report.rows[i],
            report.positives[i],
            report.final_loss[i],
            report.train_accuracy[i],
            report.majority_accuracy[i]
        );
    }
    emit(None, &out)
}

fn run_generate(args: &GenerateArgs) -> Result<()> {
    let model = args.model.load()?;
    let classifiers = ClassifierBundle::load(&args.classifiers)?;
    let limits = GenLimits {
        max_nodes: args.max_nodes,
        max_depth: args.max_depth,
        max_arity: args.max_arity,
        temperature: args.temperature,
        forbid_unk: args.forbid_unk,
        sample_decisions: args.sample_decisions,
    };
    let trees = generate_many(&model, &classifiers, &limits, args.count, args.seed)?;
    let conll: String = trees.iter().enumerate().map(|(i, g)| g.to_conll(i + 1)).collect();
    emit(args.output.as_deref(), &conll)?;
    if let Some(p) = &args.dot {
        let dot: String = trees
            .iter()
            .enumerate()
            .map(|(i, g)| g.tree.to_dot(&format!("sid={}", i + 1)))
            .collect();
        write_text(p, &dot)?;
    }
    let truncated = trees.iter().filter(|g| g.truncated).count();
    eprintln!("generated\t{}\ttruncated\t{truncated}", trees.len());
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut c = SuiteConfig::new(args.variant, args.hidden, args.layers, args.seed);
    c.trees = args.trees;
    c.max_nodes = args.max_nodes;
    c.vocab_size = args.vocab_size;
    c.tolerance = args.tolerance;
    let r = gradcheck_suite(&c)?;
    let mut out = String::new();
    for t in &r.report.per_tensor {
        let _ = writeln!(out, "{}\t{}\t{:e}", t.name, t.checked, t.max_rel_error);
    }
    let _ = writeln!(out, "max_rel_error\t{:e}", r.report.max_rel_error);
    emit(None, &out)?;
    if r.passes(args.tolerance) {
        Ok(())
    } else {
        let worst = r.report.worst.as_ref().map_or_else(String::new, |w| {
            format!(
                " at {}[{}] (analytic {}, numeric {})",
                w.tensor, w.index, w.analytic, w.numeric
            )
        });
        Err(Error::Numeric(format!(
            "max relative error {:e} is not below {:e}{worst}",
            r.report.max_rel_error, args.tolerance
        )))
    }
}

fn eval(args: &EvalArgs) -> Result<()> {
    let policy = args.input_policy.policy();
    match (&args.pred, &args.gold, &args.ckpt, &args.input) {
        (Some(pred), Some(gold), None, _) => {
            let (p, g) = (read_trees(pred, policy)?, read_trees(gold, policy)?);
            if p.len() != g.len() {
                return Err(Error::Data(format!(
                    "{} predicted trees but {} gold trees",
                    p.len(),
                    g.len()
                )));
            }
            let pairs: Vec<(&DepTree, &DepTree)> = p.iter().zip(&g).collect();
            let s = eval_attachment(&pairs)?;
            emit(None, &format!("uas\tlas\ttokens\n{}\t{}\t{}\n", s.uas, s.las, s.tokens))
        }
        (None, None, Some(ckpt), Some(input)) => {
            let model = ModelArgs {
                ckpt: ckpt.clone(),
                vocab: args.vocab.clone(),
            }
            .load()?;
            let trees: Vec<EncodedTree> = read_trees(input, policy)?.iter().map(|t| model.vocab.encode(t)).collect();
            let s = evaluate_nll(&model.params, &model.config, &trees)?;
            emit(
                None,
                &format!(
                    "sentences\ttokens\tnll_per_token\tperplexity\n{}\t{}\t{}\t{}\n",
                    s.sentences,
                    s.tokens,
                    s.per_token(),
                    s.perplexity()
                ),
            )
        }
        _ => Err(Error::Config("eval needs --pred with --gold, or --ckpt with --input".into())),
    }
}

fn init_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    if let Command::Train(a) = &cli.command {
        let sub = matches.subcommand_matches("train").expect("train matches");
        let threads = given(sub, "threads").then_some(cli.threads);
        return run_train(a, sub, threads);
    }
    init_pool(cli.threads)?;
    match &cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(_) => unreachable!("handled above"),
        Command::Score(a) => score(a),
        Command::Complete(a) => complete(a),
        Command::Rerank(a) => rerank(a),
        Command::TrainClassifiers(a) => run_train_classifiers(a),
        Command::Generate(a) => run_generate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Eval(a) => eval(a),
    }
}

fn exit_code(category: Category) -> u8 {
    match category {
        Category::Usage => 2,
        Category::Data => 3,
        Category::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let code = exit_code(category);
            let kind = match category {
                Category::Usage => "usage",
                Category::Data => "data",
                Category::Numeric => "numeric",
            };
            eprintln!("dtlm: error[{code} {kind}]: {e}");
            ExitCode::from(code)
        }
    }
}
