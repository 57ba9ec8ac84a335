//! `nestccg`: lexicon building, tagger training, tagging, CCG parsing,
//! evaluation and graph inspection over chunk graphs.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nestccg::agcn::{
    kbest_sentences, load_model, render_model, tag_sentences, train, DataSet, EncoderConfig,
    ModelFlags, TaggerModel, TrainConfig,
};
use nestccg::categories::{parse_category, Category};
use nestccg::chunk_graph::{
    chunk_edges, partition_sentence, sentence_graph, AdjacencyMatrix, EdgeTypes, GraphMode,
};
use nestccg::corpus::{
    build_tagset, collect_vocabulary, load_dataset, load_embeddings, parse_raw, render_tagged,
    Dataset, DatasetKind, EmbeddingTable, Sentence, TaggedSentence, OTHER_TAG,
};
use nestccg::derivation::{cky_parse, Candidate};
use nestccg::lexicon::{build_lexicon, load_lexicon, render_lexicon, PmiLexicon};
use nestccg::par;

use config::{defaults, FileConfig};

#[derive(Parser)]
#[command(
    name = "nestccg",
    about = "Chunk-graph attentive GCN supertagger and CCG parser",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the PMI n-gram lexicon from a training corpus.
    BuildLexicon(BuildLexiconArgs),
    /// Train a tagger and write a checkpoint.
    Train(TrainArgs),
    /// Tag raw sentences with a trained model.
    Tag(TagArgs),
    /// Parse raw sentences into CCG derivations.
    Parse(ParseArgs),
    /// Score predicted tags against gold tags.
    Eval(EvalArgs),
    /// Show the chunk partition and edge list of each sentence.
    InspectGraph(InspectGraphArgs),
}

#[derive(Args)]
struct GraphFlags {
    /// Graph construction: chunk, full or none.
    #[arg(long)]
    graph: Option<String>,
    /// Disable attention (plain GCN aggregation).
    #[arg(long)]
    no_attention: bool,
    /// Drop in-chunk edges.
    #[arg(long)]
    no_in_chunk: bool,
    /// Drop cross-chunk edges.
    #[arg(long)]
    no_cross_chunk: bool,
}

impl GraphFlags {
    fn resolve(&self, cfg: &FileConfig) -> Result<ModelFlags> {
        let graph_name = match &self.graph {
            Some(g) => g.clone(),
            None => cfg.get_string("graph").unwrap_or_else(|| "chunk".into()),
        };
        let graph = GraphMode::parse(&graph_name)?;
        let attention = if self.no_attention {
            false
        } else {
            cfg.get::<bool>("attention")?.unwrap_or(true)
        };
        let in_chunk = if self.no_in_chunk {
            false
        } else {
            cfg.get::<bool>("in_chunk")?.unwrap_or(true)
        };
        let cross_chunk = if self.no_cross_chunk {
            false
        } else {
            cfg.get::<bool>("cross_chunk")?.unwrap_or(true)
        };
        Ok(ModelFlags {
            attention,
            graph,
            edge_types: EdgeTypes {
                in_chunk,
                cross_chunk,
            },
        })
    }
}

#[derive(Args)]
struct BuildLexiconArgs {
    /// Training corpus (tagged by default; see --raw).
    #[arg(long)]
    train: PathBuf,
    /// Treat the training file as raw text instead of token<TAB>tag.
    #[arg(long)]
    raw: bool,
    /// Output lexicon file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    pmi_threshold: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Tagged training data.
    #[arg(long)]
    train: PathBuf,
    /// Tagged dev data; enables best-checkpoint selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Lexicon file (required for the chunk graph).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Precomputed embeddings for the training sentences.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Precomputed embeddings for the dev sentences.
    #[arg(long)]
    dev_embeddings: Option<PathBuf>,
    #[command(flatten)]
    graph_flags: GraphFlags,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Embedding width of the lookup encoder.
    #[arg(long)]
    d0: Option<usize>,
    /// Tag-set capacity (most frequent tags kept).
    #[arg(long)]
    max_tags: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw input, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beam_ratio: Option<f64>,
    /// Emit token<TAB>tag:logprob,... candidate lists.
    #[arg(long)]
    kbest: bool,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beam_ratio: Option<f64>,
    /// Required root category (default: prefer S[dcl], then any S atom).
    #[arg(long)]
    goal: Option<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
}

#[derive(Args)]
struct InspectGraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[command(flatten)]
    graph_flags: GraphFlags,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildLexicon(args) => cmd_build_lexicon(args),
        Command::Train(args) => cmd_train(args),
        Command::Tag(args) => cmd_tag(args),
        Command::Parse(args) => cmd_parse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::InspectGraph(args) => cmd_inspect_graph(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Writes through a temp file in the same directory; the target never
/// holds partial output.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_file_name(format!(
        "{}.tmp.{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_tagged(path: &Path) -> Result<Vec<TaggedSentence>> {
    match load_dataset(path, DatasetKind::Tagged)? {
        Dataset::Tagged(data) => Ok(data),
        Dataset::Raw(_) => unreachable!(),
    }
}

fn load_raw(path: &Path) -> Result<Vec<Sentence>> {
    match load_dataset(path, DatasetKind::Raw)? {
        Dataset::Raw(data) => Ok(data),
        Dataset::Tagged(_) => unreachable!(),
    }
}

fn graphs_for(
    sentences: &[Sentence],
    lexicon: Option<&PmiLexicon>,
    flags: &ModelFlags,
) -> Result<Vec<AdjacencyMatrix>> {
    sentences
        .iter()
        .map(|s| Ok(sentence_graph(s, lexicon, flags.graph, flags.edge_types)?))
        .collect()
}

fn require_lexicon(flags: &ModelFlags, path: Option<&Path>) -> Result<Option<PmiLexicon>> {
    match (flags.graph, path) {
        (GraphMode::Chunk, Some(p)) => Ok(Some(load_lexicon(p)?)),
        (GraphMode::Chunk, None) => {
            bail!("the chunk graph needs --lexicon <file> (build one with build-lexicon)")
        }
        (_, _) => Ok(None),
    }
}

fn cmd_build_lexicon(args: BuildLexiconArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let max_len = cfg.resolve(args.max_len, "max_len", defaults::MAX_LEN)?;
    let threshold = cfg.resolve(args.pmi_threshold, "pmi_threshold", defaults::PMI_THRESHOLD)?;

    let sentences: Vec<Sentence> = if args.raw {
        load_raw(&args.train)?
    } else {
        load_tagged(&args.train)?
            .into_iter()
            .map(|t| t.sentence().clone())
            .collect()
    };
    let lexicon = build_lexicon(&sentences, max_len, threshold)?;
    write_atomic(&args.out, &render_lexicon(&lexicon))?;

    for (len, count) in lexicon.counts_by_length() {
        println!("length {len}: {count}");
    }
    println!("total: {}", lexicon.len());
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, cfg: &FileConfig, lookup: bool) -> Result<TrainConfig> {
    let default_lr = if lookup {
        defaults::LR_LOOKUP
    } else {
        defaults::LR_PRECOMPUTED
    };
    Ok(TrainConfig {
        epochs: cfg.resolve(args.epochs, "epochs", defaults::EPOCHS)?,
        batch_size: cfg.resolve(args.batch, "batch", defaults::BATCH)?,
        learning_rate: cfg.resolve(args.lr, "lr", default_lr)?,
        seed: cfg.resolve(args.seed, "seed", defaults::SEED)?,
        warmup_ratio: cfg.resolve(args.warmup, "warmup", defaults::WARMUP)?,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let flags = args.graph_flags.resolve(&cfg)?;
    let layers = cfg.resolve(args.layers, "layers", defaults::LAYERS)?;
    let dropout = cfg.resolve(args.dropout, "dropout", defaults::DROPOUT)?;
    let d0 = cfg.resolve(args.d0, "d0", defaults::D0)?;
    let max_tags = cfg.resolve(args.max_tags, "max_tags", defaults::MAX_TAGS)?;
    let embeddings_path = match &args.embeddings {
        Some(p) => Some(p.clone()),
        None => cfg.get_string("embeddings").map(PathBuf::from),
    };

    let train_data = load_tagged(&args.train)?;
    let train_sentences: Vec<Sentence> =
        train_data.iter().map(|t| t.sentence().clone()).collect();
    let tagset = build_tagset(&train_data, max_tags)?;
    let lexicon = require_lexicon(&flags, args.lexicon.as_deref())?;
    let train_graphs = graphs_for(&train_sentences, lexicon.as_ref(), &flags)?;

    let train_embeddings: Option<EmbeddingTable> = match &embeddings_path {
        Some(p) => Some(load_embeddings(p, &train_sentences)?),
        None => None,
    };

    let (encoder, lookup) = match &train_embeddings {
        Some(table) => (EncoderConfig::Precomputed { dim: table.dim() }, false),
        None => (
            EncoderConfig::Lookup {
                vocabulary: collect_vocabulary(&train_sentences),
                dim: d0,
            },
            true,
        ),
    };
    let train_cfg = resolve_train_config(&args, &cfg, lookup)?;

    let dev_data = args.dev.as_ref().map(|p| load_tagged(p)).transpose()?;
    let dev_sentences: Option<Vec<Sentence>> = dev_data
        .as_ref()
        .map(|d| d.iter().map(|t| t.sentence().clone()).collect());
    let dev_graphs = dev_sentences
        .as_ref()
        .map(|s| graphs_for(s, lexicon.as_ref(), &flags))
        .transpose()?;
    let dev_embeddings: Option<EmbeddingTable> = match (&args.dev_embeddings, &dev_sentences) {
        (Some(p), Some(s)) => Some(load_embeddings(p, s)?),
        (Some(_), None) => bail!("--dev-embeddings given without --dev"),
        (None, Some(_)) if !lookup => {
            bail!("the precomputed encoder needs --dev-embeddings for the dev set")
        }
        _ => None,
    };

    let mut model = TaggerModel::new(encoder, layers, tagset, flags, dropout, train_cfg.seed)?;

    let train_set = DataSet::new(&train_data, &train_graphs, train_embeddings.as_ref())?;
    let dev_set = match (&dev_data, &dev_graphs) {
        (Some(d), Some(g)) => Some(DataSet::new(d, g, dev_embeddings.as_ref())?),
        _ => None,
    };

    let log = train(&mut model, train_set, dev_set, &train_cfg)?;
    for e in &log.epochs {
        match e.dev_accuracy {
            Some(dev) => println!(
                "epoch {:>3}  loss {:.6}  train_acc {:.4}  dev_acc {:.4}",
                e.epoch, e.loss, e.train_accuracy, dev
            ),
            None => println!(
                "epoch {:>3}  loss {:.6}  train_acc {:.4}",
                e.epoch, e.loss, e.train_accuracy
            ),
        }
    }
    if let Some((epoch, acc)) = log.best_dev {
        println!("best dev accuracy {:.4} at epoch {epoch}; checkpoint uses it", acc);
    }

    write_atomic(&args.out, &render_model(&model))?;
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

/// Shared model+input loading for tag and parse.
struct Pipeline {
    model: TaggerModel,
    sentences: Vec<Sentence>,
    graphs: Vec<AdjacencyMatrix>,
    embeddings: Option<EmbeddingTable>,
}

fn load_pipeline(
    model_path: &Path,
    input_path: &Path,
    lexicon_path: Option<&Path>,
    embeddings_path: Option<&Path>,
) -> Result<Option<Pipeline>> {
    let model = load_model(model_path)?;
    let text = fs::read_to_string(input_path)
        .with_context(|| format!("reading {}", input_path.display()))?;
    if text.trim().is_empty() {
        return Ok(None); // empty input: vacuous success
    }
    let sentences = parse_raw(&text, input_path)?;
    let lexicon = require_lexicon(&model.flags, lexicon_path)?;
    let flags = model.flags;
    let graphs = graphs_for(&sentences, lexicon.as_ref(), &flags)?;
    let embeddings = match embeddings_path {
        Some(p) => Some(load_embeddings(p, &sentences)?),
        None => None,
    };
    Ok(Some(Pipeline {
        model,
        sentences,
        graphs,
        embeddings,
    }))
}

fn cmd_tag(args: TagArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let beam_ratio = cfg.resolve(args.beam_ratio, "beam_ratio", defaults::BEAM_TAG)?;
    let Some(p) = load_pipeline(
        &args.model,
        &args.input,
        args.lexicon.as_deref(),
        args.embeddings.as_deref(),
    )?
    else {
        emit(args.out.as_deref(), "")?;
        return Ok(());
    };

    let output = if args.kbest {
        let kbest = kbest_sentences(
            &p.model,
            &p.sentences,
            &p.graphs,
            p.embeddings.as_ref(),
            beam_ratio,
        )?;
        let mut blocks = Vec::with_capacity(p.sentences.len());
        for (sentence, cands) in p.sentences.iter().zip(&kbest) {
            let lines: Vec<String> = sentence
                .tokens()
                .iter()
                .zip(cands)
                .map(|(tok, options)| {
                    let list: Vec<String> = options
                        .iter()
                        .map(|(idx, lp)| format!("{}:{lp:.6}", p.model.tagset.tag(*idx)))
                        .collect();
                    format!("{tok}\t{}", list.join(","))
                })
                .collect();
            blocks.push(lines.join("\n"));
        }
        let mut s = blocks.join("\n\n");
        s.push('\n');
        s
    } else {
        let tags = tag_sentences(&p.model, &p.sentences, &p.graphs, p.embeddings.as_ref())?;
        let tagged: Vec<TaggedSentence> = p
            .sentences
            .iter()
            .zip(&tags)
            .map(|(s, idxs)| {
                let names = idxs.iter().map(|i| p.model.tagset.tag(*i).to_string()).collect();
                TaggedSentence::new(s.clone(), names).expect("lengths match")
            })
            .collect();
        render_tagged(&tagged)
    };
    emit(args.out.as_deref(), &output)
}

fn cmd_parse(args: ParseArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let beam_ratio = cfg.resolve(args.beam_ratio, "beam_ratio", defaults::BEAM_PARSE)?;
    let goal: Option<Category> = match &args.goal {
        Some(g) => Some(parse_category(g)?),
        None => None,
    };
    let Some(p) = load_pipeline(
        &args.model,
        &args.input,
        args.lexicon.as_deref(),
        args.embeddings.as_deref(),
    )?
    else {
        emit(args.out.as_deref(), "")?;
        eprintln!("parsed 0/0 sentences (100.00%)");
        return Ok(());
    };

    let kbest = kbest_sentences(
        &p.model,
        &p.sentences,
        &p.graphs,
        p.embeddings.as_ref(),
        beam_ratio,
    )?;

    // Candidate tag strings become categories; the reserved OTHER tag is
    // never a category.
    let tagset = &p.model.tagset;
    let jobs: Vec<usize> = (0..p.sentences.len()).collect();
    let lines: Vec<String> = par::map(&jobs, |&i| {
        let candidates: Vec<Vec<Candidate>> = kbest[i]
            .iter()
            .map(|options| {
                options
                    .iter()
                    .filter(|(idx, _)| tagset.tag(*idx) != OTHER_TAG)
                    .filter_map(|(idx, lp)| {
                        parse_category(tagset.tag(*idx)).ok().map(|category| Candidate {
                            category,
                            log_prob: *lp,
                        })
                    })
                    .collect()
            })
            .collect();
        match cky_parse(&candidates, goal.as_ref()) {
            Some(deriv) => deriv.render(&p.sentences[i]),
            None => "NOPARSE".to_string(),
        }
    });

    let parsed = lines.iter().filter(|l| *l != "NOPARSE").count();
    let total = lines.len();
    let mut output = lines.join("\n");
    output.push('\n');
    emit(args.out.as_deref(), &output)?;
    eprintln!(
        "parsed {parsed}/{total} sentences ({:.2}%)",
        100.0 * parsed as f64 / total as f64
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gold = load_tagged(&args.gold)?;
    let pred = load_tagged(&args.pred)?;
    if gold.len() != pred.len() {
        bail!(
            "file mismatch: {} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        );
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut exact_sentences = 0usize;
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        if g.len() != p.len() || g.sentence() != p.sentence() {
            bail!("sentence {} diverges between gold and predicted files", i + 1);
        }
        let mut all = true;
        for (gt, pt) in g.tags().iter().zip(p.tags()) {
            total += 1;
            // OTHER predictions always count as errors.
            if gt == pt && pt != OTHER_TAG {
                correct += 1;
            } else {
                all = false;
            }
        }
        if all {
            exact_sentences += 1;
        }
    }
    if total == 0 {
        bail!("no tokens to evaluate");
    }
    println!("TAG {:.2}", 100.0 * correct as f64 / total as f64);
    println!(
        "SENT {:.2}",
        100.0 * exact_sentences as f64 / gold.len() as f64
    );
    // Labeled-F dependency scoring is out of scope: it requires
    // converting derivations to dependencies with the external C&C
    // "generate" tool.
    Ok(())
}

fn cmd_inspect_graph(args: InspectGraphArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let flags = args.graph_flags.resolve(&cfg)?;
    let sentences = load_raw(&args.input)?;
    let lexicon = load_lexicon(&args.lexicon)?;
    let mut first = true;
    for sentence in &sentences {
        if !first {
            println!();
        }
        first = false;
        let partition = partition_sentence(sentence, &lexicon);
        println!("{}", partition.render(sentence));
        match flags.graph {
            GraphMode::Chunk => {
                for (i, j, kind) in chunk_edges(&partition, flags.edge_types) {
                    println!("{i} {j} {kind}");
                }
            }
            GraphMode::Full => {
                for i in 0..sentence.len() {
                    for j in (i + 1)..sentence.len() {
                        println!("{i} {j} full");
                    }
                }
            }
            GraphMode::None => {}
        }
    }
    Ok(())
}

