//! Command-line interface: data generation, training, evaluation, decoding,
//! latency arithmetic, and alignment extraction.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::decode::{beam_decode, theoretical_latency};
use crate::model::{Checkpoint, HeadKind, InitScope, Mode, Model, ModelConfig, Variant};
use crate::rnnt::{viterbi_align, RnntLattice};
use crate::sot::alignment_from_viterbi;

use super::data::{Dataset, Split};
use super::eval::{evaluate, evaluate_mt};
use super::gen::{gen_conversation, gen_toy_asr, gen_toy_reorder_mt, mt_word_boundaries, MtMode};
use super::train::{forward_record, record_targets, train, RecordTargets, RunConfig, Task};
use super::vocab::ids_to_sot;
use crate::sot::Speaker;

#[derive(Parser)]
#[command(
    name = "jstar",
    version,
    about = "Streaming fast/slow cascaded transducer lab: joint recognition and translation on synthetic tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    #[value(name = "toy_asr")]
    ToyAsr,
    #[value(name = "toy_mt_reorder")]
    ToyMtReorder,
    #[value(name = "toy_conversation")]
    ToyConversation,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::ToyAsr => Task::ToyAsr,
            TaskArg::ToyMtReorder => Task::ToyMtReorder,
            TaskArg::ToyConversation => Task::ToyConversation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "swap_pairs")]
    SwapPairs,
    #[value(name = "copy")]
    Copy,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Asr,
    St,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/dev/test splits in one JSONL file).
    GenData {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Number of training records; dev and test each get a tenth.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Distinct letters for the recognition / reorder tasks.
        #[arg(long, default_value_t = 10)]
        vocab: usize,
        /// Turn-overlap probability for conversations.
        #[arg(long, default_value_t = 0.2)]
        overlap: f32,
        /// Reorder-task target construction.
        #[arg(long, value_enum, default_value = "swap_pairs")]
        mode: ModeArg,
    },
    /// Train per a JSON run configuration and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Initialize parameters from this checkpoint before training.
        #[arg(long, requires = "init_scope")]
        init_from: Option<PathBuf>,
        /// Which parameter groups to copy: fast, slow, or fast+slow.
        #[arg(long)]
        init_scope: Option<String>,
        /// Optional JSONL step log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split and write a report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
    },
    /// Decode records and emit line-delimited results on stdout.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Run configuration; defaults to the desk-scale configuration
        /// matching the input records.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "st")]
        head: HeadArg,
        #[arg(long, default_value_t = 4)]
        max_symbols: usize,
    },
    /// Print the theoretical latency of a chunked streaming encoder.
    Latency {
        #[arg(long)]
        chunk_ms: f64,
        #[arg(long)]
        rc_ms: f64,
    },
    /// Emit best-path word alignments for reorder-task records.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { task, n, seed, out, vocab, overlap, mode } => {
            let dataset = match task {
                TaskArg::ToyAsr => gen_toy_asr(n, vocab, seed),
                TaskArg::ToyMtReorder => gen_toy_reorder_mt(
                    n,
                    vocab,
                    seed,
                    match mode {
                        ModeArg::SwapPairs => MtMode::SwapPairs,
                        ModeArg::Copy => MtMode::Copy,
                    },
                ),
                TaskArg::ToyConversation => gen_conversation(n, seed, overlap),
            };
            dataset.save_jsonl(&out)?;
            println!(
                "wrote {} records ({} train / {} dev / {} test) to {}",
                dataset.records.len(),
                dataset.split(Split::Train).len(),
                dataset.split(Split::Dev).len(),
                dataset.split(Split::Test).len(),
                out.display()
            );
        }
        Command::Train { config, out, init_from, init_scope, log } => {
            let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
            let dataset = Dataset::load_jsonl(&cfg.data)?;
            let init_ckpt = init_from.map(Checkpoint::load).transpose()?;
            let scope = init_scope
                .map(|s| s.parse::<InitScope>().map_err(|e| anyhow::anyhow!(e)))
                .transpose()?;
            let init = match (&init_ckpt, scope) {
                (Some(ckpt), Some(scope)) => Some((ckpt, scope)),
                _ => None,
            };
            let outcome = train(&dataset, &cfg.model, &cfg.optim, cfg.task, init)?;
            outcome.model.save_checkpoint(&out)?;
            if let Some(log_path) = log {
                let mut buf = String::new();
                for entry in &outcome.log {
                    buf.push_str(&serde_json::to_string(entry)?);
                    buf.push('\n');
                }
                fs::write(log_path, buf)?;
            }
            let last = outcome.log.last().expect("at least one step");
            println!(
                "trained {} steps: loss {:.4} (asr {:.4}, st {:.4}); checkpoint at {}",
                last.step,
                last.loss,
                last.loss_asr,
                last.loss_st,
                out.display()
            );
        }
        Command::Eval { config, ckpt, report, beam } => {
            let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
            let dataset = Dataset::load_jsonl(&cfg.data)?;
            let model = load_model(&cfg.model, &ckpt)?;
            let test = dataset.split(Split::Test);
            let json = match cfg.task {
                Task::ToyMtReorder => {
                    let r = evaluate_mt(&model, &test, beam, 4)?;
                    println!(
                        "bleu {:.2}  exact {:.1}%  src-wer {:.2}%  align {:.1}%",
                        r.bleu,
                        100.0 * r.exact_acc,
                        100.0 * r.src_wer,
                        100.0 * r.align_acc
                    );
                    serde_json::to_string_pretty(&r)?
                }
                _ => {
                    let r = evaluate(&model, &test, beam, 4)?;
                    println!(
                        "wer_self {:.2}%  wer_other {:.2}%  sa_wer {:.2}%  bleu {:.2}/{:.2}  p50 {:.0}/{:.0} ms",
                        100.0 * r.wer_self,
                        100.0 * r.wer_other,
                        100.0 * r.sa_wer,
                        r.bleu_fwd,
                        r.bleu_rev,
                        r.p50_first_ms,
                        r.p50_last_ms
                    );
                    serde_json::to_string_pretty(&r)?
                }
            };
            fs::write(&report, json)?;
            println!("report written to {}", report.display());
        }
        Command::Decode { ckpt, input, beam, config, head, max_symbols } => {
            let dataset = Dataset::load_jsonl(&input)?;
            let model_cfg = resolve_config(config.as_deref(), &dataset)?;
            let model = load_model(&model_cfg, &ckpt)?;
            let kind = match head {
                HeadArg::Asr => HeadKind::Asr,
                HeadArg::St => HeadKind::St,
            };
            for record in &dataset.records {
                let result = if record.frames.is_some() {
                    let features = record.features()?;
                    beam_decode(&model.feature_head(kind, &features)?, beam, max_symbols)
                } else {
                    let RecordTargets::Chars { chars, .. } =
                        record_targets(Task::ToyMtReorder, record)?
                    else {
                        unreachable!("char records produce char targets")
                    };
                    beam_decode(&model.char_head(kind, &chars)?, beam, max_symbols)
                };
                let top = &result.nbest[0];
                let sot = ids_to_sot(&top.tokens);
                let line = serde_json::json!({
                    "id": record.id,
                    "tokens": top.tokens,
                    "emit_ms": result.events.iter().map(|e| e.emit_time_ms).collect::<Vec<_>>(),
                    "finalize_ms": result.events.iter().map(|e| e.finalize_time_ms).collect::<Vec<_>>(),
                    "text": sot.text(),
                    "text_self": sot.words_of(Speaker::Wearer).join(" "),
                    "text_other": sot.words_of(Speaker::Partner).join(" "),
                });
                println!("{line}");
            }
        }
        Command::Latency { chunk_ms, rc_ms } => {
            println!("{}", theoretical_latency(chunk_ms, rc_ms));
        }
        Command::Align { ckpt, input, config } => {
            let dataset = Dataset::load_jsonl(&input)?;
            let model_cfg = resolve_config(config.as_deref(), &dataset)?;
            if model_cfg.variant != Variant::MtChar {
                anyhow::bail!("align expects a character-input translation model");
            }
            let model = load_model(&model_cfg, &ckpt)?;
            for record in &dataset.records {
                let RecordTargets::Chars { chars, tgt, .. } =
                    record_targets(Task::ToyMtReorder, record)?
                else {
                    anyhow::bail!("record {} has no character stream", record.id);
                };
                let out = forward_record(&model, Task::ToyMtReorder, record, Mode::Eval)?;
                let lattice = RnntLattice::new(out.graph.value(out.st_lattice).clone())?;
                let path = viterbi_align(&lattice, &tgt)?;
                let boundaries = mt_word_boundaries(record.words.len(), chars.len());
                let piece_to_word = super::vocab::piece_to_word_map(
                    record.translation_words.iter().map(|w| w.text.as_str()),
                );
                let alignment = alignment_from_viterbi(&path, &boundaries, &piece_to_word)?;
                let line = serde_json::json!({
                    "id": record.id,
                    "pairs": alignment.pairs,
                    "emission_chars": path.label_frames().iter().map(|t| t - 1).collect::<Vec<_>>(),
                });
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn load_model(cfg: &ModelConfig, ckpt_path: &std::path::Path) -> anyhow::Result<Model> {
    let mut model = Model::new(cfg.clone(), 0)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    model.restore_all(&ckpt)?;
    Ok(model)
}

fn resolve_config(
    config: Option<&std::path::Path>,
    dataset: &Dataset,
) -> anyhow::Result<ModelConfig> {
    if let Some(path) = config {
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        return Ok(cfg.model);
    }
    let Some(first) = dataset.records.first() else {
        anyhow::bail!("input dataset is empty");
    };
    Ok(if first.source_chars.is_some() {
        ModelConfig::desk_mt()
    } else {
        ModelConfig::desk_jstar()
    })
}
