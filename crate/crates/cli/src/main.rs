//! `cwl` — word-level confidence estimation pipeline over a synthetic
//! speech-like corpus: gen, train-asr, decode, label, train-conf, eval,
//! ablate.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};

use cwl_cli::{
    cmd_ablate, cmd_decode, cmd_eval, cmd_gen, cmd_label, cmd_train_asr, cmd_train_conf,
    load_run_config, AblateOpts, DecodeOpts, EvalOpts, GenOpts, LabelOpts, ModelDims, RunConfig,
    ScoreSource, TrainAsrOpts, TrainConfOpts, DEFAULT_ASR_EPOCHS, DEFAULT_BATCH_SIZE,
    DEFAULT_CONF_EPOCHS, DEFAULT_DROPOUT, DEFAULT_LR, DEFAULT_N_BINS,
};
use cwl_core::asr::TrainHyperparams;
use cwl_core::confidence::LossPositions;
use cwl_core::datagen::{CorpusSpec, Split};
use cwl_core::labeling::AggregationStrategy;
use cwl_core::model::DecoderMask;

#[derive(Parser)]
#[command(
    name = "cwl",
    version,
    about = "Word-level confidence estimation lab: synthetic corpus, toy ASR, alignment labels, confidence fine-tuning, calibrated metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonTrainFlags {
    /// JSON file with default values for the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate (desk-scale default 1e-3; 5e-6 with --epochs 1
    /// reproduces the large-model fine-tuning recipe)
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl CommonTrainFlags {
    fn resolve(&self, default_epochs: usize) -> anyhow::Result<(RunConfig, u64, TrainHyperparams)> {
        let cfg = load_run_config(self.config.as_deref())?;
        let seed = self.seed.or(cfg.seed).unwrap_or(0);
        let hp = TrainHyperparams {
            lr: self.lr.or(cfg.lr).unwrap_or(DEFAULT_LR),
            epochs: self.epochs.or(cfg.epochs).unwrap_or(default_epochs),
            batch_size: self.batch_size.or(cfg.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
        };
        Ok((cfg, seed, hp))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus manifest
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_utterances: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        word_len_min: Option<usize>,
        #[arg(long)]
        word_len_max: Option<usize>,
        #[arg(long)]
        sentence_len_min: Option<usize>,
        #[arg(long)]
        sentence_len_max: Option<usize>,
        #[arg(long)]
        confusable_fraction: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        frames_per_token: Option<usize>,
        #[arg(long)]
        feat_dim: Option<usize>,
    },
    /// Train the toy ASR on the asr_train split
    TrainAsr {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss log (tab-separated step and loss)
        #[arg(long)]
        losses: Option<PathBuf>,
        #[command(flatten)]
        train: CommonTrainFlags,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        n_heads: Option<usize>,
        #[arg(long)]
        n_encoder_layers: Option<usize>,
        #[arg(long)]
        n_decoder_layers: Option<usize>,
        #[arg(long)]
        max_seq_len: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Greedy-decode hypotheses for one split (or all)
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// asr-train | conf-train | eval | all
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align hypotheses against references and attach binary labels
    Label {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the confidence head from an ASR checkpoint
    TrainConf {
        #[arg(long)]
        asr_ckpt: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        losses: Option<PathBuf>,
        /// causal | non-causal
        #[arg(long, default_value = "causal")]
        mask: String,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        freeze_encoder: bool,
        /// word-final | all-tokens
        #[arg(long)]
        loss_positions: Option<String>,
        #[command(flatten)]
        train: CommonTrainFlags,
    },
    /// Compute the metric report for one score source
    Eval {
        #[arg(long)]
        records: PathBuf,
        /// softmax:<min|mean|sum|product|max> or conf:<ckpt>:<last|min|mean|product|max>
        #[arg(long)]
        score: String,
        /// Required for conf score sources (audio frames)
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_bins: Option<usize>,
        /// Re-emit labeled records with word confidences filled
        #[arg(long)]
        scored_out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train causal and non-causal confidence models identically and
    /// report all four metrics for each
    Ablate {
        #[arg(long)]
        asr_ckpt: PathBuf,
        #[arg(long)]
        train_records: PathBuf,
        #[arg(long)]
        eval_records: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_bins: Option<usize>,
        /// last | min | mean | product | max
        #[arg(long)]
        aggregation: Option<String>,
        #[arg(long)]
        loss_positions: Option<String>,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        freeze_encoder: bool,
        #[command(flatten)]
        train: CommonTrainFlags,
    },
}

fn parse_split(s: &str) -> anyhow::Result<Option<Split>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        Ok(Some(Split::from_str(s)?))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen {
            out,
            seed,
            n_utterances,
            vocab_size,
            word_len_min,
            word_len_max,
            sentence_len_min,
            sentence_len_max,
            confusable_fraction,
            noise_sigma,
            frames_per_token,
            feat_dim,
        } => {
            let d = CorpusSpec::default();
            let spec = CorpusSpec {
                vocab_size: vocab_size.unwrap_or(d.vocab_size),
                word_len_min: word_len_min.unwrap_or(d.word_len_min),
                word_len_max: word_len_max.unwrap_or(d.word_len_max),
                confusable_fraction: confusable_fraction.unwrap_or(d.confusable_fraction),
                sentence_len_min: sentence_len_min.unwrap_or(d.sentence_len_min),
                sentence_len_max: sentence_len_max.unwrap_or(d.sentence_len_max),
                noise_sigma: noise_sigma.unwrap_or(d.noise_sigma),
                frames_per_token: frames_per_token.unwrap_or(d.frames_per_token),
                feat_dim: feat_dim.unwrap_or(d.feat_dim),
                n_utterances: n_utterances.unwrap_or(d.n_utterances),
                seed: seed.unwrap_or(d.seed),
            };
            cmd_gen(&GenOpts { spec, out })
        }
        Command::TrainAsr {
            manifest,
            out,
            losses,
            train,
            d_model,
            n_heads,
            n_encoder_layers,
            n_decoder_layers,
            max_seq_len,
            dropout,
        } => {
            let (cfg, seed, hp) = train.resolve(DEFAULT_ASR_EPOCHS)?;
            let dd = ModelDims::default();
            let dims = ModelDims {
                d_model: d_model.or(cfg.d_model).unwrap_or(dd.d_model),
                n_heads: n_heads.or(cfg.n_heads).unwrap_or(dd.n_heads),
                n_encoder_layers: n_encoder_layers.or(cfg.n_encoder_layers).unwrap_or(dd.n_encoder_layers),
                n_decoder_layers: n_decoder_layers.or(cfg.n_decoder_layers).unwrap_or(dd.n_decoder_layers),
                max_seq_len: max_seq_len.or(cfg.max_seq_len).unwrap_or(dd.max_seq_len),
                dropout: dropout.or(cfg.dropout).unwrap_or(DEFAULT_DROPOUT),
            };
            cmd_train_asr(&TrainAsrOpts {
                manifest,
                out,
                losses_out: losses,
                seed,
                hp,
                dims,
            })
        }
        Command::Decode {
            ckpt,
            manifest,
            split,
            out,
        } => cmd_decode(&DecodeOpts {
            ckpt,
            manifest,
            split: parse_split(&split)?,
            out,
        }),
        Command::Label { records, manifest, out } => cmd_label(&LabelOpts { records, manifest, out }),
        Command::TrainConf {
            asr_ckpt,
            records,
            manifest,
            out,
            losses,
            mask,
            freeze_encoder,
            loss_positions,
            train,
        } => {
            let (cfg, seed, hp) = train.resolve(DEFAULT_CONF_EPOCHS)?;
            let mask = DecoderMask::from_str(&mask)?;
            let positions = loss_positions
                .or(cfg.loss_positions)
                .map(|s| LossPositions::from_str(&s))
                .transpose()?
                .unwrap_or(LossPositions::WordFinal);
            cmd_train_conf(&TrainConfOpts {
                asr_ckpt,
                records,
                manifest,
                out,
                losses_out: losses,
                mask,
                freeze_encoder: cfg.freeze_encoder.map_or(freeze_encoder, |c| freeze_encoder && c),
                seed,
                hp,
                loss_positions: positions,
            })
        }
        Command::Eval {
            records,
            score,
            manifest,
            out,
            n_bins,
            scored_out,
            config,
        } => {
            let cfg = load_run_config(config.as_deref())?;
            cmd_eval(&EvalOpts {
                records,
                score: ScoreSource::from_str(&score)?,
                manifest,
                out,
                n_bins: n_bins.or(cfg.n_bins).unwrap_or(DEFAULT_N_BINS),
                scored_out,
            })?;
            Ok(())
        }
        Command::Ablate {
            asr_ckpt,
            train_records,
            eval_records,
            manifest,
            out,
            n_bins,
            aggregation,
            loss_positions,
            freeze_encoder,
            train,
        } => {
            let (cfg, seed, hp) = train.resolve(DEFAULT_CONF_EPOCHS)?;
            let aggregation = aggregation
                .or(cfg.aggregation)
                .map(|s| AggregationStrategy::from_str(&s))
                .transpose()?
                .unwrap_or(AggregationStrategy::Last);
            let positions = loss_positions
                .or(cfg.loss_positions)
                .map(|s| LossPositions::from_str(&s))
                .transpose()?
                .unwrap_or(LossPositions::WordFinal);
            cmd_ablate(&AblateOpts {
                asr_ckpt,
                train_records,
                eval_records,
                manifest,
                out,
                seed,
                hp,
                loss_positions: positions,
                freeze_encoder,
                n_bins: n_bins.or(cfg.n_bins).unwrap_or(DEFAULT_N_BINS),
                aggregation,
            })?;
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
