//! Pipeline commands behind the `cwl` binary. Each command is a plain
//! function over resolved options so tests can drive the pipeline
//! in-process; every output file is written to a temp sibling and renamed
//! only on success.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use cwl_core::asr::{softmax_word_confidence_from_tokens, train_asr, transcribe, SoftmaxStrategy, TrainHyperparams};
use cwl_core::confidence::{score_words, train_confidence, ConfTrainItem, LossPositions};
use cwl_core::datagen::{generate_corpus, read_manifest, write_manifest, CorpusSpec, Split};
use cwl_core::labeling::{align, label_words, AggregationStrategy};
use cwl_core::metrics::{evaluate, format_report_table, EvalReport, ScoredUtterance};
use cwl_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use cwl_core::model::{DecoderMask, HeadKind, ModelConfig};
use cwl_core::records::{read_jsonl, write_jsonl, DecodedRecord, LabeledRecord};
use cwl_core::tokenizer::VOCAB_SIZE;
use cwl_core::{ModelParams64, Utterance64};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_DROPOUT: f64 = 0.10;
pub const DEFAULT_N_BINS: usize = 20;
pub const DEFAULT_ASR_EPOCHS: usize = 14;
pub const DEFAULT_CONF_EPOCHS: usize = 4;

/// Optional defaults loaded from a JSON `--config` file; explicit flags
/// always win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_encoder_layers: Option<usize>,
    pub n_decoder_layers: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub dropout: Option<f64>,
    pub n_bins: Option<usize>,
    pub mask: Option<String>,
    pub aggregation: Option<String>,
    pub baseline: Option<String>,
    pub loss_positions: Option<String>,
    pub freeze_encoder: Option<bool>,
}

pub fn load_run_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Writes through a temp sibling and renames on success, so failures
/// leave no partial output file behind.
pub fn write_atomic(path: &Path, write_fn: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| anyhow!("output path {} has no file name", path.display()))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    let result = (|| -> anyhow::Result<()> {
        let mut writer = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        write_fn(&mut writer)?;
        writer.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn load_manifest(path: &Path) -> anyhow::Result<Vec<Utterance64>> {
    let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    Ok(read_manifest(BufReader::new(file))?)
}

fn load_labeled(path: &Path) -> anyhow::Result<Vec<LabeledRecord>> {
    let file = File::open(path).with_context(|| format!("opening records {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(file).lines(), 1)?)
}

fn load_model(path: &Path) -> anyhow::Result<ModelParams64> {
    let mut file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(load_checkpoint(&mut file)?)
}

fn manifest_index(corpus: Vec<Utterance64>) -> BTreeMap<String, Utterance64> {
    corpus.into_iter().map(|u| (u.id.clone(), u)).collect()
}

fn write_losses(path: &Path, losses: &[f64]) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        for (step, loss) in losses.iter().enumerate() {
            writeln!(w, "{step}\t{loss}")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------
// gen

pub struct GenOpts {
    pub spec: CorpusSpec,
    pub out: PathBuf,
}

pub fn cmd_gen(opts: &GenOpts) -> anyhow::Result<()> {
    let corpus = generate_corpus::<f64>(&opts.spec)?;
    write_atomic(&opts.out, |w| Ok(write_manifest(&corpus, w)?))?;
    let counts = |s: Split| corpus.iter().filter(|u| u.split == s).count();
    println!(
        "wrote {} utterances to {} (asr_train {}, conf_train {}, eval {})",
        corpus.len(),
        opts.out.display(),
        counts(Split::AsrTrain),
        counts(Split::ConfTrain),
        counts(Split::Eval),
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train-asr

#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            max_seq_len: 128,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

pub struct TrainAsrOpts {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub losses_out: Option<PathBuf>,
    pub seed: u64,
    pub hp: TrainHyperparams,
    pub dims: ModelDims,
}

pub fn cmd_train_asr(opts: &TrainAsrOpts) -> anyhow::Result<()> {
    let corpus = load_manifest(&opts.manifest)?;
    let train: Vec<Utterance64> = corpus.into_iter().filter(|u| u.split == Split::AsrTrain).collect();
    let first = train
        .first()
        .ok_or_else(|| anyhow!("manifest has no asr_train utterances"))?;
    let feat_dim = first.frames.shape()[1];
    let config = ModelConfig {
        vocab_size: VOCAB_SIZE,
        feat_dim,
        d_model: opts.dims.d_model,
        n_heads: opts.dims.n_heads,
        n_encoder_layers: opts.dims.n_encoder_layers,
        n_decoder_layers: opts.dims.n_decoder_layers,
        max_seq_len: opts.dims.max_seq_len,
        dropout_rate: opts.dims.dropout,
        head_kind: HeadKind::Lm,
        decoder_mask: DecoderMask::Causal,
    };
    let (model, losses) = train_asr(&train, &config, &opts.hp, opts.seed)?;
    write_atomic(&opts.out, |w| Ok(save_checkpoint(&model, w)?))?;
    if let Some(path) = &opts.losses_out {
        write_losses(path, &losses)?;
    }
    println!(
        "trained on {} utterances for {} steps (final loss {:.4}); checkpoint {}",
        train.len(),
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        opts.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// decode

pub struct DecodeOpts {
    pub ckpt: PathBuf,
    pub manifest: PathBuf,
    /// None decodes every split.
    pub split: Option<Split>,
    pub out: PathBuf,
}

pub fn cmd_decode(opts: &DecodeOpts) -> anyhow::Result<()> {
    let model = load_model(&opts.ckpt)?;
    if model.config().head_kind != HeadKind::Lm {
        bail!(
            "checkpoint {} holds a confidence head; decode needs the ASR (LM-head) checkpoint",
            opts.ckpt.display()
        );
    }
    let corpus = load_manifest(&opts.manifest)?;
    let mut records = Vec::new();
    for u in corpus {
        if opts.split.is_some_and(|s| s != u.split) {
            continue;
        }
        let hyp = transcribe(&model, &u.frames)?;
        records.push(DecodedRecord {
            id: u.id,
            split: u.split,
            reference: u.text,
            hypothesis: hyp.text(),
            token_ids: hyp.token_ids,
            token_probs: hyp.token_probs,
            word_final_indices: hyp.word_final_indices,
            truncated: hyp.truncated,
        });
    }
    if records.is_empty() {
        bail!("no utterances matched the requested split");
    }
    write_atomic(&opts.out, |w| Ok(write_jsonl(w, &records)?))?;
    println!("decoded {} utterances to {}", records.len(), opts.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// label

pub struct LabelOpts {
    pub records: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_label(opts: &LabelOpts) -> anyhow::Result<()> {
    let file = File::open(&opts.records).with_context(|| format!("opening records {}", opts.records.display()))?;
    let decoded: Vec<DecodedRecord> = read_jsonl(BufReader::new(file).lines(), 1)?;
    let index = manifest_index(load_manifest(&opts.manifest)?);
    let mut labeled = Vec::with_capacity(decoded.len());
    for rec in decoded {
        let utterance = index
            .get(&rec.id)
            .ok_or_else(|| anyhow!("utterance {} not in manifest", rec.id))?;
        if utterance.text != rec.reference {
            bail!("utterance {}: reference text disagrees with the manifest", rec.id);
        }
        let ref_words: Vec<&str> = rec.reference.split_whitespace().collect();
        let hyp_words: Vec<&str> = rec.hypothesis.split_whitespace().collect();
        if hyp_words.len() != rec.word_final_indices.len() {
            bail!(
                "utterance {}: {} hypothesis words but {} word boundaries",
                rec.id,
                hyp_words.len(),
                rec.word_final_indices.len()
            );
        }
        let alignment = align(&ref_words, &hyp_words);
        let lh = label_words(&alignment, &hyp_words)?;
        labeled.push(LabeledRecord {
            id: rec.id,
            split: rec.split,
            reference: rec.reference,
            hypothesis: rec.hypothesis,
            token_ids: rec.token_ids,
            token_probs: rec.token_probs,
            word_final_indices: rec.word_final_indices,
            truncated: rec.truncated,
            words: lh.words,
            labels: lh.labels.iter().map(|&b| u8::from(b)).collect(),
            deletions: lh.deletions,
            word_confidences: None,
        });
    }
    write_atomic(&opts.out, |w| Ok(write_jsonl(w, &labeled)?))?;
    println!("labeled {} records to {}", labeled.len(), opts.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// train-conf

pub struct TrainConfOpts {
    pub asr_ckpt: PathBuf,
    pub records: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub losses_out: Option<PathBuf>,
    pub mask: DecoderMask,
    pub freeze_encoder: bool,
    pub seed: u64,
    pub hp: TrainHyperparams,
    pub loss_positions: LossPositions,
}

fn conf_items(records: &[LabeledRecord], index: &BTreeMap<String, Utterance64>) -> anyhow::Result<Vec<ConfTrainItem<f64>>> {
    records
        .iter()
        .map(|rec| {
            let utterance = index
                .get(&rec.id)
                .ok_or_else(|| anyhow!("utterance {} not in manifest", rec.id))?;
            Ok(ConfTrainItem {
                frames: utterance.frames.clone(),
                tokens: rec.token_ids.clone(),
                word_final_indices: rec.word_final_indices.clone(),
                labels: rec.labels.iter().map(|&l| l == 1).collect(),
            })
        })
        .collect()
}

pub fn cmd_train_conf(opts: &TrainConfOpts) -> anyhow::Result<()> {
    let asr = load_model(&opts.asr_ckpt)?;
    let records = load_labeled(&opts.records)?;
    let index = manifest_index(load_manifest(&opts.manifest)?);
    let items = conf_items(&records, &index)?;
    let (model, losses) = train_confidence(
        &asr,
        &items,
        opts.mask,
        opts.freeze_encoder,
        &opts.hp,
        opts.loss_positions,
        opts.seed,
    )?;
    write_atomic(&opts.out, |w| Ok(save_checkpoint(&model, w)?))?;
    if let Some(path) = &opts.losses_out {
        write_losses(path, &losses)?;
    }
    println!(
        "fine-tuned confidence head on {} records for {} steps (final loss {:.4}); checkpoint {}",
        records.len(),
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        opts.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval

/// Where word confidences come from: the ASR's own softmax probabilities
/// or a fine-tuned confidence checkpoint.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    Softmax(SoftmaxStrategy),
    Conf {
        ckpt: PathBuf,
        aggregation: AggregationStrategy,
    },
}

impl ScoreSource {
    pub fn label(&self) -> String {
        match self {
            ScoreSource::Softmax(s) => format!("softmax:{}", format!("{s:?}").to_lowercase()),
            ScoreSource::Conf { aggregation, .. } => {
                format!("conf:{}", format!("{aggregation:?}").to_lowercase())
            }
        }
    }
}

impl FromStr for ScoreSource {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> anyhow::Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["softmax", strategy] => Ok(ScoreSource::Softmax(SoftmaxStrategy::from_str(strategy)?)),
            ["conf", middle @ .., aggregation] if !middle.is_empty() => Ok(ScoreSource::Conf {
                ckpt: PathBuf::from(middle.join(":")),
                aggregation: AggregationStrategy::from_str(aggregation)?,
            }),
            _ => bail!("score source must be softmax:<strategy> or conf:<checkpoint>:<aggregation>, got '{s}'"),
        }
    }
}

pub struct EvalOpts {
    pub records: PathBuf,
    pub score: ScoreSource,
    /// Needed for conf sources (audio comes from the manifest).
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub n_bins: usize,
    /// Optionally re-emit the labeled records with word confidences filled.
    pub scored_out: Option<PathBuf>,
}

fn score_record(
    rec: &LabeledRecord,
    score: &ScoreSource,
    conf_model: Option<&ModelParams64>,
    index: Option<&BTreeMap<String, Utterance64>>,
) -> anyhow::Result<Vec<f64>> {
    if rec.words.is_empty() {
        return Ok(Vec::new());
    }
    match score {
        ScoreSource::Softmax(strategy) => Ok(softmax_word_confidence_from_tokens(
            &rec.token_ids,
            &rec.token_probs,
            &rec.word_final_indices,
            *strategy,
        )?),
        ScoreSource::Conf { aggregation, .. } => {
            let model = conf_model.expect("conf model loaded");
            let utterance = index
                .expect("manifest loaded")
                .get(&rec.id)
                .ok_or_else(|| anyhow!("utterance {} not in manifest", rec.id))?;
            Ok(score_words(
                model,
                &utterance.frames,
                &rec.token_ids,
                &rec.word_final_indices,
                *aggregation,
            )?)
        }
    }
}

fn scored_utterances(
    records: &[LabeledRecord],
    score: &ScoreSource,
    conf_model: Option<&ModelParams64>,
    index: Option<&BTreeMap<String, Utterance64>>,
) -> anyhow::Result<(Vec<ScoredUtterance<f64>>, Vec<Vec<f64>>)> {
    let mut scored = Vec::with_capacity(records.len());
    let mut all_scores = Vec::with_capacity(records.len());
    for rec in records {
        let scores = score_record(rec, score, conf_model, index)?;
        scored.push(ScoredUtterance {
            scores: scores.clone(),
            labels: rec.labels.iter().map(|&l| l == 1).collect(),
            reference_words: rec.reference.split_whitespace().count(),
            deletions: rec.deletions,
        });
        all_scores.push(scores);
    }
    Ok((scored, all_scores))
}

pub fn cmd_eval(opts: &EvalOpts) -> anyhow::Result<EvalReport> {
    let records = load_labeled(&opts.records)?;
    let conf_model = match &opts.score {
        ScoreSource::Conf { ckpt, .. } => {
            let model = load_model(ckpt)?;
            if model.config().head_kind != HeadKind::Confidence {
                bail!(
                    "checkpoint {} holds an LM head; eval with a conf source needs a confidence checkpoint",
                    ckpt.display()
                );
            }
            Some(model)
        }
        ScoreSource::Softmax(_) => None,
    };
    let index = match &opts.score {
        ScoreSource::Conf { .. } => {
            let path = opts
                .manifest
                .as_ref()
                .ok_or_else(|| anyhow!("conf score sources need --manifest for the audio frames"))?;
            Some(manifest_index(load_manifest(path)?))
        }
        ScoreSource::Softmax(_) => None,
    };
    let (scored, all_scores) = scored_utterances(&records, &opts.score, conf_model.as_ref(), index.as_ref())?;
    let report = evaluate(&scored, opts.n_bins, &opts.score.label())?;
    write_atomic(&opts.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    if let Some(path) = &opts.scored_out {
        let mut rescored = records;
        for (rec, scores) in rescored.iter_mut().zip(all_scores) {
            rec.word_confidences = Some(scores);
        }
        write_atomic(path, |w| Ok(write_jsonl(w, &rescored)?))?;
    }
    print!("{}", format_report_table(&[&report]));
    println!("report written to {}", opts.out.display());
    Ok(report)
}

// ---------------------------------------------------------------------
// ablate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub causal: EvalReport,
    pub non_causal: EvalReport,
    /// causal minus non-causal, per metric; the sign is recorded, not
    /// asserted.
    pub gap: BTreeMap<String, f64>,
}

pub struct AblateOpts {
    pub asr_ckpt: PathBuf,
    pub train_records: PathBuf,
    pub eval_records: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub hp: TrainHyperparams,
    pub loss_positions: LossPositions,
    pub freeze_encoder: bool,
    pub n_bins: usize,
    pub aggregation: AggregationStrategy,
}

pub fn cmd_ablate(opts: &AblateOpts) -> anyhow::Result<AblationReport> {
    let asr = load_model(&opts.asr_ckpt)?;
    let train_records = load_labeled(&opts.train_records)?;
    let eval_records = load_labeled(&opts.eval_records)?;
    let index = manifest_index(load_manifest(&opts.manifest)?);
    let items = conf_items(&train_records, &index)?;

    let mut reports = Vec::new();
    for mask in [DecoderMask::Causal, DecoderMask::NonCausal] {
        let (model, _) = train_confidence(
            &asr,
            &items,
            mask,
            opts.freeze_encoder,
            &opts.hp,
            opts.loss_positions,
            opts.seed,
        )?;
        let source = ScoreSource::Conf {
            ckpt: PathBuf::new(),
            aggregation: opts.aggregation,
        };
        let (scored, _) = scored_utterances(&eval_records, &source, Some(&model), Some(&index))?;
        let label = match mask {
            DecoderMask::Causal => "conf:causal",
            DecoderMask::NonCausal => "conf:non_causal",
        };
        reports.push(evaluate(&scored, opts.n_bins, label)?);
    }
    let non_causal = reports.pop().expect("two reports");
    let causal = reports.pop().expect("two reports");
    let mut gap = BTreeMap::new();
    gap.insert("nce".to_string(), causal.nce - non_causal.nce);
    gap.insert("auc_roc".to_string(), causal.auc_roc - non_causal.auc_roc);
    gap.insert("auc_pr_pos".to_string(), causal.auc_pr_pos - non_causal.auc_pr_pos);
    gap.insert("auc_pr_neg".to_string(), causal.auc_pr_neg - non_causal.auc_pr_neg);
    let report = AblationReport {
        causal,
        non_causal,
        gap,
    };
    write_atomic(&opts.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    print!("{}", format_report_table(&[&report.causal, &report.non_causal]));
    for (metric, delta) in &report.gap {
        println!("gap[{metric}] = {delta:+.4} (causal - non_causal)");
    }
    println!("ablation report written to {}", opts.out.display());
    Ok(report)
}
