//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use leaprec_core::data::time::parse_time;
use leaprec_core::data::IngestOptions;
use leaprec_core::eval::EvalConfig;
use leaprec_core::experiment::HistoryScope;
use leaprec_core::meta::{MetaMode, MetaOptimizer, TrainConfig};
use leaprec_core::model::{AttentionNorm, BprForm};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything a run needs. Unset paths stay `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub delimiter: u8,
    pub header: bool,
    pub cut: Option<String>,
    pub val_months: u32,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub extend_history_through_val: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            delimiter: b'\t',
            header: false,
            cut: None,
            val_months: 6,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            extend_history_through_val: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

fn delimiter_name(d: u8) -> String {
    match d {
        b'\t' => "tab".into(),
        b',' => "comma".into(),
        other => (other as char).to_string(),
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`], in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "data",
        "delimiter",
        "header",
        "cut",
        "val_months",
        "granularity_months",
        "inner_lr",
        "gtl_meta_lr",
        "otl_meta_lr",
        "inner_steps",
        "batch_size",
        "epochs",
        "patience",
        "gtl_dim",
        "otl_dim",
        "seed",
        "meta_optimizer",
        "meta_mode",
        "normalize_otl_meta",
        "literal_bpr",
        "literal_attn",
        "record_slice_params",
        "gnn_layers",
        "sa_layers",
        "max_seq_len",
        "dropout",
        "init_std",
        "positional_sa",
        "eval_ks",
        "eval_negatives",
        "eval_seed",
        "extend_history_through_val",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let t = &mut self.train;
        match key.trim() {
            "data" => self.data = Some(PathBuf::from(v)),
            "delimiter" => {
                self.delimiter = match v {
                    "tab" | "\\t" => b'\t',
                    "comma" => b',',
                    s if s.len() == 1 => s.as_bytes()[0],
                    _ => return Err(CliError::Usage(format!("invalid delimiter {v:?}"))),
                }
            }
            "header" => self.header = parse_bool(key, v)?,
            "cut" => {
                parse_time(v).map_err(|e| CliError::Usage(e.to_string()))?;
                self.cut = Some(v.to_string());
            }
            "val_months" => self.val_months = parse(key, v)?,
            "granularity_months" | "granularity" => t.granularity_months = parse(key, v)?,
            "inner_lr" | "alpha" => t.inner_lr = parse(key, v)?,
            "gtl_meta_lr" | "beta" => t.gtl_meta_lr = parse(key, v)?,
            "otl_meta_lr" | "eta" => t.otl_meta_lr = parse(key, v)?,
            "inner_steps" | "k" => t.inner_steps = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "gtl_dim" => t.gtl_dim = parse(key, v)?,
            "otl_dim" => t.otl_dim = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "meta_optimizer" => {
                t.meta_optimizer = match v {
                    "sgd" => MetaOptimizer::Sgd,
                    "adam" => MetaOptimizer::Adam,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "meta_optimizer must be sgd or adam, got {v:?}"
                        )))
                    }
                }
            }
            "meta_mode" => t.meta_mode = parse_meta_mode(v)?,
            "normalize_otl_meta" => t.normalize_otl_meta = parse_bool(key, v)?,
            "literal_bpr" => {
                t.bpr = if parse_bool(key, v)? {
                    BprForm::Literal
                } else {
                    BprForm::LogSigmoid
                }
            }
            "literal_attn" => {
                t.model.attention = if parse_bool(key, v)? {
                    AttentionNorm::Literal
                } else {
                    AttentionNorm::Softmax
                }
            }
            "record_slice_params" => t.record_slice_params = parse_bool(key, v)?,
            "gnn_layers" => t.model.gnn_layers = parse(key, v)?,
            "sa_layers" => t.model.sa_layers = parse(key, v)?,
            "max_seq_len" => t.model.max_seq_len = parse(key, v)?,
            "dropout" => t.model.dropout = parse(key, v)?,
            "init_std" => t.model.init_std = parse(key, v)?,
            "positional_sa" => t.model.positional_sa = parse_bool(key, v)?,
            "eval_ks" => {
                self.eval.ks = v
                    .split(',')
                    .map(|k| parse::<usize>(key, k.trim()))
                    .collect::<Result<_, _>>()?;
                if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
                    return Err(CliError::Usage("eval_ks must list positive cutoffs".into()));
                }
            }
            "eval_negatives" => self.eval.negatives = parse(key, v)?,
            "eval_seed" => self.eval.seed = parse(key, v)?,
            "extend_history_through_val" => self.extend_history_through_val = parse_bool(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` (or `key = value`) lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key=value", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Every key in [`RunConfig::KEYS`] order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put(
            "data",
            self.data
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("delimiter", delimiter_name(self.delimiter));
        put("header", self.header.to_string());
        put("cut", self.cut.clone().unwrap_or_default());
        put("val_months", self.val_months.to_string());
        put("granularity_months", t.granularity_months.to_string());
        put("inner_lr", t.inner_lr.to_string());
        put("gtl_meta_lr", t.gtl_meta_lr.to_string());
        put("otl_meta_lr", t.otl_meta_lr.to_string());
        put("inner_steps", t.inner_steps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("patience", t.patience.to_string());
        put("gtl_dim", t.gtl_dim.to_string());
        put("otl_dim", t.otl_dim.to_string());
        put("seed", t.seed.to_string());
        put(
            "meta_optimizer",
            match t.meta_optimizer {
                MetaOptimizer::Sgd => "sgd",
                MetaOptimizer::Adam => "adam",
            }
            .into(),
        );
        put("meta_mode", t.meta_mode.to_string());
        put("normalize_otl_meta", t.normalize_otl_meta.to_string());
        put("literal_bpr", (t.bpr == BprForm::Literal).to_string());
        put(
            "literal_attn",
            (t.model.attention == AttentionNorm::Literal).to_string(),
        );
        put("record_slice_params", t.record_slice_params.to_string());
        put("gnn_layers", t.model.gnn_layers.to_string());
        put("sa_layers", t.model.sa_layers.to_string());
        put("max_seq_len", t.model.max_seq_len.to_string());
        put("dropout", t.model.dropout.to_string());
        put("init_std", t.model.init_std.to_string());
        put("positional_sa", t.model.positional_sa.to_string());
        put(
            "eval_ks",
            self.eval
                .ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("eval_negatives", self.eval.negatives.to_string());
        put("eval_seed", self.eval.seed.to_string());
        put(
            "extend_history_through_val",
            self.extend_history_through_val.to_string(),
        );
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            delimiter: self.delimiter,
            has_header: self.header,
        }
    }

    pub fn history_scope(&self) -> HistoryScope {
        if self.extend_history_through_val {
            HistoryScope::ThroughValidation
        } else {
            HistoryScope::TrainOnly
        }
    }

    pub fn require_data(&self) -> Result<&Path, CliError> {
        let p = self.data.as_deref().ok_or_else(|| {
            CliError::Usage("no data path given (use --data or data = ...)".into())
        })?;
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "data file {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn cut_time(&self) -> Result<i64, CliError> {
        let c = self
            .cut
            .as_deref()
            .ok_or_else(|| CliError::Usage("no cut time given (use --cut or cut = ...)".into()))?;
        parse_time(c).map_err(|e| CliError::Usage(e.to_string()))
    }
}

pub fn parse_meta_mode(v: &str) -> Result<MetaMode, CliError> {
    match v {
        "leap" => Ok(MetaMode::Leap),
        "fomaml" => Ok(MetaMode::Fomaml),
        _ => Err(CliError::Usage(format!(
            "meta mode must be leap or fomaml, got {v:?}"
        ))),
    }
}
