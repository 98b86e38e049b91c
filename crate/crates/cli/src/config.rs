//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [model]
//! name = hlg-tiny        # quotes around values are optional
//! classes = 4
//! ```
//!
//! Sections and keys are fixed (see [`KEYS`]); anything else is rejected with
//! the offending line number. Only `[model] name` is required.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lgseg_harness::{AugmentConfig, InferMode, OptimizerKind, Schedule, TrainRecipe};
use lgseg_models::{
    DecoderKind, GlobalBias, HlgConfig, HlgVariant, SegModelConfig, SetrBackbone, SetrConfig, WindowEmbedding,
};
use sha2::{Digest, Sha256};

/// Accepted keys per section.
pub const KEYS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "name",
            "backbone",
            "classes",
            "channels",
            "heads",
            "windows",
            "dilations",
            "depths",
            "mlp_ratio",
            "window_embedding",
            "global_bias",
            "drop_path",
            "seg_window",
            "seg_dilation",
        ],
    ),
    ("data", &["kind", "path", "count", "height", "width", "seed"]),
    (
        "recipe",
        &[
            "optimizer",
            "schedule",
            "lr",
            "power",
            "warmup",
            "floor",
            "momentum",
            "weight_decay",
            "beta1",
            "beta2",
            "eps",
            "iters",
            "batch",
            "seed",
            "deterministic",
            "aux_weight",
            "augment",
            "crop",
            "scale_min",
            "scale_max",
            "flip",
            "log_every",
            "eval_every",
            "checkpoint_every",
        ],
    ),
    ("eval", &["mode", "window", "stride", "batch"]),
    ("analyze", &["target", "height", "width"]),
    ("output", &["dir"]),
];

const REQUIRED: &[(&str, &str)] = &[("model", "name")];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, 0 when the error concerns the file as a whole.
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.msg)
        } else {
            write!(f, "line {}: {}", self.line, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

/// Parsed but uninterpreted sections: `section -> key -> (value, line)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(n, format!("unterminated section header '{line}'")))?
                    .trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    let known: Vec<&str> = KEYS.iter().map(|(s, _)| *s).collect();
                    return Err(err(
                        n,
                        format!("unknown section [{name}]; expected one of {}", known.join(", ")),
                    ));
                }
                raw.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), unquote(value.trim()));
            let section = current
                .as_deref()
                .ok_or_else(|| err(n, format!("key '{key}' appears before any [section]")))?;
            let allowed = KEYS.iter().find(|(s, _)| *s == section).expect("known section").1;
            if !allowed.contains(&key) {
                return Err(err(n, format!("unknown key '{key}' in [{section}]")));
            }
            let entries = raw.sections.get_mut(section).expect("section exists");
            if let Some((_, first)) = entries.get(key) {
                return Err(err(
                    n,
                    format!("duplicate key '{key}' in [{section}] (first set on line {first})"),
                ));
            }
            entries.insert(key.to_string(), (value.to_string(), n));
        }
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|(s, k)| raw.get(s, k).is_none())
            .map(|(s, k)| format!("[{s}] {k}"))
            .collect();
        if !missing.is_empty() {
            return Err(err(0, format!("missing required field(s): {}", missing.join(", "))));
        }
        Ok(raw)
    }

    fn get(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> (&'a str, usize) {
        self.get(section, key).map_or((default, 0), |(v, l)| (v.as_str(), *l))
    }

    fn parse_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|e| err(*line, format!("[{section}] {key} = '{v}': {e}"))),
        }
    }

    fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(section, key)
            .map(|(v, line)| {
                v.parse()
                    .map_err(|e| err(*line, format!("[{section}] {key} = '{v}': {e}")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<(Vec<T>, usize)>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some((v, line)) = self.get(section, key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(|s| s.trim().parse::<T>())
            .collect::<Result<Vec<T>, _>>()
            .map_err(|e| err(*line, format!("[{section}] {key} = '{v}': {e}")))?;
        Ok(Some((items, *line)))
    }

    /// `key=value` lines of the model section in key order.
    pub fn canonical_model(&self) -> String {
        self.sections
            .get("model")
            .map(|m| m.iter().map(|(k, (v, _))| format!("{k}={v}\n")).collect())
            .unwrap_or_default()
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.get(section, key).map_or(0, |(_, l)| *l)
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn parse_pair(v: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("'{s}': {e}"));
    match parts.as_slice() {
        [a] => num(a).map(|a| (a, a)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected 'n' or 'h,w', got '{v}'")),
    }
}

/// SHA-256 of the canonical model section.
pub fn fingerprint(canonical_model: &str) -> [u8; 32] {
    Sha256::digest(canonical_model.as_bytes()).into()
}

/// Resolved model description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Variant name as written (`hlg-tiny`, `setr-pup`, ...), with the SETR
    /// backbone appended for named SETR models (`setr-pup-t-large`).
    pub name: String,
    pub seg: SegModelConfig,
    /// Full HLG config, including the classification head.
    pub hlg: Option<HlgConfig>,
    pub canonical: String,
}

impl ModelSpec {
    pub fn num_classes(&self) -> usize {
        self.seg.num_classes()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        fingerprint(&self.canonical)
    }

    /// Rebuilds a spec from the canonical text stored in a checkpoint.
    pub fn from_canonical(text: &str) -> Result<Self, ConfigError> {
        Self::resolve(&RawConfig::parse(&format!("[model]\n{text}"))?)
    }

    fn resolve(raw: &RawConfig) -> Result<Self, ConfigError> {
        let (name, name_line) = raw.str_or("model", "name", "");
        let classes: Option<usize> = raw.opt("model", "classes")?;
        if classes == Some(0) {
            return Err(err(raw.line_of("model", "classes"), "classes must be positive"));
        }
        let canonical = raw.canonical_model();
        if let Some(kind) = name.strip_prefix("setr-") {
            let kind = match kind {
                "naive" => DecoderKind::Naive,
                "pup" => DecoderKind::Pup,
                "mla" => DecoderKind::Mla,
                _ => {
                    return Err(err(
                        name_line,
                        format!("unknown SETR decoder in '{name}'; expected naive, pup or mla"),
                    ))
                }
            };
            let (backbone, bl) = raw.str_or("model", "backbone", "t-large");
            let mut cfg = if backbone == "toy" {
                SetrConfig::toy(kind, classes.unwrap_or(4))
            } else {
                let b = SetrBackbone::parse(backbone).ok_or_else(|| {
                    err(
                        bl,
                        format!("unknown backbone '{backbone}'; expected t-base, t-large or toy"),
                    )
                })?;
                SetrConfig::named(kind, b)
            };
            if let Some(k) = classes {
                cfg.decoder.num_classes = k;
            }
            for key in [
                "channels",
                "heads",
                "windows",
                "dilations",
                "depths",
                "mlp_ratio",
                "seg_window",
            ] {
                if raw.get("model", key).is_some() {
                    return Err(err(
                        raw.line_of("model", key),
                        format!("'{key}' applies to HLG models only"),
                    ));
                }
            }
            cfg.validate().map_err(|e| err(name_line, e.to_string()))?;
            return Ok(ModelSpec {
                name: format!("{name}-{backbone}"),
                seg: SegModelConfig::Setr(cfg),
                hlg: None,
                canonical,
            });
        }
        let mut cfg = match name {
            "hlg-toy" | "hlg" => HlgConfig::toy(4),
            _ => match HlgVariant::parse(name) {
                Some(v) => HlgConfig::named(v),
                None => {
                    return Err(err(
                        name_line,
                        format!(
                            "unknown model '{name}'; expected setr-naive|setr-pup|setr-mla, \
                             hlg-mobile|hlg-tiny|hlg-small|hlg-medium|hlg-large, hlg-toy or hlg (explicit stage table)"
                        ),
                    ))
                }
            },
        };
        if raw.get("model", "backbone").is_some() {
            return Err(err(
                raw.line_of("model", "backbone"),
                "'backbone' applies to SETR models only",
            ));
        }
        if let Some(k) = classes {
            cfg.num_classes = k;
            cfg.seg.num_classes = k;
        }
        let table = [
            raw.list::<usize>("model", "channels")?,
            raw.list::<usize>("model", "heads")?,
            raw.list::<usize>("model", "windows")?,
            raw.list::<usize>("model", "dilations")?,
            raw.list::<usize>("model", "depths")?,
        ];
        if name == "hlg" {
            let keys = ["channels", "heads", "windows", "dilations", "depths"];
            let missing: Vec<&str> = keys
                .iter()
                .zip(&table)
                .filter(|(_, t)| t.is_none())
                .map(|(k, _)| *k)
                .collect();
            if !missing.is_empty() {
                return Err(err(
                    name_line,
                    format!("an explicit stage table needs [model] {}", missing.join(", ")),
                ));
            }
            cfg.name = "hlg-custom".to_string();
        }
        for (j, entry) in table.iter().enumerate() {
            let Some((values, line)) = entry else { continue };
            if values.len() != cfg.stages.len() {
                return Err(err(
                    *line,
                    format!("expected {} comma-separated values", cfg.stages.len()),
                ));
            }
            for (stage, &v) in cfg.stages.iter_mut().zip(values) {
                let slot: &mut usize = match j {
                    0 => &mut stage.channels,
                    1 => &mut stage.heads,
                    2 => &mut stage.window,
                    3 => &mut stage.dilation,
                    _ => &mut stage.depth,
                };
                *slot = v;
            }
        }
        cfg.mlp_ratio = raw.parse_or("model", "mlp_ratio", cfg.mlp_ratio)?;
        cfg.drop_path = raw.parse_or("model", "drop_path", cfg.drop_path)?;
        cfg.seg.window = raw.parse_or("model", "seg_window", cfg.seg.window)?;
        cfg.seg.dilation = raw.parse_or("model", "seg_dilation", cfg.seg.dilation)?;
        if let Some((v, line)) = raw.get("model", "window_embedding") {
            cfg.window_embedding = WindowEmbedding::parse(v).ok_or_else(|| {
                err(
                    *line,
                    format!("unknown window_embedding '{v}'; expected avgpool, maxpool or dwconv"),
                )
            })?;
        }
        if let Some((v, line)) = raw.get("model", "global_bias") {
            cfg.global_bias = GlobalBias::parse(v)
                .ok_or_else(|| err(*line, format!("unknown global_bias '{v}'; expected relative or dense")))?;
        }
        cfg.validate().map_err(|e| err(name_line, e.to_string()))?;
        Ok(ModelSpec {
            name: name.to_string(),
            seg: SegModelConfig::Hlg(cfg.clone()),
            hlg: Some(cfg),
            canonical,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth {
        count: usize,
        height: usize,
        width: usize,
        seed: u64,
    },
    /// `NAME.ppm` images with same-stem `NAME.pgm` masks.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeTarget {
    Classifier,
    Segmenter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataSource,
    pub recipe: TrainRecipe,
    pub deterministic: bool,
    /// Save a checkpoint every this many steps (0 = at the end only).
    pub checkpoint_every: usize,
    pub eval_mode: InferMode,
    pub eval_batch: usize,
    pub analyze_target: AnalyzeTarget,
    pub analyze_input: (usize, usize),
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;
        let model = ModelSpec::resolve(&raw)?;

        let (kind, kind_line) = raw.str_or("data", "kind", "synth");
        let (height, width) = (
            raw.parse_or("data", "height", 64usize)?,
            raw.parse_or("data", "width", 64usize)?,
        );
        let data = match kind {
            "synth" => {
                let count = raw.parse_or("data", "count", 16usize)?;
                if count == 0 || height == 0 || width == 0 {
                    return Err(err(kind_line, "synthetic data needs positive count, height and width"));
                }
                DataSource::Synth {
                    count,
                    height,
                    width,
                    seed: raw.parse_or("data", "seed", 0u64)?,
                }
            }
            "dir" => {
                let (path, _) = raw.str_or("data", "path", "");
                if path.is_empty() {
                    return Err(err(kind_line, "[data] kind = dir needs [data] path"));
                }
                DataSource::Directory(PathBuf::from(path))
            }
            other => {
                return Err(err(
                    kind_line,
                    format!("unknown data kind '{other}'; expected synth or dir"),
                ))
            }
        };

        let iters = raw.parse_or("recipe", "iters", 1000usize)?;
        let batch = raw.parse_or("recipe", "batch", 8usize)?;
        let lr = raw.parse_or("recipe", "lr", 0.01f64)?;
        let (opt, opt_line) = raw.str_or("recipe", "optimizer", "sgd");
        let optimizer = match opt {
            "sgd" => OptimizerKind::Sgd {
                momentum: raw.parse_or("recipe", "momentum", 0.9)?,
                weight_decay: raw.parse_or("recipe", "weight_decay", 0.0)?,
            },
            "adamw" => OptimizerKind::AdamW {
                beta1: raw.parse_or("recipe", "beta1", 0.9)?,
                beta2: raw.parse_or("recipe", "beta2", 0.999)?,
                eps: raw.parse_or("recipe", "eps", 1e-8)?,
                weight_decay: raw.parse_or("recipe", "weight_decay", 0.05)?,
            },
            other => {
                return Err(err(
                    opt_line,
                    format!("unknown optimizer '{other}'; expected sgd or adamw"),
                ))
            }
        };
        let (sched, sched_line) = raw.str_or("recipe", "schedule", if opt == "adamw" { "cosine" } else { "poly" });
        let schedule = match sched {
            "poly" => Schedule::Poly {
                base: lr,
                max_iters: iters,
                power: raw.parse_or("recipe", "power", 0.9)?,
            },
            "cosine" => Schedule::WarmupCosine {
                base: lr,
                warmup: raw.parse_or("recipe", "warmup", 0usize)?,
                total: iters,
                floor: raw.parse_or("recipe", "floor", 0.0)?,
            },
            "constant" => Schedule::Constant { base: lr },
            other => {
                return Err(err(
                    sched_line,
                    format!("unknown schedule '{other}'; expected poly, cosine or constant"),
                ))
            }
        };
        let augment = if raw.parse_or("recipe", "augment", false)? {
            let crop = match raw.get("recipe", "crop") {
                None => (height, width),
                Some((v, line)) => parse_pair(v).map_err(|e| err(*line, e))?,
            };
            Some(AugmentConfig {
                scale: (
                    raw.parse_or("recipe", "scale_min", 0.5)?,
                    raw.parse_or("recipe", "scale_max", 2.0)?,
                ),
                crop,
                flip: raw.parse_or("recipe", "flip", true)?,
            })
        } else {
            None
        };
        let recipe = TrainRecipe {
            optimizer,
            schedule,
            iters,
            batch,
            seed: raw.parse_or("recipe", "seed", 0u64)?,
            aux_weight: raw.parse_or("recipe", "aux_weight", lgseg_harness::AUX_WEIGHT)?,
            augment,
            log_every: raw.parse_or("recipe", "log_every", 10usize)?,
            eval_every: raw.parse_or("recipe", "eval_every", 0usize)?,
        };
        recipe.validate().map_err(|e| {
            err(
                raw.line_of("recipe", "iters").max(raw.line_of("recipe", "batch")),
                e.to_string(),
            )
        })?;

        let (mode, mode_line) = raw.str_or("eval", "mode", "direct");
        let eval_mode = match mode {
            "direct" => InferMode::Direct,
            "sliding" => {
                let window = match raw.get("eval", "window") {
                    None => (height, width),
                    Some((v, line)) => parse_pair(v).map_err(|e| err(*line, e))?,
                };
                let stride = match raw.get("eval", "stride") {
                    None => ((window.0 / 2).max(1), (window.1 / 2).max(1)),
                    Some((v, line)) => parse_pair(v).map_err(|e| err(*line, e))?,
                };
                if stride.0 == 0 || stride.1 == 0 || stride.0 > window.0 || stride.1 > window.1 {
                    return Err(err(mode_line, "sliding eval needs 0 < stride <= window"));
                }
                InferMode::Sliding { window, stride }
            }
            other => {
                return Err(err(
                    mode_line,
                    format!("unknown eval mode '{other}'; expected direct or sliding"),
                ))
            }
        };

        let is_hlg_named = model.hlg.is_some() && !matches!(model.name.as_str(), "hlg-toy" | "hlg");
        let (target, target_line) = raw.str_or(
            "analyze",
            "target",
            if is_hlg_named { "classifier" } else { "segmenter" },
        );
        let analyze_target = match target {
            "classifier" if model.hlg.is_some() => AnalyzeTarget::Classifier,
            "classifier" => return Err(err(target_line, "SETR models have no classifier target")),
            "segmenter" => AnalyzeTarget::Segmenter,
            other => {
                return Err(err(
                    target_line,
                    format!("unknown analyze target '{other}'; expected classifier or segmenter"),
                ))
            }
        };
        let default_side = match (&model.seg, analyze_target) {
            (_, AnalyzeTarget::Classifier) => 224,
            (SegModelConfig::Setr(_), _) if !model.name.ends_with("-toy") => 512,
            (SegModelConfig::Hlg(_), _) if is_hlg_named => 512,
            _ => height,
        };
        let analyze_input = (
            raw.parse_or("analyze", "height", default_side)?,
            raw.parse_or(
                "analyze",
                "width",
                if default_side == height { width } else { default_side },
            )?,
        );

        Ok(RunConfig {
            model,
            data,
            recipe,
            deterministic: raw.parse_or("recipe", "deterministic", true)?,
            checkpoint_every: raw.parse_or("recipe", "checkpoint_every", 0usize)?,
            eval_mode,
            eval_batch: raw.parse_or("eval", "batch", 8usize)?.max(1),
            analyze_target,
            analyze_input,
            out_dir: PathBuf::from(raw.str_or("output", "dir", "out").0),
        })
    }
}
