//! Parameter and multiply-accumulate accounting for SETR and HLG models,
//! computed from configs alone and audited against published totals.
//!
//! ```
//! use lgseg_analyzer::cost;
//! use lgseg_models::config::{HlgConfig, HlgVariant};
//!
//! let r = cost::hlg_classifier(&HlgConfig::named(HlgVariant::Tiny), (224, 224));
//! assert_eq!(r.total_params, r.rows.iter().map(|row| row.params).sum::<u64>());
//! assert_eq!(r.total_flops, 2 * r.total_macs);
//! ```

pub mod audit;
pub mod cost;
pub mod render;

pub use audit::{audit, published_targets, Analyzed, AuditResult, Target};
pub use cost::{CostReport, CostRow};
