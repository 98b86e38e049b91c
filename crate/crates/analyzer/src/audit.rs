//! Comparison of closed-form counts against published totals.

use lgseg_models::config::{DecoderKind, HlgConfig, HlgVariant, SetrBackbone, SetrConfig};
use serde::Serialize;

use crate::cost::{self, CostReport};

/// A config the analyzer can cost.
#[derive(Debug, Clone)]
pub enum Analyzed {
    Setr(SetrConfig),
    HlgClassifier(HlgConfig),
    HlgSegmenter(HlgConfig),
}

impl Analyzed {
    pub fn report(&self, input: (usize, usize)) -> CostReport {
        match self {
            Self::Setr(c) => cost::setr(c, input),
            Self::HlgClassifier(c) => cost::hlg_classifier(c, input),
            Self::HlgSegmenter(c) => cost::hlg_segmenter(c, input),
        }
    }
}

/// Published totals for one model. Multiply-accumulate targets are compared
/// against `total_macs`, the convention the published FLOP columns follow.
#[derive(Debug, Clone)]
pub struct Target {
    pub name: String,
    pub model: Analyzed,
    pub input: (usize, usize),
    pub params: f64,
    pub params_tol: f64,
    pub macs: Option<f64>,
    pub macs_tol: f64,
}

/// Published SETR (T-Base/T-Large × decoder) and HLG (five variants) totals.
pub fn published_targets() -> Vec<Target> {
    let mut out = Vec::new();
    let setr = [
        (SetrBackbone::TLarge, DecoderKind::Naive, 305.67e6),
        (SetrBackbone::TLarge, DecoderKind::Pup, 318.31e6),
        (SetrBackbone::TLarge, DecoderKind::Mla, 310.57e6),
        (SetrBackbone::TBase, DecoderKind::Naive, 87.69e6),
        (SetrBackbone::TBase, DecoderKind::Pup, 97.64e6),
        (SetrBackbone::TBase, DecoderKind::Mla, 92.59e6),
    ];
    for (bb, kind, params) in setr {
        out.push(Target {
            name: format!("setr-{}-{}", kind.name(), bb.name()),
            model: Analyzed::Setr(SetrConfig::named(kind, bb)),
            input: (512, 512),
            params,
            params_tol: 0.02,
            macs: None,
            macs_tol: 0.10,
        });
    }
    let hlg = [
        (HlgVariant::Mobile, 4.3e6, None),
        (HlgVariant::Tiny, 11.0e6, Some(2.1e9)),
        (HlgVariant::Small, 24.2e6, Some(4.7e9)),
        (HlgVariant::Medium, 43.7e6, Some(9.0e9)),
        (HlgVariant::Large, 84.2e6, Some(15.9e9)),
    ];
    for (v, params, macs) in hlg {
        out.push(Target {
            name: v.name().to_string(),
            model: Analyzed::HlgClassifier(HlgConfig::named(v)),
            input: (224, 224),
            params,
            params_tol: 0.05,
            macs,
            macs_tol: 0.10,
        });
    }
    out
}

/// Share of the gap carried by one breakdown row.
#[derive(Debug, Clone, Serialize)]
pub struct Attribution {
    pub module: String,
    pub params: u64,
    pub share: f64,
    pub assumption: String,
    /// Portion of the parameter gap assigned to this row.
    pub attributed_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditResult {
    pub name: String,
    pub params: u64,
    pub expected_params: f64,
    pub params_rel_gap: f64,
    pub params_tol: f64,
    pub params_pass: bool,
    pub macs: u64,
    pub expected_macs: Option<f64>,
    pub macs_rel_gap: Option<f64>,
    pub macs_tol: f64,
    pub macs_pass: bool,
    pub attribution: Vec<Attribution>,
}

impl AuditResult {
    pub fn pass(&self) -> bool {
        self.params_pass && self.macs_pass
    }
}

/// Collapses `stage1.0.dwmlp` style rows into `stage1.dwmlp` groups.
fn group_name(row: &str) -> String {
    let parts: Vec<&str> = row.split('.').collect();
    if parts.len() == 3 && parts[1].chars().all(|c| c.is_ascii_digit()) {
        format!("{}.{}", parts[0], parts[2])
    } else if row.starts_with("encoder.layer") {
        "encoder.layers".to_string()
    } else {
        row.to_string()
    }
}

/// Spreads the parameter gap over rows that rest on unstated choices, in
/// proportion to their size. With no such rows every row shares it.
pub fn attribute(report: &CostReport, expected: f64) -> Vec<Attribution> {
    let mut groups: Vec<(String, u64, String)> = Vec::new();
    for r in &report.rows {
        let name = group_name(&r.name);
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => g.1 += r.params,
            None => groups.push((name, r.params, r.assumption.clone())),
        }
    }
    let gap = report.total_params as f64 - expected;
    let assumed: u64 = groups.iter().filter(|g| !g.2.is_empty()).map(|g| g.1).sum();
    let pool = if assumed > 0 {
        assumed
    } else {
        report.total_params.max(1)
    };
    groups
        .into_iter()
        .map(|(module, params, assumption)| {
            let carries = assumed == 0 || !assumption.is_empty();
            Attribution {
                share: params as f64 / report.total_params.max(1) as f64,
                attributed_gap: if carries {
                    gap * params as f64 / pool as f64
                } else {
                    0.0
                },
                module,
                params,
                assumption,
            }
        })
        .collect()
}

pub fn audit(target: &Target) -> AuditResult {
    let report = target.model.report(target.input);
    let rel = |got: f64, want: f64| (got - want) / want;
    let params_rel_gap = rel(report.total_params as f64, target.params);
    let macs_rel_gap = target.macs.map(|m| rel(report.total_macs as f64, m));
    AuditResult {
        name: target.name.clone(),
        params: report.total_params,
        expected_params: target.params,
        params_rel_gap,
        params_tol: target.params_tol,
        params_pass: params_rel_gap.abs() <= target.params_tol,
        macs: report.total_macs,
        expected_macs: target.macs,
        macs_rel_gap,
        macs_tol: target.macs_tol,
        macs_pass: macs_rel_gap.is_none_or(|g| g.abs() <= target.macs_tol),
        attribution: attribute(&report, target.params),
    }
}
