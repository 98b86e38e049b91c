//! Plain-text and JSON renderings of reports.

use std::fmt::Write;

use serde::Serialize;

use crate::audit::AuditResult;
use crate::cost::CostReport;

pub const HEADER: &str = "MACs count multiply-accumulates of matmul and convolution kernels; FLOPs = 2 x MACs. \
Norms, activations, softmax, pooling and resizing are excluded.";

fn millions(n: u64) -> String {
    format!("{:.3}M", n as f64 / 1e6)
}

fn giga(n: u64) -> String {
    format!("{:.3}G", n as f64 / 1e9)
}

pub fn cost_table(r: &CostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", HEADER);
    let _ = writeln!(s, "model {} @ {}x{}", r.model, r.input.0, r.input.1);
    let _ = writeln!(s, "{:<28} {:>14} {:>14}  assumption", "module", "params", "macs");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:<28} {:>14} {:>14}  {}",
            row.name, row.params, row.macs, row.assumption
        );
    }
    let _ = writeln!(
        s,
        "{:<28} {:>14} {:>14}  params={} macs={} flops={}",
        "total",
        r.total_params,
        r.total_macs,
        millions(r.total_params),
        giga(r.total_macs),
        giga(r.total_flops)
    );
    s
}

pub fn audit_table(results: &[AuditResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", HEADER);
    let _ = writeln!(s, "# Published FLOP columns are compared against MACs.");
    for a in results {
        let macs = match (a.expected_macs, a.macs_rel_gap) {
            (Some(e), Some(g)) => format!(
                "macs {} vs {:.2}G ({:+.2}%, tol {:.0}%)",
                giga(a.macs),
                e / 1e9,
                100.0 * g,
                100.0 * a.macs_tol
            ),
            _ => format!("macs {}", giga(a.macs)),
        };
        let _ = writeln!(
            s,
            "{} {:<20} params {} vs {:.2}M ({:+.2}%, tol {:.0}%); {}",
            if a.pass() { "PASS" } else { "FAIL" },
            a.name,
            millions(a.params),
            a.expected_params / 1e6,
            100.0 * a.params_rel_gap,
            100.0 * a.params_tol,
            macs
        );
        for at in a.attribution.iter().filter(|at| at.attributed_gap != 0.0) {
            let _ = writeln!(
                s,
                "    {:<24} {:>12} ({:>5.1}%) gap share {:+.3}M  [{}]",
                at.module,
                at.params,
                100.0 * at.share,
                at.attributed_gap / 1e6,
                at.assumption
            );
        }
    }
    s
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}
