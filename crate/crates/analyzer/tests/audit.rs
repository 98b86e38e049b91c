use lgseg_analyzer::{audit, published_targets, render};

#[test]
fn published_totals_within_tolerance() {
    let results: Vec<_> = published_targets().iter().map(audit).collect();
    let table = render::audit_table(&results);
    println!("{table}");
    assert_eq!(results.len(), 11);
    for r in &results {
        assert!(r.pass(), "{} outside tolerance:\n{table}", r.name);
    }
}

#[test]
fn gap_is_fully_attributed() {
    for t in published_targets() {
        let r = audit(&t);
        let gap = r.params as f64 - r.expected_params;
        let spread: f64 = r.attribution.iter().map(|a| a.attributed_gap).sum();
        assert!((gap - spread).abs() <= 1e-6 * gap.abs().max(1.0), "{}", r.name);
        assert!(r.attribution.iter().any(|a| !a.assumption.is_empty()));
    }
}

#[test]
fn json_report_has_documented_keys() {
    let r = audit(&published_targets()[6]);
    let v: serde_json::Value = serde_json::from_str(&render::to_json(&r)).unwrap();
    for key in [
        "name",
        "params",
        "expected_params",
        "params_rel_gap",
        "macs",
        "expected_macs",
        "attribution",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let cost = published_targets()[7].model.report((224, 224));
    let v: serde_json::Value = serde_json::from_str(&render::to_json(&cost)).unwrap();
    for key in ["model", "input", "total_params", "total_macs", "total_flops", "rows"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(render::cost_table(&cost).contains("FLOPs = 2 x MACs"));
}
