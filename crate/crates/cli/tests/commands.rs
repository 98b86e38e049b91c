use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgseg_cli::netpbm;
use lgseg_harness::parse_log;

const TOY: &str = "[model]\nname = setr-pup\nbackbone = toy\nclasses = 4\n\
                   [data]\ncount = 8\nheight = 32\nwidth = 32\n\
                   [recipe]\niters = 6\nbatch = 4\nlog_every = 2\neval_every = 3\ncheckpoint_every = 4\n";

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn lgseg(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lgseg"))
            .current_dir(self.dir.path())
            .args(args)
            .arg("--config")
            .arg("run.cfg")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.lgseg(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn fails(&self, args: &[&str], code: i32) -> String {
        let o = self.lgseg(args);
        assert_eq!(
            o.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(o.stdout.is_empty());
        String::from_utf8(o.stderr).unwrap()
    }
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = walk(dir)
        .into_iter()
        .map(|p| p.strip_prefix(dir).unwrap().display().to_string())
        .collect();
    names.sort();
    names
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn train_eval_analyze_produce_artifacts() {
    let run = Run::new(TOY);
    let stdout = run.ok(&["train"]);
    assert!(stdout.contains("trained 6 steps"), "{stdout}");
    assert_eq!(listing(&run.out()), ["checkpoint.bin", "metrics.log"]);
    let log = parse_log(&fs::read_to_string(run.out().join("metrics.log")).unwrap()).unwrap();
    let steps: Vec<usize> = log.iter().map(|r| r.step).collect();
    assert_eq!(steps, [2, 3, 4, 6]);
    assert!(log[1].metric("miou").is_some() && log[3].metric("pixel_acc").is_some());

    let stdout = run.ok(&["eval"]);
    assert!(
        stdout.starts_with("pixel_acc=") && stdout.contains(" miou="),
        "{stdout}"
    );
    assert_eq!(fs::read_to_string(run.out().join("eval.txt")).unwrap(), stdout);
    let mask = netpbm::decode(&fs::read(run.out().join("predictions/0007.pgm")).unwrap()).unwrap();
    assert_eq!((mask.width, mask.height, mask.channels), (32, 32, 1));
    assert!(mask.pixels.iter().all(|&v| v < 4));
    let colour = netpbm::decode(&fs::read(run.out().join("predictions/0000.ppm")).unwrap()).unwrap();
    assert_eq!(colour.channels, 3);

    let table = run.ok(&["analyze"]);
    assert!(table.contains("FLOPs = 2 x MACs"));
    assert!(run.out().join("cost.txt").exists() && run.out().join("cost.json").exists());
}

#[test]
fn analyze_audits_named_variants() {
    let run = Run::new("[model]\nname = hlg-tiny\n");
    let stdout = run.ok(&["analyze"]);
    assert!(stdout.contains("PASS"), "{stdout}");
    assert_eq!(listing(&run.out()), ["audit.txt", "cost.json", "cost.txt"]);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let whole = Run::new(TOY);
    whole.ok(&["train", "--deterministic"]);
    let split = Run::new(TOY);
    split.ok(&["train", "--deterministic", "--until", "4"]);
    let partial = fs::read_to_string(split.out().join("metrics.log")).unwrap();
    assert_eq!(partial.lines().count(), 3);
    split.ok(&["train", "--deterministic", "--resume", "out/checkpoint.bin"]);
    assert_eq!(
        fs::read(whole.out().join("metrics.log")).unwrap(),
        fs::read(split.out().join("metrics.log")).unwrap()
    );
    assert_eq!(
        fs::read(whole.out().join("checkpoint.bin")).unwrap(),
        fs::read(split.out().join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn seeded_runs_are_reproducible() {
    let a = Run::new(TOY);
    let b = Run::new(TOY);
    a.ok(&["train", "--seed", "11", "--deterministic"]);
    b.ok(&["train", "--seed", "11", "--deterministic"]);
    let log_a = fs::read(a.out().join("metrics.log")).unwrap();
    assert_eq!(log_a, fs::read(b.out().join("metrics.log")).unwrap());
    let c = Run::new(TOY);
    c.ok(&["train", "--seed", "12"]);
    assert_ne!(log_a, fs::read(c.out().join("metrics.log")).unwrap());
}

#[test]
fn visualize_writes_identical_bytes() {
    let run = Run::new(TOY);
    run.ok(&["train"]);
    let args = [
        "visualize",
        "--what",
        "attention",
        "--layer",
        "1",
        "--head",
        "2",
        "--point",
        "1,3",
    ];
    run.ok(&args);
    let first = fs::read(run.out().join("attention_l1_h2_p1_3.pgm")).unwrap();
    run.ok(&args);
    assert_eq!(first, fs::read(run.out().join("attention_l1_h2_p1_3.pgm")).unwrap());
    let img = netpbm::decode(&first).unwrap();
    assert_eq!((img.width, img.height), (4, 4));
    run.ok(&["visualize", "--what", "pos-sim"]);
    run.ok(&["visualize", "--what", "features", "--layer", "1"]);
    assert!(run.out().join("pos_sim.pgm").exists() && run.out().join("features_l1.pgm").exists());
}

#[test]
fn config_errors_exit_2_and_create_nothing() {
    let run = Run::new("");
    let err = run.fails(&["train"], 2);
    assert!(err.contains("[model] name"), "{err}");
    let run = Run::new("[model]\nname = hlg-toy\nsize = 3\n");
    assert!(run.fails(&["analyze"], 2).contains("line 3"));
    assert!(!run.out().exists());
    let run = Run::new(TOY);
    assert!(run.fails(&["visualize", "--what", "colours"], 2).contains("--what"));
}

#[test]
fn checkpoint_errors_exit_3_and_leave_outputs_alone() {
    let run = Run::new(TOY);
    assert!(run.fails(&["eval"], 3).contains("checkpoint"));
    assert!(!run.out().exists());
    run.ok(&["train"]);
    let before = listing(&run.out());
    fs::write(run.dir.path().join("bad.bin"), b"LGSEGCKP\x01\x00").unwrap();
    run.fails(&["eval", "--checkpoint", "bad.bin"], 3);
    let other = TOY.replace("classes = 4", "classes = 3");
    fs::write(run.dir.path().join("run.cfg"), other).unwrap();
    assert!(run.fails(&["eval"], 3).contains("--allow-mismatch"));
    assert_eq!(listing(&run.out()), before);
}

#[test]
fn query_point_outside_grid_exits_2() {
    let run = Run::new(TOY);
    run.ok(&["train"]);
    let before = listing(&run.out());
    let err = run.fails(&["visualize", "--what", "attention", "--point", "4,0"], 2);
    assert!(err.contains("outside the 4x4 grid"), "{err}");
    assert_eq!(listing(&run.out()), before);
}

#[test]
fn divergence_exits_4_without_partial_output() {
    let run = Run::new(&TOY.replace("[recipe]\n", "[recipe]\nlr = 1e30\n"));
    let err = run.fails(&["train"], 4);
    assert!(err.contains("diverged"), "{err}");
    assert!(!run.out().exists());
}
