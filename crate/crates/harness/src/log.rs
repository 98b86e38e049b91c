use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

/// One metrics line: `step=<u64> loss=<f64> lr=<f64>` followed by any number
/// of `<name>=<f64>` pairs, separated by single spaces. Floats use Rust's
/// shortest round-trip formatting, so a line parses back bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub metrics: Vec<(String, f64)>,
}

impl Record {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} loss={:?} lr={:?}", self.step, self.loss, self.lr)?;
        for (name, v) in &self.metrics {
            write!(f, " {name}={v:?}")?;
        }
        Ok(())
    }
}

impl FromStr for Record {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut pairs = line.split(' ').map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| format!("expected key=value, got '{kv}'"))
        });
        let mut field = |key: &str| -> Result<String, String> {
            let (k, v) = pairs.next().ok_or_else(|| format!("missing '{key}'"))??;
            if k != key {
                return Err(format!("expected '{key}', got '{k}'"));
            }
            Ok(v.to_string())
        };
        let num = |s: String| s.parse::<f64>().map_err(|e| format!("'{s}': {e}"));
        let step = field("step")?.parse().map_err(|e| format!("step: {e}"))?;
        let loss = num(field("loss")?)?;
        let lr = num(field("lr")?)?;
        let mut metrics = Vec::new();
        for kv in pairs {
            let (k, v) = kv?;
            metrics.push((k.to_string(), num(v.to_string())?));
        }
        Ok(Record {
            step,
            loss,
            lr,
            metrics,
        })
    }
}

/// Append-only metrics log, kept in memory and optionally mirrored to a file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    records: Vec<Record>,
    file: Option<File>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed; each record is flushed as written.
    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Vec::new(),
            file: Some(file),
        })
    }

    pub fn push(&mut self, record: Record) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{record}")?;
            f.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

pub fn parse_log(text: &str) -> Result<Vec<Record>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
