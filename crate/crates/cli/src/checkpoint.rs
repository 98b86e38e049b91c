//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "LGSEGCKP"
//! version      u32      1
//! fingerprint  32 bytes SHA-256 of the canonical model section
//! manifest     u32 length + UTF-8 canonical model section
//! count        u32
//! entries      count × { u32 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//!                        u32 rank, rank × u64 extents, row-major LE payload }
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use lgseg_harness::TrainState;
use lgseg_tensor::{DType, Float, ParamStore, Tensor};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"LGSEGCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian payload.
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Float>(name: &str, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
        payload(t, &mut bytes).expect("writing to a Vec");
        Self {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>, CliError> {
        if self.dtype != T::DTYPE {
            return Err(bad(format!(
                "entry '{}' is {}, expected {}",
                self.name,
                self.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let data = self.bytes.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
        Tensor::from_vec(&self.shape, data).map_err(|e| bad(format!("entry '{}': {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: [u8; 32],
    pub manifest: String,
    pub entries: Vec<Entry>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

const STEP: &str = "train.step";
const LR: &str = "train.lr";

fn payload<T: Float, W: Write>(t: &Tensor<T>, w: &mut W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8192);
    for chunk in t.data().chunks(1024) {
        buf.clear();
        for &v in chunk {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

enum Source<'a, T: Float> {
    Param(&'a Tensor<T>),
    Scalar(Tensor<f64>),
}

/// Entry order: parameters (buffers included) in store order, optimizer
/// moments as `optim.first.<name>` / `optim.second.<name>`, then
/// `train.step` and `train.lr` as f64 scalars.
fn training_sources<'a, T: Float>(
    store: &'a ParamStore<T>,
    state: Option<&'a TrainState<T>>,
) -> Vec<(String, Source<'a, T>)> {
    let mut out: Vec<(String, Source<'a, T>)> = store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), Source::Param(&e.value)))
        .collect();
    if let Some(st) = state {
        for (kind, moments) in [("first", &st.first), ("second", &st.second)] {
            for (e, m) in store.entries().iter().zip(moments) {
                if let Some(m) = m {
                    out.push((format!("optim.{kind}.{}", e.name), Source::Param(m)));
                }
            }
        }
        out.push((STEP.to_string(), Source::Scalar(Tensor::scalar(st.step as f64))));
        out.push((LR.to_string(), Source::Scalar(Tensor::scalar(st.lr))));
    }
    out
}

fn write_header<W: Write>(w: &mut W, fingerprint: &[u8; 32], manifest: &str, count: usize) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(fingerprint)?;
    w.write_all(&(manifest.len() as u32).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&(count as u32).to_le_bytes())
}

fn write_entry_header<W: Write>(w: &mut W, name: &str, dtype: DType, shape: &[usize]) -> io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dtype.code()])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Writes through a temporary file next to `path`, then renames it into place.
fn atomic_write(path: &Path, f: impl FnOnce(&mut BufWriter<&File>) -> io::Result<()>) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

impl Checkpoint {
    pub fn from_training<T: Float>(
        fingerprint: [u8; 32],
        manifest: &str,
        store: &ParamStore<T>,
        state: Option<&TrainState<T>>,
    ) -> Self {
        let entries = training_sources(store, state)
            .into_iter()
            .map(|(name, src)| match src {
                Source::Param(t) => Entry::from_tensor(&name, t),
                Source::Scalar(t) => Entry::from_tensor(&name, &t),
            })
            .collect();
        Self {
            fingerprint,
            manifest: manifest.to_string(),
            entries,
        }
    }

    /// Streams the same bytes `from_training(..).to_bytes()` would produce,
    /// without holding a second copy of the parameters.
    pub fn write_training<T: Float, W: Write>(
        w: &mut W,
        fingerprint: &[u8; 32],
        manifest: &str,
        store: &ParamStore<T>,
        state: Option<&TrainState<T>>,
    ) -> io::Result<()> {
        let sources = training_sources(store, state);
        write_header(w, fingerprint, manifest, sources.len())?;
        for (name, src) in &sources {
            match src {
                Source::Param(t) => {
                    write_entry_header(w, name, T::DTYPE, t.shape())?;
                    payload(*t, w)?;
                }
                Source::Scalar(t) => {
                    write_entry_header(w, name, DType::F64, t.shape())?;
                    payload(t, w)?;
                }
            }
        }
        Ok(())
    }

    /// Atomic [`Checkpoint::write_training`] to `path`.
    pub fn save_training<T: Float>(
        path: &Path,
        fingerprint: &[u8; 32],
        manifest: &str,
        store: &ParamStore<T>,
        state: Option<&TrainState<T>>,
    ) -> Result<(), CliError> {
        atomic_write(path, |w| Self::write_training(w, fingerprint, manifest, store, state))
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Overwrites every store entry from the checkpoint; each must be present
    /// with a matching shape.
    pub fn restore_params<T: Float>(&self, store: &mut ParamStore<T>) -> Result<(), CliError> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.entry(id).name.clone();
            let e = self
                .entry(&name)
                .ok_or_else(|| bad(format!("missing parameter '{name}'")))?;
            store
                .set(id, e.to_tensor()?)
                .map_err(|err| bad(format!("parameter '{name}': {err}")))?;
        }
        Ok(())
    }

    /// Optimizer state, if the checkpoint carries one.
    pub fn restore_state<T: Float>(&self, store: &ParamStore<T>) -> Result<Option<TrainState<T>>, CliError> {
        let Some(step) = self.entry(STEP) else {
            return Ok(None);
        };
        let scalar = |e: &Entry| -> Result<f64, CliError> { Ok(e.to_tensor::<f64>()?.item()) };
        let mut st = TrainState::new(store.len());
        st.step = scalar(step)? as usize;
        st.lr = scalar(self.entry(LR).ok_or_else(|| bad("missing train.lr"))?)?;
        for (i, e) in store.entries().iter().enumerate() {
            if let Some(m) = self.entry(&format!("optim.first.{}", e.name)) {
                st.first[i] = Some(m.to_tensor()?);
            }
            if let Some(v) = self.entry(&format!("optim.second.{}", e.name)) {
                st.second[i] = Some(v.to_tensor()?);
            }
        }
        Ok(Some(st))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, &self.fingerprint, &self.manifest, self.entries.len())?;
        for e in &self.entries {
            write_entry_header(w, &e.name, e.dtype, &e.shape)?;
            w.write_all(&e.bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec");
        out
    }

    /// Parses one checkpoint; anything after it is an error.
    pub fn read_from<R: Read>(r: R) -> Result<Self, CliError> {
        let mut r = Reader { inner: r, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not an lgseg checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.u32()? as usize;
        let manifest = String::from_utf8(r.take(len)?).map_err(|_| bad("manifest is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?).map_err(|_| bad("entry name is not UTF-8"))?;
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| bad(format!("entry '{name}': unknown dtype {code}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size_of()))
                .ok_or_else(|| bad(format!("entry '{name}': extents overflow")))?;
            let bytes = r.take(numel)?;
            entries.push(Entry {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        let mut rest = Vec::new();
        r.inner.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            fingerprint,
            manifest,
            entries,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        Self::read_from(bytes)
    }

    /// Atomic write to `path`.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        atomic_write(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(file))
    }

    /// Errors when the stored fingerprint differs from `expected`, unless allowed.
    pub fn check_fingerprint(&self, expected: &[u8; 32], allow_mismatch: bool) -> Result<(), CliError> {
        if &self.fingerprint != expected && !allow_mismatch {
            return Err(bad(
                "checkpoint was written for a different model section (use --allow-mismatch to load anyway)",
            ));
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
    pos: usize,
}

impl<R: Read> Reader<R> {
    /// Reads exactly `n` bytes; grows the buffer as data arrives so corrupt
    /// extents cannot trigger a huge allocation.
    fn take(&mut self, n: usize) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::with_capacity(n.min(1 << 20));
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(bad(format!("truncated at byte {}", self.pos + buf.len())));
        }
        self.pos += n;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
