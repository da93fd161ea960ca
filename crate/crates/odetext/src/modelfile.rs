//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "NODECLF"  u32 version (1)
//! tfidf:     u64 n_documents, u8 has_cap, u64 max_features,
//!            u64 n_tokens, n_tokens × (string token, u64 df), tensor idf
//! tensors:   encoder, encoder bias, W, b, head, head bias
//! solver:    u8 method (0 euler, 1 rk4, 2 dopri45), f64 rtol, f64 atol,
//!            f64 initial_step, u64 max_steps, u64 fixed_step_count
//! labels:    u64 count, count × string
//! training:  u64 seed, u64 epochs, u8 has_loss, f64 final_loss
//! ```
//!
//! A string is `u64 byte length` then UTF-8 bytes. A tensor is `u32 ndim`,
//! `ndim × u64` dims, then the `f64` entries in row-major order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use odetext_core::dynamics::DynamicsParams;
use odetext_core::linalg::{Matrix, Vector};
use odetext_core::model::NodeClassifier;
use odetext_core::odesolve::{Method, SolverConfig};
use odetext_core::text::{TfidfModel, Vocabulary};

pub const MAGIC: &[u8; 7] = b"NODECLF";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("unrecognized model file")]
    BadMagic,
    #[error("unsupported model file version {0} (expected {VERSION})")]
    Version(u32),
    #[error("truncated or unreadable model file: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// Seed, epoch count and final training loss of the run that produced a
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u64,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub tfidf: TfidfModel,
    pub model: NodeClassifier,
    pub meta: TrainingMeta,
}

struct Writer<W>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())
    }
    fn tensor(&mut self, dims: &[usize], data: &[f64]) -> io::Result<()> {
        self.u32(dims.len() as u32)?;
        for &d in dims {
            self.u64(d as u64)?;
        }
        for &x in data {
            self.f64(x)?;
        }
        Ok(())
    }
    fn matrix(&mut self, m: &Matrix) -> io::Result<()> {
        self.tensor(&[m.rows(), m.cols()], m.as_slice())
    }
    fn vector(&mut self, v: &Vector) -> io::Result<()> {
        self.tensor(&[v.dim()], v.as_slice())
    }
}

struct Reader<R>(R);

type Parsed<T> = Result<T, ModelFileError>;

fn corrupt(msg: impl Into<String>) -> ModelFileError {
    ModelFileError::Corrupt(msg.into())
}

// guards allocations driven by length fields
const MAX_LEN: u64 = 1 << 32;

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Parsed<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Parsed<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Parsed<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Parsed<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, what: &str) -> Parsed<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(corrupt(format!("implausible {what} length {n}")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Parsed<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn str(&mut self) -> Parsed<String> {
        let n = self.len("string")?;
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| corrupt("string is not UTF-8"))
    }
    fn tensor(&mut self, ndim: u32, what: &str) -> Parsed<(Vec<usize>, Vec<f64>)> {
        let found = self.u32()?;
        if found != ndim {
            return Err(corrupt(format!("{what} has {found} dimensions, expected {ndim}")));
        }
        let dims = (0..ndim).map(|_| self.len(what)).collect::<Parsed<Vec<usize>>>()?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = count
            .filter(|&c| c as u64 <= MAX_LEN)
            .ok_or_else(|| corrupt(format!("{what} is too large")))?;
        let data = (0..count).map(|_| self.f64()).collect::<Parsed<Vec<f64>>>()?;
        Ok((dims, data))
    }
    fn matrix(&mut self, what: &str) -> Parsed<Matrix> {
        let (dims, data) = self.tensor(2, what)?;
        Matrix::from_row_major(dims[0], dims[1], data).map_err(|e| corrupt(format!("{what}: {e}")))
    }
    fn vector(&mut self, what: &str) -> Parsed<Vector> {
        Ok(Vector::from_vec(self.tensor(1, what)?.1))
    }
}

fn method_code(m: Method) -> u8 {
    match m {
        Method::Euler => 0,
        Method::Rk4 => 1,
        Method::Dopri45 => 2,
    }
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        self.write(&mut w).expect("writing to memory");
        w.0
    }

    fn write<W: Write>(&self, w: &mut Writer<W>) -> io::Result<()> {
        w.0.write_all(MAGIC)?;
        w.u32(VERSION)?;

        let vocab = self.tfidf.vocab();
        w.u64(vocab.n_documents() as u64)?;
        let cap = self.tfidf.max_features();
        w.u8(cap.is_some() as u8)?;
        w.u64(cap.unwrap_or(0) as u64)?;
        w.u64(vocab.len() as u64)?;
        for (token, &df) in vocab.tokens().iter().zip(vocab.document_frequency()) {
            w.str(token)?;
            w.u64(df as u64)?;
        }
        w.vector(self.tfidf.idf())?;

        let m = &self.model;
        w.matrix(&m.encoder)?;
        w.vector(&m.encoder_bias)?;
        w.matrix(&m.dynamics.weight)?;
        w.vector(&m.dynamics.bias)?;
        w.matrix(&m.head)?;
        w.vector(&m.head_bias)?;

        let s = &m.solver;
        w.u8(method_code(s.method))?;
        w.f64(s.rtol)?;
        w.f64(s.atol)?;
        w.f64(s.initial_step)?;
        w.u64(s.max_steps as u64)?;
        w.u64(s.fixed_step_count as u64)?;

        w.u64(m.label_names.len() as u64)?;
        for name in &m.label_names {
            w.str(name)?;
        }

        w.u64(self.meta.seed)?;
        w.u64(self.meta.epochs)?;
        w.u8(self.meta.final_loss.is_some() as u8)?;
        w.f64(self.meta.final_loss.unwrap_or(0.0))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        let mut r = Reader(&bytes[MAGIC.len()..]);
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelFileError::Version(version));
        }

        let n_documents = r.len("corpus")?;
        let has_cap = r.u8()?;
        let cap = r.len("max_features")?;
        let n_tokens = r.len("vocabulary")?;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        let mut df = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            tokens.push(r.str()?);
            df.push(r.len("document frequency")?);
        }
        let idf = r.vector("idf")?;
        let vocab = Vocabulary::from_parts(tokens, df, n_documents).map_err(|e| corrupt(e.to_string()))?;
        let tfidf = TfidfModel::from_vocabulary(vocab, (has_cap != 0).then_some(cap));
        if tfidf
            .idf()
            .as_slice()
            .iter()
            .map(|x| x.to_bits())
            .ne(idf.as_slice().iter().map(|x| x.to_bits()))
        {
            return Err(corrupt("idf weights do not match the document frequencies"));
        }

        let encoder = r.matrix("encoder")?;
        let encoder_bias = r.vector("encoder bias")?;
        let weight = r.matrix("dynamics weight")?;
        let bias = r.vector("dynamics bias")?;
        let head = r.matrix("head")?;
        let head_bias = r.vector("head bias")?;
        let dynamics = DynamicsParams::new(weight, bias).map_err(|e| corrupt(e.to_string()))?;

        let method = match r.u8()? {
            0 => Method::Euler,
            1 => Method::Rk4,
            2 => Method::Dopri45,
            c => return Err(corrupt(format!("unknown solver method code {c}"))),
        };
        let solver = SolverConfig {
            method,
            rtol: r.f64()?,
            atol: r.f64()?,
            initial_step: r.f64()?,
            max_steps: r.len("max_steps")?,
            fixed_step_count: r.len("fixed_step_count")?,
        };

        let n_labels = r.len("labels")?;
        let label_names = (0..n_labels.min(1 << 20))
            .map(|_| r.str())
            .collect::<Parsed<Vec<String>>>()?;

        let seed = r.u64()?;
        let epochs = r.u64()?;
        let has_loss = r.u8()?;
        let loss = r.f64()?;
        if !r.0.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", r.0.len())));
        }

        let model = NodeClassifier {
            encoder,
            encoder_bias,
            dynamics,
            head,
            head_bias,
            solver,
            label_names,
        };
        model.validate().map_err(|e| corrupt(e.to_string()))?;
        if model.n_features() != tfidf.dim() {
            return Err(corrupt(format!(
                "encoder expects {} features but the vocabulary has {}",
                model.n_features(),
                tfidf.dim()
            )));
        }
        Ok(ModelFile {
            tfidf,
            model,
            meta: TrainingMeta {
                seed,
                epochs,
                final_loss: (has_loss != 0).then_some(loss),
            },
        })
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
