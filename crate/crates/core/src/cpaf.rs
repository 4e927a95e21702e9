//! CPAF v1, the Chess Probe Activation File.
//!
//! One file holds the per-layer activations for the chosen move of many
//! positions. All integers are little-endian.
//!
//! ```text
//! header
//!   [u8; 4]   magic "CPAF"
//!   u32       version = 1
//!   u64       n_records
//!   u32       L (layers)
//!   u32       T (tokens)
//!   u32       D (model dimension)
//!   u8        dtype = 0 (f32 little-endian)
//!   u16       producer length, then that many UTF-8 bytes
//! record (repeated n_records times)
//!   u32       record length in bytes, not counting this field
//!   u16       FEN length, then UTF-8 bytes
//!   u8        move length, then UTF-8 bytes
//!   u32       concept mask (bit i set iff concept code i applies)
//!   f32 * L*T*D, layer-major, then token-major
//! ```
//!
//! The optional rule version is stored inside the producer string as a
//! trailing `;rules=<version>` segment.

use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"CPAF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;
const RULES_TAG: &str = ";rules=";

#[derive(Debug, Error)]
pub enum CpafError {
    #[error("{}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {0:?}, not a CPAF file")]
    BadMagic([u8; 4]),
    #[error("unsupported CPAF version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("record {index}: {reason}")]
    DimensionMismatch { index: usize, reason: String },
    #[error("record {index}: non-finite value at element {element}")]
    NonFiniteValue { index: usize, element: usize },
    #[error("record index {index} out of range ({count} records)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("layer {layer} out of range ({layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("bad metadata: {0}")]
    BadMeta(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationMeta {
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
    pub producer: String,
    pub rule_version: Option<String>,
}

impl ActivationMeta {
    pub fn new(layers: usize, tokens: usize, dim: usize, producer: impl Into<String>) -> ActivationMeta {
        ActivationMeta {
            layers,
            tokens,
            dim,
            producer: producer.into(),
            rule_version: None,
        }
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape {
            layers: self.layers,
            tokens: self.tokens,
            dim: self.dim,
        }
    }

    fn producer_field(&self) -> String {
        match &self.rule_version {
            Some(v) => format!("{}{RULES_TAG}{v}", self.producer),
            None => self.producer.clone(),
        }
    }

    fn validate(&self) -> Result<(), CpafError> {
        if self.layers == 0 || self.tokens == 0 || self.dim == 0 {
            return Err(CpafError::BadMeta("L, T and D must all be at least 1".into()));
        }
        if [self.layers, self.tokens, self.dim].iter().any(|&x| x > u32::MAX as usize) {
            return Err(CpafError::BadMeta("dimension exceeds u32".into()));
        }
        if self.producer_field().len() > u16::MAX as usize {
            return Err(CpafError::BadMeta("producer string longer than 65535 bytes".into()));
        }
        let payload = self.layers * self.tokens * self.dim * 4;
        if payload + 2 + u16::MAX as usize + 1 + 255 + 4 > u32::MAX as usize {
            return Err(CpafError::BadMeta("record payload exceeds u32 length prefix".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.layers * self.tokens * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub fen: String,
    pub chosen_move: String,
    pub concept_mask: u32,
    pub shape: TensorShape,
    /// `layers * tokens * dim` values, layer-major then token-major.
    pub tensor: Vec<f32>,
}

/// Header part of a record, as returned by [`CpafFile::read_key`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordKey {
    pub fen: String,
    pub chosen_move: String,
    pub concept_mask: u32,
    tensor_offset: u64,
}

/// Borrowed `tokens x dim` slice of one layer; rows are tokens.
#[derive(Debug, Clone, Copy)]
pub struct LayerMatrix<'a> {
    pub tokens: usize,
    pub dim: usize,
    pub data: &'a [f32],
}

impl<'a> LayerMatrix<'a> {
    pub fn row(&self, token: usize) -> &'a [f32] {
        &self.data[token * self.dim..(token + 1) * self.dim]
    }
}

impl ActivationRecord {
    pub fn layer_matrix(&self, layer: usize) -> Result<LayerMatrix<'_>, CpafError> {
        let TensorShape { layers, tokens, dim } = self.shape;
        if layer >= layers {
            return Err(CpafError::LayerOutOfRange { layer, layers });
        }
        let stride = tokens * dim;
        Ok(LayerMatrix {
            tokens,
            dim,
            data: &self.tensor[layer * stride..(layer + 1) * stride],
        })
    }

    /// Activation of the move token (the last token) at `layer`.
    pub fn move_token_vector(&self, layer: usize) -> Result<&[f32], CpafError> {
        let m = self.layer_matrix(layer)?;
        Ok(m.row(m.tokens - 1))
    }

    fn check(&self, index: usize, shape: TensorShape) -> Result<(), CpafError> {
        let mismatch = |reason: String| CpafError::DimensionMismatch { index, reason };
        if self.shape != shape {
            return Err(mismatch(format!("shape {:?} differs from file shape {:?}", self.shape, shape)));
        }
        if self.tensor.len() != shape.len() {
            return Err(mismatch(format!("tensor has {} values, expected {}", self.tensor.len(), shape.len())));
        }
        if self.fen.len() > u16::MAX as usize {
            return Err(mismatch("FEN longer than 65535 bytes".into()));
        }
        if self.chosen_move.len() > u8::MAX as usize {
            return Err(mismatch("move longer than 255 bytes".into()));
        }
        if let Some(element) = self.tensor.iter().position(|v| !v.is_finite()) {
            return Err(CpafError::NonFiniteValue { index, element });
        }
        Ok(())
    }
}

fn record_body_len(fen: usize, mv: usize, values: usize) -> usize {
    2 + fen + 1 + mv + 4 + values * 4
}

/// Streaming writer. The record count in the header is patched on
/// [`CpafWriter::finish`].
pub struct CpafWriter {
    out: BufWriter<File>,
    path: PathBuf,
    shape: TensorShape,
    count: u64,
}

impl CpafWriter {
    pub fn create(path: &Path, meta: &ActivationMeta) -> Result<CpafWriter, CpafError> {
        meta.validate()?;
        let io = io_err(path);
        let file = File::create(path).map_err(io)?;
        let mut out = BufWriter::new(file);
        let producer = meta.producer_field();
        let mut header = Vec::with_capacity(31 + producer.len());
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        header.extend_from_slice(&(meta.layers as u32).to_le_bytes());
        header.extend_from_slice(&(meta.tokens as u32).to_le_bytes());
        header.extend_from_slice(&(meta.dim as u32).to_le_bytes());
        header.push(DTYPE_F32_LE);
        header.extend_from_slice(&(producer.len() as u16).to_le_bytes());
        header.extend_from_slice(producer.as_bytes());
        out.write_all(&header).map_err(io_err(path))?;
        Ok(CpafWriter {
            out,
            path: path.to_path_buf(),
            shape: meta.shape(),
            count: 0,
        })
    }

    pub fn append(&mut self, record: &ActivationRecord) -> Result<(), CpafError> {
        record.check(self.count as usize, self.shape)?;
        let body = record_body_len(record.fen.len(), record.chosen_move.len(), record.tensor.len());
        let mut buf = Vec::with_capacity(4 + body);
        buf.extend_from_slice(&(body as u32).to_le_bytes());
        buf.extend_from_slice(&(record.fen.len() as u16).to_le_bytes());
        buf.extend_from_slice(record.fen.as_bytes());
        buf.push(record.chosen_move.len() as u8);
        buf.extend_from_slice(record.chosen_move.as_bytes());
        buf.extend_from_slice(&record.concept_mask.to_le_bytes());
        for v in &record.tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(io_err(&self.path))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64, CpafError> {
        let path = self.path.clone();
        self.out.flush().map_err(io_err(&path))?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(8)).map_err(io_err(&path))?;
        file.write_all(&self.count.to_le_bytes()).map_err(io_err(&path))?;
        file.sync_all().map_err(io_err(&path))?;
        Ok(self.count)
    }
}

/// Writes `records` to `path`; returns the number written. Nothing is left
/// on disk in a half-written state that claims more records than it holds.
pub fn write(path: &Path, meta: &ActivationMeta, records: &[ActivationRecord]) -> Result<u64, CpafError> {
    for (i, r) in records.iter().enumerate() {
        r.check(i, meta.shape())?;
    }
    let mut w = CpafWriter::create(path, meta)?;
    for r in records {
        w.append(r)?;
    }
    w.finish()
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CpafError + '_ {
    move |source| CpafError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An opened CPAF file: validated header plus the byte offset of every
/// record. Reads are positional, so one handle serves concurrent readers.
pub struct CpafFile {
    path: PathBuf,
    file: Mutex<File>,
    meta: ActivationMeta,
    offsets: Vec<u64>,
}

impl std::fmt::Debug for CpafFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CpafFile")
            .field("path", &self.path)
            .field("meta", &self.meta)
            .field("records", &self.offsets.len())
            .finish()
    }
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    pos: u64,
    len: u64,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N], CpafError> {
        if self.pos + N as u64 > self.len {
            return Err(CpafError::TruncatedFile(format!("ends inside {what}")));
        }
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| CpafError::TruncatedFile(format!("{what}: {e}")))?;
        self.pos += N as u64;
        Ok(b)
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<u8>, CpafError> {
        if self.pos + n as u64 > self.len {
            return Err(CpafError::TruncatedFile(format!("ends inside {what}")));
        }
        let mut b = vec![0u8; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| CpafError::TruncatedFile(format!("{what}: {e}")))?;
        self.pos += n as u64;
        Ok(b)
    }
}

impl CpafFile {
    pub fn open(path: &Path) -> Result<CpafFile, CpafError> {
        let io = io_err(path);
        let mut file = File::open(path).map_err(&io)?;
        let len = file.metadata().map_err(&io)?.len();
        let mut reader = io::BufReader::new(&mut file);
        let mut cur = Cursor {
            inner: &mut reader,
            pos: 0,
            len,
        };

        let magic: [u8; 4] = cur.bytes("magic")?;
        if magic != MAGIC {
            return Err(CpafError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(cur.bytes("version")?);
        if version != VERSION {
            return Err(CpafError::UnsupportedVersion(version));
        }
        let n_records = u64::from_le_bytes(cur.bytes("record count")?);
        let layers = u32::from_le_bytes(cur.bytes("L")?) as usize;
        let tokens = u32::from_le_bytes(cur.bytes("T")?) as usize;
        let dim = u32::from_le_bytes(cur.bytes("D")?) as usize;
        let [dtype] = cur.bytes::<1>("dtype")?;
        if dtype != DTYPE_F32_LE {
            return Err(CpafError::UnsupportedDtype(dtype));
        }
        let plen = u16::from_le_bytes(cur.bytes("producer length")?) as usize;
        let producer_raw = String::from_utf8(cur.vec(plen, "producer")?)
            .map_err(|_| CpafError::Corrupt("producer is not UTF-8".into()))?;
        if layers == 0 || tokens == 0 || dim == 0 {
            return Err(CpafError::Corrupt(format!("zero dimension in ({layers}, {tokens}, {dim})")));
        }
        let (producer, rule_version) = match producer_raw.rfind(RULES_TAG) {
            Some(i) => (
                producer_raw[..i].to_string(),
                Some(producer_raw[i + RULES_TAG.len()..].to_string()),
            ),
            None => (producer_raw, None),
        };
        let meta = ActivationMeta {
            layers,
            tokens,
            dim,
            producer,
            rule_version,
        };

        let values = layers * tokens * dim;
        let mut offsets = Vec::with_capacity(n_records.min(1 << 20) as usize);
        for i in 0..n_records {
            let start = cur.pos;
            let body = u32::from_le_bytes(cur.bytes(&format!("record {i} length"))?) as u64;
            if start + 4 + body > len {
                return Err(CpafError::TruncatedFile(format!("record {i} extends past end of file")));
            }
            let fen_len = u16::from_le_bytes(cur.bytes("FEN length")?) as usize;
            cur.vec(fen_len, "FEN")?;
            let [mv_len] = cur.bytes::<1>("move length")?;
            let expected = record_body_len(fen_len, mv_len as usize, values) as u64;
            if body != expected {
                return Err(CpafError::Corrupt(format!(
                    "record {i} declares {body} bytes, layout needs {expected}"
                )));
            }
            // skip the rest of the record
            let skip = body - 2 - fen_len as u64 - 1;
            cur.inner
                .seek_relative(skip as i64)
                .map_err(|e| CpafError::TruncatedFile(e.to_string()))?;
            cur.pos += skip;
            offsets.push(start);
        }
        if cur.pos != len {
            return Err(CpafError::Corrupt(format!(
                "{} trailing bytes after {} records",
                len - cur.pos,
                n_records
            )));
        }
        drop(reader);
        Ok(CpafFile {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            meta,
            offsets,
        })
    }

    pub fn meta(&self) -> &ActivationMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn read_record(&self, index: usize) -> Result<ActivationRecord, CpafError> {
        let offset = *self.offsets.get(index).ok_or(CpafError::IndexOutOfRange {
            index,
            count: self.offsets.len(),
        })?;
        let end = self.offsets.get(index + 1).copied();
        let io = io_err(&self.path);
        let buf = {
            let mut f = self.file.lock().expect("reader lock poisoned");
            f.seek(SeekFrom::Start(offset)).map_err(&io)?;
            let mut len = [0u8; 4];
            f.read_exact(&mut len).map_err(&io)?;
            let body = u32::from_le_bytes(len) as usize;
            debug_assert!(end.is_none_or(|e| e == offset + 4 + body as u64));
            let mut buf = vec![0u8; body];
            f.read_exact(&mut buf).map_err(&io)?;
            buf
        };

        let corrupt = |what: &str| CpafError::Corrupt(format!("record {index}: {what}"));
        let fen_len = u16::from_le_bytes([buf[0], buf[1]]) as usize;
        let mut p = 2;
        let fen = std::str::from_utf8(&buf[p..p + fen_len])
            .map_err(|_| corrupt("FEN is not UTF-8"))?
            .to_string();
        p += fen_len;
        let mv_len = buf[p] as usize;
        p += 1;
        let chosen_move = std::str::from_utf8(&buf[p..p + mv_len])
            .map_err(|_| corrupt("move is not UTF-8"))?
            .to_string();
        p += mv_len;
        let concept_mask = u32::from_le_bytes(buf[p..p + 4].try_into().unwrap());
        p += 4;
        let tensor: Vec<f32> = buf[p..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(element) = tensor.iter().position(|v| !v.is_finite()) {
            return Err(CpafError::NonFiniteValue { index, element });
        }
        Ok(ActivationRecord {
            fen,
            chosen_move,
            concept_mask,
            shape: self.meta.shape(),
            tensor,
        })
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<(), CpafError> {
        let io = io_err(&self.path);
        let mut f = self.file.lock().expect("reader lock poisoned");
        f.seek(SeekFrom::Start(offset)).map_err(&io)?;
        f.read_exact(buf).map_err(&io)
    }

    fn offset(&self, index: usize) -> Result<u64, CpafError> {
        self.offsets.get(index).copied().ok_or(CpafError::IndexOutOfRange {
            index,
            count: self.offsets.len(),
        })
    }

    /// FEN, move and concept mask of a record, without its tensor.
    pub fn read_key(&self, index: usize) -> Result<RecordKey, CpafError> {
        let offset = self.offset(index)?;
        let corrupt = |what: &str| CpafError::Corrupt(format!("record {index}: {what}"));
        let mut head = [0u8; 6];
        self.read_at(offset, &mut head)?;
        let fen_len = u16::from_le_bytes([head[4], head[5]]) as usize;
        let mut buf = vec![0u8; fen_len + 1];
        self.read_at(offset + 6, &mut buf)?;
        let mv_len = buf[fen_len] as usize;
        let fen = String::from_utf8(buf[..fen_len].to_vec()).map_err(|_| corrupt("FEN is not UTF-8"))?;
        let mut rest = vec![0u8; mv_len + 4];
        self.read_at(offset + 6 + fen_len as u64 + 1, &mut rest)?;
        let chosen_move = String::from_utf8(rest[..mv_len].to_vec()).map_err(|_| corrupt("move is not UTF-8"))?;
        let concept_mask = u32::from_le_bytes(rest[mv_len..].try_into().unwrap());
        Ok(RecordKey {
            fen,
            chosen_move,
            concept_mask,
            tensor_offset: offset + 4 + 2 + fen_len as u64 + 1 + mv_len as u64 + 4,
        })
    }

    /// The `T × D` matrix of one layer, read without touching the others.
    pub fn read_layer(&self, key: &RecordKey, index: usize, layer: usize) -> Result<Vec<f32>, CpafError> {
        if layer >= self.meta.layers {
            return Err(CpafError::LayerOutOfRange {
                layer,
                layers: self.meta.layers,
            });
        }
        let n = self.meta.tokens * self.meta.dim;
        let mut buf = vec![0u8; n * 4];
        self.read_at(key.tensor_offset + (layer * n * 4) as u64, &mut buf)?;
        let out: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(element) = out.iter().position(|v| !v.is_finite()) {
            return Err(CpafError::NonFiniteValue {
                index,
                element: layer * n + element,
            });
        }
        Ok(out)
    }

    pub fn records(&self) -> impl Iterator<Item = Result<ActivationRecord, CpafError>> + '_ {
        (0..self.len()).map(|i| self.read_record(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill_pattern(shape: TensorShape) -> Vec<f32> {
        let mut t = Vec::with_capacity(shape.len());
        for l in 0..shape.layers {
            for tok in 0..shape.tokens {
                for _ in 0..shape.dim {
                    t.push((l * 1000 + tok) as f32);
                }
            }
        }
        t
    }

    fn record(shape: TensorShape, fen: &str) -> ActivationRecord {
        ActivationRecord {
            fen: fen.into(),
            chosen_move: "e2e4".into(),
            concept_mask: 0b10,
            shape,
            tensor: fill_pattern(shape),
        }
    }

    #[test]
    fn slicing_follows_layout() {
        let shape = TensorShape { layers: 3, tokens: 4, dim: 2 };
        let r = record(shape, "x");
        assert!(r.move_token_vector(2).unwrap().iter().all(|&v| v == 2003.0));
        let m = r.layer_matrix(1).unwrap();
        for tok in 0..4 {
            assert!(m.row(tok).iter().all(|&v| v == (1000 + tok) as f32));
        }
        assert_eq!(r.move_token_vector(1).unwrap(), m.row(3));
        assert!(matches!(r.move_token_vector(3), Err(CpafError::LayerOutOfRange { layer: 3, layers: 3 })));
    }

    #[test]
    fn write_open_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cpaf");
        let mut meta = ActivationMeta::new(2, 3, 4, "unit-test");
        meta.rule_version = Some("v1".into());
        let recs: Vec<_> = (0..5).map(|i| record(meta.shape(), &format!("fen {i}"))).collect();
        assert_eq!(write(&path, &meta, &recs).unwrap(), 5);

        let header = 4 + 4 + 8 + 12 + 1 + 2 + "unit-test;rules=v1".len();
        let per = 4 + 2 + 5 + 1 + 4 + 4 + 24 * 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, header + 5 * per);

        let f = CpafFile::open(&path).unwrap();
        assert_eq!(f.meta(), &meta);
        assert_eq!(f.len(), 5);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(&f.read_record(i).unwrap(), r);
        }
        assert!(matches!(f.read_record(5), Err(CpafError::IndexOutOfRange { index: 5, count: 5 })));

        for (i, r) in recs.iter().enumerate() {
            let key = f.read_key(i).unwrap();
            assert_eq!((key.fen.as_str(), key.chosen_move.as_str(), key.concept_mask), (r.fen.as_str(), "e2e4", 2));
            for l in 0..2 {
                assert_eq!(f.read_layer(&key, i, l).unwrap(), r.layer_matrix(l).unwrap().data);
            }
            assert!(matches!(f.read_layer(&key, i, 2), Err(CpafError::LayerOutOfRange { .. })));
        }
    }

    #[test]
    fn empty_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cpaf");
        let meta = ActivationMeta::new(1, 1, 1, "");
        assert_eq!(write(&path, &meta, &[]).unwrap(), 0);
        let f = CpafFile::open(&path).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn rejects_nan_and_bad_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.cpaf");
        let meta = ActivationMeta::new(2, 3, 4, "t");
        let mut r = record(meta.shape(), "f");
        r.tensor[7] = f32::NAN;
        assert!(matches!(
            write(&path, &meta, &[r]),
            Err(CpafError::NonFiniteValue { index: 0, element: 7 })
        ));
        let mut short = record(meta.shape(), "f");
        short.tensor.pop();
        assert!(matches!(write(&path, &meta, &[short]), Err(CpafError::DimensionMismatch { .. })));
        assert!(matches!(
            write(&path, &ActivationMeta::new(0, 3, 4, "t"), &[]),
            Err(CpafError::BadMeta(_))
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cpaf");
        let meta = ActivationMeta::new(2, 3, 4, "t");
        let recs: Vec<_> = (0..3).map(|i| record(meta.shape(), &format!("{i}"))).collect();
        write(&path, &meta, &recs).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(CpafFile::open(&path), Err(CpafError::BadMagic(_))));

        let mut v2 = good.clone();
        v2[4] = 2;
        std::fs::write(&path, &v2).unwrap();
        assert!(matches!(CpafFile::open(&path), Err(CpafError::UnsupportedVersion(2))));

        std::fs::write(&path, &good[..good.len() - 10]).unwrap();
        assert!(matches!(CpafFile::open(&path), Err(CpafError::TruncatedFile(_))));

        std::fs::write(&path, &good[..20]).unwrap();
        assert!(matches!(CpafFile::open(&path), Err(CpafError::TruncatedFile(_))));

        let mut extra = good.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(CpafFile::open(&path), Err(CpafError::Corrupt(_))));
    }
}
