//! Reading and writing two-dimensional float arrays in the NumPy `.npy` format.
//!
//! Versions 1.0 and 2.0 are supported for `f4`/`f8` data in C order, either
//! byte order. Arrays are always written as version 1.0 (2.0 when the header
//! would not fit) with the preamble padded to a multiple of 64 bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, NpyErrorKind, Result};
use crate::geometry::EmbeddingMatrix;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

fn fail<T>(offset: usize, kind: NpyErrorKind, detail: impl Into<Option<String>>) -> Result<T> {
    Err(Error::Npy {
        offset: offset as u64,
        kind,
        detail: detail.into(),
    })
}

#[derive(Debug, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Int(u64),
    Tuple(Vec<u64>),
}

/// Parser for the Python dict literal stored in the header.
struct HeaderParser<'a> {
    text: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn err<T>(&self, what: &str) -> Result<T> {
        fail(self.base + self.pos, NpyErrorKind::HeaderSyntax, what.to_string())
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && matches!(self.text[self.pos], b' ' | b'\t' | b'\n' | b'\r') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected '{}'", c as char))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return self.err("expected a quoted string"),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.text.len() {
            return self.err("unterminated string");
        }
        let s = String::from_utf8_lossy(&self.text[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn int(&mut self) -> Result<u64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii digits");
        match digits.parse() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err("expected a nonnegative integer")
            }
        }
    }

    fn word(&mut self) -> Result<Value> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        for (w, v) in [(&b"True"[..], true), (&b"False"[..], false)] {
            if rest.starts_with(w) {
                self.pos += w.len();
                return Ok(Value::Bool(v));
            }
        }
        self.err("expected True or False")
    }

    fn tuple(&mut self) -> Result<Vec<u64>> {
        self.expect(b'(')?;
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(items);
            }
            items.push(self.int()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return self.err("expected ',' or ')' in shape"),
            }
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => Ok(Value::Tuple(self.tuple()?)),
            Some(c) if c.is_ascii_digit() => Ok(Value::Int(self.int()?)),
            _ => self.word(),
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value, usize)>> {
        self.expect(b'{')?;
        let mut out = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let at = self.base + self.pos;
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            out.push((key, value, at));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return self.err("expected ',' or '}'"),
            }
        }
        if self.peek().is_some() {
            return self.err("unexpected characters after header dictionary");
        }
        Ok(out)
    }
}

struct Header {
    dtype: Dtype,
    big_endian: bool,
    rows: usize,
    cols: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return fail(0, NpyErrorKind::BadMagic, None);
    }
    if bytes.len() < 8 {
        return fail(bytes.len(), NpyErrorKind::Truncated, "missing version bytes".to_string());
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (len_bytes, header_start) = match (major, minor) {
        (1, 0) => (2, 10),
        (2, 0) => (4, 12),
        _ => return fail(6, NpyErrorKind::UnsupportedVersion, format!("version {major}.{minor}")),
    };
    if bytes.len() < header_start {
        return fail(bytes.len(), NpyErrorKind::Truncated, "missing header length".to_string());
    }
    let header_len = if len_bytes == 2 {
        u16::from_le_bytes([bytes[8], bytes[9]]) as usize
    } else {
        u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return fail(bytes.len(), NpyErrorKind::Truncated, "header extends past end of file".to_string());
    }
    let text = &bytes[header_start..data_start];
    if text.last() != Some(&b'\n') {
        return fail(data_start.saturating_sub(1), NpyErrorKind::HeaderSyntax, "header must end with a newline".to_string());
    }
    let mut parser = HeaderParser {
        text,
        pos: 0,
        base: header_start,
    };
    let entries = parser.dict()?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value, at) in entries {
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some((s, at)),
            ("fortran_order", Value::Bool(b)) => fortran = Some((b, at)),
            ("shape", Value::Tuple(t)) => shape = Some((t, at)),
            ("descr" | "fortran_order" | "shape", _) => {
                return fail(at, NpyErrorKind::HeaderSyntax, format!("wrong value type for '{key}'"));
            }
            _ => return fail(at, NpyErrorKind::HeaderSyntax, format!("unexpected key '{key}'")),
        }
    }
    let missing = |k: &str| fail(header_start, NpyErrorKind::HeaderSyntax, format!("missing key '{k}'"));
    let Some((descr, descr_at)) = descr else { return missing("descr") };
    let Some((fortran, fortran_at)) = fortran else { return missing("fortran_order") };
    let Some((shape, shape_at)) = shape else { return missing("shape") };

    let (big_endian, dtype) = match descr.as_str() {
        "<f8" | "=f8" => (false, Dtype::F8),
        ">f8" => (true, Dtype::F8),
        "<f4" | "=f4" => (false, Dtype::F4),
        ">f4" => (true, Dtype::F4),
        _ => return fail(descr_at, NpyErrorKind::UnsupportedDtype, format!("descr '{descr}'")),
    };
    if fortran {
        return fail(fortran_at, NpyErrorKind::FortranOrder, None);
    }
    if shape.len() != 2 {
        return fail(shape_at, NpyErrorKind::BadShape, format!("got {} dimensions", shape.len()));
    }
    Ok(Header {
        dtype,
        big_endian,
        rows: shape[0] as usize,
        cols: shape[1] as usize,
        data_start,
    })
}

/// Parses a complete `.npy` byte buffer into an `f64` matrix.
pub fn parse(bytes: &[u8]) -> Result<Array2<f64>> {
    let h = parse_header(bytes)?;
    let size = h.dtype.size();
    let count = h.rows.checked_mul(h.cols).and_then(|c| c.checked_mul(size));
    let Some(needed) = count else {
        return fail(h.data_start, NpyErrorKind::BadShape, "shape overflows".to_string());
    };
    let payload = &bytes[h.data_start..];
    if payload.len() < needed {
        return fail(bytes.len(), NpyErrorKind::Truncated, format!("need {needed} payload bytes, found {}", payload.len()));
    }
    if payload.len() > needed {
        return fail(h.data_start + needed, NpyErrorKind::TrailingBytes, None);
    }
    let values: Vec<f64> = payload
        .chunks_exact(size)
        .map(|c| match (h.dtype, h.big_endian) {
            (Dtype::F8, false) => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            (Dtype::F8, true) => f64::from_be_bytes(c.try_into().expect("8 bytes")),
            (Dtype::F4, false) => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            (Dtype::F4, true) => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
        })
        .collect();
    Ok(Array2::from_shape_vec((h.rows, h.cols), values).expect("length checked"))
}

/// Serializes a matrix as little-endian `.npy` bytes.
pub fn to_bytes(data: &Array2<f64>, dtype: Dtype) -> Vec<u8> {
    let (rows, cols) = data.dim();
    let descr = match dtype {
        Dtype::F4 => "<f4",
        Dtype::F8 => "<f8",
    };
    let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    let mut version = 1u8;
    let mut prefix = 10;
    if prefix + dict.len() + 1 > u16::MAX as usize {
        version = 2;
        prefix = 12;
    }
    let pad = (ALIGN - (prefix + dict.len() + 1) % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(prefix + header_len + rows * cols * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[version, 0]);
    if version == 1 {
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
    } else {
        out.extend_from_slice(&(header_len as u32).to_le_bytes());
    }
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in data.iter() {
        match dtype {
            Dtype::F8 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F4 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
        }
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

pub fn write_matrix(path: &Path, data: &Array2<f64>, dtype: Dtype) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&to_bytes(data, dtype)).map_err(|e| Error::io(path, e))
}

/// Newline-delimited item ids; a trailing newline is optional.
pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.strip_suffix('\n').unwrap_or(&text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    Ok(text.split('\n').map(|s| s.trim_end_matches('\r').to_string()).collect())
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads an embedding matrix; ids come from the sidecar file or default to row indices.
pub fn read_embeddings(path: &Path, ids: Option<&Path>) -> Result<EmbeddingMatrix> {
    let data = read_matrix(path)?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    match ids {
        None => EmbeddingMatrix::with_index_ids(model_id, data),
        Some(p) => {
            let items = read_ids(p)?;
            if items.len() != data.nrows() {
                return Err(Error::Invalid(format!(
                    "{} lists {} ids but {} has {} rows",
                    p.display(),
                    items.len(),
                    path.display(),
                    data.nrows()
                )));
            }
            EmbeddingMatrix::new(model_id, items, data)
        }
    }
}

pub fn write_embeddings(path: &Path, emb: &EmbeddingMatrix, ids: Option<&Path>) -> Result<()> {
    write_matrix(path, emb.data(), Dtype::F8)?;
    if let Some(p) = ids {
        write_ids(p, emb.items())?;
    }
    Ok(())
}
