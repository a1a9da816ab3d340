//! NPY (format version 1.0) encoding and decoding.
//!
//! Only little-endian, C-ordered `float32`, `uint8` and `int32` payloads are
//! supported. Headers are written exactly the way numpy writes them, so files
//! emitted here are byte-identical to `numpy.save` output for the same array.
//! Versions 2.0 and 3.0 are accepted on read.

use crate::error::{Error, Result};

use super::{ArrayData, DType, DenseArray};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

const PREAMBLE_V1: usize = 10;
const PREAMBLE_V2: usize = 12;
const ALIGNMENT: usize = 64;

impl DType {
    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::U8 => "|u1",
            DType::I32 => "<i4",
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(DType::F32),
            "|u1" | "<u1" | ">u1" | "=u1" | "u1" => Ok(DType::U8),
            "<i4" => Ok(DType::I32),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

/// Serialize an array to NPY bytes.
pub fn encode(arr: &DenseArray) -> Vec<u8> {
    let header = header_text(arr.dtype(), arr.shape());
    let mut out = Vec::with_capacity(PREAMBLE_V1 + header.len() + arr.byte_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match arr.data() {
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::U8(v) => out.extend_from_slice(v),
        ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

fn header_text(dtype: DType, shape: &[usize]) -> String {
    let shape_repr = match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    };
    let mut text = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_repr
    );
    // pad with spaces so that preamble + header + '\n' is 64-byte aligned
    let unpadded = PREAMBLE_V1 + text.len() + 1;
    let pad = (ALIGNMENT - unpadded % ALIGNMENT) % ALIGNMENT;
    text.extend(std::iter::repeat(' ').take(pad));
    text.push('\n');
    text
}

/// Parse NPY bytes into an array.
pub fn decode(bytes: &[u8]) -> Result<DenseArray> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE_V1 {
        return Err(Error::BadHeader("truncated preamble".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, PREAMBLE_V1),
        2 | 3 => {
            if bytes.len() < PREAMBLE_V2 {
                return Err(Error::BadHeader("truncated preamble".into()));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
            (len as usize, PREAMBLE_V2)
        }
        v => return Err(Error::BadHeader(format!("unsupported format version {v}"))),
    };
    let header_end = header_start
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::BadHeader("header runs past end of file".into()))?;
    let text = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| Error::BadHeader("header is not valid UTF-8".into()))?;
    let header = HeaderDict::parse(text)?;
    if header.fortran_order {
        return Err(Error::BadHeader("fortran-ordered arrays are not supported".into()));
    }
    let dtype = DType::from_descr(&header.descr)?;

    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::BadHeader("shape product overflows".into()))?;
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::BadHeader("payload size overflows".into()))?;
    let payload = &bytes[header_end..];
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "header declares {expected} payload bytes, file holds {}",
            payload.len()
        )));
    }

    let data = match dtype {
        DType::F32 => ArrayData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::U8 => ArrayData::U8(payload.to_vec()),
        DType::I32 => ArrayData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    DenseArray::new(header.shape, data)
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Minimal parser for the Python dict literal numpy stores in the header.
struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(bad(format!("expected `{}` at offset {}", c as char, self.pos)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(bad(format!("expected string at offset {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(bad("unterminated string".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(dims);
                }
                Some(c) if c.is_ascii_digit() => {
                    let w = self.word();
                    let text = std::str::from_utf8(w).unwrap_or_default();
                    // numpy may emit `3L` under Python 2
                    let digits = text.strip_suffix('L').unwrap_or(text);
                    let d = digits
                        .parse::<usize>()
                        .map_err(|_| bad(format!("bad dimension `{text}`")))?;
                    dims.push(d);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(bad("expected `,` or `)` in shape".into())),
                    }
                }
                _ => return Err(bad("malformed shape tuple".into())),
            }
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => Ok(Value::Tuple(self.tuple()?)),
            Some(_) => match self.word() {
                b"True" => Ok(Value::Bool(true)),
                b"False" => Ok(Value::Bool(false)),
                other => Err(bad(format!(
                    "unexpected token `{}`",
                    String::from_utf8_lossy(other)
                ))),
            },
            None => Err(bad("unexpected end of header".into())),
        }
    }
}

fn bad(msg: String) -> Error {
    Error::BadHeader(msg)
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self> {
        let mut cur = Cursor {
            s: text.as_bytes(),
            pos: 0,
        };
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;

        cur.expect(b'{')?;
        loop {
            if cur.peek() == Some(b'}') {
                cur.pos += 1;
                break;
            }
            let key = cur.string()?;
            cur.expect(b':')?;
            let value = cur.value()?;
            match (key.as_str(), value) {
                ("descr", Value::Str(s)) if descr.is_none() => descr = Some(s),
                ("fortran_order", Value::Bool(b)) if fortran_order.is_none() => {
                    fortran_order = Some(b)
                }
                ("shape", Value::Tuple(t)) if shape.is_none() => shape = Some(t),
                (k, _) => return Err(bad(format!("unexpected or duplicate key `{k}`"))),
            }
            match cur.peek() {
                Some(b',') => cur.pos += 1,
                Some(b'}') => {}
                _ => return Err(bad("expected `,` or `}`".into())),
            }
        }
        if cur.s[cur.pos..].iter().any(|c| !c.is_ascii_whitespace()) {
            return Err(bad("trailing characters after header dict".into()));
        }

        Ok(HeaderDict {
            descr: descr.ok_or_else(|| bad("missing `descr`".into()))?,
            fortran_order: fortran_order.ok_or_else(|| bad("missing `fortran_order`".into()))?,
            shape: shape.ok_or_else(|| bad("missing `shape`".into()))?,
        })
    }
}
