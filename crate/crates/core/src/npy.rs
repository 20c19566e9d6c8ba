//! Reading and writing the `.npy` array container.
//!
//! Only the subset needed for speech features is supported: little-endian
//! `float32` (`<f4`) and `uint32` (`<u4`) arrays in C order. Files are always
//! written as version 1.0 with the same header padding numpy uses, so a
//! saved array is byte-identical to `numpy.save` of the same data. Versions
//! 2.0 and 3.0 are accepted when reading.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// The `.npy` magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ARRAY_ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;
/// Header dictionaries longer than this are rejected outright.
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F32,
    U32,
}

impl ElementType {
    pub fn descr(self) -> &'static str {
        match self {
            ElementType::F32 => "<f4",
            ElementType::U32 => "<u4",
        }
    }

    pub fn size(self) -> usize {
        4
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(ElementType::F32),
            "<u4" => Ok(ElementType::U32),
            other => Err(Error::UnsupportedElementType(other.to_owned())),
        }
    }
}

/// Parsed array header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayHeader {
    pub element_type: ElementType,
    pub shape: Vec<usize>,
    /// Byte offset of the first element from the start of the file.
    pub data_offset: usize,
}

impl ArrayHeader {
    /// Number of elements, or an error when the shape product overflows.
    pub fn element_count(&self) -> Result<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| {
            acc.checked_mul(d)
                .ok_or_else(|| Error::Header(format!("shape {:?} overflows", self.shape)))
        })
    }

    pub fn payload_len(&self) -> Result<usize> {
        self.element_count()?
            .checked_mul(self.element_type.size())
            .ok_or_else(|| Error::Header(format!("shape {:?} overflows", self.shape)))
    }
}

/// Encodes a version 1.0 header for an array of the given type and shape.
pub fn encode_header(element_type: ElementType, shape: &[usize]) -> Vec<u8> {
    let shape_repr = match shape {
        [n] => format!("({n},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        element_type.descr(),
        shape_repr
    );
    if let Some(first) = shape.first() {
        let digits = first.to_string().len();
        dict.extend(std::iter::repeat_n(' ', GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits)));
    }
    // magic + version + u16 length, then the dict and a trailing newline
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = ARRAY_ALIGN - unpadded % ARRAY_ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(unpadded + pad);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    out
}

/// Reads and parses a header from the start of a stream.
pub fn read_header<R: Read>(reader: &mut R) -> Result<ArrayHeader> {
    let mut prefix = [0u8; 8];
    read_exact_or(reader, &mut prefix, "truncated header")?;
    if prefix[..6] != MAGIC {
        return Err(Error::Header("bad magic string".into()));
    }
    let (major, minor) = (prefix[6], prefix[7]);
    let (len_bytes, utf8) = match (major, minor) {
        (1, 0) => (2, false),
        (2, 0) => (4, false),
        (3, 0) => (4, true),
        _ => return Err(Error::Header(format!("unsupported version {major}.{minor}"))),
    };
    let mut len_buf = [0u8; 4];
    read_exact_or(reader, &mut len_buf[..len_bytes], "truncated header")?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    if header_len > MAX_HEADER_LEN {
        return Err(Error::Header(format!("header length {header_len} is too large")));
    }
    let mut dict = vec![0u8; header_len];
    read_exact_or(reader, &mut dict, "truncated header")?;
    let text = if utf8 {
        std::str::from_utf8(&dict).map_err(|_| Error::Header("header is not UTF-8".into()))?
    } else {
        if !dict.is_ascii() {
            return Err(Error::Header("header is not ASCII".into()));
        }
        // ASCII is valid UTF-8
        std::str::from_utf8(&dict).expect("ascii")
    };
    let (element_type, fortran_order, shape) = parse_dict(text)?;
    if fortran_order && shape.len() > 1 {
        return Err(Error::Header("Fortran-ordered arrays are not supported".into()));
    }
    Ok(ArrayHeader {
        element_type,
        shape,
        data_offset: 6 + 2 + len_bytes + header_len,
    })
}

/// Parses a header from the start of a byte slice.
pub fn parse_header(bytes: &[u8]) -> Result<ArrayHeader> {
    read_header(&mut &bytes[..])
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Header(what.to_owned()),
        _ => Error::Header(format!("{what}: {e}")),
    })
}

/// Decodes a complete `<f4` array. Trailing bytes are an error.
pub fn decode_f32(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let (header, payload) = split_payload(bytes, ElementType::F32)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.shape, values))
}

/// Decodes a complete `<u4` array. Trailing bytes are an error.
pub fn decode_u32(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u32>)> {
    let (header, payload) = split_payload(bytes, ElementType::U32)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.shape, values))
}

fn split_payload(bytes: &[u8], expected: ElementType) -> Result<(ArrayHeader, &[u8])> {
    let header = parse_header(bytes)?;
    if header.element_type != expected {
        return Err(Error::UnsupportedElementType(header.element_type.descr().to_owned()));
    }
    let payload = &bytes[header.data_offset..];
    let expected_len = header.payload_len()?;
    if payload.len() != expected_len {
        return Err(Error::Payload {
            expected: expected_len as u64,
            found: payload.len() as u64,
        });
    }
    Ok((header, payload))
}

pub fn encode_f32(shape: &[usize], values: &[f32]) -> Vec<u8> {
    let mut out = encode_header(ElementType::F32, shape);
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u32(shape: &[usize], values: &[u32]) -> Vec<u8> {
    let mut out = encode_header(ElementType::U32, shape);
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Streams a `<f4` array to a writer without building the payload in memory.
pub fn write_f32<W: Write>(writer: &mut W, shape: &[usize], values: &[f32]) -> std::io::Result<()> {
    writer.write_all(&encode_header(ElementType::F32, shape))?;
    let mut buf = Vec::with_capacity(64 * 1024);
    for chunk in values.chunks(16 * 1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    Ok(())
}

// Minimal parser for the Python dict literal numpy writes, e.g.
// {'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }

enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

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
            Err(Error::Header(format!("expected '{}' at byte {}", c as char, self.pos)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(Error::Header(format!("expected string at byte {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            if self.s[self.pos] == b'\\' {
                return Err(Error::Header("escape sequences are not supported".into()));
            }
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(Error::Header("unterminated string".into()));
        }
        let text = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(text)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn integer(&mut self) -> Result<usize> {
        let word = self.word();
        // Python 2 wrote longs with an 'L' suffix.
        let digits = word.strip_suffix(b"L").unwrap_or(word);
        if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
            return Err(Error::Header(format!("expected integer at byte {}", self.pos)));
        }
        std::str::from_utf8(digits)
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Header("shape dimension overflows".into()))
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                break;
            }
            dims.push(self.integer()?);
            if dims.len() > 32 {
                return Err(Error::Header("too many dimensions".into()));
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    // a single element tuple needs its trailing comma
                    if dims.len() == 1 {
                        return Err(Error::Header("shape '(n)' is not a tuple".into()));
                    }
                }
                _ => return Err(Error::Header(format!("bad shape tuple at byte {}", self.pos))),
            }
        }
        Ok(dims)
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'(') => self.tuple().map(Value::Tuple),
            _ => match self.word() {
                b"True" => Ok(Value::Bool(true)),
                b"False" => Ok(Value::Bool(false)),
                _ => Err(Error::Header(format!("unexpected value at byte {}", self.pos))),
            },
        }
    }
}

fn parse_dict(text: &str) -> Result<(ElementType, bool, Vec<usize>)> {
    let mut cur = Cursor {
        s: text.as_bytes(),
        pos: 0,
    };
    cur.expect(b'{')?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    loop {
        if cur.peek() == Some(b'}') {
            cur.pos += 1;
            break;
        }
        let key = cur.string()?;
        cur.expect(b':')?;
        let value = cur.value()?;
        let slot_taken = match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr.replace(s).is_some(),
            ("fortran_order", Value::Bool(b)) => fortran.replace(b).is_some(),
            ("shape", Value::Tuple(t)) => shape.replace(t).is_some(),
            ("descr" | "fortran_order" | "shape", _) => {
                return Err(Error::Header(format!("wrong value type for key '{key}'")))
            }
            _ => return Err(Error::Header(format!("unexpected key '{key}'"))),
        };
        if slot_taken {
            return Err(Error::Header(format!("duplicate key '{key}'")));
        }
        match cur.peek() {
            Some(b',') => cur.pos += 1,
            Some(b'}') => {}
            _ => return Err(Error::Header(format!("expected ',' or '}}' at byte {}", cur.pos))),
        }
    }
    if cur.peek().is_some() {
        return Err(Error::Header("trailing characters after header dict".into()));
    }
    let descr = descr.ok_or_else(|| Error::Header("missing key 'descr'".into()))?;
    let fortran = fortran.ok_or_else(|| Error::Header("missing key 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::Header("missing key 'shape'".into()))?;
    Ok((ElementType::from_descr(&descr)?, fortran, shape))
}
