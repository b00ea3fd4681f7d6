//! Binary dataset files: a magic, the schema text, a record count, then
//! length-prefixed records. Fixed fields are little-endian; variable fields
//! carry a u32 length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Result, WorkloadError};
use crate::schema::{parse_schema, FieldKind, ObjectSchema};
use crate::store::Value;
use fnv::FnvHasher;
use std::hash::Hasher;

pub const MAGIC: &[u8; 8] = b"FTDSET01";

fn bad(message: impl Into<String>) -> WorkloadError {
    WorkloadError::Dataset(message.into())
}

pub fn encode_record(schema: &ObjectSchema, values: &[Value]) -> Result<Vec<u8>> {
    if values.len() != schema.fields.len() {
        return Err(bad(format!("expected {} values, got {}", schema.fields.len(), values.len())));
    }
    let mut out = Vec::new();
    for (f, v) in schema.fields.iter().zip(values) {
        if v.kind() != f.kind {
            return Err(bad(format!("field `{}` is {}, got {}", f.name, f.kind, v.kind())));
        }
        match v {
            Value::I16(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::I32(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::F32(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::Bytes(_) | Value::Str(_) => {
                let p = v.payload().unwrap();
                let len = u32::try_from(p.len()).map_err(|_| bad(format!("field `{}` longer than 4 GiB", f.name)))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(p);
            }
        }
    }
    Ok(out)
}

pub fn decode_record(schema: &ObjectSchema, bytes: &[u8]) -> Result<Vec<Value>> {
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad(format!("record truncated in field `{field}`")))?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::with_capacity(schema.fields.len());
    for f in &schema.fields {
        let v = match f.kind {
            FieldKind::I16 => Value::I16(i16::from_le_bytes(take(2, &f.name)?.try_into().unwrap())),
            FieldKind::I32 => Value::I32(i32::from_le_bytes(take(4, &f.name)?.try_into().unwrap())),
            FieldKind::I64 => Value::I64(i64::from_le_bytes(take(8, &f.name)?.try_into().unwrap())),
            FieldKind::F32 => Value::F32(f32::from_le_bytes(take(4, &f.name)?.try_into().unwrap())),
            FieldKind::F64 => Value::F64(f64::from_le_bytes(take(8, &f.name)?.try_into().unwrap())),
            FieldKind::Bytes | FieldKind::String => {
                let len = u32::from_le_bytes(take(4, &f.name)?.try_into().unwrap()) as usize;
                let p = take(len, &f.name)?.to_vec();
                if f.kind == FieldKind::Bytes {
                    Value::Bytes(p)
                } else {
                    Value::Str(String::from_utf8(p).map_err(|_| bad(format!("field `{}` is not UTF-8", f.name)))?)
                }
            }
        };
        out.push(v);
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes after record", bytes.len() - pos)));
    }
    Ok(out)
}

/// Streams records to a dataset file. The count is fixed up front.
pub struct DatasetWriter {
    out: BufWriter<File>,
    schema: ObjectSchema,
    remaining: u64,
    hash: FnvHasher,
}

impl DatasetWriter {
    pub fn create(path: &Path, schema: &ObjectSchema, count: u64) -> Result<DatasetWriter> {
        let mut w = DatasetWriter {
            out: BufWriter::new(File::create(path)?),
            schema: schema.clone(),
            remaining: count,
            hash: FnvHasher::default(),
        };
        let text = schema.to_string();
        w.emit(MAGIC)?;
        w.emit(&(text.len() as u32).to_le_bytes())?;
        w.emit(text.as_bytes())?;
        w.emit(&count.to_le_bytes())?;
        Ok(w)
    }

    fn emit(&mut self, bytes: &[u8]) -> Result<()> {
        self.hash.write(bytes);
        self.out.write_all(bytes)?;
        Ok(())
    }

    pub fn write_record(&mut self, values: &[Value]) -> Result<()> {
        if self.remaining == 0 {
            return Err(bad("more records than declared"));
        }
        let rec = encode_record(&self.schema, values)?;
        self.emit(&(rec.len() as u32).to_le_bytes())?;
        self.emit(&rec)?;
        self.remaining -= 1;
        Ok(())
    }

    /// Flushes and returns the FNV-1a checksum of the file.
    pub fn finish(mut self) -> Result<u64> {
        if self.remaining != 0 {
            return Err(bad(format!("{} declared records never written", self.remaining)));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(self.hash.finish())
    }
}

pub struct DatasetReader {
    input: BufReader<File>,
    schema: ObjectSchema,
    count: u64,
    read: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<DatasetReader> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad(format!("{} is not a dataset file", path.display())));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
        let mut text = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut text).map_err(|_| bad("truncated schema"))?;
        let text = String::from_utf8(text).map_err(|_| bad("schema is not UTF-8"))?;
        let schema = parse_schema(&text)?;
        let mut count = [0u8; 8];
        input.read_exact(&mut count).map_err(|_| bad("truncated header"))?;
        Ok(DatasetReader {
            input,
            schema,
            count: u64::from_le_bytes(count),
            read: 0,
        })
    }

    pub fn schema(&self) -> &ObjectSchema {
        &self.schema
    }

    /// Declared record count.
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Next encoded record, without its length prefix.
    pub fn next_raw(&mut self) -> Result<Option<Vec<u8>>> {
        if self.read == self.count {
            return Ok(None);
        }
        let mut len = [0u8; 4];
        self.input
            .read_exact(&mut len)
            .map_err(|_| bad(format!("file ends after {} of {} records", self.read, self.count)))?;
        let mut rec = vec![0u8; u32::from_le_bytes(len) as usize];
        self.input
            .read_exact(&mut rec)
            .map_err(|_| bad(format!("record {} truncated", self.read)))?;
        self.read += 1;
        Ok(Some(rec))
    }

    pub fn next_record(&mut self) -> Result<Option<Vec<Value>>> {
        match self.next_raw()? {
            Some(raw) => decode_record(&self.schema, &raw).map(Some),
            None => Ok(None),
        }
    }
}

/// FNV-1a over the whole file; matches [`DatasetWriter::finish`].
pub fn file_checksum(path: &Path) -> Result<u64> {
    let mut input = BufReader::new(File::open(path)?);
    let mut hash = FnvHasher::default();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = input.read(&mut buf)?;
        if n == 0 {
            return Ok(hash.finish());
        }
        hash.write(&buf[..n]);
    }
}

