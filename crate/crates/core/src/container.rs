//! Binary model container shared by neural checkpoints and n-gram models.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "LSLM" | version | field count | (key len, key, value len, value)*
//!        | (name len, name, rank, dims[rank], f32 payload[prod(dims)])*
//! ```
//!
//! Records run to end of file. Readers validate record names and shapes
//! against the config block, which is how truncation at a record boundary is
//! detected.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSLM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub config: Vec<(String, String)>,
    pub records: Vec<Record>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)?;
    if n > 1 << 20 {
        return Err(Error::Format(format!("implausible string length {n}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| Error::Format("invalid utf-8".into()))
}

/// Reads a u32 or reports clean end-of-file as `None`.
fn try_u32<R: Read>(r: &mut R) -> Result<Option<usize>> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut b[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Format("truncated file".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(u32::from_le_bytes(b) as usize))
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("missing config field {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("bad value {v:?} for {key:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION as usize)?;
        put_u32(&mut w, self.config.len())?;
        for (k, v) in &self.config {
            put_str(&mut w, k)?;
            put_str(&mut w, v)?;
        }
        for r in &self.records {
            if r.dims.iter().product::<usize>() != r.data.len() {
                return Err(Error::Format(format!("record {} has inconsistent dims", r.name)));
            }
            put_str(&mut w, &r.name)?;
            put_u32(&mut w, r.dims.len())?;
            for &d in &r.dims {
                put_u32(&mut w, d)?;
            }
            let mut buf = Vec::with_capacity(r.data.len() * 4);
            for x in &r.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let fields = get_u32(&mut r)?;
        let mut config = Vec::with_capacity(fields.min(1024));
        for _ in 0..fields {
            let k = get_str(&mut r)?;
            let v = get_str(&mut r)?;
            config.push((k, v));
        }
        let mut records = Vec::new();
        while let Some(name_len) = try_u32(&mut r)? {
            if name_len > 1 << 16 {
                return Err(Error::Format(format!("implausible record name length {name_len}")));
            }
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb).map_err(truncated)?;
            let name = String::from_utf8(nb).map_err(|_| Error::Format("invalid utf-8".into()))?;
            let rank = get_u32(&mut r)?;
            if rank > 8 {
                return Err(Error::Format(format!("implausible rank {rank}")));
            }
            let dims = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(Record { name, dims, data });
        }
        Ok(Self { config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
