//! Binary field dumps: one ASCII header line followed by little-endian `f64`
//! values in row-major order (last axis fastest).
//!
//! ```text
//! TRIHOM-FIELD name=<name> shape=<n0>,<n1>[,<n2>] [key=value ...] dtype=f64le\n
//! <prod(shape) * 8 bytes>
//! ```
//!
//! Values outside the support of a field are written as NaN.

use std::io::{BufRead, Write};

use crate::error::{Result, TrihomError};

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub name: String,
    pub shape: Vec<usize>,
    /// Extra header entries in the order they were written.
    pub meta: Vec<(String, String)>,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn new(name: &str, shape: Vec<usize>, values: Vec<f64>) -> Self {
        FieldDump { name: name.to_string(), shape, meta: Vec::new(), values }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if n != self.values.len() {
            return Err(TrihomError::GridMismatch(format!(
                "field {} has {} values for shape {:?}",
                self.name,
                self.values.len(),
                self.shape
            )));
        }
        let shape: Vec<String> = self.shape.iter().map(|s| s.to_string()).collect();
        let mut header = format!("TRIHOM-FIELD name={} shape={}", self.name, shape.join(","));
        for (k, v) in &self.meta {
            if k.contains([' ', '=', '\n']) || v.contains([' ', '\n']) {
                return Err(TrihomError::InvalidParameter(format!("header entry {k}={v} contains whitespace")));
            }
            header.push_str(&format!(" {k}={v}"));
        }
        header.push_str(" dtype=f64le\n");
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(8 * n);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.trim_end().split(' ');
        if parts.next() != Some("TRIHOM-FIELD") {
            return Err(TrihomError::Io("missing TRIHOM-FIELD header".into()));
        }
        let mut name = None;
        let mut shape = None;
        let mut meta = Vec::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| TrihomError::Io(format!("malformed header entry `{p}`")))?;
            match k {
                "name" => name = Some(v.to_string()),
                "shape" => {
                    let s: std::result::Result<Vec<usize>, _> = v.split(',').map(str::parse).collect();
                    shape = Some(s.map_err(|_| TrihomError::Io(format!("bad shape `{v}`")))?);
                }
                "dtype" if v != "f64le" => return Err(TrihomError::Io(format!("unsupported dtype {v}"))),
                "dtype" => {}
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        let name = name.ok_or_else(|| TrihomError::Io("header lacks name".into()))?;
        let shape: Vec<usize> = shape.ok_or_else(|| TrihomError::Io("header lacks shape".into()))?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; 8 * n];
        r.read_exact(&mut bytes)?;
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FieldDump { name, shape, meta, values })
    }
}
