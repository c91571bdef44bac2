//! Binary parameter checkpoints.
//!
//! Layout: the 5-byte magic `SADP1`, then one record per parameter until
//! end of file. A record is the name length (u64 LE), the UTF-8 name, the
//! rank (u64 LE), each extent (u64 LE) and the values as f32 LE.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::module::Module;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SADP1";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&(r.name.len() as u64).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u64).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible {what} {v}")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
    };
    let mut records = Vec::new();
    while r.pos < buf.len() {
        let nlen = r.len("name length")?;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.len("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("extent")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {shape:?} for {name}")))?;
        let raw = r.take(count * 4, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(Record { name, shape, values });
    }
    Ok(records)
}

/// Records for every parameter of `model`, values rounded to f32.
pub fn records_of<M: Module + ?Sized>(model: &M) -> Vec<Record> {
    model
        .named_parameters()
        .into_iter()
        .map(|(name, t)| Record {
            name,
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

pub fn save<M: Module + ?Sized>(model: &M, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(&records_of(model)))?;
    Ok(())
}

/// Loads every parameter of `model` from `records`. Names and shapes must
/// match exactly; trainability of each parameter is preserved.
pub fn apply<M: Module + ?Sized>(model: &mut M, records: &[Record]) -> Result<()> {
    let expected = model.named_parameters();
    if expected.len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} parameters, checkpoint has {}",
            expected.len(),
            records.len()
        )));
    }
    let by_name: std::collections::HashMap<&str, &Record> = records.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut failure = None;
    model.visit_mut("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        match by_name.get(name) {
            Some(r) if r.shape == t.shape() => {
                let data = r.values.iter().map(|&v| v as f64).collect();
                let res = if t.requires_grad() {
                    Tensor::param(data, &r.shape)
                } else {
                    Tensor::new(data, &r.shape)
                };
                match res {
                    Ok(nt) => *t = nt,
                    Err(e) => failure = Some(Error::Checkpoint(format!("{name}: {e}"))),
                }
            }
            Some(r) => {
                failure = Some(Error::Checkpoint(format!(
                    "shape mismatch for {name}: model {:?}, checkpoint {:?}",
                    t.shape(),
                    r.shape
                )))
            }
            None => failure = Some(Error::Checkpoint(format!("missing parameter {name}"))),
        }
    });
    failure.map_or(Ok(()), Err)
}

pub fn load<M: Module + ?Sized>(model: &mut M, path: &Path) -> Result<()> {
    let buf = fs::read(path)?;
    apply(model, &decode(&buf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module::Linear;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let r = Record {
            name: "ab".into(),
            shape: vec![2],
            values: vec![1.0, -2.5],
        };
        let bytes = encode(&[r]);
        let mut want = b"SADP1".to_vec();
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(decode(b"SADP2").is_err());
        let mut good = encode(&[Record {
            name: "w".into(),
            shape: vec![3],
            values: vec![1.0, 2.0, 3.0],
        }]);
        good.pop();
        assert!(decode(&good).is_err());
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut l = Linear::zeros(2, 2);
        let other = Linear::zeros(3, 2);
        assert!(apply(&mut l, &records_of(&other)).is_err());
        let mut recs = records_of(&l);
        recs[0].name = "nope".into();
        assert!(apply(&mut l, &recs).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(any::<f32>(), 1..40), name in "[a-z._0-9]{1,20}") {
            let n = values.len();
            let recs = vec![Record { name, shape: vec![n], values }];
            let bytes = encode(&recs);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
