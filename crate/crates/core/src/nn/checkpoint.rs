use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ULAB";
const VERSION: u32 = 1;

/// Named tensors in the little-endian `ULAB` container.
///
/// Layout: magic, `u32` version, `u32` count, then per tensor a `u16` name
/// length, the UTF-8 name, a `u8` rank, `u32` extents and `f64` payload.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Checkpoint { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingData(format!("checkpoint has no tensor '{name}'")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.entries.len()).map_err(|_| cap("tensor count"))?.to_le_bytes())?;
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| cap("name length"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[u8::try_from(t.rank()).map_err(|_| cap("rank"))?])?;
            for &e in t.shape() {
                w.write_all(&u32::try_from(e).map_err(|_| cap("extent"))?.to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut entries = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let shape = (0..rank[0]).map(|_| read_u32(&mut r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                read_exact(&mut r, &mut buf)?;
                data.push(T::of(f64::from_le_bytes(buf)));
            }
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor '{name}': {e}")))?;
            entries.push((name, tensor));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn cap(what: &str) -> Error {
    Error::Capacity(format!("checkpoint {what} exceeds its field width"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let mut c = Checkpoint::new();
        c.push("block0.dense.weight", Tensor::from_f64(vec![2, 3], &[1., -2., 3.5, 0., 1e-300, -0.0]).unwrap());
        c.push("block0.norm.alpha", Tensor::vector(vec![0.25]));
        c.push("step", Tensor::scalar(7.0));
        c
    }

    #[test]
    fn round_trip_bytes() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"ULAB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        let back = Checkpoint::<f64>::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ulab");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), sample());
    }

    #[test]
    fn malformed_inputs() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f64>::read_from(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::<f64>::read_from(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::<f64>::read_from(&long[..]), Err(Error::Format(_))));
        assert!(matches!(sample().get("nope"), Err(Error::MissingData(_))));
    }
}
