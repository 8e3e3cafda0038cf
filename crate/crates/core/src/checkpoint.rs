//! Binary checkpoint format.
//!
//! ```text
//! "RSEG"  u32 version (=1)  u32 entry count
//! per entry: u32 name length, name bytes (UTF-8),
//!            u32 rank, rank × u32 dims, product(dims) × f32
//! ```
//!
//! All integers and reals are little-endian.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RSEG";
pub const VERSION: u32 = 1;

/// Upper bound on elements per tensor accepted when loading.
const MAX_ELEMENTS: usize = 1 << 30;

/// Ordered, uniquely named collection of `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        save_checkpoint(self, &mut buf)?;
        Ok(buf)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

/// Writes `ckpt` to `sink`, returning the number of bytes written.
pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, mut sink: W) -> Result<u64> {
    for (i, (name, _)) in ckpt.entries.iter().enumerate() {
        if ckpt.entries[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&len_u32(ckpt.entries.len(), "entry count")?.to_le_bytes());
    for (name, tensor) in &ckpt.entries {
        buf.extend_from_slice(&len_u32(name.len(), "name length")?.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&len_u32(tensor.rank(), "rank")?.to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
        }
        buf.reserve(tensor.len() * 4);
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

fn read_exact<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated,
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(src: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(src, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parses a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<R: Read>(mut source: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact(&mut source, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(&mut source)?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let count = read_u32(&mut source)? as usize;

    let mut ckpt = Checkpoint::new();
    for _ in 0..count {
        let name_len = read_u32(&mut source)? as usize;
        let mut name = Vec::new();
        source
            .by_ref()
            .take(name_len as u64)
            .read_to_end(&mut name)?;
        if name.len() != name_len {
            return Err(Error::Truncated);
        }
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data("checkpoint entry name is not UTF-8".into()))?;

        let rank = read_u32(&mut source)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Data(format!("entry {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut source)? as usize);
        }
        let elements = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Data(format!("entry {name:?} has shape {shape:?}")))?;

        let mut raw = Vec::new();
        source
            .by_ref()
            .take(elements as u64 * 4)
            .read_to_end(&mut raw)?;
        if raw.len() != elements * 4 {
            return Err(Error::Truncated);
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        ckpt.push(name, Tensor::from_vec(&shape, data)?)?;
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_checkpoint_is_twelve_bytes() {
        let bytes = Checkpoint::new().to_bytes().unwrap();
        assert_eq!(bytes, b"RSEG\x01\0\0\0\0\0\0\0");
    }

    #[test]
    fn single_tensor_roundtrip() {
        let mut c = Checkpoint::new();
        let t = Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap();
        c.push("w", t).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), 12 + 4 + 1 + 4 + 8 + 16);
        let back = load_checkpoint(&bytes[..]).unwrap();
        let bits = |c: &Checkpoint| -> Vec<u32> {
            c.entries()[0]
                .1
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&back), bits(&c));
        assert_eq!(back, c);
    }

    #[test]
    fn corrupt_streams_give_distinct_errors() {
        let mut c = Checkpoint::new();
        c.push("a", Tensor::full(&[3], 1.0).unwrap()).unwrap();
        let good = c.to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        assert!(
            matches!(load_checkpoint(&bad_magic[..]), Err(Error::BadMagic(m)) if &m == b"XXXX")
        );

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            load_checkpoint(&bad_version[..]),
            Err(Error::VersionMismatch(2))
        ));

        for cut in [0, 3, 7, 11, 15, good.len() - 1] {
            assert!(
                matches!(load_checkpoint(&good[..cut]), Err(Error::Truncated)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = Checkpoint::new();
        c.push("a", Tensor::full(&[1], 0.0).unwrap()).unwrap();
        assert!(matches!(
            c.push("a", Tensor::full(&[1], 0.0).unwrap()),
            Err(Error::DuplicateName(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            tensors in proptest::collection::vec(
                (proptest::collection::vec(1usize..4, 1..4), any::<u32>()),
                0..5,
            )
        ) {
            let mut c = Checkpoint::new();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let n: usize = shape.iter().product();
                // arbitrary bit patterns, including NaN payloads
                let data = (0..n as u32)
                    .map(|k| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(k)))
                    .collect();
                c.push(format!("t{i}"), Tensor::from_vec(shape, data).unwrap()).unwrap();
            }
            let bytes = c.to_bytes().unwrap();
            let back = load_checkpoint(&bytes[..]).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
