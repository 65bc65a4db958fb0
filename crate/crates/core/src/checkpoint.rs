//! Little-endian binary checkpoints for dictionary stacks (`NRSD`) and
//! student networks (`NRSS`).
//!
//! Both share one layout: 4 magic bytes, u32 version, u32 block count,
//! u32 landmark count, then per block u32 rows, u32 cols, row-major f64
//! values, u32 bias length, f64 bias values.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};
use crate::sparse::DictionaryStack;
use crate::student::PoseRegressor;

pub const DICTIONARY_MAGIC: &[u8; 4] = b"NRSD";
pub const STUDENT_MAGIC: &[u8; 4] = b"NRSS";
pub const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode(magic: &[u8; 4], points: usize, blocks: &[(&DMatrix<f64>, &[f64])]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut out, blocks.len(), "block count")?;
    push_u32(&mut out, points, "landmark count")?;
    for (m, bias) in blocks {
        push_u32(&mut out, m.nrows(), "row count")?;
        push_u32(&mut out, m.ncols(), "column count")?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        push_u32(&mut out, bias.len(), "bias length")?;
        for b in bias.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.context, format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.context, "block size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

type Blocks = Vec<(DMatrix<f64>, DVector<f64>)>;

fn decode(magic: &[u8; 4], context: &'static str, bytes: &[u8]) -> Result<(usize, Blocks)> {
    let mut r = Reader { bytes, pos: 0, context };
    if r.take(4)? != magic {
        return Err(Error::format(context, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(context, format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let points = r.u32()?;
    let mut blocks = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let size = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(context, "block size overflows"))?;
        let values = r.f64s(size)?;
        let bias_len = r.u32()?;
        let bias = r.f64s(bias_len)?;
        blocks.push((DMatrix::from_row_slice(rows, cols, &values), DVector::from_vec(bias)));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(context, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((points, blocks))
}

pub fn encode_dictionary(dicts: &DictionaryStack) -> Result<Vec<u8>> {
    let blocks: Vec<(&DMatrix<f64>, &[f64])> = dicts
        .levels()
        .iter()
        .zip(dicts.biases())
        .map(|(d, b)| (d, b.as_slice()))
        .collect();
    encode(DICTIONARY_MAGIC, dicts.points(), &blocks)
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<DictionaryStack> {
    let (points, blocks) = decode(DICTIONARY_MAGIC, "dictionary checkpoint", bytes)?;
    let (levels, biases) = blocks.into_iter().unzip();
    DictionaryStack::new(points, levels, biases)
}

pub fn encode_student(net: &PoseRegressor) -> Result<Vec<u8>> {
    let biases: Vec<&DMatrix<f64>> = (0..net.layers()).map(|l| net.bias(l)).collect();
    let blocks: Vec<(&DMatrix<f64>, &[f64])> = (0..net.layers())
        .map(|l| (net.weight(l), biases[l].as_slice()))
        .collect();
    encode(STUDENT_MAGIC, net.points(), &blocks)
}

pub fn decode_student(bytes: &[u8]) -> Result<PoseRegressor> {
    let (points, blocks) = decode(STUDENT_MAGIC, "student checkpoint", bytes)?;
    let first = blocks
        .first()
        .ok_or_else(|| Error::format("student checkpoint", "no layers"))?;
    let mut widths = vec![first.0.ncols()];
    let mut params = ParameterSet::new();
    for (l, (w, b)) in blocks.iter().enumerate() {
        widths.push(w.nrows());
        params.insert(format!("W{}", l + 1), w.clone())?;
        params.insert(format!("c{}", l + 1), DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    }
    let net = PoseRegressor::from_params(widths, params)?;
    if net.points() != points {
        return Err(Error::format(
            "student checkpoint",
            format!("header says {points} landmarks, output layer has {}", net.points()),
        ));
    }
    Ok(net)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

pub fn save_dictionary(path: &Path, dicts: &DictionaryStack) -> Result<()> {
    write_bytes(path, &encode_dictionary(dicts)?)
}

pub fn load_dictionary(path: &Path) -> Result<DictionaryStack> {
    decode_dictionary(&read_bytes(path)?)
}

pub fn save_student(path: &Path, net: &PoseRegressor) -> Result<()> {
    write_bytes(path, &encode_student(net)?)
}

pub fn load_student(path: &Path) -> Result<PoseRegressor> {
    decode_student(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dictionary_header_layout() {
        let dicts = DictionaryStack::new(
            1,
            vec![DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
            vec![DVector::from_column_slice(&[0.5, 0.25])],
        )
        .unwrap();
        let bytes = encode_dictionary(&dicts).unwrap();
        assert_eq!(&bytes[..4], b"NRSD");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &2u32.to_le_bytes());
        // Row-major: the second stored value is row 0, column 1.
        assert_eq!(&bytes[32..40], &2.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 6 * 8 + 4 + 2 * 8);
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dicts = DictionaryStack::random(3, &[5, 2], 0.1, &mut rng).unwrap();
        let bytes = encode_dictionary(&dicts).unwrap();
        assert!(decode_dictionary(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_dictionary(&extra).is_err());
        let mut magic = bytes.clone();
        magic[3] = b'S';
        assert!(decode_dictionary(&magic).is_err());
        let mut version = bytes;
        version[4] = 2;
        assert!(decode_dictionary(&version).is_err());
    }

    #[test]
    fn student_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = PoseRegressor::new(7, &[5, 4], 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.nrss");
        save_student(&path, &net).unwrap();
        let back = load_student(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_student(&back).unwrap(), read_bytes(&path).unwrap());
        assert!(decode_dictionary(&read_bytes(&path).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dictionary_round_trip_is_bit_exact(seed in any::<u64>(), points in 1usize..6, k1 in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dicts = DictionaryStack::random(points, &[k1, 1], 0.05, &mut rng).unwrap();
            let bytes = encode_dictionary(&dicts).unwrap();
            let back = decode_dictionary(&bytes).unwrap();
            for (a, b) in dicts.levels().iter().zip(back.levels()) {
                prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(encode_dictionary(&back).unwrap(), bytes);
        }
    }
}
