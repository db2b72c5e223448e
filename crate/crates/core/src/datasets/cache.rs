//! Binary dataset cache.
//!
//! Layout (all integers and floats little-endian):
//! `b"ENSLDATA"`, `u32` version, `u32` name length + UTF-8 name,
//! `u64` n_train, `u64` n_test, `u64` d, `u8` has-bayes + `f64` bayes,
//! then `f64` arrays: means, stds, x_train (row-major), y_train, x_test, y_test.
//! Values are stored as `f64` whatever the in-memory precision, which is
//! lossless for `f32`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::SplitDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"ENSLDATA";
const VERSION: u32 = 1;

pub fn write_dataset<T: Scalar>(ds: &SplitDataset<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.name.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.name.as_bytes());
    for n in [ds.n_train(), ds.n_test(), ds.n_features()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.push(u8::from(ds.bayes_accuracy.is_some()));
    out.extend_from_slice(&ds.bayes_accuracy.unwrap_or(0.0).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    ds.feature_means.iter().for_each(|v| put(*v));
    ds.feature_stds.iter().for_each(|v| put(*v));
    ds.x_train.iter().for_each(|v| put(v.to_f64_lossy()));
    ds.y_train.iter().for_each(|v| put(v.to_f64_lossy()));
    ds.x_test.iter().for_each(|v| put(v.to_f64_lossy()));
    ds.y_test.iter().for_each(|v| put(v.to_f64_lossy()));
    out
}

pub fn save_dataset<T: Scalar>(ds: &SplitDataset<T>, path: &Path) -> Result<()> {
    fs::write(path, write_dataset(ds))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            msg: "truncated dataset cache".into(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or_default()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default());
        usize::try_from(v).map_err(|_| self.err("dimension overflow"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("dimension overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap_or_default()))
            .collect())
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

/// Parses cache bytes. `path` only labels errors.
pub fn read_dataset<T: Scalar>(buf: &[u8], path: &Path) -> Result<SplitDataset<T>> {
    let mut c = Cursor { buf, pos: 0, path };
    if c.take(8)? != MAGIC {
        return Err(c.err("not an ensloss dataset cache"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(c.err(&format!("unsupported cache version {version}")));
    }
    let name_len = c.u32()? as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|_| c.err("name is not UTF-8"))?;
    let (n_train, n_test, d) = (c.u64()?, c.u64()?, c.u64()?);
    let has_bayes = c.take(1)?[0] != 0;
    let bayes = c.f64s(1)?[0];
    let means = c.f64s(d)?;
    let stds = c.f64s(d)?;
    let conv = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>();
    let shape_err = |e: ndarray::ShapeError| Error::Internal(e.to_string());
    let x_train = Array2::from_shape_vec((n_train, d), conv(c.f64s(n_train * d)?)).map_err(shape_err)?;
    let y_train = Array1::from_vec(conv(c.f64s(n_train)?));
    let x_test = Array2::from_shape_vec((n_test, d), conv(c.f64s(n_test * d)?)).map_err(shape_err)?;
    let y_test = Array1::from_vec(conv(c.f64s(n_test)?));
    if c.pos != buf.len() {
        return Err(c.err("trailing bytes"));
    }
    Ok(SplitDataset {
        name,
        x_train,
        y_train,
        x_test,
        y_test,
        feature_means: means,
        feature_stds: stds,
        bayes_accuracy: has_bayes.then_some(bayes),
    })
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<SplitDataset<T>> {
    let buf = fs::read(path)?;
    read_dataset(&buf, path)
}
