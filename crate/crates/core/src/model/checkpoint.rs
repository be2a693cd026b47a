//! Named-tensor checkpoint container.
//!
//! Little-endian layout: magic `TGDM`, u32 entry count, then per entry a
//! u16 name length, the name bytes, a u8 rank, u32 extents, and the values
//! as 64-bit floats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TGDM";

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.rank() as u8);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data(
                Some(self.path),
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::data(Some(path), "malformed header (expected magic TGDM)"));
    }
    let mut cursor = Cursor { bytes: &bytes, pos: 4, path };
    let count = cursor.u32("entry count")?;
    let mut params = ParamSet::new();
    for idx in 0..count {
        let name_len = cursor.u16("name length")? as usize;
        let name = String::from_utf8(cursor.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::data(Some(path), format!("entry {idx}: name is not UTF-8")))?;
        let rank = cursor.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u32("extent")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for chunk in cursor.take(len * 8, "values")?.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| {
            Error::data(Some(path), format!("entry `{name}`: {e}"))
        })?;
        params.insert(name, tensor);
    }
    if cursor.pos != bytes.len() {
        return Err(Error::data(
            Some(path),
            format!("{} trailing bytes after last entry", bytes.len() - cursor.pos),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_order_and_bits() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.tgdm");
        let mut params = ParamSet::new();
        params.insert("ext.w1", Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.0, 1e-300, 3.7, -0.5]).unwrap());
        params.insert("drgn.b3", Tensor::from_vec(&[1, 1], vec![0.125]).unwrap());
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        let names: Vec<_> = loaded.names().collect();
        assert_eq!(names, vec!["ext.w1", "drgn.b3"]);
    }

    #[test]
    fn corrupt_magic_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.tgdm");
        fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.tgdm");
        let mut params = ParamSet::new();
        params.insert("w", Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        save_checkpoint(&params, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
