//! On-disk dataset format: one `<class>.fmat` file per class.
//!
//! Little-endian layout: magic `FMAT`, u32 row count, u32 feature dim, then
//! rows * dim 32-bit floats row-major. Values are widened to f64 on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DomainDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMAT";
const HEADER_LEN: usize = 12;

/// Parse a dataset directory. Classes are read in file-name order; the
/// class name is the file stem and the domain id is the directory name.
pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "fmat"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(Some(dir), "no classes found"));
    }

    let domain_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    let mut dataset: Option<DomainDataset> = None;
    for path in &files {
        let class = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = fs::read(path)?;
        if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
            return Err(Error::data(Some(path), "malformed header (expected magic FMAT)"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if rows == 0 || dim == 0 {
            return Err(Error::data(Some(path), format!("empty extents: rows={rows}, dim={dim}")));
        }
        let expected = HEADER_LEN + rows * dim * 4;
        if bytes.len() != expected {
            return Err(Error::data(
                Some(path),
                format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
            ));
        }

        let ds = match &mut dataset {
            Some(ds) => {
                if ds.feature_dim() != dim {
                    return Err(Error::data(
                        Some(path),
                        format!(
                            "inconsistent feature dim: class `{class}` has d={dim}, expected {}",
                            ds.feature_dim()
                        ),
                    ));
                }
                ds
            }
            None => {
                dataset = Some(DomainDataset::new(domain_id.clone(), dim)?);
                dataset.as_mut().unwrap()
            }
        };

        let mut data = Vec::with_capacity(rows * dim);
        for chunk in bytes[HEADER_LEN..].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        ds.insert_class(class, Tensor::from_vec(&[rows, dim], data)?)?;
    }
    Ok(dataset.expect("at least one class"))
}

/// Write a dataset as one `.fmat` file per class, creating `dir` if needed.
/// Values are narrowed to f32.
pub fn save_dataset(dataset: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (class, samples) in dataset.classes() {
        let path = dir.join(format!("{class}.fmat"));
        let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(samples.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(samples.cols() as u32).to_le_bytes());
        for &v in samples.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut file = fs::File::create(&path)?;
        file.write_all(&out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_class(dir: &Path, name: &str, rows: u32, dim: u32) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&rows.to_le_bytes());
        bytes.extend_from_slice(&dim.to_le_bytes());
        for i in 0..(rows * dim) {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.fmat")), bytes).unwrap();
    }

    #[test]
    fn roundtrip_preserves_f32_values() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("src");
        let mut ds = DomainDataset::new("src", 3).unwrap();
        ds.insert_class(
            "a",
            Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 4.5, 0.0, -2.0]).unwrap(),
        )
        .unwrap();
        save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.domain_id(), "src");
        assert_eq!(loaded.class("a").unwrap(), ds.class("a").unwrap());
    }

    #[test]
    fn two_classes_parse() {
        let tmp = tempfile::tempdir().unwrap();
        write_class(tmp.path(), "a", 20, 10);
        write_class(tmp.path(), "b", 20, 10);
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.feature_dim(), 10);
    }

    #[test]
    fn inconsistent_dim_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_class(tmp.path(), "a", 5, 10);
        write_class(tmp.path(), "b", 5, 12);
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("inconsistent feature dim"), "{err}");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("no classes found"), "{err}");
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(tmp.path().join("a.fmat"), bytes).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("a.fmat"), b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }
}
