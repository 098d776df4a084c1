//! Array archive used for motion files, sample caches, and checkpoints.
//!
//! The format is an uncompressed zip holding `.npy` entries, so standard
//! array tooling can open it directly. Metadata travels as a `meta_json.npy`
//! byte array containing UTF-8 JSON. Writes go to a temp file and are
//! renamed into place on finish.

use crate::error::{Error, Result};
use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use zip::write::FileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

/// Entry name carrying the archive's JSON metadata.
pub const META_ENTRY: &str = "meta_json";

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

fn npy_header(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    // pad so magic + version + len + header is a multiple of 64, ending in \n
    let unpadded = 6 + 2 + 2 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.push_str(&" ".repeat(pad));
    dict.push('\n');
    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[0x01, 0x00]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

struct NpyPayload {
    descr: String,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn parse_npy(bytes: &[u8], name: &str, path: &Path) -> Result<NpyPayload> {
    let bad = |detail: String| Error::Container {
        path: path.to_path_buf(),
        detail: format!("entry {name}: {detail}"),
    };
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(bad("not an npy payload".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(bad(format!("unsupported npy version {v}"))),
    };
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(bad("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| bad("header is not utf-8".into()))?;

    let descr = extract_quoted(header, "descr").ok_or_else(|| bad("missing descr".into()))?;
    if header.contains("'fortran_order': True") {
        return Err(bad("fortran order not supported".into()));
    }
    let shape = extract_shape(header).ok_or_else(|| bad("missing shape".into()))?;
    Ok(NpyPayload {
        descr,
        shape,
        data: bytes[header_end..].to_vec(),
    })
}

fn extract_quoted(header: &str, key: &str) -> Option<String> {
    let idx = header.find(&format!("'{key}'"))?;
    let rest = &header[idx + key.len() + 2..];
    let start = rest.find('\'')? + 1;
    let end = start + rest[start..].find('\'')?;
    Some(rest[start..end].to_string())
}

fn extract_shape(header: &str) -> Option<Vec<usize>> {
    let idx = header.find("'shape'")?;
    let rest = &header[idx..];
    let open = rest.find('(')?;
    let close = rest.find(')')?;
    let inner = &rest[open + 1..close];
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(part.parse::<usize>().ok()?);
    }
    Some(shape)
}

/// Streaming writer for a new archive.
pub struct ArchiveWriter {
    zip: ZipWriter<File>,
    tmp_path: PathBuf,
    final_path: PathBuf,
    finished: bool,
}

impl ArchiveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let tmp_path = path.with_extension("tmp");
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = File::create(&tmp_path)?;
        Ok(ArchiveWriter {
            zip: ZipWriter::new(file),
            tmp_path,
            final_path: path.to_path_buf(),
            finished: false,
        })
    }

    fn put_raw(&mut self, name: &str, descr: &str, shape: &[usize], data: &[u8]) -> Result<()> {
        let opts = FileOptions::default().compression_method(CompressionMethod::Stored);
        self.zip.start_file(format!("{name}.npy"), opts)?;
        self.zip.write_all(&npy_header(descr, shape))?;
        self.zip.write_all(data)?;
        Ok(())
    }

    pub fn put_f64(&mut self, name: &str, array: ArrayViewD<'_, f64>) -> Result<()> {
        let contiguous = array.to_owned();
        let flat = contiguous.as_slice().expect("owned array is contiguous");
        let mut bytes = Vec::with_capacity(flat.len() * 8);
        for v in flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.put_raw(name, "<f8", array.shape(), &bytes)
    }

    pub fn put_f32(&mut self, name: &str, array: ArrayViewD<'_, f32>) -> Result<()> {
        let contiguous = array.to_owned();
        let flat = contiguous.as_slice().expect("owned array is contiguous");
        let mut bytes = Vec::with_capacity(flat.len() * 4);
        for v in flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.put_raw(name, "<f4", array.shape(), &bytes)
    }

    pub fn put_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        self.put_raw(name, "|u1", &[data.len()], data)
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_vec_pretty(value)?;
        self.put_bytes(name, &text)
    }

    /// Flush, close, and atomically move the archive into place.
    pub fn finish(mut self) -> Result<()> {
        self.zip.finish()?;
        std::fs::rename(&self.tmp_path, &self.final_path)?;
        self.finished = true;
        Ok(())
    }
}

impl Drop for ArchiveWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_file(&self.tmp_path);
        }
    }
}

/// Reader over an existing archive.
pub struct ArchiveReader {
    zip: ZipArchive<File>,
    path: PathBuf,
}

impl ArchiveReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Resource {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let zip = ZipArchive::new(file)?;
        Ok(ArchiveReader {
            zip,
            path: path.to_path_buf(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.zip
            .file_names()
            .filter_map(|n| n.strip_suffix(".npy"))
            .map(str::to_string)
            .collect()
    }

    pub fn has(&self, name: &str) -> bool {
        self.zip.file_names().any(|n| n == format!("{name}.npy"))
    }

    fn read_entry(&mut self, name: &str) -> Result<NpyPayload> {
        let entry_name = format!("{name}.npy");
        let mut entry = self.zip.by_name(&entry_name).map_err(|_| Error::Container {
            path: self.path.clone(),
            detail: format!("missing entry {entry_name}"),
        })?;
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes)?;
        parse_npy(&bytes, name, &self.path)
    }

    pub fn get_f64(&mut self, name: &str) -> Result<ArrayD<f64>> {
        let payload = self.read_entry(name)?;
        if payload.descr != "<f8" {
            return Err(Error::Container {
                path: self.path.clone(),
                detail: format!("entry {name}: expected <f8, got {}", payload.descr),
            });
        }
        let vals: Vec<f64> = payload
            .data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ArrayD::from_shape_vec(IxDyn(&payload.shape), vals).map_err(|e| Error::Container {
            path: self.path.clone(),
            detail: format!("entry {name}: {e}"),
        })
    }

    pub fn get_f32(&mut self, name: &str) -> Result<ArrayD<f32>> {
        let payload = self.read_entry(name)?;
        if payload.descr != "<f4" {
            return Err(Error::Container {
                path: self.path.clone(),
                detail: format!("entry {name}: expected <f4, got {}", payload.descr),
            });
        }
        let vals: Vec<f32> = payload
            .data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ArrayD::from_shape_vec(IxDyn(&payload.shape), vals).map_err(|e| Error::Container {
            path: self.path.clone(),
            detail: format!("entry {name}: {e}"),
        })
    }

    pub fn get_bytes(&mut self, name: &str) -> Result<Vec<u8>> {
        let payload = self.read_entry(name)?;
        if payload.descr != "|u1" {
            return Err(Error::Container {
                path: self.path.clone(),
                detail: format!("entry {name}: expected |u1, got {}", payload.descr),
            });
        }
        Ok(payload.data)
    }

    pub fn get_json<T: DeserializeOwned>(&mut self, name: &str) -> Result<T> {
        let bytes = self.get_bytes(name)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array1};

    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Meta {
        fps: f64,
        tag: String,
    }

    #[test]
    fn round_trip_arrays_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npz");
        let a = arr2(&[[1.0f64, 2.0], [3.0, -4.5]]).into_dyn();
        let b = Array1::from(vec![0.25f32, -0.5]).into_dyn();
        let meta = Meta {
            fps: 12.5,
            tag: "x".into(),
        };

        let mut w = ArchiveWriter::create(&path).unwrap();
        w.put_f64("a", a.view()).unwrap();
        w.put_f32("b", b.view()).unwrap();
        w.put_json(META_ENTRY, &meta).unwrap();
        w.finish().unwrap();

        let mut r = ArchiveReader::open(&path).unwrap();
        assert_eq!(r.get_f64("a").unwrap(), a);
        assert_eq!(r.get_f32("b").unwrap(), b);
        assert_eq!(r.get_json::<Meta>(META_ENTRY).unwrap(), meta);
        let mut names = r.names();
        names.sort();
        assert_eq!(names, vec!["a", "b", "meta_json"]);
    }

    #[test]
    fn unfinished_writer_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npz");
        {
            let mut w = ArchiveWriter::create(&path).unwrap();
            w.put_bytes("x", b"abc").unwrap();
            // dropped without finish
        }
        assert!(!path.exists());
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn wrong_dtype_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npz");
        let mut w = ArchiveWriter::create(&path).unwrap();
        w.put_bytes("x", b"abc").unwrap();
        w.finish().unwrap();
        let mut r = ArchiveReader::open(&path).unwrap();
        assert!(matches!(r.get_f64("x"), Err(Error::Container { .. })));
        assert!(matches!(r.get_f64("missing"), Err(Error::Container { .. })));
    }

    #[test]
    fn npy_header_length_is_64_aligned() {
        for shape in [vec![], vec![3], vec![2, 5], vec![1, 2, 3]] {
            let h = npy_header("<f8", &shape);
            assert_eq!(h.len() % 64, 0);
        }
    }

    #[test]
    fn scalar_shape_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npz");
        let scalar = ndarray::arr0(7.5f64).into_dyn();
        let mut w = ArchiveWriter::create(&path).unwrap();
        w.put_f64("s", scalar.view()).unwrap();
        w.finish().unwrap();
        let mut r = ArchiveReader::open(&path).unwrap();
        let back = r.get_f64("s").unwrap();
        assert_eq!(back.ndim(), 0);
        assert_eq!(back[[]], 7.5);
    }
}
