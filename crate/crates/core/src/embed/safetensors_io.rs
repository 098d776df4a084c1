//! Reader/writer for the safetensors container (header JSON + raw data),
//! restricted to the F32 tensors BERT checkpoints use.

use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use serde_json::Value;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub fn read_safetensors(path: &Path) -> Result<HashMap<String, ArrayD<f32>>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::Resource {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Value = serde_json::from_slice(&header_bytes)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    let obj = header.as_object().ok_or_else(|| Error::Container {
        path: path.to_path_buf(),
        detail: "safetensors header is not an object".into(),
    })?;
    let mut out = HashMap::new();
    for (name, spec) in obj {
        if name == "__metadata__" {
            continue;
        }
        let bad = |detail: String| Error::Container {
            path: path.to_path_buf(),
            detail: format!("tensor {name}: {detail}"),
        };
        let dtype = spec["dtype"].as_str().ok_or_else(|| bad("missing dtype".into()))?;
        if dtype != "F32" {
            return Err(bad(format!("unsupported dtype {dtype}, only F32 handled")));
        }
        let shape: Vec<usize> = spec["shape"]
            .as_array()
            .ok_or_else(|| bad("missing shape".into()))?
            .iter()
            .map(|v| v.as_u64().unwrap_or(0) as usize)
            .collect();
        let offsets = spec["data_offsets"]
            .as_array()
            .ok_or_else(|| bad("missing data_offsets".into()))?;
        let start = offsets[0].as_u64().unwrap_or(0) as usize;
        let end = offsets[1].as_u64().unwrap_or(0) as usize;
        if end > data.len() || start > end {
            return Err(bad("data offsets out of range".into()));
        }
        let n: usize = shape.iter().product();
        if end - start != n * 4 {
            return Err(bad("data length does not match shape".into()));
        }
        let vals: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), vals).map_err(|e| bad(e.to_string()))?;
        out.insert(name.clone(), arr);
    }
    Ok(out)
}

pub fn write_safetensors(path: &Path, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
    let mut header = serde_json::Map::new();
    let mut offset = 0usize;
    for (name, arr) in tensors {
        let n = arr.len() * 4;
        header.insert(
            name.clone(),
            serde_json::json!({
                "dtype": "F32",
                "shape": arr.shape(),
                "data_offsets": [offset, offset + n],
            }),
        );
        offset += n;
    }
    let mut header_bytes = serde_json::to_vec(&Value::Object(header))?;
    // pad header to 8-byte alignment as the reference implementation does
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, arr) in tensors {
        let owned = arr.to_owned();
        let flat = owned.as_slice().expect("owned array is contiguous");
        let mut bytes = Vec::with_capacity(flat.len() * 4);
        for v in flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let a = arr2(&[[1.0f32, -2.0], [0.5, 3.5]]).into_dyn();
        let b = ndarray::Array1::from(vec![9.0f32]).into_dyn();
        write_safetensors(&path, &[("x.w".into(), a.clone()), ("x.b".into(), b.clone())]).unwrap();
        let back = read_safetensors(&path).unwrap();
        assert_eq!(back["x.w"], a);
        assert_eq!(back["x.b"], b);
    }
}
