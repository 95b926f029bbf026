//! Binary checkpoint format for [`ARModel`].
//!
//! Layout (little-endian): magic `ARHD`, u32 format version, u32 dims
//! {d, h, p}, then every parameter tensor as raw f64 values in the model's
//! fixed tensor order. Raw bit copies make save/load round-trips exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ARModel, ArDims, ArError};

const MAGIC: &[u8; 4] = b"ARHD";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> ArError {
    ArError::CheckpointIo {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the model to `path`.
pub fn save_model(model: &ARModel, path: &Path) -> Result<(), ArError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    (|| {
        writer.write_all(MAGIC)?;
        writer.write_all(&VERSION.to_le_bytes())?;
        for dim in [model.dims.embed, model.dims.hidden, model.dims.proj] {
            writer.write_all(&(dim as u32).to_le_bytes())?;
        }
        for tensor in model.tensors() {
            for value in tensor {
                writer.write_all(&value.to_le_bytes())?;
            }
        }
        writer.flush()
    })()
    .map_err(|e| io_err(path, e))
}

fn read_u32(reader: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a model previously written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ARModel, ArError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(ArError::CheckpointFormat("bad magic bytes".into()));
    }
    let version = read_u32(&mut reader).map_err(|e| io_err(path, e))?;
    if version != VERSION {
        return Err(ArError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let embed = read_u32(&mut reader).map_err(|e| io_err(path, e))? as usize;
    let hidden = read_u32(&mut reader).map_err(|e| io_err(path, e))? as usize;
    let proj = read_u32(&mut reader).map_err(|e| io_err(path, e))? as usize;
    if embed == 0 || hidden == 0 || proj == 0 {
        return Err(ArError::CheckpointFormat("zero dimension".into()));
    }

    let mut model = ARModel::zeroed(ArDims {
        embed,
        hidden,
        proj,
    });
    for tensor in model.tensors_mut() {
        for value in tensor.iter_mut() {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
            *value = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    match reader.read(&mut rest) {
        Ok(0) => Ok(model),
        Ok(_) => Err(ArError::CheckpointFormat("trailing bytes".into())),
        Err(e) => Err(io_err(path, e)),
    }
}
