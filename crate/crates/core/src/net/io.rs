//! Binary network file: an 8-byte little-endian header length, a JSON
//! header, then every parameter as a little-endian `f64` in buffer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, NetworkParams, Normalization, Slot};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub format_version: u32,
    pub model: String,
    pub n: usize,
    pub p: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub n_values: usize,
    pub shapes: Vec<(usize, usize)>,
    pub normalization: Normalization,
    /// Relative path of the design-weights CSV saved next to the network.
    #[serde(default)]
    pub design_file: Option<String>,
}

impl NetworkHeader {
    pub fn describe(params: &NetworkParams, model: &str, seed: u64, design_file: Option<String>) -> Self {
        let l = &params.layout;
        Self {
            format_version: 1,
            model: model.to_string(),
            n: l.n,
            p: l.p,
            hidden: l.hidden,
            n_layers: l.layers,
            seed,
            n_values: params.data.len(),
            shapes: l.slots().iter().map(|s: &Slot| (s.rows, s.cols)).collect(),
            normalization: params.norm.clone(),
            design_file,
        }
    }
}

pub fn save_network(path: &Path, params: &NetworkParams, header: &NetworkHeader) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    for v in &params.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(NetworkParams, NetworkHeader)> {
    let bad = |msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut f = BufReader::new(File::open(path)?);
    let mut len = [0u8; 8];
    f.read_exact(&mut len).map_err(|_| bad("missing header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 26 {
        return Err(bad("implausible header length"));
    }
    let mut json = vec![0u8; len];
    f.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: NetworkHeader = serde_json::from_slice(&json).map_err(|e| bad(&format!("bad header: {e}")))?;

    let layout = Layout::new(header.n, header.p, header.hidden, header.n_layers);
    if layout.len() != header.n_values {
        return Err(bad("parameter count does not match the declared shapes"));
    }
    let shapes: Vec<(usize, usize)> = layout.slots().iter().map(|s| (s.rows, s.cols)).collect();
    if shapes != header.shapes {
        return Err(bad("tensor shapes do not match the layout"));
    }
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != 8 * header.n_values {
        return Err(bad("payload length does not match the header"));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = NetworkParams {
        layout,
        data,
        norm: header.normalization.clone(),
    };
    Ok((params, header))
}
