//! `.pfld` field files: one line of JSON header, then little-endian `f64`
//! samples. Samples are row-major over the grid with the value components
//! varying fastest; complex samples store the real part before the
//! imaginary part.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Dtype, Grid, PeriodicField, ValueShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfldHeader {
    pub dims: Vec<usize>,
    pub value_shape: ValueShape,
    pub dtype: Dtype,
    pub layout: String,
}

pub fn encode(field: &PeriodicField) -> Vec<u8> {
    let grid = field.grid();
    let header = PfldHeader {
        dims: vec![grid.size(); grid.dim()],
        value_shape: field.shape(),
        dtype: field.dtype(),
        layout: "row-major".into(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    let n = grid.len();
    let comps = field.components();
    let values = field.values();
    for flat in 0..n {
        for c in 0..comps {
            let z = values[c * n + flat];
            out.extend_from_slice(&z.re.to_le_bytes());
            if field.dtype() == Dtype::C128 {
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode<R: Read>(reader: R) -> Result<PeriodicField> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: PfldHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.layout != "row-major" {
        return Err(Error::Format(format!("unsupported layout {}", header.layout)));
    }
    let size = *header
        .dims
        .first()
        .ok_or_else(|| Error::Format("empty dims".into()))?;
    if header.dims.iter().any(|&d| d != size) {
        return Err(Error::Format(format!("anisotropic grid {:?}", header.dims)));
    }
    let grid = Grid::new(size, header.dims.len())?;
    let n = grid.len();
    let comps = header.value_shape.components();
    let per = if header.dtype == Dtype::C128 { 2 } else { 1 };
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    if raw.len() != n * comps * per * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            n * comps * per * 8,
            raw.len()
        )));
    }
    let mut floats = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let mut data = vec![Complex64::new(0.0, 0.0); n * comps];
    for flat in 0..n {
        for c in 0..comps {
            let re = floats.next().expect("length checked");
            let im = if per == 2 {
                floats.next().expect("length checked")
            } else {
                0.0
            };
            data[c * n + flat] = Complex64::new(re, im);
        }
    }
    PeriodicField::from_parts(grid, header.value_shape, header.dtype, data)
}

pub fn write_pfld(path: &Path, field: &PeriodicField) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(field))?;
    Ok(())
}

pub fn read_pfld(path: &Path) -> Result<PeriodicField> {
    decode(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_vector_complex() {
        let g = Grid::new(8, 2).unwrap();
        let a = PeriodicField::from_fn(g, |x| x[0] - 2.0 * x[1]);
        let b = PeriodicField::from_complex_fn(g, |x| Complex64::new(x[1], x[0] * x[0]));
        let v = PeriodicField::stack(&[a, b]).unwrap();
        let bytes = encode(&v);
        let back = decode(&bytes[..]).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn header_is_single_json_line() {
        let g = Grid::new(4, 1).unwrap();
        let bytes = encode(&PeriodicField::constant(g, 1.0));
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["dtype"], "f64");
        assert_eq!(header["layout"], "row-major");
        assert_eq!(bytes.len() - nl - 1, 4 * 8);
    }

    #[test]
    fn truncated_payload_rejected() {
        let g = Grid::new(4, 1).unwrap();
        let mut bytes = encode(&PeriodicField::constant(g, 1.0));
        bytes.pop();
        assert!(matches!(decode(&bytes[..]), Err(Error::Format(_))));
    }
}
