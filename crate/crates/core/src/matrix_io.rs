//! Matrix container files.
//!
//! Layout: a short ASCII header, one `key value` pair per line, terminated
//! by a line reading `end`, followed by the payload as little-endian IEEE-754
//! doubles in row-major order:
//!
//! ```text
//! KAMNMF-MATRIX 1
//! rows 2049
//! cols 20
//! order row-major
//! dtype f64le
//! end
//! <rows * cols * 8 bytes>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &str = "KAMNMF-MATRIX 1";

pub fn write_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(
        out,
        "{MAGIC}\nrows {}\ncols {}\norder row-major\ndtype f64le\nend\n",
        m.nrows(),
        m.ncols()
    )?;
    for v in m.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::format(path, "missing matrix magic header"));
    }
    let (mut rows, mut cols) = (None, None);
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::format(path, "header not terminated by `end`"));
        }
        let entry = line.trim_end();
        if entry == "end" {
            break;
        }
        let (key, value) = entry
            .split_once(' ')
            .ok_or_else(|| Error::format(path, format!("bad header line `{entry}`")))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad {key} value `{v}`")))
        };
        match key {
            "rows" => rows = Some(parse(value)?),
            "cols" => cols = Some(parse(value)?),
            "order" if value == "row-major" => {}
            "dtype" if value == "f64le" => {}
            _ => return Err(Error::format(path, format!("unsupported header `{entry}`"))),
        }
    }
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::format(path, "header lacks rows/cols")),
    };
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != rows * cols * 8 {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), rows * cols * 8),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::format(path, e.to_string()))
}

/// Plain CSV dump, one matrix row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
