use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OrientedBox;
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct BoxRow {
    frame: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    angle: f64,
}

/// Reads `frame,cx,cy,w,h,angle` rows. Rows must cover frames `0..n` exactly
/// once; they may appear in any order.
pub fn read_boxes_csv(path: &Path) -> Result<Vec<OrientedBox>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| csv_err(path, source))?;
    let mut rows: Vec<BoxRow> = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row.map_err(|source| csv_err(path, source))?);
    }
    rows.sort_by_key(|r| r.frame);
    for (i, r) in rows.iter().enumerate() {
        if r.frame != i {
            return Err(Error::InvalidAsset(format!(
                "{}: expected a row for frame {i}, found frame {}",
                path.display(),
                r.frame
            )));
        }
    }
    Ok(rows
        .into_iter()
        .map(|r| OrientedBox {
            cx: r.cx,
            cy: r.cy,
            width: r.w,
            height: r.h,
            angle: r.angle,
        })
        .collect())
}

pub fn write_boxes_csv(path: &Path, boxes: &[OrientedBox]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|source| csv_err(path, source))?;
    for (frame, b) in boxes.iter().enumerate() {
        wtr.serialize(BoxRow {
            frame,
            cx: b.cx,
            cy: b.cy,
            w: b.width,
            h: b.height,
            angle: b.angle,
        })
        .map_err(|source| csv_err(path, source))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = source.kind() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.to_path_buf());
        }
    }
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}
