use std::path::Path;

use crate::{Error, Result};

/// Dense backward flow for one frame: pixel `(x, y)` of frame `t` came from
/// `(x + dx, y + dy)` in frame `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height * 2) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> (f32, f32)) -> Self {
        let mut data = Vec::with_capacity((width * height * 2) as usize);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(x, y);
                data.push(dx);
                data.push(dy);
            }
        }
        Self { width, height, data }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> (f32, f32) {
        let i = ((y * self.width + x) * 2) as usize;
        (self.data[i], self.data[i + 1])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.data.len() * 4);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 {
            return Err("flow file shorter than its header".into());
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let expected = 8 + width as usize * height as usize * 8;
        if bytes.len() != expected {
            return Err(format!(
                "flow file for {width}x{height} should be {expected} bytes, is {}",
                bytes.len()
            ));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { width, height, data })
    }
}

pub fn read_flow_file(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FlowField::from_bytes(&bytes).map_err(|reason| Error::CorruptCache {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_flow_file(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, flow.to_bytes()).map_err(|e| Error::io(path, e))
}
