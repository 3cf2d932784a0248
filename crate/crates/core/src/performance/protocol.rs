use serde::{Deserialize, Serialize};

/// Text message on the control channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientMessage {
    Trigger { layer: usize, action: String },
    Param { name: String, value: serde_json::Value },
}

/// Reply to a control message, stamped with the server column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    pub column: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Binary stream message: little-endian `u64` column then one `u32` frame
/// index per layer.
pub fn encode_stream_column(column: u64, frames: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * frames.len());
    out.extend_from_slice(&column.to_le_bytes());
    for &f in frames {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    out
}

pub fn decode_stream_column(bytes: &[u8]) -> Option<(u64, Vec<u32>)> {
    if bytes.len() < 8 || !(bytes.len() - 8).is_multiple_of(4) {
        return None;
    }
    let column = u64::from_le_bytes(bytes[..8].try_into().ok()?);
    let frames = bytes[8..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of four")))
        .collect();
    Some((column, frames))
}
