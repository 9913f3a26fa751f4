//! Wire framing for the federated round protocol.
//!
//! Frame layout (little-endian fields):
//! `"EGAW" | version u16 | kind u8 | round u32 | payload_len u32 | payload | crc32 u32`
//! The CRC covers everything before it. Vectors travel as f32.

use crate::codec::EncodedUpdate;
use crate::error::{EgaError, Result};
use std::io::{Read, Write};

pub const FRAME_MAGIC: [u8; 4] = *b"EGAW";
pub const WIRE_VERSION: u16 = 1;
/// Bytes added around every payload: magic + version + kind + round +
/// payload length + trailing CRC32.
pub const FRAME_OVERHEAD_BYTES: u64 = 4 + 2 + 1 + 4 + 4 + 4;
/// Fixed part of an `EncodedUpload` payload before the block data:
/// client_id, weight, n_used, original_dim, block_count, block_len.
pub const UPLOAD_PAYLOAD_HEADER_BYTES: u64 = 4 + 8 + 8 + 4 + 4 + 4;
pub const MAX_PAYLOAD_BYTES: u32 = 1 << 24;

/// Total framed size of one encoded-update upload.
pub fn encoded_upload_frame_bytes(block_count: usize, block_len: usize) -> u64 {
    FRAME_OVERHEAD_BYTES + UPLOAD_PAYLOAD_HEADER_BYTES + 4 * block_count as u64 * block_len as u64
}

const KIND_HELLO: u8 = 1;
const KIND_ROUND_START: u8 = 2;
const KIND_ENCODED_UPLOAD: u8 = 3;
const KIND_ROUND_RESULT: u8 = 4;
const KIND_BYE: u8 = 5;
const KIND_ERROR: u8 = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Hello { token: String },
    RoundStart { round: u32, w: Vec<f32>, n: f64 },
    EncodedUpload(EncodedUpdate),
    RoundResult { round: u32, w: Vec<f32> },
    Bye,
    Error { message: String },
}

impl WireMessage {
    fn kind(&self) -> u8 {
        match self {
            WireMessage::Hello { .. } => KIND_HELLO,
            WireMessage::RoundStart { .. } => KIND_ROUND_START,
            WireMessage::EncodedUpload(_) => KIND_ENCODED_UPLOAD,
            WireMessage::RoundResult { .. } => KIND_ROUND_RESULT,
            WireMessage::Bye => KIND_BYE,
            WireMessage::Error { .. } => KIND_ERROR,
        }
    }

    fn round(&self) -> u32 {
        match self {
            WireMessage::RoundStart { round, .. } | WireMessage::RoundResult { round, .. } => {
                *round
            }
            WireMessage::EncodedUpload(u) => u.round,
            _ => 0,
        }
    }

    fn payload(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match self {
            WireMessage::Hello { token } | WireMessage::Error { message: token } => {
                put_bytes(&mut out, token.as_bytes());
            }
            WireMessage::RoundStart { w, n, .. } => {
                out.extend_from_slice(&n.to_le_bytes());
                put_f32s(&mut out, w);
            }
            WireMessage::RoundResult { w, .. } => {
                put_f32s(&mut out, w);
            }
            WireMessage::EncodedUpload(u) => {
                out.extend_from_slice(&u.client_id.to_le_bytes());
                out.extend_from_slice(&u.weight.to_le_bytes());
                out.extend_from_slice(&u.n_used.to_le_bytes());
                out.extend_from_slice(&u.original_dim.to_le_bytes());
                out.extend_from_slice(&(u.blocks.len() as u32).to_le_bytes());
                let block_len = u.blocks.first().map_or(0, |b| b.len());
                out.extend_from_slice(&(block_len as u32).to_le_bytes());
                for block in &u.blocks {
                    if block.len() != block_len {
                        return Err(EgaError::protocol("ragged encoded blocks"));
                    }
                    for &v in block {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            }
            WireMessage::Bye => {}
        }
        Ok(out)
    }
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PayloadReader { bytes, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos.checked_add(len).ok_or_else(|| {
                EgaError::format(self.pos as u64, "payload length overflow")
            })?)
            .ok_or_else(|| EgaError::format(self.pos as u64, "truncated payload"))?;
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        (0..len).map(|_| self.f32()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| EgaError::format(self.pos as u64, "invalid utf-8 in payload"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(EgaError::format(
                self.pos as u64,
                "trailing bytes after payload",
            ));
        }
        Ok(())
    }
}

fn parse_payload(kind: u8, round: u32, payload: &[u8]) -> Result<WireMessage> {
    let mut r = PayloadReader::new(payload);
    let msg = match kind {
        KIND_HELLO => WireMessage::Hello { token: r.string()? },
        KIND_ERROR => WireMessage::Error {
            message: r.string()?,
        },
        KIND_ROUND_START => {
            let n = r.f64()?;
            let w = r.f32_vec()?;
            WireMessage::RoundStart { round, w, n }
        }
        KIND_ROUND_RESULT => WireMessage::RoundResult {
            round,
            w: r.f32_vec()?,
        },
        KIND_BYE => WireMessage::Bye,
        KIND_ENCODED_UPLOAD => {
            let client_id = r.u32()?;
            let weight = r.f64()?;
            let n_used = r.f64()?;
            let original_dim = r.u32()?;
            let block_count = r.u32()? as usize;
            let block_len = r.u32()? as usize;
            let total = block_count
                .checked_mul(block_len)
                .and_then(|t| t.checked_mul(4))
                .ok_or_else(|| EgaError::format(0, "upload size overflow"))?;
            if total > payload.len() {
                return Err(EgaError::format(r.pos as u64, "truncated upload blocks"));
            }
            let blocks = (0..block_count)
                .map(|_| {
                    (0..block_len)
                        .map(|_| r.f32().map(|v| v as crate::Real))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            WireMessage::EncodedUpload(EncodedUpdate {
                round,
                client_id,
                weight,
                blocks,
                n_used,
                original_dim,
            })
        }
        other => return Err(EgaError::protocol(format!("unknown frame kind {other}"))),
    };
    r.finish()?;
    Ok(msg)
}

/// Serialize a message into one complete frame.
pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>> {
    let payload = msg.payload()?;
    if payload.len() > MAX_PAYLOAD_BYTES as usize {
        return Err(EgaError::protocol("payload exceeds frame limit"));
    }
    let mut frame = Vec::with_capacity(FRAME_OVERHEAD_BYTES as usize + payload.len());
    frame.extend_from_slice(&FRAME_MAGIC);
    frame.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    frame.push(msg.kind());
    frame.extend_from_slice(&msg.round().to_le_bytes());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    let crc = crc32fast::hash(&frame);
    frame.extend_from_slice(&crc.to_le_bytes());
    Ok(frame)
}

/// Decode one frame from a byte slice. Total: any input produces `Ok` or a
/// structured error, never a panic. Returns the message and bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireMessage, usize)> {
    if bytes.len() < FRAME_OVERHEAD_BYTES as usize {
        return Err(EgaError::format(bytes.len() as u64, "short frame"));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(EgaError::format(0, "bad frame magic"));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != WIRE_VERSION {
        return Err(EgaError::protocol(format!("unsupported wire version {version}")));
    }
    let kind = bytes[6];
    let round = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    let payload_len = u32::from_le_bytes(bytes[11..15].try_into().unwrap());
    if payload_len > MAX_PAYLOAD_BYTES {
        return Err(EgaError::protocol("payload exceeds frame limit"));
    }
    let total = 15 + payload_len as usize + 4;
    if bytes.len() < total {
        return Err(EgaError::format(bytes.len() as u64, "truncated frame"));
    }
    let crc_stored = u32::from_le_bytes(bytes[total - 4..total].try_into().unwrap());
    let crc_actual = crc32fast::hash(&bytes[..total - 4]);
    if crc_stored != crc_actual {
        return Err(EgaError::format((total - 4) as u64, "frame checksum mismatch"));
    }
    let msg = parse_payload(kind, round, &bytes[15..15 + payload_len as usize])?;
    Ok((msg, total))
}

/// Write one frame to a stream.
pub fn write_frame<W: Write>(writer: &mut W, msg: &WireMessage) -> Result<()> {
    let frame = encode_frame(msg)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

/// Read exactly one frame from a stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<WireMessage> {
    let mut header = [0u8; 15];
    reader.read_exact(&mut header)?;
    let payload_len = u32::from_le_bytes(header[11..15].try_into().unwrap());
    if payload_len > MAX_PAYLOAD_BYTES {
        return Err(EgaError::protocol("payload exceeds frame limit"));
    }
    let mut rest = vec![0u8; payload_len as usize + 4];
    reader.read_exact(&mut rest)?;
    let mut frame = header.to_vec();
    frame.extend_from_slice(&rest);
    decode_frame(&frame).map(|(msg, _)| msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: WireMessage) {
        let frame = encode_frame(&msg).unwrap();
        let (decoded, consumed) = decode_frame(&frame).unwrap();
        assert_eq!(consumed, frame.len());
        assert_eq!(decoded, msg);
    }

    #[test]
    fn all_message_kinds_roundtrip() {
        roundtrip(WireMessage::Hello {
            token: "secret".into(),
        });
        roundtrip(WireMessage::RoundStart {
            round: 7,
            w: vec![1.5, -0.25, 0.0],
            n: 0.125,
        });
        roundtrip(WireMessage::EncodedUpload(EncodedUpdate {
            round: 7,
            client_id: 3,
            weight: 1.0,
            blocks: vec![vec![0.5, -1.0], vec![2.0, 0.25]],
            n_used: 0.125,
            original_dim: 4,
        }));
        roundtrip(WireMessage::RoundResult {
            round: 7,
            w: vec![0.5; 10],
        });
        roundtrip(WireMessage::Bye);
        roundtrip(WireMessage::Error {
            message: "boom".into(),
        });
    }

    #[test]
    fn frame_overhead_is_nineteen_bytes() {
        let frame = encode_frame(&WireMessage::Bye).unwrap();
        assert_eq!(frame.len() as u64, FRAME_OVERHEAD_BYTES);
        assert_eq!(FRAME_OVERHEAD_BYTES, 19);
    }

    #[test]
    fn upload_frame_size_matches_accounting() {
        let upload = WireMessage::EncodedUpload(EncodedUpdate {
            round: 0,
            client_id: 0,
            weight: 1.0,
            blocks: vec![vec![0.0; 32]; 31],
            n_used: 1.0,
            original_dim: 7850,
        });
        let frame = encode_frame(&upload).unwrap();
        assert_eq!(frame.len() as u64, encoded_upload_frame_bytes(31, 32));
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut frame = encode_frame(&WireMessage::Hello {
            token: "abc".into(),
        })
        .unwrap();
        frame[16] ^= 0x40;
        assert!(decode_frame(&frame).is_err());
    }

    #[test]
    fn truncation_and_garbage_do_not_panic() {
        let frame = encode_frame(&WireMessage::RoundStart {
            round: 1,
            w: vec![1.0; 8],
            n: 1.0,
        })
        .unwrap();
        for len in 0..frame.len() {
            assert!(decode_frame(&frame[..len]).is_err());
        }
        assert!(decode_frame(&[0xffu8; 64]).is_err());
    }

    #[test]
    fn stream_roundtrip() {
        let msg = WireMessage::RoundResult {
            round: 2,
            w: vec![3.0, 4.0],
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &msg).unwrap();
        let decoded = read_frame(&mut buf.as_slice()).unwrap();
        assert_eq!(decoded, msg);
    }
}
