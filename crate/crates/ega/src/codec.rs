//! Trainable encoder/decoder pair for encoded-domain aggregation, block
//! splitting of full gradient vectors, and the checkpoint file format.
//!
//! Convention used throughout: the decoder maps the *mean* of `m` encodings
//! to the *mean* of the `m` input blocks (mean-to-mean). The encoder consumes
//! `l/s ∈ [-1, 1]` and the decoder's raw output is rescaled by `s`, so both
//! encode/decode surfaces speak quantized-domain units while network
//! activations stay scale-free.

use crate::error::{EgaError, Result};
use crate::numkernel::{forward, DenseMatrix, Layer, ResidualMlp, Skip};
use crate::quantize::QuantizedVector;
use crate::Real;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"EGA1";
const FORMAT_VERSION: u16 = 1;

/// Trained encoder/decoder weights plus pretrain metadata.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub encoder: ResidualMlp<Real>,
    pub decoder: ResidualMlp<Real>,
    pub b: usize,
    pub h: usize,
    pub s: u32,
    pub m_train: u32,
    /// RMS per-coordinate decode error on the held-out test set, in
    /// quantized-domain units.
    pub sigma_hat: f64,
}

impl CodecModel {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.in_width() != self.b || self.encoder.out_width() != self.h {
            return Err(EgaError::config("encoder widths do not match (b, h)"));
        }
        if self.decoder.in_width() != self.h || self.decoder.out_width() != self.b {
            return Err(EgaError::config("decoder widths do not match (h, b)"));
        }
        if self.sigma_hat < 0.0 || !self.sigma_hat.is_finite() {
            return Err(EgaError::config("sigma_hat must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }
}

/// One client's per-block encoded gradients plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUpdate {
    pub round: u32,
    pub client_id: u32,
    pub weight: f64,
    pub blocks: Vec<Vec<Real>>,
    pub n_used: f64,
    pub original_dim: u32,
}

/// Encode one quantized block of length `b` into an `h`-length real vector.
pub fn encode_block(model: &CodecModel, l: &QuantizedVector<Real>) -> Result<Vec<Real>> {
    if l.dim() != model.b {
        return Err(EgaError::config(format!(
            "block length {} does not match codec b = {}",
            l.dim(),
            model.b
        )));
    }
    let s = model.s as i32;
    if l.values.iter().any(|&v| v < -s || v > s) {
        return Err(EgaError::config("quantized values outside [-s, s]"));
    }
    let vals: Vec<Real> = l.values.iter().map(|&v| v as Real).collect();
    encode_quant_values(model, &vals)
}

/// Encode a block already expressed in quantized-domain reals. This is the
/// path the federated pipeline uses; stubs feed non-integer values through it.
pub fn encode_quant_values(model: &CodecModel, values: &[Real]) -> Result<Vec<Real>> {
    if values.len() != model.b {
        return Err(EgaError::config(format!(
            "block length {} does not match codec b = {}",
            values.len(),
            model.b
        )));
    }
    let s = model.s as Real;
    let normalized: Vec<Real> = values.iter().map(|&v| v / s).collect();
    forward(&model.encoder, &normalized)
}

/// Decode the arithmetic mean of exactly `m_train` encodings back to an
/// estimate of the mean input block, in quantized-domain units.
pub fn decode_mean(model: &CodecModel, mean_encoding: &[Real]) -> Result<Vec<Real>> {
    if mean_encoding.len() != model.h {
        return Err(EgaError::config(format!(
            "encoding length {} does not match codec h = {}",
            mean_encoding.len(),
            model.h
        )));
    }
    let raw = forward(&model.decoder, mean_encoding)?;
    let s = model.s as Real;
    Ok(raw.into_iter().map(|v| v * s).collect())
}

/// Split `x` into `ceil(d/b)` blocks of length `b`, zero-padding the last.
pub fn split_blocks(x: &[Real], b: usize) -> Vec<Vec<Real>> {
    assert!(b > 0);
    x.chunks(b)
        .map(|chunk| {
            let mut block = chunk.to_vec();
            block.resize(b, 0.0);
            block
        })
        .collect()
}

/// Inverse of `split_blocks`: concatenate and truncate back to length `d`.
pub fn join_blocks(blocks: &[Vec<Real>], d: usize) -> Vec<Real> {
    let mut out: Vec<Real> = Vec::with_capacity(blocks.len() * blocks.first().map_or(0, |b| b.len()));
    for block in blocks {
        out.extend_from_slice(block);
    }
    out.truncate(d);
    out
}

/// Codec used by the aggregation pipeline: either a trained model or the
/// ideal identity codec (`encode = l/s`, `decode = ×s`, `h = b`, σ = 0) used
/// as an oracle in equivalence and attack tests.
#[derive(Clone, Debug)]
pub enum Codec {
    Trained(CodecModel),
    Identity { b: usize, s: u32 },
}

impl Codec {
    pub fn b(&self) -> usize {
        match self {
            Codec::Trained(m) => m.b,
            Codec::Identity { b, .. } => *b,
        }
    }

    pub fn h(&self) -> usize {
        match self {
            Codec::Trained(m) => m.h,
            Codec::Identity { b, .. } => *b,
        }
    }

    pub fn s(&self) -> u32 {
        match self {
            Codec::Trained(m) => m.s,
            Codec::Identity { s, .. } => *s,
        }
    }

    /// Aggregation count the codec was trained for; the identity codec
    /// handles any count.
    pub fn m_train(&self) -> Option<u32> {
        match self {
            Codec::Trained(m) => Some(m.m_train),
            Codec::Identity { .. } => None,
        }
    }

    pub fn sigma_hat(&self) -> f64 {
        match self {
            Codec::Trained(m) => m.sigma_hat,
            Codec::Identity { .. } => 0.0,
        }
    }

    /// Encode a block expressed in quantized-domain reals.
    pub fn encode(&self, values: &[Real]) -> Result<Vec<Real>> {
        match self {
            Codec::Trained(m) => encode_quant_values(m, values),
            Codec::Identity { b, s } => {
                if values.len() != *b {
                    return Err(EgaError::config("identity codec block length mismatch"));
                }
                let s = *s as Real;
                Ok(values.iter().map(|&v| v / s).collect())
            }
        }
    }

    /// Decode a mean encoding back to quantized-domain units.
    pub fn decode(&self, mean_encoding: &[Real]) -> Result<Vec<Real>> {
        match self {
            Codec::Trained(m) => decode_mean(m, mean_encoding),
            Codec::Identity { b, s } => {
                if mean_encoding.len() != *b {
                    return Err(EgaError::config("identity codec encoding length mismatch"));
                }
                let s = *s as Real;
                Ok(mean_encoding.iter().map(|&v| v * s).collect())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------
//
// Little-endian: magic "EGA1", version u16, b/h/s/m_train u32, sigma_hat f64,
// layer count u16, per layer {rows u32, cols u32, weights then biases f32},
// encoder layers first, then decoder, trailing CRC32 of all preceding bytes.

pub fn save_checkpoint(model: &CodecModel, path: &Path) -> Result<()> {
    model.validate()?;
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    body.extend_from_slice(&(model.b as u32).to_le_bytes());
    body.extend_from_slice(&(model.h as u32).to_le_bytes());
    body.extend_from_slice(&model.s.to_le_bytes());
    body.extend_from_slice(&model.m_train.to_le_bytes());
    body.extend_from_slice(&model.sigma_hat.to_le_bytes());
    let layer_count = model.encoder.layers().len() + model.decoder.layers().len();
    body.extend_from_slice(&(layer_count as u16).to_le_bytes());
    for layer in model.encoder.layers().iter().chain(model.decoder.layers()) {
        body.extend_from_slice(&(layer.in_width() as u32).to_le_bytes());
        body.extend_from_slice(&(layer.out_width() as u32).to_le_bytes());
        for &w in layer.weight.data() {
            body.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in &layer.bias {
            body.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&body)?;
    file.write_all(&crc.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

struct CheckpointReader {
    bytes: Vec<u8>,
    offset: usize,
}

impl CheckpointReader {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(EgaError::format(
                self.offset as u64,
                format!("truncated checkpoint: wanted {len} more bytes"),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<Real>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CodecModel> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(EgaError::format(0, "file too short for header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(EgaError::format(
            (bytes.len() - 4) as u64,
            "CRC32 mismatch",
        ));
    }

    let mut r = CheckpointReader {
        bytes: body.to_vec(),
        offset: 0,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(EgaError::format(0, "bad magic bytes"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(EgaError::format(4, format!("unsupported version {version}")));
    }
    let b = r.u32()? as usize;
    let h = r.u32()? as usize;
    let s = r.u32()?;
    let m_train = r.u32()?;
    let sigma_hat = r.f64()?;
    let layer_count = r.u16()? as usize;
    if layer_count == 0 || layer_count % 2 != 0 {
        return Err(EgaError::format(
            (r.offset - 2) as u64,
            "layer count must be even and positive",
        ));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(EgaError::format((r.offset - 8) as u64, "zero layer dimension"));
        }
        let weights = r.f32_vec(rows * cols)?;
        let bias = r.f32_vec(cols)?;
        layers.push(Layer {
            weight: DenseMatrix::from_vec(rows, cols, weights)
                .map_err(|e| EgaError::format(r.offset as u64, e.to_string()))?,
            bias,
        });
    }
    if r.offset != r.bytes.len() {
        return Err(EgaError::format(
            r.offset as u64,
            "trailing bytes after last layer",
        ));
    }

    let dec_layers = layers.split_off(layer_count / 2);
    let encoder = rebuild_net(layers, r.offset)?;
    let decoder = rebuild_net(dec_layers, r.offset)?;
    let model = CodecModel {
        encoder,
        decoder,
        b,
        h,
        s,
        m_train,
        sigma_hat,
    };
    model.validate().map_err(|e| EgaError::format(0, e.to_string()))?;
    Ok(model)
}

/// The skip topology is not serialized; the standard codec topology (skip
/// across the second layer) is restored when the widths allow it.
fn rebuild_net(layers: Vec<Layer<Real>>, offset: usize) -> Result<ResidualMlp<Real>> {
    let skips = if layers.len() >= 3 && layers[0].out_width() == layers[1].out_width() {
        vec![Skip { src: 0, dst: 1 }]
    } else {
        vec![]
    };
    ResidualMlp::new(layers, skips).map_err(|e| EgaError::format(offset as u64, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_model(b: usize, h: usize, s: u32) -> CodecModel {
        let mut stream = rng::stream(77, &[b as u64, h as u64]);
        let hidden = 2 * b.max(h);
        CodecModel {
            encoder: ResidualMlp::codec_net(b, hidden, h, &mut stream),
            decoder: ResidualMlp::codec_net(h, hidden, b, &mut stream),
            b,
            h,
            s,
            m_train: 5,
            sigma_hat: 0.125,
        }
    }

    #[test]
    fn encode_decode_shapes() {
        let model = random_model(16, 8, 4);
        let l = QuantizedVector {
            values: vec![1; 16],
            config: crate::quantize::QuantConfig::new(4, 1.0).unwrap(),
        };
        let enc = encode_block(&model, &l).unwrap();
        assert_eq!(enc.len(), 8);
        let dec = decode_mean(&model, &enc).unwrap();
        assert_eq!(dec.len(), 16);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = random_model(16, 8, 4);
        let vals: Vec<f64> = (0..16).map(|i| (i as f64) - 8.0).collect();
        assert_eq!(
            encode_quant_values(&model, &vals).unwrap(),
            encode_quant_values(&model, &vals).unwrap()
        );
    }

    #[test]
    fn encode_rejects_bad_lengths_and_range() {
        let model = random_model(16, 8, 4);
        let short = QuantizedVector {
            values: vec![0; 8],
            config: crate::quantize::QuantConfig::new(4, 1.0).unwrap(),
        };
        assert!(encode_block(&model, &short).is_err());
        let out_of_range = QuantizedVector {
            values: vec![9; 16],
            config: crate::quantize::QuantConfig::new(4, 1.0).unwrap(),
        };
        assert!(encode_block(&model, &out_of_range).is_err());
        assert!(decode_mean(&model, &[0.0; 4]).is_err());
    }

    #[test]
    fn split_join_exact_sizes() {
        let x: Vec<f64> = (0..512).map(|i| i as f64).collect();
        let blocks = split_blocks(&x, 256);
        assert_eq!(blocks.len(), 2);
        assert_eq!(join_blocks(&blocks, 512), x);

        let y: Vec<f64> = (0..300).map(|i| i as f64 + 0.5).collect();
        let blocks = split_blocks(&y, 256);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1][44..].iter().filter(|&&v| v == 0.0).count(), 212);
        assert_eq!(join_blocks(&blocks, 300), y);
    }

    #[test]
    fn split_join_roundtrip_various_dims() {
        for d in [1usize, 255, 256, 257, 7850] {
            let x: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
            assert_eq!(join_blocks(&split_blocks(&x, 256), d), x);
        }
    }

    #[test]
    fn checkpoint_roundtrip_identity() {
        let model = random_model(16, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ega");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.b, model.b);
        assert_eq!(loaded.h, model.h);
        assert_eq!(loaded.s, model.s);
        assert_eq!(loaded.m_train, model.m_train);
        assert_eq!(loaded.sigma_hat, model.sigma_hat);
        // Weights survive bit-exactly at f32 precision.
        for (a, b) in model
            .encoder
            .flatten_params()
            .iter()
            .chain(model.decoder.flatten_params().iter())
            .zip(
                loaded
                    .encoder
                    .flatten_params()
                    .iter()
                    .chain(loaded.decoder.flatten_params().iter()),
            )
        {
            assert_eq!(*a as f32, *b as f32);
        }
        // The loaded model must behave identically to a f32-truncated original.
        let vals: Vec<f64> = (0..16).map(|i| (i as f64) / 2.0 - 4.0).collect();
        let enc = encode_quant_values(&loaded, &vals).unwrap();
        assert_eq!(enc.len(), 8);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let model = random_model(16, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ega");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn truncated_file_is_rejected_with_offset() {
        let model = random_model(16, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ega");
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(EgaError::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn file_size_matches_parameter_count() {
        let model = random_model(16, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ega");
        save_checkpoint(&model, &path).unwrap();
        let layer_count = model.encoder.layers().len() + model.decoder.layers().len();
        let header = 4 + 2 + 4 * 4 + 8 + 2;
        let per_layer_headers = 8 * layer_count;
        let expected = header + per_layer_headers + 4 * model.param_count() + 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected as u64);
    }
}
