//! IDX file ingestion (the MNIST on-disk format): big-endian magic
//! 0x00000803 for images and 0x00000801 for labels, then dimension sizes and
//! raw bytes. Gzip-compressed files are accepted transparently.

use crate::error::{EgaError, Result};
use crate::Real;
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::Read;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoded = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut decoded)?;
        Ok(decoded)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| EgaError::format(offset as u64, "truncated IDX header"))
}

/// Load images as flat pixel vectors scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<Real>>> {
    let bytes = read_maybe_gzip(path)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(EgaError::format(0, format!("bad image magic 0x{magic:08x}")));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if bytes.len() != expected {
        return Err(EgaError::format(
            bytes.len() as u64,
            format!("image payload length {} != expected {}", bytes.len(), expected),
        ));
    }
    Ok((0..count)
        .map(|i| {
            bytes[16 + i * pixels..16 + (i + 1) * pixels]
                .iter()
                .map(|&p| p as Real / 255.0)
                .collect()
        })
        .collect())
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<Real>> {
    let bytes = read_maybe_gzip(path)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(EgaError::format(0, format!("bad label magic 0x{magic:08x}")));
    }
    let count = be_u32(&bytes, 4)? as usize;
    if bytes.len() != 8 + count {
        return Err(EgaError::format(
            bytes.len() as u64,
            format!("label payload length {} != expected {}", bytes.len(), 8 + count),
        ));
    }
    Ok(bytes[8..].iter().map(|&l| l as Real).collect())
}

/// Write images in IDX format (pixels already in `[0, 1]` are rescaled to
/// bytes). Used by dataset preparation tooling and tests.
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for image in images {
        if image.len() != rows * cols {
            return Err(EgaError::config("image pixel count mismatch"));
        }
        out.extend_from_slice(image);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn roundtrip_images_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = (0..3).map(|i| vec![i as u8 * 10; 4]).collect();
        let img_path = dir.path().join("img.idx");
        write_idx_images(&img_path, &images, 2, 2).unwrap();
        let loaded = load_idx_images(&img_path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[1][0], 10.0 / 255.0);

        let lbl_path = dir.path().join("lbl.idx");
        write_idx_labels(&lbl_path, &[7, 0, 3]).unwrap();
        assert_eq!(load_idx_labels(&lbl_path).unwrap(), vec![7.0, 0.0, 3.0]);
    }

    #[test]
    fn gzip_transparently_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("lbl.idx");
        write_idx_labels(&plain, &[1, 2, 3]).unwrap();
        let gz_path = dir.path().join("lbl.idx.gz");
        let mut encoder = GzEncoder::new(File::create(&gz_path).unwrap(), Compression::fast());
        encoder.write_all(&std::fs::read(&plain).unwrap()).unwrap();
        encoder.finish().unwrap();
        assert_eq!(load_idx_labels(&gz_path).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lbl_path = dir.path().join("lbl.idx");
        write_idx_labels(&lbl_path, &[1]).unwrap();
        assert!(load_idx_images(&lbl_path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        write_idx_images(&img_path, &[vec![0; 4]; 2], 2, 2).unwrap();
        let bytes = std::fs::read(&img_path).unwrap();
        std::fs::write(&img_path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_idx_images(&img_path).is_err());
    }
}
