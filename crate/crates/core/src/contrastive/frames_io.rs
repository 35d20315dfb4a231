//! Frame ingestion: a directory of images (sorted file name = temporal
//! order) or a single binary blob.
//!
//! Blob layout, little-endian: 8-byte magic, `u32` frame count, height,
//! width and channel count (3), one dtype byte (1 = u8 scaled by 1/255,
//! 2 = f32, 3 = f64), then the samples in frame, row, column, channel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use super::Frame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BLOB_MAGIC: &[u8; 8] = b"CMFRAMES";

const DTYPE_U8: u8 = 1;
const DTYPE_F32: u8 = 2;
const DTYPE_F64: u8 = 3;

pub fn read_frame_dir<F: Scalar>(dir: &Path) -> Result<Vec<Frame<F>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no PNG frames found"));
    }
    paths
        .iter()
        .map(|p| {
            let img = image::open(p)?.to_rgb8();
            let (w, h) = img.dimensions();
            let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                F::lit(f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0)
            });
            Frame::new(pixels).map_err(|e| Error::format(p, e.to_string()))
        })
        .collect()
}

pub fn read_frame_blob<F: Scalar>(path: &Path) -> Result<Vec<Frame<F>>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BLOB_MAGIC {
        return Err(Error::format(path, "not a frame blob (bad magic)"));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let [t, h, w, c] = dims;
    if c != 3 {
        return Err(Error::format(path, format!("expected 3 channels, header says {c}")));
    }
    let dtype = r.read_u8()?;
    let mut read_sample = || -> Result<f64> {
        Ok(match dtype {
            DTYPE_U8 => f64::from(r.read_u8()?) / 255.0,
            DTYPE_F32 => f64::from(r.read_f32::<LittleEndian>()?),
            DTYPE_F64 => r.read_f64::<LittleEndian>()?,
            other => return Err(Error::format(path, format!("unknown dtype code {other}"))),
        })
    };
    let mut frames = Vec::with_capacity(t);
    for _ in 0..t {
        let mut values = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w * 3 {
            values.push(F::lit(read_sample()?));
        }
        let pixels = Array3::from_shape_vec((h, w, 3), values).expect("length matches header");
        frames.push(Frame::new(pixels).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(frames)
}

/// Writes frames as an f32 blob.
pub fn write_frame_blob<F: Scalar>(path: &Path, frames: &[Frame<F>]) -> Result<()> {
    let (h, w) = frames.first().map_or((0, 0), |f| (f.height(), f.width()));
    if frames.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(Error::arg("all frames in a blob must share one size"));
    }
    let mut buf = BufWriter::new(Vec::new());
    buf.write_all(BLOB_MAGIC)?;
    for d in [frames.len(), h, w, 3] {
        buf.write_u32::<LittleEndian>(d as u32)?;
    }
    buf.write_u8(DTYPE_F32)?;
    for f in frames {
        for v in f.pixels.iter() {
            buf.write_f32::<LittleEndian>(v.as_f64() as f32)?;
        }
    }
    let bytes = buf.into_inner().map_err(|e| e.into_error())?;
    crate::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<Frame<f64>> {
        (0..3)
            .map(|k| {
                Frame::new(Array3::from_shape_fn((8, 10, 3), |(y, x, c)| ((y + x + c + k) % 5) as f64 / 4.0)).unwrap()
            })
            .collect()
    }

    #[test]
    fn blob_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let src = frames();
        write_frame_blob(&path, &src).unwrap();
        let back: Vec<Frame<f64>> = read_frame_blob(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in src.iter().zip(&back) {
            // Samples are quarter steps, exact in f32.
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        std::fs::write(&path, b"NOTFRAMEsomething").unwrap();
        assert!(read_frame_blob::<f64>(&path).is_err());
    }

    #[test]
    fn png_directory_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, level) in [("b.png", 200u8), ("a.png", 10), ("c.png", 100)] {
            let img = image::RgbImage::from_pixel(9, 8, image::Rgb([level, level, level]));
            img.save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let frames: Vec<Frame<f64>> = read_frame_dir(dir.path()).unwrap();
        let firsts: Vec<f64> = frames.iter().map(|f| f.pixels[[0, 0, 0]] * 255.0).collect();
        assert_eq!(firsts, vec![10.0, 200.0, 100.0]);
        assert_eq!((frames[0].height(), frames[0].width()), (8, 9));
    }
}
