//! File formats: PNG rasters, `SMAP` saliency maps and fixation CSVs.
//!
//! Every writer goes through [`atomic_write`], so an interrupted process
//! leaves either the old file or the complete new one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{FixationMap, SaliencyMap};

pub const SMAP_MAGIC: &[u8; 4] = b"SMAP";

/// Write through a temporary file in the destination directory, then rename.
pub fn atomic_write(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// [`atomic_write`] of a finished buffer.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |w| w.write_all(bytes).map_err(|e| Error::io(path, e)))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Planar `[channels, height, width]` pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Read an 8- or 16-bit grayscale or RGB PNG. Alpha is discarded.
pub fn read_png(path: &Path) -> Result<Raster> {
    let img = image::ImageReader::new(open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let scale = |v: u16| v as f64 / 65535.0;
    let data = if gray {
        img.to_luma16().pixels().map(|p| scale(p.0[0])).collect()
    } else {
        let rgb = img.to_rgb16();
        let mut planar = vec![0.0; 3 * width * height];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                planar[c * width * height + i] = scale(p.0[c]);
            }
        }
        planar
    };
    Ok(Raster {
        width,
        height,
        channels: if gray { 1 } else { 3 },
        data,
    })
}

/// Write a 1- or 3-channel raster, clamping values to `[0, 1]`.
pub fn write_png(path: &Path, raster: &Raster, depth: BitDepth) -> Result<()> {
    let (w, h) = (raster.width, raster.height);
    if raster.data.len() != raster.channels * w * h {
        return Err(Error::shape("png", format!("{} values for {}x{}x{}", raster.data.len(), raster.channels, h, w)));
    }
    let max = match depth {
        BitDepth::Eight => 255.0,
        BitDepth::Sixteen => 65535.0,
    };
    let q = |v: f64| (v.clamp(0.0, 1.0) * max).round();
    let interleaved: Vec<f64> = (0..w * h)
        .flat_map(|i| (0..raster.channels).map(move |c| c * w * h + i))
        .map(|k| q(raster.data[k]))
        .collect();
    let (wu, hu) = (w as u32, h as u32);
    let img = match (raster.channels, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u8).collect()).expect("sized"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u16).collect()).expect("sized"),
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u8).collect()).expect("sized"),
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(wu, hu, interleaved.iter().map(|&v| v as u16).collect()).expect("sized"),
        ),
        (c, _) => return Err(Error::invalid(format!("cannot write a {c}-channel PNG"))),
    };
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    atomic_write(path, |w| w.write_all(bytes.get_ref()).map_err(|e| Error::io(path, e)))
}

/// Grayscale preview scaled so the map's maximum is white.
pub fn write_preview(path: &Path, map: &SaliencyMap) -> Result<()> {
    let norm = map.normalized_max();
    write_png(
        path,
        &Raster {
            width: map.width,
            height: map.height,
            channels: 1,
            data: norm.values().to_vec(),
        },
        BitDepth::Eight,
    )
}

fn smap_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "SMAP",
        detail: detail.into(),
    }
}

pub fn encode_smap(w: &mut dyn Write, map: &SaliencyMap) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * map.values().len());
    buf.extend_from_slice(SMAP_MAGIC);
    for d in [map.width, map.height] {
        let d = u32::try_from(d).map_err(|_| smap_err("dimension exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in map.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| smap_err(e.to_string()))
}

pub fn decode_smap(mut r: impl Read) -> Result<SaliencyMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| smap_err(e.to_string()))?;
    if bytes.len() < 12 || &bytes[..4] != SMAP_MAGIC {
        return Err(smap_err("missing SMAP header"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
    let (w, h) = (word(4), word(8));
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| smap_err("dimensions overflow"))?;
    if bytes.len() != 12 + n {
        return Err(smap_err(format!("{w}x{h} needs {} payload bytes, found {}", n, bytes.len() - 12)));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    SaliencyMap::new(w, h, values)
}

pub fn write_smap(path: &Path, map: &SaliencyMap) -> Result<()> {
    atomic_write(path, |w| encode_smap(w, map))
}

pub fn read_smap(path: &Path) -> Result<SaliencyMap> {
    decode_smap(open(path)?)
}

/// Read a saliency map from `.smap` or a grayscale PNG.
pub fn read_saliency(path: &Path) -> Result<SaliencyMap> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("smap")) {
        return read_smap(path);
    }
    let r = read_png(path)?;
    if r.channels != 1 {
        return Err(Error::invalid(format!("{}: saliency PNG must be grayscale", path.display())));
    }
    SaliencyMap::new(r.width, r.height, r.data)
}

#[derive(Debug, Serialize, Deserialize)]
struct FixationRow {
    x: usize,
    y: usize,
}

pub fn decode_fixations(r: impl Read, width: usize, height: usize) -> Result<FixationMap> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(Error::Format {
            format: "fixation CSV",
            detail: format!("expected header `x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let points = reader
        .deserialize::<FixationRow>()
        .map(|row| row.map(|r| (r.x, r.y)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    FixationMap::new(width, height, points)
}

pub fn read_fixations(path: &Path, width: usize, height: usize) -> Result<FixationMap> {
    decode_fixations(open(path)?, width, height)
}

pub fn encode_fixations(w: &mut dyn Write, fix: &FixationMap) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    if fix.is_empty() {
        writer.write_record(["x", "y"])?;
    }
    for &(x, y) in fix.points() {
        writer.serialize(FixationRow { x, y })?;
    }
    writer.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_fixations(path: &Path, fix: &FixationMap) -> Result<()> {
    atomic_write(path, |w| encode_fixations(w, fix))
}
