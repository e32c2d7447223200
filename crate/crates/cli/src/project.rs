use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use mrgan::geom::{extract_view, CubeFace, Interp, ViewSpec};
use mrgan::io::{write_file, write_png, BitDepth, Raster};
use serde::{Deserialize, Serialize};

use crate::assets::{angle_tag, load_erp};
use crate::{usage, Global, Outcome};

#[derive(Args)]
pub struct ProjectArgs {
    /// Equirectangular PNG (width = 2 x height).
    input: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Cube rotation as `yaw,pitch` in degrees.
    #[arg(long, default_value = "0,0", value_parser = parse_rotation, allow_hyphen_values = true)]
    rotation: (f64, f64),
    /// Face width and height in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Write 16-bit PNGs.
    #[arg(long)]
    sixteen_bit: bool,
}

fn parse_rotation(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected yaw,pitch")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    let (yaw, pitch) = (parse(a)?, parse(b)?);
    if !yaw.is_finite() || !pitch.is_finite() {
        return Err("angles must be finite".into());
    }
    Ok((yaw, pitch))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FaceEntry {
    pub face: String,
    pub file: String,
    pub view: ViewSpec,
}

/// What `project` wrote, enough to put predictions on the faces back
/// together.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub rotation: (f64, f64),
    pub faces: Vec<FaceEntry>,
}

pub fn run(_: &Global, a: ProjectArgs) -> Outcome {
    if a.size == 0 {
        return Err(usage("--size must be positive"));
    }
    let erp = load_erp(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let suffix = format!("{}_{}", angle_tag(a.rotation.0), angle_tag(a.rotation.1));
    let depth = if a.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
    let mut faces = Vec::with_capacity(6);
    for face in CubeFace::ALL {
        let view = face.view(a.rotation, a.size, a.size)?;
        let img = extract_view(&erp, &view, Interp::Bilinear)?;
        let file = format!("{}_{suffix}.png", face.name());
        let raster = Raster {
            width: a.size,
            height: a.size,
            channels: img.channels,
            data: img.data().to_vec(),
        };
        write_png(&a.out.join(&file), &raster, depth)?;
        faces.push(FaceEntry {
            face: face.name().into(),
            file,
            view,
        });
    }
    let manifest = Manifest {
        source: a.input.display().to_string(),
        width: erp.width,
        height: erp.height,
        rotation: a.rotation,
        faces,
    };
    let path = a.out.join(format!("manifest_{suffix}.json"));
    write_file(&path, format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes())?;
    println!("{}", path.display());
    Ok(())
}
