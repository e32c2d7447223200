//! Loading and saving the files the commands share.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mrgan::geom::EquirectImage;
use mrgan::io::{atomic_write, open, read_png};
use mrgan::model::{Generator, GeneratorConfig};
use mrgan::tensor::{read_checkpoint, write_checkpoint, ParamSet};

use crate::{usage, Outcome};

/// An equirectangular PNG. Anything but a 2:1 image is a usage error.
pub fn load_erp(path: &Path) -> Outcome<EquirectImage> {
    let r = read_png(path)?;
    if r.width != 2 * r.height {
        return Err(usage(format!(
            "{}: an equirectangular input must be 2:1 (width = 2 x height), got {}x{}",
            path.display(),
            r.width,
            r.height
        )));
    }
    Ok(EquirectImage::new(r.width, r.channels, r.data)?)
}

/// The same panorama with three channels, as the generator expects.
pub fn to_rgb(img: EquirectImage) -> Outcome<EquirectImage> {
    match img.channels {
        3 => Ok(img),
        1 => Ok(EquirectImage::new(img.width, 3, img.data().repeat(3))?),
        c => Err(usage(format!("expected a grayscale or RGB panorama, found {c} channels"))),
    }
}

pub fn load_generator(path: &Path, config: GeneratorConfig) -> Outcome<Generator> {
    let params = read_checkpoint(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let gen = Generator::new(config, params)
        .with_context(|| format!("{} does not match the configured generator", path.display()))?;
    Ok(gen)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Outcome {
    atomic_write(path, |w| write_checkpoint(w, params))?;
    Ok(())
}

/// `dir/stem.smap`, falling back to `dir/stem.png`.
pub fn find_map(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["smap", "png"].iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

/// Angle for file names: `30`, `-45`, `12.5`.
pub fn angle_tag(deg: f64) -> String {
    format!("{deg}")
}
