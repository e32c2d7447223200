use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use mrgan::geom::{dense_assemble, FaceImage};
use mrgan::io::{read_saliency, write_preview, write_smap};
use mrgan::train::{predict_panorama, GeneratorPredictor, ViewportGrid};
use mrgan::SaliencyMap;

use crate::assets::{find_map, load_erp, load_generator, to_rgb};
use crate::project::Manifest;
use crate::{usage, Global, Outcome};

#[derive(Args)]
pub struct PredictArgs {
    /// Equirectangular PNG.
    input: PathBuf,
    /// Generator checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output `.smap` file.
    #[arg(short, long)]
    out: PathBuf,
    /// Grayscale preview PNG (default: the output path with `.png`).
    #[arg(long)]
    preview: Option<PathBuf>,
    /// Generator stages to run (default: from the configuration).
    #[arg(long)]
    stages: Option<usize>,
    /// Degrees between viewport centres (default: from the configuration).
    #[arg(long)]
    viewport_stride: Option<f64>,
}

fn preview_path(out: &Path, preview: Option<PathBuf>) -> Outcome<PathBuf> {
    let p = preview.unwrap_or_else(|| out.with_extension("png"));
    if p == out {
        return Err(usage("the preview would overwrite the output map; pass --preview"));
    }
    Ok(p)
}

fn save(map: &SaliencyMap, out: &Path, preview: &Path) -> Outcome {
    for p in [out, preview] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    write_smap(out, map)?;
    write_preview(preview, map)?;
    Ok(())
}

pub fn run(g: &Global, a: PredictArgs) -> Outcome {
    let config = g.config()?;
    let stages = a.stages.unwrap_or(config.stages);
    if stages == 0 {
        return Err(usage("--stages must be at least 1"));
    }
    let stride = a.viewport_stride.unwrap_or(config.viewport_stride);
    if !(stride > 0.0 && stride <= 180.0) {
        return Err(usage(format!("--viewport-stride {stride} outside (0, 180]")));
    }
    let preview = preview_path(&a.out, a.preview)?;
    let image = to_rgb(load_erp(&a.input)?)?;
    let generator = load_generator(&a.checkpoint, config.generator())?;
    let grid = ViewportGrid {
        stride,
        fov: config.viewport_fov,
        width: config.width,
        height: config.height,
    };
    log::info!("{} viewports at {stride} degrees, {stages} stages", grid.views()?.len());
    let maps = predict_panorama(&GeneratorPredictor { generator: &generator, stages }, &image, &grid)?;
    let last = maps.last().ok_or_else(|| anyhow!("no stage output"))?;
    save(last, &a.out, &preview)?;
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct AssembleArgs {
    /// Manifests written by `project`; repeat to combine cube rotations.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Directory holding one saliency map per face, named like the face PNG
    /// with a `.smap` or `.png` extension.
    #[arg(long)]
    maps: PathBuf,
    /// Output width (default: the source panorama's).
    #[arg(long)]
    width: Option<usize>,
    /// Output `.smap` file.
    #[arg(short, long)]
    out: PathBuf,
    /// Grayscale preview PNG (default: the output path with `.png`).
    #[arg(long)]
    preview: Option<PathBuf>,
}

pub fn assemble(_: &Global, a: AssembleArgs) -> Outcome {
    let preview = preview_path(&a.out, a.preview)?;
    let mut faces = Vec::new();
    let mut source_width = None;
    for m in &a.manifest {
        let text = fs::read_to_string(m).with_context(|| format!("reading {}", m.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", m.display()))?;
        source_width.get_or_insert(manifest.width);
        for f in &manifest.faces {
            let stem = Path::new(&f.file).file_stem().and_then(|s| s.to_str()).unwrap_or(&f.file);
            let path = find_map(&a.maps, stem)
                .ok_or_else(|| anyhow!("no saliency map for face {} ({stem}.smap or {stem}.png in {})", f.face, a.maps.display()))?;
            let map = read_saliency(&path)?;
            if map.dims() != (f.view.out_width, f.view.out_height) {
                return Err(anyhow!(
                    "{} is {}x{}, the face was {}x{}",
                    path.display(),
                    map.width,
                    map.height,
                    f.view.out_width,
                    f.view.out_height
                )
                .into());
            }
            faces.push(FaceImage::new(f.view, 1, map.values().to_vec())?);
        }
    }
    let width = a.width.or(source_width).unwrap_or(0);
    if width < 2 || !width.is_multiple_of(2) {
        return Err(usage(format!("output width {width} must be even and at least 2")));
    }
    let map = dense_assemble(&faces, width, width / 2)?;
    save(&map, &a.out, &preview)?;
    println!("{}", a.out.display());
    Ok(())
}
