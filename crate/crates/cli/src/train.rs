use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use log::info;
use mrgan::io::{atomic_write, read_fixations, write_file};
use mrgan::model::{init_discriminator, Generator};
use mrgan::tensor::write_checkpoint;
use mrgan::train::{adversarial_finetune, build_dataset, pretrain, split_by_source, stage_content, synthetic_odis, Odi, TrainLog};
use mrgan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assets::{load_erp, load_generator, save_params};
use crate::{usage, Failure, Global, Outcome};

#[derive(Args)]
pub struct TrainArgs {
    /// Directory of equirectangular PNGs, each with fixations in a CSV of
    /// the same name (`x,y` header, pixel coordinates).
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Train on this many generated panoramas instead.
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<usize>,
    /// Width of generated panoramas.
    #[arg(long, default_value_t = 128)]
    synthetic_width: usize,
    /// Fixations per generated panorama.
    #[arg(long, default_value_t = 200)]
    synthetic_fixations: usize,
    /// Start from this generator instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output directory for checkpoints, logs and the effective configuration.
    #[arg(short, long)]
    out: PathBuf,
}

fn load_odis(dir: &Path) -> Outcome<Vec<Odi>> {
    let mut pngs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    pngs.sort();
    if pngs.is_empty() {
        return Err(usage(format!("no PNG panoramas in {}", dir.display())));
    }
    pngs.iter()
        .map(|p| {
            let image = load_erp(p)?;
            let csv = p.with_extension("csv");
            let fixations = read_fixations(&csv, image.width, image.height)?;
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(Odi { id, image, fixations })
        })
        .collect()
}

fn write_log(path: &Path, log: &TrainLog) -> Outcome {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write_file(path, &buf)?;
    Ok(())
}

/// On divergence, save the weights from the last completed epoch and say
/// where they went.
fn diverged(e: Error, last_good: &Generator, out: &Path) -> Failure {
    if !matches!(e, Error::Diverged { .. }) {
        return e.into();
    }
    let path = out.join("last-good.ckpt");
    match save_params(&path, &last_good.params) {
        Ok(()) => anyhow!("{e}; last good checkpoint: {}", path.display()).into(),
        Err(_) => anyhow!("{e}; could not save the last good checkpoint").into(),
    }
}

pub fn run(g: &Global, a: TrainArgs) -> Outcome {
    let config = g.config()?;
    if config.finetune_epochs > 0 {
        init_discriminator(config.height, config.width, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| usage(format!("configuration: {e}")))?;
    }
    let odis = match (&a.data, a.synthetic) {
        (Some(dir), _) => load_odis(dir)?,
        (None, Some(n)) if n > 0 => synthetic_odis(n, a.synthetic_width, a.synthetic_fixations, config.seed)?,
        _ => return Err(usage("--synthetic needs at least one panorama")),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("config.json"), format!("{}\n", config.to_json()).as_bytes())?;

    let samples = build_dataset(&odis, &config.rotations, config.width, config.height, config.face_sigma())?;
    let (train, validation) = split_by_source(samples, 0.25);
    if train.is_empty() {
        return Err(anyhow!("no training faces: every face lacks fixations or went to validation").into());
    }
    info!("{} training and {} validation faces from {} panoramas", train.len(), validation.len(), odis.len());

    let gen = match &a.init {
        Some(p) => load_generator(p, config.generator())?,
        None => Generator::init(config.generator(), &mut ChaCha8Rng::seed_from_u64(config.seed))?,
    };
    let every = config.checkpoint_every;
    let last_good = RefCell::new(gen.clone());
    let out = &a.out;
    let keep = |tag: &str, epoch: usize, gen: &Generator| -> mrgan::Result<()> {
        *last_good.borrow_mut() = gen.clone();
        if every > 0 && (epoch + 1).is_multiple_of(every) {
            let path = out.join(format!("{tag}-epoch{:04}.ckpt", epoch + 1));
            atomic_write(&path, |w| write_checkpoint(w, &gen.params))?;
        }
        Ok(())
    };

    let (gen, log) = pretrain(&train, gen, &config, |e, gen| keep("pretrain", e, gen))
        .map_err(|e| diverged(e, &last_good.borrow(), out))?;
    write_log(&out.join("pretrain.csv"), &log)?;
    let mut gen = gen;
    if config.finetune_epochs > 0 {
        let disc = init_discriminator(config.height, config.width, &mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)))?;
        let (g2, disc, log) = adversarial_finetune(&train, gen, disc, &config, |e, gen, _| keep("finetune", e, gen))
            .map_err(|e| diverged(e, &last_good.borrow(), out))?;
        write_log(&out.join("finetune.csv"), &log)?;
        save_params(&out.join("discriminator.ckpt"), &disc)?;
        gen = g2;
    }
    let path = out.join("generator.ckpt");
    save_params(&path, &gen.params)?;
    if !validation.is_empty() {
        let losses = stage_content(&gen, &validation, config.stages)?;
        let text: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
        println!("validation content loss by stage: {}", text.join(" "));
    }
    println!("{}", path.display());
    Ok(())
}
