use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use mrgan::io::{read_fixations, read_saliency, write_file};
use mrgan::train::Scores;

use crate::assets::find_map;
use crate::{Global, Outcome};

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted maps (`.smap` or grayscale `.png`).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth density maps with matching names.
    #[arg(long)]
    gt: PathBuf,
    /// Fixation CSVs (`x,y`) with matching names.
    #[arg(long)]
    fixations: PathBuf,
    /// Write the table here instead of standard output.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn stems(dir: &Path, exts: &[&str]) -> Outcome<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| exts.contains(&e.as_str())) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(s.to_string());
            }
        }
    }
    Ok(out)
}

fn score(a: &EvalArgs, stem: &str) -> anyhow::Result<Scores> {
    let pred = find_map(&a.pred, stem).ok_or_else(|| anyhow!("no prediction"))?;
    let gt = find_map(&a.gt, stem).ok_or_else(|| anyhow!("no ground truth in {}", a.gt.display()))?;
    let fix = a.fixations.join(format!("{stem}.csv"));
    if !fix.is_file() {
        return Err(anyhow!("no fixations in {}", a.fixations.display()));
    }
    let (pred, gt) = (read_saliency(&pred)?, read_saliency(&gt)?);
    let fix = read_fixations(&fix, gt.width, gt.height)?;
    Ok(Scores::compute(&pred, &gt, &fix)?)
}

/// One row per image found in either map directory, then the mean over the
/// images that scored. Images that could not be scored get an empty row and
/// a message, and make the command fail after the table is written.
pub fn run(_: &Global, a: EvalArgs) -> Outcome {
    let names: BTreeSet<String> = stems(&a.pred, &["smap", "png"])?
        .union(&stems(&a.gt, &["smap", "png"])?)
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(anyhow!("no maps in {} or {}", a.pred.display(), a.gt.display()).into());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "KL", "CC", "NSS", "AUC"])?;
    let mut scored = Vec::new();
    let mut failed = 0;
    for name in &names {
        match score(&a, name) {
            Ok(s) => {
                w.write_record([name.clone(), fmt(s.kl), fmt(s.cc), fmt(s.nss), fmt(s.auc)])?;
                scored.push(s);
            }
            Err(e) => {
                eprintln!("{name}: {e:#}");
                w.write_record([name.as_str(), "", "", "", ""])?;
                failed += 1;
            }
        }
    }
    if !scored.is_empty() {
        let m = Scores::mean(&scored);
        w.write_record(["mean".to_string(), fmt(m.kl), fmt(m.cc), fmt(m.nss), fmt(m.auc)])?;
    }
    let table = w.into_inner().map_err(|e| anyhow!("{e}"))?;
    match &a.out {
        Some(p) => write_file(p, &table)?,
        None => std::io::stdout().write_all(&table)?,
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} images could not be scored", names.len()).into());
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
