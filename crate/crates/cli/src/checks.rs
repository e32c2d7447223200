use anyhow::anyhow;
use clap::Args;
use mrgan::gradcheck::{layer_suite, model_suite, summarize, ModelSampling, TOLERANCE};
use mrgan::selftest;

use crate::{usage, Global, Outcome};

#[derive(Args)]
pub struct GradcheckArgs {
    /// Stages in the full-model check.
    #[arg(long, default_value_t = 3)]
    stages: usize,
    /// Entries checked per generator tensor.
    #[arg(long, default_value_t = 24)]
    gen_entries: usize,
    /// Entries checked per discriminator tensor.
    #[arg(long, default_value_t = 8)]
    disc_entries: usize,
    /// Check every entry of every tensor (slow).
    #[arg(long)]
    all: bool,
    /// Skip the full-model check.
    #[arg(long)]
    layers_only: bool,
}

pub fn gradcheck(g: &Global, a: GradcheckArgs) -> Outcome {
    if a.stages == 0 {
        return Err(usage("--stages must be at least 1"));
    }
    let seed = g.seed();
    let mut results = layer_suite(seed)?;
    if !a.layers_only {
        let sampling = if a.all {
            ModelSampling { gen: None, disc: None }
        } else {
            ModelSampling {
                gen: Some(a.gen_entries),
                disc: Some(a.disc_entries),
            }
        };
        results.extend(model_suite(seed, a.stages, sampling)?);
    }
    println!("{:<22} {:<28} {:>10} {:>11}", "case", "parameter", "rel-err", "checked");
    for r in &results {
        println!(
            "{:<22} {:<28} {:>10.2e} {:>5}/{:<5} {}",
            r.case,
            r.param,
            r.max_rel_err,
            r.checked,
            r.total,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!();
    for (case, worst) in summarize(&results) {
        println!("{case:<22} worst {worst:.2e}");
    }
    let failing = results.iter().filter(|r| !r.passed()).count();
    if failing > 0 {
        return Err(anyhow!("{failing} of {} tensors exceed relative error {TOLERANCE:.0e}", results.len()).into());
    }
    println!("all {} tensors within {TOLERANCE:.0e}", results.len());
    Ok(())
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Run only these criteria, e.g. `--only 2,4`.
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

pub fn selftest(_: &Global, a: SelftestArgs) -> Outcome {
    if let Some(bad) = a.only.iter().find(|&&i| !(1..=8).contains(&i)) {
        return Err(usage(format!("no criterion {bad}; they are numbered 1 to 8")));
    }
    let outcomes = selftest::run(&a.only, |o| println!("{o}"))?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} criteria failed", outcomes.len()).into());
    }
    Ok(())
}
