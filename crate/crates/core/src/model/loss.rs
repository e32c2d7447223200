use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{FixationMap, SaliencyMap};
use crate::metrics::KL_EPS;
use crate::tensor::{Tape, Tensor, Var};

/// Added to standard deviations so flat maps do not divide by zero. For the
/// prediction it enters as `sqrt(var + ε²)`, which keeps the derivative finite
/// at zero variance.
pub const STD_EPS: f64 = 1e-8;
/// Floor inside the adversarial logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// How the generator's adversarial term is written.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// Minimize `ln(1 − D(fake))`.
    #[default]
    Minimax,
    /// Minimize `−ln D(fake)`.
    NonSaturating,
}

/// Differentiable content loss and its three terms, all one-element.
#[derive(Clone, Copy, Debug)]
pub struct ContentLoss {
    pub total: Var,
    pub kl: Var,
    pub cc: Var,
    pub nss: Var,
}

/// `KL(gt ‖ pred) − CC(gt, pred) − NSS(pred, fix)` on a `[1, H, W]`
/// prediction.
pub fn content_loss(tape: &mut Tape, pred: Var, gt: &SaliencyMap, fix: &FixationMap) -> Result<ContentLoss> {
    let shape = tape.shape(pred).to_vec();
    if shape != [1, gt.height, gt.width] || (fix.width, fix.height) != (gt.width, gt.height) {
        return Err(Error::shape(
            "content_loss",
            format!(
                "prediction {shape:?}, density {}x{}, fixations {}x{}",
                gt.width, gt.height, fix.width, fix.height
            ),
        ));
    }
    if fix.is_empty() {
        return Err(Error::invalid("content loss needs at least one fixation"));
    }
    let n = gt.values().len() as f64;

    let g = gt.normalized_sum()?;
    let g = tape.constant(Tensor::new(&shape, g.values().to_vec())?);
    let total = tape.sum(pred);
    let total = tape.expand(total, &shape)?;
    let p = tape.div(pred, total)?;
    let p = tape.add_scalar(p, KL_EPS);
    let ratio = tape.div(g, p)?;
    let ratio = tape.add_scalar(ratio, KL_EPS);
    let log = tape.ln(ratio)?;
    let kl = tape.mul(g, log)?;
    let kl = tape.sum(kl);

    let mean = tape.mean(pred);
    let mean = tape.expand(mean, &shape)?;
    let centred = tape.sub(pred, mean)?;
    let sq = tape.mul(centred, centred)?;
    let var = tape.mean(sq);
    let var = tape.add_scalar(var, STD_EPS * STD_EPS);
    let std = tape.sqrt(var);

    let gt_mean = gt.sum() / n;
    let gt_centred: Vec<f64> = gt.values().iter().map(|v| v - gt_mean).collect();
    let gt_std = (gt_centred.iter().map(|v| v * v).sum::<f64>() / n).sqrt() + STD_EPS;
    let gc = tape.constant(Tensor::new(&shape, gt_centred)?);
    let cov = tape.mul(centred, gc)?;
    let cov = tape.mean(cov);
    let cov = tape.scale(cov, 1.0 / gt_std);
    let cc = tape.div(cov, std)?;

    let idx = fix.fixated_indices();
    let mut weights = vec![0.0; gt.values().len()];
    for &i in &idx {
        weights[i] = 1.0 / idx.len() as f64;
    }
    let w = tape.constant(Tensor::new(&shape, weights)?);
    let picked = tape.mul(centred, w)?;
    let picked = tape.sum(picked);
    let nss = tape.div(picked, std)?;

    let kl_minus_cc = tape.sub(kl, cc)?;
    let total = tape.sub(kl_minus_cc, nss)?;
    Ok(ContentLoss { total, kl, cc, nss })
}

/// `−[ln D(real) + ln(1 − D(fake))]`.
pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = tape.log_clamped(d_real, LOG_FLOOR)?;
    let not_fake = tape.one_minus(d_fake);
    let fake = tape.log_clamped(not_fake, LOG_FLOOR)?;
    let sum = tape.add(real, fake)?;
    Ok(tape.scale(sum, -1.0))
}

/// Adversarial term for the generator plus `content`.
pub fn generator_loss(tape: &mut Tape, d_fake: Var, content: Var, objective: GeneratorObjective) -> Result<Var> {
    let adv = match objective {
        GeneratorObjective::Minimax => {
            let not_fake = tape.one_minus(d_fake);
            tape.log_clamped(not_fake, LOG_FLOOR)?
        }
        GeneratorObjective::NonSaturating => {
            let l = tape.log_clamped(d_fake, LOG_FLOOR)?;
            tape.scale(l, -1.0)
        }
    };
    tape.add(adv, content)
}

/// `(loss_D, loss_G)` for one pair of discriminator outputs.
pub fn gan_losses(
    tape: &mut Tape,
    d_real: Var,
    d_fake: Var,
    content: Var,
    objective: GeneratorObjective,
) -> Result<(Var, Var)> {
    let d = discriminator_loss(tape, d_real, d_fake)?;
    let g = generator_loss(tape, d_fake, content, objective)?;
    Ok((d, g))
}
