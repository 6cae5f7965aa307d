use std::f64::consts::TAU;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::{Measurement, Source};

/// Spoofer inaccuracy: a random-direction position error and a jitter on
/// the reported variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofErrorModel {
    pub pos_sigma: f64,
    pub var_sigma: f64,
    pub multiplier: f64,
    pub seed: u64,
}

impl Default for SpoofErrorModel {
    fn default() -> Self {
        crate::defaults::defaults().spoof_error
    }
}

impl SpoofErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_sigma >= 0.0 && self.var_sigma >= 0.0 && self.multiplier >= 0.0) {
            return Err(Error::validation("spoof_error", "sigmas and multiplier must be >= 0"));
        }
        Ok(())
    }
}

/// Smallest variance kept after jitter, relative to the nominal value.
const VAR_FLOOR_RATIO: f64 = 1e-3;

pub fn apply_spoof_error<R: Rng + ?Sized>(
    meas: &Measurement,
    model: &SpoofErrorModel,
    rng: &mut R,
) -> Result<Measurement> {
    if meas.source != Source::GpsSpoofed {
        return Err(Error::Argument("spoof error applies to spoofed GPS only".into()));
    }
    let pos_sigma = model.multiplier * model.pos_sigma;
    let var_sigma = model.multiplier * model.var_sigma;
    if pos_sigma == 0.0 && var_sigma == 0.0 {
        return Ok(*meas);
    }
    let r = pos_sigma * rng.sample::<f64, _>(StandardNormal);
    let alpha = rng.random_range(0.0..TAU);
    let offset = Vector2::new(alpha.cos(), alpha.sin()) * r;
    let mut uncertainty = meas.uncertainty;
    for v in uncertainty.iter_mut() {
        let jitter = var_sigma * rng.sample::<f64, _>(StandardNormal);
        *v = (*v + jitter).max(*v * VAR_FLOOR_RATIO);
    }
    Ok(Measurement {
        position: meas.position + offset,
        uncertainty,
        ..*meas
    })
}
