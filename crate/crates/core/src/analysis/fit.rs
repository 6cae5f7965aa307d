use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const A_MIN: f64 = 1.0;
const A_STEPS: usize = 2000;
const A_STEP: f64 = 0.001;
/// Fitted bases above this mark a take-over window.
pub const TAKEOVER_BASE: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub mse: f64,
}

impl ExpFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a.powf(x) + self.b
    }
}

/// Least-squares fit of `a^x + b` at `x = 1..=n`, scanning `a` over
/// `[1, 3]` in steps of 0.001 with `b` solved in closed form.
pub fn fit_exponential(devs: &[f64]) -> Result<ExpFit> {
    if devs.len() < 3 {
        return Err(Error::Argument(format!("need at least 3 points, got {}", devs.len())));
    }
    if devs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("deviation series".into()));
    }
    let n = devs.len() as f64;
    let mut best = ExpFit {
        a: A_MIN,
        b: 0.0,
        mse: f64::INFINITY,
    };
    let mut powers = vec![0.0; devs.len()];
    for k in 0..=A_STEPS {
        let a = A_MIN + k as f64 * A_STEP;
        let mut p = 1.0;
        let mut resid_sum = 0.0;
        for (slot, y) in powers.iter_mut().zip(devs) {
            p *= a;
            *slot = p;
            resid_sum += y - p;
        }
        let b = resid_sum / n;
        let mse = powers
            .iter()
            .zip(devs)
            .map(|(p, y)| (y - p - b).powi(2))
            .sum::<f64>()
            / n;
        if mse < best.mse {
            best = ExpFit { a, b, mse };
        }
    }
    best.a = (best.a * 1000.0).round() / 1000.0;
    Ok(best)
}

pub fn is_takeover(a: f64) -> bool {
    a > TAKEOVER_BASE
}

/// First index whose fitted increment exceeds twice the first increment;
/// 0 when the curve never steepens that much.
pub fn growth_onset(fit: &ExpFit, n: usize) -> usize {
    if n < 3 {
        return 0;
    }
    let inc = |i: usize| fit.eval(i as f64 + 2.0) - fit.eval(i as f64 + 1.0);
    let first = inc(0);
    if first <= 0.0 {
        return 0;
    }
    (1..n - 1).find(|&i| inc(i) > 2.0 * first).unwrap_or(0)
}
