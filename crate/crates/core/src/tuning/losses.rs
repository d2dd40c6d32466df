//! The three debiasing losses and their analytic gradients with respect to
//! the attribute-word probabilities.
//!
//! For a batch X of probes with per-pair probabilities pf_i(x), pm_i(x):
//!
//! - `l_d` — distribution distance: with a = pf+eps, b = pm+eps,
//!   `l_d = 1/2 * sum_x sum_i [ a*ln(2a/(a+b)) + b*ln(2b/(a+b)) ]`.
//!   This is a smoothed Jensen-Shannon-style divergence pushing each female
//!   probability toward its male counterpart.
//! - `l_g` — gender mass: `l_g = sum_x (sum_i pf_i + sum_i pm_i)`, pushing
//!   the total probability of gendered words down.
//! - `l_l` — lean imbalance: `l_l = sum_x |F - M| / (F + M)` with
//!   F = sum_i pf_i, M = sum_i pm_i (a 0/0 term contributes 0), pushing the
//!   aggregate female and male masses toward balance.
//!
//! `total = w_d*l_d + w_g*l_g + w_l*l_l`. Gradients are closed-form; a
//! central-difference checker guards them in tests.

use serde::{Deserialize, Serialize};

use crate::backends::AttributeDistribution;

/// Loss weights and smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub epsilon: f64,
    pub w_d: f64,
    pub w_g: f64,
    pub w_l: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-10,
            w_d: 1.0,
            w_g: 1.0,
            w_l: 1.0,
        }
    }
}

/// Individual loss terms plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_d: f64,
    pub l_g: f64,
    pub l_l: f64,
    pub total: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("loss needs at least one attribute distribution")]
    EmptyBatch,
    #[error("probe {probe_id}: pf has {f} entries but pm has {m}")]
    RaggedPairs { probe_id: String, f: usize, m: usize },
    #[error("probe {probe_id}: probability {value} is not a finite non-negative number")]
    BadProbability { probe_id: String, value: f64 },
    #[error("epsilon must be finite and >= 0, got {0}")]
    BadEpsilon(f64),
    #[error("loss became non-finite at tuning step {step}")]
    NonFinite { step: usize },
}

fn validate(dists: &[AttributeDistribution], cfg: &LossConfig) -> Result<(), LossError> {
    if dists.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if !cfg.epsilon.is_finite() || cfg.epsilon < 0.0 {
        return Err(LossError::BadEpsilon(cfg.epsilon));
    }
    for d in dists {
        if d.pf.len() != d.pm.len() {
            return Err(LossError::RaggedPairs {
                probe_id: d.probe_id.clone(),
                f: d.pf.len(),
                m: d.pm.len(),
            });
        }
        for &p in d.pf.iter().chain(d.pm.iter()) {
            if !p.is_finite() || p < 0.0 {
                return Err(LossError::BadProbability {
                    probe_id: d.probe_id.clone(),
                    value: p,
                });
            }
        }
    }
    Ok(())
}

/// One pair's contribution to `l_d` (before the global 1/2).
///
/// Written as `a*ln(2a) + b*ln(2b) - (a+b)*ln(a+b)`, whose partials are the
/// clean `ln(2a/(a+b))` and `ln(2b/(a+b))`. A zero operand contributes zero
/// (the x*ln(x) limit), which only arises when epsilon is zero.
pub(crate) fn distance_term(a: f64, b: f64) -> f64 {
    let xlnx = |x: f64, arg: f64| if x > 0.0 { x * arg.ln() } else { 0.0 };
    let s = a + b;
    xlnx(a, 2.0 * a) + xlnx(b, 2.0 * b) - xlnx(s, s)
}

/// Evaluates all three losses over a batch of attribute distributions.
pub fn compute_losses(
    dists: &[AttributeDistribution],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    validate(dists, cfg)?;
    let eps = cfg.epsilon;
    let mut l_d = 0.0;
    let mut l_g = 0.0;
    let mut l_l = 0.0;
    for d in dists {
        for (&pf, &pm) in d.pf.iter().zip(&d.pm) {
            l_d += distance_term(pf + eps, pm + eps);
            l_g += pf + pm;
        }
        let (f, m) = (d.sum_f(), d.sum_m());
        let s = f + m;
        if s > 0.0 {
            l_l += (f - m).abs() / s;
        }
    }
    l_d *= 0.5;
    let total = cfg.w_d * l_d + cfg.w_g * l_g + cfg.w_l * l_l;
    Ok(LossBreakdown { l_d, l_g, l_l, total })
}

/// Gradient of the weighted total with respect to every probability, in the
/// same (pf, pm) shape as the input.
///
/// Closed forms:
/// - d l_d / d pf_i = 1/2 * ln(2a/(a+b)), and symmetrically for pm (zero at
///   pf == pm, as the divergence is minimized there);
/// - d l_g / d p = 1 everywhere;
/// - d l_l / d pf_i = (sign(F-M)*S - |F-M|) / S^2 with S = F+M, and the
///   mirrored sign for pm. At the tie F == M the subgradient 0 is chosen; an
///   all-zero probe contributes 0.
pub fn loss_gradients(
    dists: &[AttributeDistribution],
    cfg: &LossConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, LossError> {
    validate(dists, cfg)?;
    let eps = cfg.epsilon;
    let mut out = Vec::with_capacity(dists.len());
    for d in dists {
        let (f, m) = (d.sum_f(), d.sum_m());
        let s = f + m;
        let diff = f - m;
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        let (lean_f, lean_m) = if s > 0.0 {
            (
                (sign * s - diff.abs()) / (s * s),
                (-sign * s - diff.abs()) / (s * s),
            )
        } else {
            (0.0, 0.0)
        };

        let mut gf = Vec::with_capacity(d.pf.len());
        let mut gm = Vec::with_capacity(d.pm.len());
        for (&pf, &pm) in d.pf.iter().zip(&d.pm) {
            let a = pf + eps;
            let b = pm + eps;
            let ab = a + b;
            let dist_f = if a > 0.0 && ab > 0.0 { 0.5 * (2.0 * a / ab).ln() } else { 0.0 };
            let dist_m = if b > 0.0 && ab > 0.0 { 0.5 * (2.0 * b / ab).ln() } else { 0.0 };
            gf.push(cfg.w_d * dist_f + cfg.w_g + cfg.w_l * lean_f);
            gm.push(cfg.w_d * dist_m + cfg.w_g + cfg.w_l * lean_m);
        }
        out.push((gf, gm));
    }
    Ok(out)
}

/// Compares analytic gradients against central finite differences of the
/// total loss, returning the worst relative error across all coordinates.
///
/// Callers that assert a tolerance should keep inputs away from the `l_l`
/// kink (|F - M| comfortably larger than the step), where the loss is not
/// differentiable and finite differences straddle the crease.
pub fn check_gradients(
    dists: &[AttributeDistribution],
    cfg: &LossConfig,
    fd_step: f64,
) -> Result<f64, LossError> {
    let analytic = loss_gradients(dists, cfg)?;
    let mut worst: f64 = 0.0;
    let mut perturbed: Vec<AttributeDistribution> = dists.to_vec();
    for (x, d) in dists.iter().enumerate() {
        for i in 0..d.pf.len() {
            for side in 0..2 {
                let read = |v: &AttributeDistribution| if side == 0 { v.pf[i] } else { v.pm[i] };
                let orig = read(d);
                let write = |v: &mut AttributeDistribution, val: f64| {
                    if side == 0 {
                        v.pf[i] = val;
                    } else {
                        v.pm[i] = val;
                    }
                };
                write(&mut perturbed[x], orig + fd_step);
                let plus = compute_losses(&perturbed, cfg)?.total;
                write(&mut perturbed[x], (orig - fd_step).max(0.0));
                let shift = orig - (orig - fd_step).max(0.0) + fd_step;
                let minus = compute_losses(&perturbed, cfg)?.total;
                write(&mut perturbed[x], orig);

                let fd = (plus - minus) / shift;
                let g = if side == 0 { analytic[x].0[i] } else { analytic[x].1[i] };
                let denom = g.abs().max(fd.abs()).max(1e-8);
                worst = worst.max((g - fd).abs() / denom);
            }
        }
    }
    Ok(worst)
}
