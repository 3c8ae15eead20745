//! Singular value soft thresholding on hierarchical tensors.
//!
//! [`soft_threshold`] is the composition `S_{E,a} ∘ ... ∘ S_{1,a}` of
//! per-edge shrinkage steps, evaluated in the edge order of the tree. Each
//! step moves the orthogonality center onto the edge, shrinks the exposed
//! singular values and drops the directions that became zero.

use crate::dim_tree::EdgeId;
use crate::error::{Error, Result};
use crate::htensor::{EdgeSpectrum, HTensor, ZERO_CUTOFF};
use crate::linalg::numerical_rank;

/// `sgn(x) * max(|x| - alpha, 0)`.
pub fn scalar_soft(x: f64, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    x.signum() * (x.abs() - alpha).max(0.0)
}

/// Shrinks a nonincreasing spectrum and drops the entries that vanish.
fn shrink_spectrum(sigma: &[f64], alpha: f64) -> Vec<f64> {
    sigma
        .iter()
        .map(|&s| scalar_soft(s, alpha))
        .take_while(|&s| s > 0.0)
        .collect()
}

fn shrink_edge_in_place(u: &mut HTensor, t: EdgeId, alpha: f64, rel_cutoff: f64) {
    u.canonicalize_in_place(t, rel_cutoff);
    if let Some(spectrum) = u.gauge_spectrum() {
        let keep = numerical_rank(&spectrum.sigma, rel_cutoff);
        let shrunk = shrink_spectrum(&spectrum.sigma[..keep], alpha);
        if shrunk != spectrum.sigma {
            u.replace_gauge_spectrum(shrunk);
        }
    }
}

/// Soft thresholding of the singular values of a single matricization.
pub fn edge_soft_threshold(u: &HTensor, t: EdgeId, alpha: f64) -> HTensor {
    assert!(alpha >= 0.0, "threshold must be nonnegative");
    let mut out = u.clone();
    shrink_edge_in_place(&mut out, t, alpha, ZERO_CUTOFF);
    out
}

/// The hierarchical soft thresholding operator `S_alpha`.
pub fn soft_threshold(u: &HTensor, alpha: f64) -> HTensor {
    soft_threshold_with_cutoff(u, alpha, ZERO_CUTOFF)
}

/// [`soft_threshold`] with a custom relative cutoff below which singular
/// values are discarded before shrinking. Only meant for experiments with the
/// cutoff itself; every value other than the default changes the operator.
pub fn soft_threshold_with_cutoff(u: &HTensor, alpha: f64, rel_cutoff: f64) -> HTensor {
    assert!(alpha >= 0.0, "threshold must be nonnegative");
    let mut out = u.clone();
    for t in 0..u.tree().num_edges() {
        if out.is_zero() {
            break;
        }
        shrink_edge_in_place(&mut out, t, alpha, rel_cutoff);
    }
    out
}

/// Shrinkage quantities of one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDiagnostics {
    pub edge: EdgeId,
    /// Number of singular values strictly above the threshold.
    pub r_alpha: usize,
    /// Norm of the singular values not above the threshold.
    pub tau_alpha: f64,
    /// `sqrt(alpha^2 r_alpha + tau_alpha^2)`, the error of shrinking this edge alone.
    pub d_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDiagnostics {
    pub alpha: f64,
    pub edges: Vec<EdgeDiagnostics>,
    /// `max_t d_alpha`, a lower bound for `||S_alpha(u) - u||`.
    pub lower: f64,
    /// `sum_t d_alpha`, an upper bound for `||S_alpha(u) - u||`.
    pub upper: f64,
}

/// Diagnostics of a single spectrum.
pub fn edge_diagnostics(spectrum: &EdgeSpectrum, alpha: f64) -> EdgeDiagnostics {
    let r_alpha = spectrum.sigma.iter().take_while(|&&s| s > alpha).count();
    let tau_alpha = spectrum.sigma[r_alpha..].iter().map(|s| s * s).sum::<f64>().sqrt();
    EdgeDiagnostics {
        edge: spectrum.edge,
        r_alpha,
        tau_alpha,
        d_alpha: (alpha * alpha * r_alpha as f64 + tau_alpha * tau_alpha).sqrt(),
    }
}

pub fn diagnostics_from_spectra(spectra: &[EdgeSpectrum], alpha: f64) -> ThresholdDiagnostics {
    let edges: Vec<EdgeDiagnostics> = spectra.iter().map(|s| edge_diagnostics(s, alpha)).collect();
    let lower = edges.iter().map(|e| e.d_alpha).fold(0.0, f64::max);
    let upper = edges.iter().map(|e| e.d_alpha).sum();
    ThresholdDiagnostics {
        alpha,
        edges,
        lower,
        upper,
    }
}

pub fn threshold_diagnostics(u: &HTensor, alpha: f64) -> Result<ThresholdDiagnostics> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {alpha}"
        )));
    }
    Ok(diagnostics_from_spectra(&u.hsvd_spectra(), alpha))
}

/// Decay class of a singular value sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum DecayModel {
    /// `sigma_k ~ k^(-1/p)` with `p` in `(0, 2)`.
    WeakLp { p: f64, slope: f64, wlp_norm: f64 },
    /// `sigma_k <= c_scale * exp(-c * k^beta)`.
    Exponential { c_scale: f64, c: f64, beta: f64 },
    /// Neither fit is acceptable.
    Neither,
}

const MIN_R_SQUARED: f64 = 0.9;

struct LineFit {
    intercept: f64,
    slope: f64,
    rss: f64,
    r_squared: f64,
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 0.0 };
    LineFit {
        intercept,
        slope,
        rss,
        r_squared,
    }
}

/// Classifies the decay of the largest singular values over all edges.
///
/// The envelope `max_t sigma_{t,k}` is fitted once against `log k`
/// (algebraic decay) and once against `k^beta` for `beta` on a grid in
/// `[0.1, 3]` (exponential decay); the fit with the smaller residual wins.
pub fn fit_decay(spectra: &[EdgeSpectrum]) -> Result<DecayModel> {
    let len = spectra.iter().map(|s| s.sigma.len()).max().unwrap_or(0);
    let envelope: Vec<f64> = (0..len)
        .map(|k| spectra.iter().map(|s| s.get(k)).fold(0.0, f64::max))
        .take_while(|&s| s > 0.0)
        .collect();
    if envelope.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} nonzero singular values, need at least 3",
            envelope.len()
        )));
    }
    let ks: Vec<f64> = (1..=envelope.len()).map(|k| k as f64).collect();
    let y: Vec<f64> = envelope.iter().map(|s| s.ln()).collect();

    let log_k: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let alg = fit_line(&log_k, &y);
    let p = -1.0 / alg.slope;
    let algebraic = (alg.slope < 0.0 && p > 0.0 && p < 2.0 && alg.r_squared >= MIN_R_SQUARED).then(|| {
        let wlp_norm = ks
            .iter()
            .zip(&envelope)
            .map(|(k, s)| k.powf(1.0 / p) * s)
            .fold(0.0, f64::max);
        (
            alg.rss,
            DecayModel::WeakLp {
                p,
                slope: alg.slope,
                wlp_norm,
            },
        )
    });

    let exponential = (10..=300)
        .map(|i| {
            let beta = i as f64 / 100.0;
            let x: Vec<f64> = ks.iter().map(|k| k.powf(beta)).collect();
            (beta, fit_line(&x, &y))
        })
        .filter(|(_, f)| f.slope < 0.0 && f.r_squared >= MIN_R_SQUARED)
        .min_by(|a, b| a.1.rss.total_cmp(&b.1.rss))
        .map(|(beta, f)| {
            (
                f.rss,
                DecayModel::Exponential {
                    c_scale: f.intercept.exp(),
                    c: -f.slope,
                    beta,
                },
            )
        });

    Ok(match (algebraic, exponential) {
        (Some(a), Some(e)) => {
            if a.0 <= e.0 {
                a.1
            } else {
                e.1
            }
        }
        (Some(a), None) => a.1,
        (None, Some(e)) => e.1,
        (None, None) => DecayModel::Neither,
    })
}
