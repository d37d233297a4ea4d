//! Robust sinusoid fit: RANSAC over minimal 3-point subsets with a small
//! frequency grid around one period per span, then a least-squares refit
//! on the consensus set.
//!
//! For a fixed frequency the model `v = a*sin(wx) + b*cos(wx) + c` is
//! linear, so three points pin it down exactly and the consensus refit is
//! a 3x3 solve. The frequency grid absorbs small column-count mismatch
//! (a cropped slice, a stack whose rotation drifted) without giving up
//! the closed-form inner loop.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use super::{FitError, FitReport, SineModel};
use crate::phantom::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// A point is an inlier within this many rows of the model.
    pub inlier_tolerance_rows: f64,
    pub max_iterations: u32,
    /// Below this consensus the fit is rejected.
    pub min_inlier_fraction: f64,
    /// Relative half-width of the frequency search around one period per
    /// span; 0 pins the frequency exactly.
    pub omega_span: f64,
    /// Grid points across the frequency interval (odd keeps the nominal
    /// frequency on the grid).
    pub omega_grid: usize,
    /// Stop once an all-inlier subset was sampled with this probability.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_tolerance_rows: 3.0,
            max_iterations: 500,
            min_inlier_fraction: 0.5,
            omega_span: 0.02,
            omega_grid: 9,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacParams {
    fn validate(&self) -> Result<(), FitError> {
        let err = |m: &str| Err(FitError::Config(m.into()));
        if !(self.inlier_tolerance_rows > 0.0) {
            return err("inlier_tolerance_rows must be positive");
        }
        if self.max_iterations == 0 {
            return err("max_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return err("min_inlier_fraction must lie in [0, 1]");
        }
        if !(self.omega_span >= 0.0) || self.omega_span >= 0.5 {
            return err("omega_span must lie in [0, 0.5)");
        }
        if self.omega_grid == 0 {
            return err("omega_grid must be at least 1");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return err("confidence must lie in (0, 1)");
        }
        Ok(())
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn solve3(m: &[[f64; 3]; 3], rhs: [f64; 3], eps: f64) -> Option<[f64; 3]> {
    let det = det3(m);
    if det.abs() < eps {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = *m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        *o = det3(&mk) / det;
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Count inliers and their squared-residual sum for `v = a*s + b*c + d`.
fn consensus(
    points: &[(f64, f64)],
    basis: &[(f64, f64)],
    coef: &[f64; 3],
    tol: f64,
) -> (usize, f64) {
    let mut count = 0;
    let mut ssr = 0.0;
    for (&(_, v), &(s, c)) in points.iter().zip(basis) {
        let r = v - (coef[0] * s + coef[1] * c + coef[2]);
        if r.abs() <= tol {
            count += 1;
            ssr += r * r;
        }
    }
    (count, ssr)
}

fn lsq(points: &[(f64, f64)], basis: &[(f64, f64)], idx: &[usize]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for &i in idx {
        let (s, c) = basis[i];
        let g = [s, c, 1.0];
        let v = points[i].1;
        for a in 0..3 {
            rhs[a] += g[a] * v;
            for b in 0..3 {
                m[a][b] += g[a] * g[b];
            }
        }
    }
    solve3(&m, rhs, 1e-12 * (idx.len() as f64).powi(3).max(1.0))
}

fn normalize_phi(p: f64) -> f64 {
    let mut p = p.rem_euclid(TAU);
    if p >= PI {
        p -= TAU;
    }
    p
}

/// Fit `row = a*sin(omega*x + phi) + d` to border points over a span of
/// `span_cols` columns (one full rotation).
///
/// Errors: fewer than 4 points, points spanning fewer than 3 distinct
/// columns, or a consensus below `min_inlier_fraction` (the best-effort
/// report rides along in [`FitError::Rejected`]).
pub fn fit_sine(
    points: &[(f64, f64)],
    span_cols: usize,
    params: &RansacParams,
) -> Result<FitReport, FitError> {
    params.validate()?;
    if span_cols < 2 {
        return Err(FitError::BadSpan(span_cols));
    }
    let n = points.len();
    if n < 4 {
        return Err(FitError::InsufficientData { found: n });
    }
    {
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < 3 {
            return Err(FitError::Degenerate);
        }
    }

    let omega0 = TAU / span_cols as f64;
    let g = params.omega_grid;
    let omegas: Vec<f64> = if g == 1 {
        vec![omega0]
    } else {
        (0..g)
            .map(|j| omega0 * (1.0 + params.omega_span * (2.0 * j as f64 / (g - 1) as f64 - 1.0)))
            .collect()
    };
    let bases: Vec<Vec<(f64, f64)>> = omegas
        .iter()
        .map(|&w| points.iter().map(|&(x, _)| (w * x).sin_cos()).collect())
        .collect();

    let tol = params.inlier_tolerance_rows;
    // Candidates are ranked by truncated squared loss: residuals inside the
    // tolerance tube count fully, everything outside costs a flat tol^2.
    // Ranking by raw inlier count instead lets a model that merely grazes
    // one extra stray point outrank a better-centered fit.
    let loss = |count: usize, ssr: f64| ssr + (n - count) as f64 * tol * tol;
    let mut rng = stream_rng(params.seed, 0x0F17_5EED);
    let mut best: Option<(usize, f64, [f64; 3], usize)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0u32;

    while iter < needed {
        let oi = iter as usize % omegas.len();
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let mut k = rng.random_range(0..n);
        while k == i || k == j {
            k = rng.random_range(0..n);
        }
        iter += 1;

        let b = &bases[oi];
        let m = [
            [b[i].0, b[i].1, 1.0],
            [b[j].0, b[j].1, 1.0],
            [b[k].0, b[k].1, 1.0],
        ];
        let Some(coef) = solve3(&m, [points[i].1, points[j].1, points[k].1], 1e-9) else {
            continue;
        };
        let (count, ssr) = consensus(points, b, &coef, tol);
        let improved = match best {
            None => true,
            Some((bc, bs, _, _)) => loss(count, ssr) < loss(bc, bs),
        };
        if improved {
            best = Some((count, ssr, coef, oi));
            // One all-inlier subset suffices; cycle the whole frequency
            // grid that many times over.
            let w = count as f64 / n as f64;
            let subsets = if w >= 1.0 {
                1.0
            } else {
                ((1.0 - params.confidence).ln() / (1.0 - w.powi(3)).ln()).ceil().max(1.0)
            };
            let total = (subsets * omegas.len() as f64).min(f64::from(u32::MAX));
            needed = (total as u32).clamp(omegas.len() as u32, params.max_iterations);
        }
    }

    let (raw_count, raw_ssr, raw_coef, raw_oi) = best.ok_or(FitError::Degenerate)?;

    // Polish on the consensus set: a 3-point sample lands anywhere inside
    // the inlier tube, so its own parameters are noisy even when its vote
    // is right. Refit by least squares over the sample's inliers, trying
    // every grid frequency (the subset may have locked onto a neighboring
    // one), then once more over the refit's own inliers to recenter the
    // tube. The raw sample is returned only if every refit is singular.
    let mut polished: Option<(usize, f64, [f64; 3], usize)> = None;
    let mut support = bases[raw_oi]
        .iter()
        .zip(points)
        .enumerate()
        .filter(|(_, ((s, c), (_, v)))| {
            (v - (raw_coef[0] * s + raw_coef[1] * c + raw_coef[2])).abs() <= tol
        })
        .map(|(i, _)| i)
        .collect::<Vec<usize>>();
    for _ in 0..2 {
        for (ri, rb) in bases.iter().enumerate() {
            if let Some(rc) = lsq(points, rb, &support) {
                let (count, ssr) = consensus(points, rb, &rc, tol);
                let better = match polished {
                    None => true,
                    Some((pc, ps, _, _)) => loss(count, ssr) < loss(pc, ps),
                };
                if better {
                    polished = Some((count, ssr, rc, ri));
                }
            }
        }
        let Some((_, _, pc, poi)) = polished else { break };
        support = bases[poi]
            .iter()
            .zip(points)
            .enumerate()
            .filter(|(_, ((s, c), (_, v)))| (v - (pc[0] * s + pc[1] * c + pc[2])).abs() <= tol)
            .map(|(i, _)| i)
            .collect();
    }

    let (count, ssr, coef, oi) =
        polished.unwrap_or((raw_count, raw_ssr, raw_coef, raw_oi));
    let amp = coef[0].hypot(coef[1]);
    let phi = if amp < 1e-12 { 0.0 } else { normalize_phi(coef[1].atan2(coef[0])) };
    let report = FitReport {
        model: SineModel { a: amp, omega: omegas[oi], phi, d: coef[2] },
        inlier_fraction: count as f64 / n as f64,
        residual_rms: if count > 0 { (ssr / count as f64).sqrt() } else { f64::NAN },
        iterations_used: iter,
        point_count: n,
    };
    if report.inlier_fraction < params.min_inlier_fraction {
        return Err(FitError::Rejected {
            required: params.min_inlier_fraction,
            report: Box::new(report),
        });
    }
    Ok(report)
}
