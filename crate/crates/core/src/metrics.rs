//! Scalar figures of merit: detection error rates, ROC sweeps, relative `lp`
//! estimation errors, sample-covariance deviation, and the OR-MAC entropy
//! bound on the outer sum rate.

use crate::error::{CoreError, Result};
use crate::linalg::CMat;

/// One operating point of a detector's receiver operating characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub nu: f64,
    pub p_md: f64,
    pub p_fa: f64,
}

/// Per-trial misdetection and false-alarm fractions of an estimated active
/// set against the truth. Monte-Carlo averaging is the caller's job.
pub fn md_fa(
    estimated: &[usize],
    true_set: &[usize],
    ktot: usize,
    ka: usize,
) -> Result<(f64, f64)> {
    if ka == 0 {
        return Err(CoreError::InvalidArgument(
            "misdetection rate is undefined for ka = 0".into(),
        ));
    }
    if ktot <= ka {
        return Err(CoreError::InvalidArgument(
            "false-alarm rate needs ktot > ka".into(),
        ));
    }
    let truth: std::collections::HashSet<usize> = true_set.iter().copied().collect();
    let hits = estimated.iter().filter(|k| truth.contains(k)).count();
    let extras = estimated.len() - hits;
    let p_md = 1.0 - hits as f64 / ka as f64;
    let p_fa = extras as f64 / (ktot - ka) as f64;
    Ok((p_md, p_fa))
}

/// Sweep the activity threshold `nu` over a sorted grid, producing the ROC of
/// the absolute rule `{ i : gamma_i > nu * sigma2 }` for one estimate.
pub fn roc_sweep(
    gamma_hat: &[f64],
    true_set: &[usize],
    sigma2: f64,
    nu_grid: &[f64],
) -> Result<Vec<RocPoint>> {
    let ktot = gamma_hat.len();
    let ka = true_set.len();
    let mut out = Vec::with_capacity(nu_grid.len());
    for &nu in nu_grid {
        let est = crate::detectors::threshold_activity(gamma_hat, nu, sigma2, None);
        let (p_md, p_fa) = md_fa(&est, true_set, ktot, ka)?;
        out.push(RocPoint { nu, p_md, p_fa });
    }
    Ok(out)
}

/// Average several per-trial ROCs taken over the same threshold grid.
pub fn average_roc(rocs: &[Vec<RocPoint>]) -> Vec<RocPoint> {
    assert!(!rocs.is_empty());
    let n = rocs[0].len();
    let mut out = rocs[0].clone();
    for roc in &rocs[1..] {
        assert_eq!(roc.len(), n, "grids must match");
        for (acc, p) in out.iter_mut().zip(roc.iter()) {
            acc.p_md += p.p_md;
            acc.p_fa += p.p_fa;
        }
    }
    let inv = 1.0 / rocs.len() as f64;
    for p in out.iter_mut() {
        p.p_md *= inv;
        p.p_fa *= inv;
    }
    out
}

/// Equal-error operating point of a ROC.
#[derive(Debug, Clone, Copy)]
pub struct EqualErrorPoint {
    /// Common error value where `p_md = p_fa` (linearly interpolated).
    pub rate: f64,
    /// Threshold at the crossing.
    pub nu: f64,
    /// False when the curves never cross inside the grid; `rate`/`nu` then
    /// hold the boundary point with the smallest |p_md - p_fa|.
    pub crossed: bool,
}

/// Locate the `p_md(nu) = p_fa(nu)` crossing by linear interpolation on the
/// grid. `p_md` is non-decreasing and `p_fa` non-increasing in `nu`, so the
/// sign of their difference changes at most once.
pub fn equal_error_point(roc: &[RocPoint]) -> EqualErrorPoint {
    assert!(!roc.is_empty());
    let diff = |p: &RocPoint| p.p_md - p.p_fa;
    for w in roc.windows(2) {
        let (d0, d1) = (diff(&w[0]), diff(&w[1]));
        if d0 == 0.0 {
            return EqualErrorPoint {
                rate: w[0].p_md,
                nu: w[0].nu,
                crossed: true,
            };
        }
        if d0 < 0.0 && d1 >= 0.0 {
            let t = if (d1 - d0).abs() > 0.0 { -d0 / (d1 - d0) } else { 0.0 };
            let rate = w[0].p_md + t * (w[1].p_md - w[0].p_md);
            let nu = w[0].nu + t * (w[1].nu - w[0].nu);
            return EqualErrorPoint {
                rate,
                nu,
                crossed: true,
            };
        }
    }
    // no crossing: report the boundary closest to balance
    let best = roc
        .iter()
        .min_by(|a, b| {
            (a.p_md - a.p_fa)
                .abs()
                .partial_cmp(&(b.p_md - b.p_fa).abs())
                .unwrap()
        })
        .unwrap();
    EqualErrorPoint {
        rate: 0.5 * (best.p_md + best.p_fa),
        nu: best.nu,
        crossed: false,
    }
}

/// Default logarithmic threshold grid, `nu` in `[1e-4, 1e2]`.
pub fn default_nu_grid() -> Vec<f64> {
    let n = 121;
    (0..n)
        .map(|i| 10f64.powf(-4.0 + 6.0 * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpNorm {
    L1,
    L2,
    LInf,
}

/// Relative estimation error `||gamma_hat - gamma_true||_p / ||gamma_true||_p`.
///
/// The `L1` flavor is the physically meaningful one (the coefficients are
/// received powers); `LInf` is exposed as an advisory diagnostic.
pub fn lp_error(gamma_hat: &[f64], gamma_true: &[f64], p: LpNorm) -> Result<f64> {
    if gamma_hat.len() != gamma_true.len() {
        return Err(CoreError::DimensionMismatch(
            "estimate and truth differ in length".into(),
        ));
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| -> f64 {
        match p {
            LpNorm::L1 => v.map(f64::abs).sum(),
            LpNorm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
            LpNorm::LInf => v.fold(0.0f64, |m, x| m.max(x.abs())),
        }
    };
    let denom = norm(&mut gamma_true.iter().copied());
    if denom == 0.0 {
        return Err(CoreError::InvalidArgument(
            "true vector has zero norm".into(),
        ));
    }
    let num = norm(
        &mut gamma_hat
            .iter()
            .zip(gamma_true.iter())
            .map(|(a, b)| a - b),
    );
    Ok(num / denom)
}

/// Frobenius deviation `||Sigma_hat - Sigma_true||_F` of a covariance
/// estimate from the ensemble covariance. Its square, averaged over channel
/// realizations, equals `tr(Sigma_true)^2 / M`.
pub fn covariance_deviation(sigma_hat: &CMat, sigma_true: &CMat) -> f64 {
    sigma_hat.sub(sigma_true).frob_norm()
}

/// OR-MAC output-entropy bound `2^J * H2((1 - 2^-J)^Ka)` in bits per slot.
///
/// `(1 - 2^-J)^Ka` sits extremely close to 1 for large `J`, so the complement
/// is computed in log1p/expm1 form before the entropy evaluation.
pub fn or_mac_entropy_bound(j: u32, ka: u64) -> f64 {
    if ka == 0 {
        return 0.0;
    }
    let log_p = (ka as f64) * (-(0.5f64.powi(j as i32))).ln_1p();
    // q = 1 - p computed without cancellation
    let q = -log_p.exp_m1();
    let p = log_p.exp();
    let h2 = if q <= 0.0 || q >= 1.0 {
        0.0
    } else {
        // -p log2 p - q log2 q with log2 p = log_p / ln 2
        -(p * log_p + q * q.ln()) / std::f64::consts::LN_2
    };
    2f64.powi(j as i32) * h2
}

/// Necessary sum-rate condition `Ka * J * R_out <= 2^J H2((1 - 2^-J)^Ka)`.
pub fn sum_rate_feasible(j: u32, ka: u64, r_out: f64) -> bool {
    (ka as f64) * (j as f64) * r_out <= or_mac_entropy_bound(j, ka)
}
