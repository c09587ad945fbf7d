//! MMV-AMP: the Bayesian approximate-message-passing baseline.
//!
//! The received block is `Y = A X + Z` with row-sparse `X`: row `k` is zero
//! with probability `1 - lambda` and `CN(0, g_k I_M)` otherwise. Each
//! iteration denoises the matched-filter estimate `R = Phi^H Z + X` row-wise
//! with the posterior-mean estimator and applies the Onsager-corrected
//! residual update
//!
//! ```text
//! X' = eta(R),    Z' = Y - Phi X' + (Ktot/L) Z <eta'(R)>
//! ```
//!
//! where `<eta'>` averages the per-row Jacobians. AMP theory is stated for
//! measurement matrices with unit-norm columns, so the iteration internally
//! rescales to `Phi = A / sqrt(L)` and `Y / sqrt(L)`; the effective noise
//! floor in that domain is `sigma2 / L`. All reported quantities (`x`,
//! `gamma`, MSE traces) stay in physical signal units.
//!
//! Divergence is a first-class outcome here, not a bug: for some parameter
//! ranges the iterates run away from the state-evolution prediction, and the
//! instability experiments count how often.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::{CMat, CVec};
use crate::system_model::{complex_gaussian, rng_from_seed, LsfcModel, PilotMatrix, ReceivedBlock};

/// How the per-iteration effective noise `tau^2` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    /// Precomputed state-evolution sequence (the textbook recursion).
    StateEvolution,
    /// Per-column residual energy `tau_i^2 = ||Z_{:,i}||^2 / L`.
    EmpiricalResidual,
    /// Pooled residual energy `tau^2 = ||Z||_F^2 / (L M)` on every antenna;
    /// the isotropic estimator matching the spatially-white channel model.
    EmpiricalIsotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Full `M x M` row Jacobians in the Onsager average.
    Full,
    /// Keep only the diagonal (the off-diagonal rank-1 part vanishes in
    /// expectation; this drops the per-row cost from O(M^2) to O(M)).
    DiagonalOnly,
}

/// What the receiver knows about the large-scale fading coefficients.
#[derive(Debug, Clone)]
pub enum LsfcKnowledge {
    /// Exact per-user coefficients.
    Known(Vec<f64>),
    /// All users at a common, known strength.
    Constant(f64),
}

impl LsfcKnowledge {
    fn g_for(&self, k: usize) -> f64 {
        match self {
            LsfcKnowledge::Known(g) => g[k],
            LsfcKnowledge::Constant(g) => *g,
        }
    }
}

///Shape of the Onsager residual correction (experimental comparison knob).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnsagerForm {
    /// `Z <dEta/dr>` as a literal right product.
    Holo,
    /// `Z <dEta/dr>^T`.
    HoloT,
    /// `Z <dEta/dr> + conj(Z) <dEta/dconj(r)>`.
    Conj,
    /// `Z <dEta/dr>^T + conj(Z) <dEta/dconj(r)>^T`.
    ConjT,
}

#[derive(Debug, Clone)]
pub struct AmpOptions {
    pub onsager: OnsagerForm,
    pub max_iters: usize,
    /// Fraction of active users `Ka / Ktot`.
    pub lambda: f64,
    pub tau_mode: TauMode,
    pub derivative_mode: DerivativeMode,
    pub lsfc: LsfcKnowledge,
    /// Monte-Carlo sample count for the state-evolution expectation.
    pub se_mc_samples: usize,
    /// Seed for the state-evolution Monte Carlo draws.
    pub se_seed: u64,
    /// Stop early once the residual norm changes by less than this relative
    /// amount (`0` disables).
    pub early_stop_tol: f64,
}

impl AmpOptions {
    pub fn defaults(lambda: f64, lsfc: LsfcKnowledge) -> Self {
        AmpOptions {
            onsager: OnsagerForm::Holo,
            max_iters: 50,
            lambda,
            tau_mode: TauMode::EmpiricalResidual,
            derivative_mode: DerivativeMode::Full,
            lsfc,
            se_mc_samples: 10_000,
            se_seed: 0,
            early_stop_tol: 1e-6,
        }
    }

    fn validate(&self, ktot: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CoreError::InvalidArgument(
                "lambda must lie in [0, 1]".into(),
            ));
        }
        if let LsfcKnowledge::Known(g) = &self.lsfc {
            if g.len() != ktot {
                return Err(CoreError::DimensionMismatch(format!(
                    "lsfc vector has {} entries, expected {ktot}",
                    g.len()
                )));
            }
        }
        Ok(())
    }
}

/// Iterates of one AMP run (`x_t` in signal units, residual in the
/// unit-column domain).
#[derive(Debug, Clone)]
pub struct AmpState {
    /// `Ktot x M` current signal estimate.
    pub x_t: CMat,
    /// `L x M` residual.
    pub z_t: CMat,
    /// Per-antenna effective noise diagonal.
    pub tau2: Vec<f64>,
    pub iteration: usize,
}

/// Output of [`amp_run`].
#[derive(Debug, Clone)]
pub struct AmpRun {
    pub x_final: CMat,
    pub z_final: CMat,
    pub tau2_final: Vec<f64>,
    /// `tau^2` diagonal per iteration.
    pub tau2_trace: Vec<Vec<f64>>,
    /// `||X^t - X||_F^2 / (M Ktot)` per iteration, when the truth was given.
    pub mse_trace: Option<Vec<f64>>,
    /// Iteration at which non-finite iterates appeared; the returned iterates
    /// are the last finite ones.
    pub divergence: Option<usize>,
    pub iterations: usize,
}

/// Posterior-mean denoiser for one row under the decoupled model
/// `r = x + CN(0, diag(tau2))`, returning the denoised row and the activity
/// posterior `phi in [0, 1]`.
///
/// `phi` is evaluated in the log domain (a sum of per-antenna log terms fed
/// through a logistic), which stays finite for any `M`.
pub fn amp_denoise(r: &CVec, g_k: f64, tau2: &[f64], lambda: f64) -> (CVec, f64) {
    let m = r.len();
    assert_eq!(tau2.len(), m);
    let phi = amp_phi(r, g_k, tau2, lambda);
    let mut out = CVec::zeros(m);
    for i in 0..m {
        let shrink = phi * g_k / (g_k + tau2[i]);
        out.re[i] = shrink * r.re[i];
        out.im[i] = shrink * r.im[i];
    }
    (out, phi)
}

/// Activity posterior `P(active | r, g_k)`.
fn amp_phi(r: &CVec, g_k: f64, tau2: &[f64], lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= 1.0 {
        return 1.0;
    }
    // log odds of "inactive": ln((1-l)/l) + sum_i [ln((g+t_i)/t_i) - g|r_i|^2/(t_i(g+t_i))]
    let mut s = ((1.0 - lambda) / lambda).ln();
    for i in 0..m_len(r) {
        let t = tau2[i];
        let a = g_k + t;
        let r2 = r.re[i] * r.re[i] + r.im[i] * r.im[i];
        s += (a / t).ln() - g_k * r2 / (t * a);
    }
    // phi = 1 / (1 + e^s), evaluated on the stable side
    let phi = if s > 0.0 {
        let e = (-s).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + s.exp())
    };
    phi.clamp(0.0, 1.0)
}

#[inline]
fn m_len(r: &CVec) -> usize {
    r.len()
}

/// Row Jacobian of the denoiser (holomorphic part), either full or just its
/// diagonal:
///
/// ```text
/// eta' = phi diag(Xi) + (Xi r)(Xit r)^H (phi - phi^2)
/// Xi  = diag(g / (g + tau_i^2))
/// Xit = diag(g / (tau_i^2 (g + tau_i^2)))
/// ```
pub enum RowJacobian {
    Full(CMat),
    Diagonal(Vec<Complex64>),
}

pub fn amp_derivative(
    r: &CVec,
    g_k: f64,
    tau2: &[f64],
    phi: f64,
    mode: DerivativeMode,
) -> RowJacobian {
    let m = r.len();
    let var = phi - phi * phi;
    match mode {
        DerivativeMode::Full => {
            let mut jac = CMat::zeros(m, m);
            for i in 0..m {
                let xi = g_k / (g_k + tau2[i]);
                jac.set(i, i, Complex64::new(phi * xi, 0.0));
            }
            if var != 0.0 {
                let mut u = CVec::zeros(m); // Xi r
                let mut v = CVec::zeros(m); // Xit r
                for i in 0..m {
                    let xi = g_k / (g_k + tau2[i]);
                    let xit = xi / tau2[i];
                    u.re[i] = xi * r.re[i];
                    u.im[i] = xi * r.im[i];
                    v.re[i] = xit * r.re[i];
                    v.im[i] = xit * r.im[i];
                }
                // u v^H = u * conj(v)^T
                let v_conj = CVec {
                    re: v.re.clone(),
                    im: v.im.iter().map(|x| -x).collect(),
                };
                jac.add_outer(Complex64::new(var, 0.0), &u, &v_conj);
            }
            RowJacobian::Full(jac)
        }
        DerivativeMode::DiagonalOnly => {
            let mut diag = Vec::with_capacity(m);
            for i in 0..m {
                let xi = g_k / (g_k + tau2[i]);
                let xit = xi / tau2[i];
                let r2 = r.re[i] * r.re[i] + r.im[i] * r.im[i];
                diag.push(Complex64::new(phi * xi + var * xi * xit * r2, 0.0));
            }
            RowJacobian::Diagonal(diag)
        }
    }
}

/// Scalar-`tau` state-evolution configuration.
#[derive(Debug, Clone)]
pub struct SeConfig {
    pub lambda: f64,
    /// `Ktot / L`.
    pub undersampling: f64,
    /// Effective noise floor entering the recursion.
    pub sigma2: f64,
    pub m: usize,
    pub iters: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Scalar state evolution `tau_{t+1}^2 = sigma2 + (Ktot/L) * mse(tau_t^2)`,
/// with the per-entry denoiser MSE estimated by Monte Carlo over the signal
/// prior and the decoupled Gaussian noise. Entry 0 is the analytic
/// initialization `sigma2 + (Ktot/L) * lambda * E[g]`.
pub fn state_evolution(cfg: &SeConfig, lsfc_model: &LsfcModel) -> Vec<f64> {
    let mean_g = lsfc_model.mean();
    let mut rng = rng_from_seed(cfg.seed);
    let sampler = |rng: &mut ChaCha8Rng| lsfc_model.sample(rng);
    se_recursion(cfg, mean_g, sampler, &mut rng)
}

fn se_recursion(
    cfg: &SeConfig,
    mean_g: f64,
    mut sample_g: impl FnMut(&mut ChaCha8Rng) -> f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut taus = Vec::with_capacity(cfg.iters + 1);
    let mut tau2 = cfg.sigma2 + cfg.undersampling * cfg.lambda * mean_g;
    taus.push(tau2);
    if cfg.lambda <= 0.0 {
        // zero signal prior: the denoiser output is exactly zero, so the
        // error is zero and tau pins to the noise floor
        for _ in 0..cfg.iters {
            taus.push(cfg.sigma2);
        }
        return taus;
    }
    let m = cfg.m;
    let tau_vec = |t: f64| vec![t; m];
    for _ in 0..cfg.iters {
        let tvec = tau_vec(tau2);
        let mut err_acc = 0.0;
        for _ in 0..cfg.mc_samples {
            let g = sample_g(rng);
            let active = rng.gen::<f64>() < cfg.lambda;
            let mut x = CVec::zeros(m);
            let mut r = CVec::zeros(m);
            for i in 0..m {
                if active {
                    let xi = complex_gaussian(rng, g);
                    x.set(i, xi);
                }
                let z = complex_gaussian(rng, tau2);
                r.set(i, x.get(i) + z);
            }
            let (den, _) = amp_denoise(&r, g, &tvec, cfg.lambda);
            for i in 0..m {
                let dr = den.re[i] - x.re[i];
                let di = den.im[i] - x.im[i];
                err_acc += dr * dr + di * di;
            }
        }
        let mse = err_acc / (cfg.mc_samples as f64 * m as f64);
        tau2 = cfg.sigma2 + cfg.undersampling * mse;
        taus.push(tau2);
    }
    taus
}

const TAU_FLOOR: f64 = 1e-30;

/// Run MMV-AMP on one received block. `x_true` (the `Ktot x M` transmitted
/// signal) enables the per-iteration MSE trace.
pub fn amp_run(
    block: &ReceivedBlock,
    pilots: &PilotMatrix,
    options: &AmpOptions,
    x_true: Option<&CMat>,
) -> Result<AmpRun> {
    let l = pilots.dim_l;
    let ktot = pilots.dim_ktot;
    let m = block.m_antennas;
    options.validate(ktot)?;
    if block.y.nrows() != l {
        return Err(CoreError::DimensionMismatch(
            "block and pilots disagree on L".into(),
        ));
    }
    if let Some(x) = x_true {
        if x.nrows() != ktot || x.ncols() != m {
            return Err(CoreError::DimensionMismatch(
                "x_true must be Ktot x M".into(),
            ));
        }
    }

    let inv_sqrt_l = 1.0 / (l as f64).sqrt();
    let undersampling = ktot as f64 / l as f64;
    // conj(Phi) (L x K) and Phi^T (K x L) drive the transposed iteration.
    let mut phi_conj = CMat::from_fn(l, ktot, |i, j| pilots.entries.get(i, j).conj());
    phi_conj.scale(inv_sqrt_l);
    let phi_t = phi_conj.adjoint(); // (conj Phi)^H = Phi^T

    // Everything runs transposed (M-major) so each user's row is contiguous.
    let mut yt = CMat::from_fn(m, l, |i, j| block.y.get(j, i));
    yt.scale(inv_sqrt_l);
    let mut xt = CMat::zeros(m, ktot);
    let mut zt = yt.clone();

    // Precompute the SE tau sequence when requested; the recursion runs at
    // the physical effective noise floor sigma2 / L of the rescaled model.
    let se_taus = if options.tau_mode == TauMode::StateEvolution {
        let cfg = SeConfig {
            lambda: options.lambda,
            undersampling,
            sigma2: block.sigma2 / l as f64,
            m,
            iters: options.max_iters,
            mc_samples: options.se_mc_samples,
            seed: options.se_seed,
        };
        Some(match &options.lsfc {
            LsfcKnowledge::Constant(g) => state_evolution(&cfg, &LsfcModel::Constant(*g)),
            LsfcKnowledge::Known(g) => {
                let g = g.clone();
                let mut rng = rng_from_seed(cfg.seed);
                se_recursion(
                    &cfg,
                    g.iter().sum::<f64>() / g.len() as f64,
                    move |rng| g[rng.gen_range(0..g.len())],
                    &mut rng,
                )
            }
        })
    } else {
        None
    };

    let mut tau2_trace: Vec<Vec<f64>> = Vec::new();
    let mut mse_trace: Option<Vec<f64>> = x_true.map(|_| Vec::new());
    let mut divergence = None;
    let mut iterations = 0;
    let mut prev_resid_norm = zt.frob_norm();
    let mut tau2 = vec![0.0; m];

    for t in 0..options.max_iters {
        // tau^2 for this iteration
        match options.tau_mode {
            TauMode::StateEvolution => {
                let tv = se_taus.as_ref().unwrap()[t].max(TAU_FLOOR);
                tau2.iter_mut().for_each(|v| *v = tv);
            }
            TauMode::EmpiricalResidual => {
                // per-antenna residual energy; residual columns live as rows
                // of zt (stride m)
                for (i, v) in tau2.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..l {
                        let z = zt.get(i, j);
                        acc += z.norm_sqr();
                    }
                    *v = (acc / l as f64).max(TAU_FLOOR);
                }
            }
            TauMode::EmpiricalIsotropic => {
                let pooled = (zt.frob_norm_sqr() / (l * m) as f64).max(TAU_FLOOR);
                tau2.iter_mut().for_each(|v| *v = pooled);
            }
        }
        tau2_trace.push(tau2.clone());

        // R^T = Z^T conj(Phi) + X^T
        let mut rt = zt.mul(&phi_conj);
        rt.add_assign(&xt);

        // row-wise denoising and the Onsager Jacobian average
        let mut xt_next = CMat::zeros(m, ktot);
        let mut onsager_full: Option<CMat> = match options.derivative_mode {
            DerivativeMode::Full => Some(CMat::zeros(m, m)),
            DerivativeMode::DiagonalOnly => None,
        };
        let want_conj = matches!(options.onsager, OnsagerForm::Conj | OnsagerForm::ConjT);
        let mut onsager_conj: Option<CMat> = if want_conj && onsager_full.is_some() {
            Some(CMat::zeros(m, m))
        } else {
            None
        };
        let mut onsager_diag = vec![Complex64::new(0.0, 0.0); m];
        let mut onsager_diag_conj = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..ktot {
            let r_k = rt.col_vec(k);
            let g_k = options.lsfc.g_for(k);
            let (den, phi) = amp_denoise(&r_k, g_k, &tau2, options.lambda);
            xt_next.set_col(k, &den);
            let var = phi - phi * phi;
            match options.derivative_mode {
                DerivativeMode::Full => {
                    match amp_derivative(&r_k, g_k, &tau2, phi, DerivativeMode::Full) {
                        RowJacobian::Full(j) => {
                            onsager_full.as_mut().unwrap().add_assign(&j);
                        }
                        RowJacobian::Diagonal(_) => unreachable!(),
                    }
                    if let Some(jc) = onsager_conj.as_mut() {
                        // dEta/dconj(r) = (phi - phi^2) (Xi r)(Xit r)^T
                        let mut u = CVec::zeros(m);
                        let mut v = CVec::zeros(m);
                        for i in 0..m {
                            let xi = g_k / (g_k + tau2[i]);
                            let xit = xi / tau2[i];
                            u.re[i] = xi * r_k.re[i];
                            u.im[i] = xi * r_k.im[i];
                            v.re[i] = xit * r_k.re[i];
                            v.im[i] = xit * r_k.im[i];
                        }
                        jc.add_outer(Complex64::new(var, 0.0), &u, &v);
                    }
                }
                DerivativeMode::DiagonalOnly => {
                    match amp_derivative(&r_k, g_k, &tau2, phi, DerivativeMode::DiagonalOnly) {
                        RowJacobian::Diagonal(d) => {
                            for i in 0..m {
                                onsager_diag[i] += d[i];
                            }
                        }
                        RowJacobian::Full(_) => unreachable!(),
                    }
                    if want_conj {
                        for i in 0..m {
                            let xi = g_k / (g_k + tau2[i]);
                            let xit = xi / tau2[i];
                            let r2 = Complex64::new(r_k.re[i], r_k.im[i])
                                * Complex64::new(r_k.re[i], r_k.im[i]);
                            onsager_diag_conj[i] += var * xi * xit * r2;
                        }
                    }
                }
            }
        }

        // Z^T' = Y^T - X'^T Phi^T + (K/L) <eta'>^T Z^T
        let mut zt_next = yt.clone();
        let mut fitted = xt_next.mul(&phi_t);
        fitted.scale(-1.0);
        zt_next.add_assign(&fitted);
        let coeff = undersampling / ktot as f64; // (K/L) * (1/K) from the average
        let zt_conj = if want_conj {
            let mut c = zt.clone();
            c.conjugate_in_place();
            Some(c)
        } else {
            None
        };
        match options.derivative_mode {
            DerivativeMode::Full => {
                // (Z J)^T = J^T Z^T (Holo/Conj); (Z J^T)^T = J Z^T (HoloT/ConjT)
                let javg = onsager_full.unwrap();
                let mut op = match options.onsager {
                    OnsagerForm::Holo | OnsagerForm::Conj => javg.transpose(),
                    OnsagerForm::HoloT | OnsagerForm::ConjT => javg,
                };
                op.scale(coeff);
                let corr = op.mul(&zt);
                zt_next.add_assign(&corr);
                if let Some(jc) = onsager_conj {
                    let mut opc = match options.onsager {
                        OnsagerForm::Conj => jc.transpose(),
                        _ => jc,
                    };
                    opc.scale(coeff);
                    let corr = opc.mul(zt_conj.as_ref().unwrap());
                    zt_next.add_assign(&corr);
                }
            }
            DerivativeMode::DiagonalOnly => {
                let d: Vec<Complex64> = onsager_diag.iter().map(|z| z * coeff).collect();
                let mut corr = zt.clone();
                corr.scale_rows_complex(&d);
                zt_next.add_assign(&corr);
                if want_conj {
                    let dc: Vec<Complex64> =
                        onsager_diag_conj.iter().map(|z| z * coeff).collect();
                    let mut corr = zt_conj.unwrap();
                    corr.scale_rows_complex(&dc);
                    zt_next.add_assign(&corr);
                }
            }
        }

        iterations = t + 1;
        if xt_next.has_non_finite() || zt_next.has_non_finite() {
            divergence = Some(t);
            break;
        }
        xt = xt_next;
        zt = zt_next;

        if let (Some(trace), Some(x0)) = (mse_trace.as_mut(), x_true) {
            let mut acc = 0.0;
            for k in 0..ktot {
                for i in 0..m {
                    let d = xt.get(i, k) - x0.get(k, i);
                    acc += d.norm_sqr();
                }
            }
            trace.push(acc / (m * ktot) as f64);
        }

        let resid_norm = zt.frob_norm();
        if options.early_stop_tol > 0.0
            && (resid_norm - prev_resid_norm).abs()
                <= options.early_stop_tol * prev_resid_norm.max(TAU_FLOOR)
        {
            break;
        }
        prev_resid_norm = resid_norm;
    }

    // return in conventional orientation
    let x_final = CMat::from_fn(ktot, m, |k, i| xt.get(i, k));
    let z_final = CMat::from_fn(l, m, |j, i| zt.get(i, j));
    Ok(AmpRun {
        x_final,
        z_final,
        tau2_final: tau2_trace.last().cloned().unwrap_or(tau2),
        tau2_trace,
        mse_trace,
        divergence,
        iterations,
    })
}

/// Row-energy activity estimate from the final AMP iterates:
/// `gamma_k = max(0, ||R_k||^2 / M - mean(tau^2))` with `R = Phi^H Z + X`.
pub fn amp_estimate_gamma(
    x_final: &CMat,
    z_final: &CMat,
    pilots: &PilotMatrix,
    tau2_final: &[f64],
) -> Vec<f64> {
    let l = pilots.dim_l;
    let ktot = pilots.dim_ktot;
    let m = x_final.ncols();
    let inv_sqrt_l = 1.0 / (l as f64).sqrt();
    let tau_mean = tau2_final.iter().sum::<f64>() / tau2_final.len() as f64;
    let mut gamma = vec![0.0; ktot];
    let mut acc = CVec::zeros(m);
    for k in 0..ktot {
        let (ar, ai) = pilots.column(k);
        // R_k = (a_k / sqrt(L))^H Z + X_k
        for i in 0..m {
            let mut sr = 0.0;
            let mut si = 0.0;
            for j in 0..l {
                let z = z_final.get(j, i);
                // conj(a_j) * z
                sr += ar[j] * z.re + ai[j] * z.im;
                si += ar[j] * z.im - ai[j] * z.re;
            }
            acc.re[i] = sr * inv_sqrt_l + x_final.get(k, i).re;
            acc.im[i] = si * inv_sqrt_l + x_final.get(k, i).im;
        }
        gamma[k] = (acc.norm_sqr() / m as f64 - tau_mean).max(0.0);
    }
    gamma
}
