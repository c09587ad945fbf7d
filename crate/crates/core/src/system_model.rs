//! Signal synthesis: pilots, fading, activity patterns and covariances.
//!
//! The uplink model: `Ktot` potential users share a coherence block of `L`
//! symbols. User `k` owns a pilot column `a_k` with `||a_k||^2 = L`. A subset
//! of `Ka` users is active; user `k` reaches the `M`-antenna array with power
//! `gamma_k = g_k` (its large-scale fading coefficient) through an i.i.d.
//! Rayleigh channel, under additive white Gaussian noise of variance `sigma2`
//! per complex dimension:
//!
//! ```text
//! Y = A diag(gamma)^{1/2} H + Z          (L x M)
//! ```
//!
//! The per-antenna columns of `Y` are i.i.d. with covariance
//! `Sigma(gamma) = A diag(gamma) A^H + sigma2 I`, and the sample covariance
//! `(1/M) Y Y^H` is the sufficient statistic consumed by the detectors.
//!
//! Reproducibility contract: all draws come from ChaCha8 seeded with the
//! caller-supplied `u64`; identical `(dims, seed)` reproduce identical output
//! bit for bit, independently of any other call.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::linalg::{CMat, CVec};

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent sub-seed from `(master, index)` by a SplitMix64
/// finalizer pass. Stable across platforms; used to hand out per-slot and
/// per-trial RNG streams.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One draw of a circularly-symmetric complex Gaussian CN(0, var): real and
/// imaginary parts are independent N(0, var/2), so `E|z|^2 = var`.
#[inline]
pub(crate) fn complex_gaussian(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Complex `L x Ktot` pilot/codebook matrix with unit energy per symbol
/// (`||a_k||^2 = L` for every column).
#[derive(Debug, Clone)]
pub struct PilotMatrix {
    pub entries: CMat,
    pub dim_l: usize,
    pub dim_ktot: usize,
    pub seed: u64,
}

impl PilotMatrix {
    #[inline]
    pub fn column(&self, k: usize) -> (&[f64], &[f64]) {
        self.entries.col(k)
    }

    pub fn column_vec(&self, k: usize) -> CVec {
        self.entries.col_vec(k)
    }
}

/// Distribution of the large-scale fading coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum LsfcModel {
    /// All users at the same received power `g`.
    Constant(f64),
    /// `10 log10(g)` uniform on `[10 log10(g_min), 10 log10(g_max)]`.
    UniformDb { g_min: f64, g_max: f64 },
}

impl LsfcModel {
    /// Uniform-in-dB model specified directly by its dB endpoints.
    pub fn uniform_db(min_db: f64, max_db: f64) -> Self {
        LsfcModel::UniformDb {
            g_min: 10f64.powf(min_db / 10.0),
            g_max: 10f64.powf(max_db / 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LsfcModel::Constant(g) if g > 0.0 => Ok(()),
            LsfcModel::UniformDb { g_min, g_max } if g_min > 0.0 && g_min <= g_max => Ok(()),
            _ => Err(CoreError::InvalidArgument(
                "LSFC model requires 0 < g_min <= g_max".into(),
            )),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            LsfcModel::Constant(g) => g,
            LsfcModel::UniformDb { g_min, g_max } => {
                let lo = g_min.log10();
                let hi = g_max.log10();
                let u: f64 = rng.gen();
                10f64.powf(lo + u * (hi - lo))
            }
        }
    }

    /// Exact mean received power under the model.
    pub fn mean(&self) -> f64 {
        match *self {
            LsfcModel::Constant(g) => g,
            LsfcModel::UniformDb { g_min, g_max } => {
                if g_min == g_max {
                    g_min
                } else {
                    (g_max - g_min) / (g_max / g_min).ln()
                }
            }
        }
    }
}

/// A sampled activity pattern together with its fading coefficients.
///
/// `gamma_true[k] = g_k` for active users and `0` otherwise; `lsfc` keeps the
/// full coefficient vector including inactive users (needed for box
/// constraints and relative thresholds).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub gamma_true: Vec<f64>,
    pub active_set: Vec<usize>,
    pub lsfc: Vec<f64>,
}

/// One received coherence block.
#[derive(Debug, Clone)]
pub struct ReceivedBlock {
    /// `L x M` received samples.
    pub y: CMat,
    pub sigma2: f64,
    pub m_antennas: usize,
}

/// Hermitian `L x L` covariance estimate (or exact model covariance, in which
/// case `m_samples == 0`).
#[derive(Debug, Clone)]
pub struct SampleCovariance {
    pub sigma_hat: CMat,
    pub m_samples: usize,
}

/// Draw a pilot matrix with columns i.i.d. uniform on the complex sphere of
/// radius `sqrt(L)`: a standard complex Gaussian vector rescaled to norm
/// `sqrt(L)` (a zero draw, probability 0, is redrawn).
pub fn generate_pilots(l: usize, ktot: usize, seed: u64) -> Result<PilotMatrix> {
    if l == 0 || ktot == 0 {
        return Err(CoreError::InvalidArgument(
            "pilot dimensions must be positive".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut entries = CMat::zeros(l, ktot);
    let mut col = CVec::zeros(l);
    for k in 0..ktot {
        loop {
            for i in 0..l {
                col.set(i, complex_gaussian(&mut rng, 1.0));
            }
            let norm = col.norm_sqr().sqrt();
            if norm > 0.0 {
                let scale = (l as f64).sqrt() / norm;
                col.re.iter_mut().for_each(|x| *x *= scale);
                col.im.iter_mut().for_each(|x| *x *= scale);
                break;
            }
        }
        entries.set_col(k, &col);
    }
    Ok(PilotMatrix {
        entries,
        dim_l: l,
        dim_ktot: ktot,
        seed,
    })
}

/// Sample an activity pattern: the active set is uniform over all size-`ka`
/// subsets of `[ktot]`, and every user (active or not) gets an LSFC draw.
pub fn sample_ground_truth(
    ktot: usize,
    ka: usize,
    lsfc_model: &LsfcModel,
    seed: u64,
) -> Result<GroundTruth> {
    if ka > ktot {
        return Err(CoreError::InvalidArgument(format!(
            "ka ({ka}) must not exceed ktot ({ktot})"
        )));
    }
    lsfc_model.validate()?;
    let mut rng = rng_from_seed(seed);
    let lsfc: Vec<f64> = (0..ktot).map(|_| lsfc_model.sample(&mut rng)).collect();
    // partial Fisher-Yates over the index range
    let mut idx: Vec<usize> = (0..ktot).collect();
    for i in 0..ka {
        let j = rng.gen_range(i..ktot);
        idx.swap(i, j);
    }
    let mut active_set: Vec<usize> = idx[..ka].to_vec();
    active_set.sort_unstable();
    let mut gamma_true = vec![0.0; ktot];
    for &k in &active_set {
        gamma_true[k] = lsfc[k];
    }
    Ok(GroundTruth {
        gamma_true,
        active_set,
        lsfc,
    })
}

/// Synthesize `Y = A diag(gamma)^{1/2} H + Z` and also return the effective
/// row-sparse signal `X = diag(gamma)^{1/2} H` (`Ktot x M`), which the AMP
/// diagnostics need as ground truth.
pub fn synthesize_block_detailed(
    pilots: &PilotMatrix,
    truth: &GroundTruth,
    m: usize,
    sigma2: f64,
    seed: u64,
) -> Result<(ReceivedBlock, CMat)> {
    if truth.gamma_true.len() != pilots.dim_ktot {
        return Err(CoreError::DimensionMismatch(format!(
            "ground truth has {} users, pilots have {}",
            truth.gamma_true.len(),
            pilots.dim_ktot
        )));
    }
    if m == 0 {
        return Err(CoreError::InvalidArgument("m must be positive".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(CoreError::InvalidArgument("sigma2 must be > 0".into()));
    }
    let l = pilots.dim_l;
    let mut rng = rng_from_seed(seed);

    // Only active rows of X are nonzero; draw channels just for those.
    let mut x = CMat::zeros(pilots.dim_ktot, m);
    let mut y = CMat::zeros(l, m);
    for &k in &truth.active_set {
        let amp = truth.gamma_true[k].sqrt();
        let (ar, ai) = pilots.column(k);
        for j in 0..m {
            let h = complex_gaussian(&mut rng, 1.0);
            let xkj = amp * h;
            x.set(k, j, xkj);
            let lo = j * l;
            // y[:, j] += a_k * x[k, j]
            let (yr, yi) = y.col_planes_mut(lo, l);
            for i in 0..l {
                yr[i] += ar[i] * xkj.re - ai[i] * xkj.im;
                yi[i] += ar[i] * xkj.im + ai[i] * xkj.re;
            }
        }
    }
    for j in 0..m {
        for i in 0..l {
            let z = complex_gaussian(&mut rng, sigma2);
            let old = y.get(i, j);
            y.set(i, j, old + z);
        }
    }
    Ok((
        ReceivedBlock {
            y,
            sigma2,
            m_antennas: m,
        },
        x,
    ))
}

/// Synthesize one received block (see [`synthesize_block_detailed`]).
pub fn synthesize_block(
    pilots: &PilotMatrix,
    truth: &GroundTruth,
    m: usize,
    sigma2: f64,
    seed: u64,
) -> Result<ReceivedBlock> {
    synthesize_block_detailed(pilots, truth, m, sigma2, seed).map(|(b, _)| b)
}

/// Empirical covariance `(1/M) Y Y^H`, symmetrized to exact Hermitian form.
pub fn sample_covariance(block: &ReceivedBlock) -> SampleCovariance {
    let m = block.m_antennas;
    let mut sigma_hat = block.y.mul_adjoint(&block.y);
    sigma_hat.scale(1.0 / m as f64);
    sigma_hat.hermitianize();
    SampleCovariance {
        sigma_hat,
        m_samples: m,
    }
}

/// Exact model covariance `Sigma(gamma) = sum_k gamma_k a_k a_k^H + sigma2 I`.
pub fn true_covariance(
    pilots: &PilotMatrix,
    gamma: &[f64],
    sigma2: f64,
) -> Result<SampleCovariance> {
    if gamma.len() != pilots.dim_ktot {
        return Err(CoreError::DimensionMismatch(format!(
            "gamma has {} entries, pilots have {} columns",
            gamma.len(),
            pilots.dim_ktot
        )));
    }
    if let Some(k) = gamma.iter().position(|&g| g < 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "gamma[{k}] is negative"
        )));
    }
    let l = pilots.dim_l;
    let mut sigma = CMat::scaled_identity(l, sigma2);
    for (k, &g) in gamma.iter().enumerate() {
        if g > 0.0 {
            let (ar, ai) = pilots.column(k);
            sigma.add_rank1_herm(g, ar, ai);
        }
    }
    sigma.hermitianize();
    Ok(SampleCovariance {
        sigma_hat: sigma,
        m_samples: 0,
    })
}

impl CMat {
    /// Mutable split planes of a contiguous column range (internal helper for
    /// the synthesizer's axpy loop).
    #[inline]
    pub(crate) fn col_planes_mut(&mut self, lo: usize, len: usize) -> (&mut [f64], &mut [f64]) {
        let (re, im) = self.planes_mut();
        (&mut re[lo..lo + len], &mut im[lo..lo + len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pilot_columns_have_unit_symbol_energy() {
        let p = generate_pilots(100, 2000, 7).unwrap();
        for k in 0..2000 {
            let (r, i) = p.column(k);
            let n2 = crate::linalg::norm_sqr_slices(r, i);
            assert!((n2 - 100.0).abs() < 1e-9 * 100.0, "column {k}: {n2}");
        }
    }

    #[test]
    fn single_entry_pilot_has_unit_modulus() {
        let p = generate_pilots(1, 1, 42).unwrap();
        assert_relative_eq!(p.entries.get(0, 0).norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pilots_are_reproducible_and_seed_sensitive() {
        let a = generate_pilots(16, 32, 5).unwrap();
        let b = generate_pilots(16, 32, 5).unwrap();
        let c = generate_pilots(16, 32, 6).unwrap();
        assert_eq!(a.entries, b.entries);
        assert!(a.entries.sub(&c.entries).frob_norm() > 1e-6);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(generate_pilots(0, 4, 1).is_err());
        assert!(generate_pilots(4, 0, 1).is_err());
    }

    #[test]
    fn ground_truth_support_and_values() {
        let t = sample_ground_truth(50, 12, &LsfcModel::Constant(2.5), 3).unwrap();
        assert_eq!(t.active_set.len(), 12);
        let mut seen = std::collections::HashSet::new();
        for &k in &t.active_set {
            assert!(k < 50);
            assert!(seen.insert(k), "duplicate active index");
            assert_relative_eq!(t.gamma_true[k], t.lsfc[k]);
            assert_relative_eq!(t.gamma_true[k], 2.5);
        }
        for k in 0..50 {
            if !t.active_set.contains(&k) {
                assert_eq!(t.gamma_true[k], 0.0);
            }
        }
        assert!(t.active_set.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_activity_is_all_zero() {
        let t = sample_ground_truth(5, 0, &LsfcModel::Constant(1.0), 9).unwrap();
        assert!(t.active_set.is_empty());
        assert!(t.gamma_true.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ka_exceeding_ktot_rejected() {
        assert!(sample_ground_truth(4, 5, &LsfcModel::Constant(1.0), 0).is_err());
    }

    #[test]
    fn uniform_db_samples_stay_in_range() {
        let model = LsfcModel::uniform_db(0.0, 20.0);
        let t = sample_ground_truth(2000, 200, &model, 11).unwrap();
        for &k in &t.active_set {
            assert!(t.gamma_true[k] >= 1.0 - 1e-12 && t.gamma_true[k] <= 100.0 + 1e-9);
        }
        // mean of the dB-uniform law: (g_max - g_min) / ln(g_max / g_min)
        assert_relative_eq!(model.mean(), 99.0 / 100f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn silent_block_is_noise_only() {
        let p = generate_pilots(8, 5, 1).unwrap();
        let t = sample_ground_truth(5, 0, &LsfcModel::Constant(1.0), 2).unwrap();
        let b = synthesize_block(&p, &t, 3, 1e-30, 3).unwrap();
        assert!(b.y.frob_norm_sqr() < 1e-20);
    }

    #[test]
    fn single_user_rank1_alignment() {
        // one active user, M = 1, vanishing noise: y is proportional to a_k
        let p = generate_pilots(16, 10, 21).unwrap();
        let t = sample_ground_truth(10, 1, &LsfcModel::Constant(3.0), 22).unwrap();
        let k = t.active_set[0];
        let (b, x) = synthesize_block_detailed(&p, &t, 1, 1e-28, 23).unwrap();
        let a = p.column_vec(k);
        let y = b.y.col_vec(0);
        let corr = a.dot_conj(&y).norm();
        let denom = 16.0 * x.get(k, 0).norm();
        assert_relative_eq!(corr / denom, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn mismatched_truth_rejected() {
        let p = generate_pilots(8, 5, 1).unwrap();
        let t = sample_ground_truth(6, 2, &LsfcModel::Constant(1.0), 2).unwrap();
        assert!(synthesize_block(&p, &t, 4, 1.0, 3).is_err());
    }

    #[test]
    fn block_power_matches_expectation() {
        // E ||Y||_F^2 / (L M) = Ka g + sigma2; checked within 3 sigma over
        // 100 draws with a crude variance bound on the per-draw average.
        let (l, ktot, ka, m) = (100, 2000, 300, 50);
        let p = generate_pilots(l, ktot, 31).unwrap();
        let t = sample_ground_truth(ktot, ka, &LsfcModel::Constant(1.0), 32).unwrap();
        let sigma2 = 1.0;
        let expect = ka as f64 + sigma2;
        let n_draws = 100;
        let mut mean = 0.0;
        let mut draws = Vec::with_capacity(n_draws);
        for trial in 0..n_draws {
            let b = synthesize_block(&p, &t, m, sigma2, 100 + trial as u64).unwrap();
            let v = b.y.frob_norm_sqr() / (l * m) as f64;
            mean += v;
            draws.push(v);
        }
        mean /= n_draws as f64;
        let var: f64 =
            draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_draws - 1) as f64;
        let three_sigma = 3.0 * (var / n_draws as f64).sqrt();
        assert!(
            (mean - expect).abs() <= three_sigma.max(0.02 * expect),
            "mean {mean}, expect {expect}, 3sigma {three_sigma}"
        );
    }

    #[test]
    fn sample_covariance_definition_and_psd() {
        let p = generate_pilots(12, 40, 41).unwrap();
        let t = sample_ground_truth(40, 6, &LsfcModel::Constant(1.0), 42).unwrap();
        let b = synthesize_block(&p, &t, 1, 0.5, 43).unwrap();
        let c = sample_covariance(&b);
        // M = 1: Sigma_hat = y y^H
        let y = b.y.col_vec(0);
        let mut outer = CMat::zeros(12, 12);
        outer.add_rank1_herm(1.0, &y.re, &y.im);
        assert!(c.sigma_hat.sub(&outer).frob_norm() < 1e-12);
        assert!(c.sigma_hat.hermitian_defect() == 0.0);
        assert!(c
            .sigma_hat
            .is_psd_within(1e-10 * c.sigma_hat.trace_re().abs()));
    }

    #[test]
    fn zero_block_gives_zero_covariance() {
        let b = ReceivedBlock {
            y: CMat::zeros(6, 4),
            sigma2: 1.0,
            m_antennas: 4,
        };
        assert_eq!(sample_covariance(&b).sigma_hat.frob_norm(), 0.0);
    }

    #[test]
    fn true_covariance_cases() {
        let p = generate_pilots(10, 20, 51).unwrap();
        // gamma = 0 -> sigma2 I
        let c0 = true_covariance(&p, &vec![0.0; 20], 0.7).unwrap();
        assert!(c0.sigma_hat.sub(&CMat::scaled_identity(10, 0.7)).frob_norm() < 1e-14);
        // single active user, sigma2 = 0 -> rank-1
        let mut gamma = vec![0.0; 20];
        gamma[3] = 2.0;
        let c1 = true_covariance(&p, &gamma, 0.0).unwrap();
        let a = p.column_vec(3);
        let mut outer = CMat::zeros(10, 10);
        outer.add_rank1_herm(2.0, &a.re, &a.im);
        assert!(c1.sigma_hat.sub(&outer).frob_norm() < 1e-12);
        // negative entry rejected
        gamma[4] = -1.0;
        assert!(true_covariance(&p, &gamma, 1.0).is_err());
    }

    #[test]
    fn sample_covariance_converges_to_true() {
        // LLN check at M = 1e5: relative Frobenius error below 5 %.
        let p = generate_pilots(10, 30, 61).unwrap();
        let t = sample_ground_truth(30, 5, &LsfcModel::Constant(1.0), 62).unwrap();
        let b = synthesize_block(&p, &t, 100_000, 1.0, 63).unwrap();
        let emp = sample_covariance(&b);
        let tru = true_covariance(&p, &t.gamma_true, 1.0).unwrap();
        let rel = emp.sigma_hat.sub(&tru.sigma_hat).frob_norm() / tru.sigma_hat.frob_norm();
        assert!(rel <= 0.05, "relative deviation {rel}");
    }
}
