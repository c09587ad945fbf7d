//! Dense complex linear algebra on a split re/im storage layout.
//!
//! The coordinate-descent detectors spend almost all of their time in
//! Hermitian matrix-vector products, quadratic forms and rank-1 updates on
//! small (L x L) complex matrices. Storing the real and imaginary parts in
//! separate column-major planes keeps those kernels free of the interleaved
//! shuffle patterns that defeat autovectorization, which matters because the
//! inner decode of a full frame visits the kernels billions of times.

use num_complex::Complex64;

use crate::error::CoreError;

/// Dense complex vector, split into real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl CVec {
    pub fn zeros(n: usize) -> Self {
        CVec {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_complex(entries: &[Complex64]) -> Self {
        CVec {
            re: entries.iter().map(|z| z.re).collect(),
            im: entries.iter().map(|z| z.im).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn fill_zero(&mut self) {
        self.re.iter_mut().for_each(|x| *x = 0.0);
        self.im.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn norm_sqr(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.re.len() {
            s += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        s
    }

    /// `conj(self) . other`
    pub fn dot_conj(&self, other: &CVec) -> Complex64 {
        dot_conj_slices((&self.re, &self.im), (&other.re, &other.im))
    }

    pub fn iter_complex(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.re
            .iter()
            .zip(self.im.iter())
            .map(|(&r, &i)| Complex64::new(r, i))
    }
}

/// `conj(a) . b` over split slices.
pub fn dot_conj_slices(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> Complex64 {
    let (ar, ai) = a;
    let (br, bi) = b;
    let n = ar.len();
    assert_eq!(n, br.len());
    let mut sr = 0.0;
    let mut si = 0.0;
    for k in 0..n {
        sr += ar[k] * br[k] + ai[k] * bi[k];
        si += ar[k] * bi[k] - ai[k] * br[k];
    }
    Complex64::new(sr, si)
}

pub fn norm_sqr_slices(xr: &[f64], xi: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..xr.len() {
        s += xr[k] * xr[k] + xi[k] * xi[k];
    }
    s
}

/// Dense complex matrix in column-major order with split re/im planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    /// `s * I`, with a real scale.
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = CMat::zeros(n, n);
        for j in 0..n {
            m.re[j * n + j] = s;
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        CMat::scaled_identity(n, 1.0)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let z = f(i, j);
                m.re[j * rows + i] = z.re;
                m.im[j * rows + i] = z.im;
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let idx = j * self.rows + i;
        Complex64::new(self.re[idx], self.im[idx])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        let idx = j * self.rows + i;
        self.re[idx] = z.re;
        self.im[idx] = z.im;
    }

    /// Split views of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> (&[f64], &[f64]) {
        let lo = j * self.rows;
        let hi = lo + self.rows;
        (&self.re[lo..hi], &self.im[lo..hi])
    }

    pub fn col_vec(&self, j: usize) -> CVec {
        let (r, i) = self.col(j);
        CVec {
            re: r.to_vec(),
            im: i.to_vec(),
        }
    }

    pub fn set_col(&mut self, j: usize, v: &CVec) {
        assert_eq!(v.len(), self.rows);
        let lo = j * self.rows;
        self.re[lo..lo + self.rows].copy_from_slice(&v.re);
        self.im[lo..lo + self.rows].copy_from_slice(&v.im);
    }

    /// `y = A x` into split output slices.
    pub fn matvec_into(&self, xr: &[f64], xi: &[f64], yr: &mut [f64], yi: &mut [f64]) {
        assert_eq!(xr.len(), self.cols);
        assert_eq!(yr.len(), self.rows);
        yr.iter_mut().for_each(|v| *v = 0.0);
        yi.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.cols {
            let (cr, ci) = self.col(j);
            let br = xr[j];
            let bi = xi[j];
            if br == 0.0 && bi == 0.0 {
                continue;
            }
            for i in 0..self.rows {
                yr[i] += cr[i] * br - ci[i] * bi;
                yi[i] += cr[i] * bi + ci[i] * br;
            }
        }
    }

    pub fn matvec(&self, x: &CVec) -> CVec {
        let mut y = CVec::zeros(self.rows);
        self.matvec_into(&x.re, &x.im, &mut y.re, &mut y.im);
        y
    }

    /// `A^H x` (adjoint application), one conjugated dot product per column.
    pub fn adjoint_matvec(&self, x: &CVec) -> CVec {
        assert_eq!(x.len(), self.rows);
        let mut y = CVec::zeros(self.cols);
        for j in 0..self.cols {
            let z = dot_conj_slices(self.col(j), (&x.re, &x.im));
            y.re[j] = z.re;
            y.im[j] = z.im;
        }
        y
    }

    /// `C = A * B`.
    pub fn mul(&self, b: &CMat) -> CMat {
        assert_eq!(self.cols, b.rows);
        let mut c = CMat::zeros(self.rows, b.cols);
        for j in 0..b.cols {
            let clo = j * self.rows;
            for l in 0..self.cols {
                let idx = j * b.rows + l;
                let br = b.re[idx];
                let bi = b.im[idx];
                if br == 0.0 && bi == 0.0 {
                    continue;
                }
                let (ar, ai) = self.col(l);
                let cre = &mut c.re[clo..clo + self.rows];
                let cim = &mut c.im[clo..clo + self.rows];
                for i in 0..self.rows {
                    cre[i] += ar[i] * br - ai[i] * bi;
                    cim[i] += ar[i] * bi + ai[i] * br;
                }
            }
        }
        c
    }

    /// `C = A^H * B`.
    pub fn adjoint_mul(&self, b: &CMat) -> CMat {
        assert_eq!(self.rows, b.rows);
        let mut c = CMat::zeros(self.cols, b.cols);
        for j in 0..b.cols {
            let bcol = b.col(j);
            for k in 0..self.cols {
                let z = dot_conj_slices(self.col(k), bcol);
                c.re[j * self.cols + k] = z.re;
                c.im[j * self.cols + k] = z.im;
            }
        }
        c
    }

    /// `C = A * B^H`.
    pub fn mul_adjoint(&self, b: &CMat) -> CMat {
        assert_eq!(self.cols, b.cols);
        let mut c = CMat::zeros(self.rows, b.rows);
        for l in 0..self.cols {
            let (ar, ai) = self.col(l);
            let (br, bi) = b.col(l);
            for j in 0..b.rows {
                // conj(B[j, l])
                let wr = br[j];
                let wi = -bi[j];
                if wr == 0.0 && wi == 0.0 {
                    continue;
                }
                let clo = j * self.rows;
                let cre = &mut c.re[clo..clo + self.rows];
                let cim = &mut c.im[clo..clo + self.rows];
                for i in 0..self.rows {
                    cre[i] += ar[i] * wr - ai[i] * wi;
                    cim[i] += ar[i] * wi + ai[i] * wr;
                }
            }
        }
        c
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                let z = self.get(i, j);
                out.set(j, i, z.conj());
            }
        }
        out
    }

    /// Plain transpose, no conjugation.
    pub fn transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `A += c * u u^H` with a real coefficient; preserves Hermitian symmetry.
    pub fn add_rank1_herm(&mut self, c: f64, ur: &[f64], ui: &[f64]) {
        assert_eq!(self.rows, self.cols);
        assert_eq!(ur.len(), self.rows);
        if c == 0.0 {
            return;
        }
        let n = self.rows;
        for j in 0..n {
            // c * conj(u[j])
            let wr = c * ur[j];
            let wi = -c * ui[j];
            let lo = j * n;
            let cre = &mut self.re[lo..lo + n];
            let cim = &mut self.im[lo..lo + n];
            for i in 0..n {
                cre[i] += ur[i] * wr - ui[i] * wi;
                cim[i] += ur[i] * wi + ui[i] * wr;
            }
        }
    }

    /// `A += c * x y^T` (plain transpose, no conjugation), complex scale.
    pub fn add_outer(&mut self, c: Complex64, x: &CVec, y: &CVec) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for j in 0..self.cols {
            let w = c * y.get(j);
            if w.re == 0.0 && w.im == 0.0 {
                continue;
            }
            let lo = j * self.rows;
            let cre = &mut self.re[lo..lo + self.rows];
            let cim = &mut self.im[lo..lo + self.rows];
            for i in 0..self.rows {
                cre[i] += x.re[i] * w.re - x.im[i] * w.im;
                cim[i] += x.re[i] * w.im + x.im[i] * w.re;
            }
        }
    }

    /// Scale row `i` by the complex factor `d[i]`.
    pub fn scale_rows_complex(&mut self, d: &[Complex64]) {
        assert_eq!(d.len(), self.rows);
        for j in 0..self.cols {
            let lo = j * self.rows;
            for i in 0..self.rows {
                let idx = lo + i;
                let (re, im) = (self.re[idx], self.im[idx]);
                self.re[idx] = re * d[i].re - im * d[i].im;
                self.im[idx] = re * d[i].im + im * d[i].re;
            }
        }
    }

    pub fn conjugate_in_place(&mut self) {
        self.im.iter_mut().for_each(|v| *v = -*v);
    }

    pub fn has_non_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).any(|v| !v.is_finite())
    }

    /// `Re(x^H A x)`; for Hermitian `A` this is the full quadratic form.
    pub fn quad_form(&self, xr: &[f64], xi: &[f64]) -> f64 {
        assert_eq!(self.rows, self.cols);
        assert_eq!(xr.len(), self.rows);
        let n = self.rows;
        let mut acc = 0.0;
        for j in 0..n {
            let (cr, ci) = self.col(j);
            // s = conj(x)^T A[:, j]
            let mut sr = 0.0;
            let mut si = 0.0;
            for i in 0..n {
                sr += xr[i] * cr[i] + xi[i] * ci[i];
                si += xr[i] * ci[i] - xi[i] * cr[i];
            }
            // += Re(s * x[j])
            acc += sr * xr[j] - si * xi[j];
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        self.re.iter_mut().for_each(|v| *v *= s);
        self.im.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for k in 0..self.re.len() {
            self.re[k] += other.re[k];
            self.im[k] += other.im[k];
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for k in 0..out.re.len() {
            out.re[k] -= other.re[k];
            out.im[k] -= other.im[k];
        }
        out
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        assert_eq!(self.rows, self.cols);
        for j in 0..self.cols {
            self.re[j * self.rows + j] += s;
        }
    }

    pub fn frob_norm_sqr(&self) -> f64 {
        let mut s = 0.0;
        for k in 0..self.re.len() {
            s += self.re[k] * self.re[k] + self.im[k] * self.im[k];
        }
        s
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sqr().sqrt()
    }

    pub fn trace_re(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.re[i * self.rows + i]).sum()
    }

    /// Replace `A` by `(A + A^H) / 2`, killing accumulated asymmetry.
    pub fn hermitianize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for j in 0..n {
            self.im[j * n + j] = 0.0;
            for i in (j + 1)..n {
                let a = j * n + i;
                let b = i * n + j;
                let r = 0.5 * (self.re[a] + self.re[b]);
                let m = 0.5 * (self.im[a] - self.im[b]);
                self.re[a] = r;
                self.re[b] = r;
                self.im[a] = m;
                self.im[b] = -m;
            }
        }
    }

    /// Largest Hermitian-asymmetry entry, `max |A - A^H| / 2`.
    pub fn hermitian_defect(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in j..n {
                let a = self.get(i, j);
                let b = self.get(j, i).conj();
                let d = 0.5 * (a - b).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Cholesky factorization `A = L L^H` of a Hermitian positive-definite
    /// matrix. Fails on non-positive pivots.
    pub fn cholesky(&self) -> Result<CCholesky, CoreError> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut l = self.clone();
        for j in 0..n {
            let mut d = l.re[j * n + j];
            for k in 0..j {
                let idx = k * n + j;
                d -= l.re[idx] * l.re[idx] + l.im[idx] * l.im[idx];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "cholesky pivot {j} is non-positive ({d:.3e})"
                )));
            }
            let dj = d.sqrt();
            l.re[j * n + j] = dj;
            l.im[j * n + j] = 0.0;
            let inv = 1.0 / dj;
            for i in (j + 1)..n {
                let mut sr = l.re[j * n + i];
                let mut si = l.im[j * n + i];
                for k in 0..j {
                    // L[i,k] * conj(L[j,k])
                    let (ar, ai) = (l.re[k * n + i], l.im[k * n + i]);
                    let (br, bi) = (l.re[k * n + j], -l.im[k * n + j]);
                    sr -= ar * br - ai * bi;
                    si -= ar * bi + ai * br;
                }
                l.re[j * n + i] = sr * inv;
                l.im[j * n + i] = si * inv;
            }
            // zero the strict upper triangle of column block
            for i in 0..j {
                l.re[j * n + i] = 0.0;
                l.im[j * n + i] = 0.0;
            }
        }
        Ok(CCholesky { l })
    }

    /// Positive semidefiniteness check via a shifted Cholesky: succeeds iff
    /// all eigenvalues are `>= -shift`.
    pub fn is_psd_within(&self, shift: f64) -> bool {
        let mut shifted = self.clone();
        shifted.add_scaled_identity(shift.max(f64::MIN_POSITIVE));
        shifted.cholesky().is_ok()
    }

    pub(crate) fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn to_complex_rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CCholesky {
    l: CMat,
}

impl CCholesky {
    pub fn factor(&self) -> &CMat {
        &self.l
    }

    /// `log det A = 2 sum log L[j,j]`.
    pub fn log_det(&self) -> f64 {
        let n = self.l.rows;
        (0..n).map(|j| self.l.re[j * n + j].ln()).sum::<f64>() * 2.0
    }

    /// Solve `A x = b` in place via forward/backward substitution.
    pub fn solve_in_place(&self, xr: &mut [f64], xi: &mut [f64]) {
        let n = self.l.rows;
        assert_eq!(xr.len(), n);
        // L y = b
        for i in 0..n {
            let mut sr = xr[i];
            let mut si = xi[i];
            for k in 0..i {
                let (ar, ai) = (self.l.re[k * n + i], self.l.im[k * n + i]);
                sr -= ar * xr[k] - ai * xi[k];
                si -= ar * xi[k] + ai * xr[k];
            }
            let inv = 1.0 / self.l.re[i * n + i];
            xr[i] = sr * inv;
            xi[i] = si * inv;
        }
        // L^H x = y
        for i in (0..n).rev() {
            let mut sr = xr[i];
            let mut si = xi[i];
            for k in (i + 1)..n {
                // conj(L[k,i]) * x[k]
                let (ar, ai) = (self.l.re[i * n + k], -self.l.im[i * n + k]);
                sr -= ar * xr[k] - ai * xi[k];
                si -= ar * xi[k] + ai * xr[k];
            }
            let inv = 1.0 / self.l.re[i * n + i];
            xr[i] = sr * inv;
            xi[i] = si * inv;
        }
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut out = b.clone();
        let n = self.l.rows;
        for j in 0..b.cols {
            let lo = j * n;
            let (re, im) = (&mut out.re[lo..lo + n], &mut out.im[lo..lo + n]);
            // split borrows: solve_in_place needs both planes
            let mut xr = re.to_vec();
            let mut xi = im.to_vec();
            self.solve_in_place(&mut xr, &mut xi);
            re.copy_from_slice(&xr);
            im.copy_from_slice(&xi);
        }
        out
    }

    /// `A^{-1}`, column by column.
    pub fn inverse(&self) -> CMat {
        let n = self.l.rows;
        let mut inv = CMat::identity(n);
        for j in 0..n {
            let lo = j * n;
            let mut xr = inv.re[lo..lo + n].to_vec();
            let mut xi = inv.im[lo..lo + n].to_vec();
            self.solve_in_place(&mut xr, &mut xi);
            inv.re[lo..lo + n].copy_from_slice(&xr);
            inv.im[lo..lo + n].copy_from_slice(&xi);
        }
        // exact Hermitian symmetry for downstream consumers
        inv.hermitianize();
        inv
    }

    /// `tr(A^{-1} B)`.
    pub fn trace_solve(&self, b: &CMat) -> f64 {
        self.solve_mat(b).trace_re()
    }
}
