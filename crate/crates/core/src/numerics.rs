//! Small numerical utilities shared by the modules: adaptive quadrature,
//! SVD-based rank and null spaces, and observed convergence orders.

use nalgebra::DMatrix;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integrates piecewise, splitting `[a, b]` at every breakpoint inside it.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> f64 {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(inner);
    pts.push(hi);
    let total: f64 = pts.windows(2).map(|w| integrate(&f, w[0], w[1], tol)).sum();
    sign * total
}

/// Singular values, sorted descending, padded with zeros up to
/// `max(rows, cols)` so that kernel and cokernel counts can be read off.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Spectrum {
    pub fn of(m: &DMatrix<f64>) -> Spectrum {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Spectrum { values: Vec::new(), rows, cols };
        }
        let mut values: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Spectrum { values, rows, cols }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.max();
        self.values.iter().filter(|&&s| s > cut).count()
    }

    pub fn kernel_dim(&self, rel_tol: f64) -> usize {
        self.cols - self.rank(rel_tol)
    }

    pub fn cokernel_dim(&self, rel_tol: f64) -> usize {
        self.rows - self.rank(rel_tol)
    }

    /// True when some singular value sits in `[lo·σ_max, hi·σ_max]`.
    pub fn marginal(&self, lo: f64, hi: f64) -> bool {
        let smax = self.max();
        self.values.iter().any(|&s| s >= lo * smax && s <= hi * smax)
    }

    /// Smallest singular value above the cut, if any.
    pub fn smallest_nonzero(&self, rel_tol: f64) -> Option<f64> {
        let cut = rel_tol * self.max();
        self.values.iter().copied().filter(|&s| s > cut).last()
    }
}

/// Orthonormal basis (as columns) of the null space of `m`, using a
/// relative singular-value threshold.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // pad to square so that the full right singular basis is available
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let cols_idx: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= cut).collect();
    let mut basis = DMatrix::zeros(cols, cols_idx.len());
    for (k, &i) in cols_idx.iter().enumerate() {
        for j in 0..cols {
            basis[(j, k)] = vt[(i, j)];
        }
    }
    basis
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return nalgebra::DVector::zeros(cols);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(b, 1e-13 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| nalgebra::DVector::zeros(cols))
}

/// Observed order `log2(coarse / fine)` of a quantity that should shrink
/// like `h^p` when `h` is halved.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Wraps a coordinate difference into `(-1/2, 1/2]`.
#[inline]
pub fn wrap_diff(d: f64) -> f64 {
    let r = d - d.round();
    if r <= -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// Reduces a torus coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13);
        assert!((v - 2.0).abs() < 1e-12);
        let w = integrate_with_breaks(|x: f64| x.abs(), 1.0, -1.0, &[0.0], 1e-14);
        assert!((w + 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_and_null_space() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let s = Spectrum::of(&m);
        assert_eq!(s.rank(1e-10), 2);
        assert_eq!(s.kernel_dim(1e-10), 1);
        assert_eq!(s.cokernel_dim(1e-10), 0);
        let k = null_space(&m, 1e-10);
        assert_eq!(k.ncols(), 1);
        assert!((&m * &k).norm() < 1e-12);
    }

    #[test]
    fn wrapping_conventions() {
        assert_eq!(wrap_diff(0.5), 0.5);
        assert_eq!(wrap_diff(-0.5), 0.5);
        assert!((wrap_diff(0.75) + 0.25).abs() < 1e-15);
        assert_eq!(wrap_unit(-0.25), 0.75);
        assert_eq!(wrap_unit(1.0), 0.0);
    }
}
