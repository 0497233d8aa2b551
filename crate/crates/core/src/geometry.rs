//! Flat model manifolds, critical points and gradient flows.
//!
//! Flows follow the upward convention `γ̇ = +∇f(γ)`. At a critical point the
//! eigenvectors of the Hessian with positive eigenvalues span the unstable
//! subspace and the negative ones the stable subspace, so
//! `dim W^u(p) = n - morse_index(p)`.

use crate::error::{Error, Result};
use crate::expr::ScalarFunction;
use crate::numerics::{lstsq, wrap_diff, wrap_unit};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Default fixed step of the flow integrator.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Euclidean,
    FlatTorus,
}

/// ℝⁿ or the flat torus ℝⁿ/ℤⁿ with the identity metric in coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelManifold {
    pub dim: usize,
    pub kind: ManifoldKind,
    /// Half-width of the critical-point search box on ℝⁿ.
    pub extent: f64,
}

impl ModelManifold {
    pub fn euclidean(dim: usize) -> Self {
        ModelManifold { dim, kind: ManifoldKind::Euclidean, extent: 2.0 }
    }

    pub fn torus(dim: usize) -> Self {
        ModelManifold { dim, kind: ManifoldKind::FlatTorus, extent: 0.5 }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == ManifoldKind::FlatTorus
    }

    pub fn periodic(&self) -> Vec<bool> {
        vec![self.is_torus(); self.dim]
    }

    /// Brings a point into `[0,1)ⁿ` on the torus; identity on ℝⁿ.
    pub fn wrap(&self, x: &mut [f64]) {
        if self.is_torus() {
            for v in x {
                *v = wrap_unit(*v);
            }
        }
    }

    pub fn wrapped(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.wrap(&mut y);
        y
    }

    /// `a - b`, taken in `(-1/2, 1/2]ⁿ` on the torus.
    pub fn diff(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            a.iter().zip(b).map(|(x, y)| if self.is_torus() { wrap_diff(x - y) } else { x - y }),
        )
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.diff(a, b).norm()
    }
}

/// A nondegenerate critical point with its Hessian eigenbasis (eigenvalues
/// ascending, eigenvectors as columns).
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub morse_index: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub value: f64,
}

impl CriticalPoint {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// Columns spanning the stable subspace of the upward flow.
    pub fn stable_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.morse_index).into_owned()
    }

    pub fn unstable_basis(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.eigenvectors.columns(self.morse_index, n - self.morse_index).into_owned()
    }

    pub fn unstable_dim(&self) -> usize {
        self.dim() - self.morse_index
    }

    /// Slowest linear rate `min |λ|` at the point.
    pub fn slowest_rate(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Backward time used for unstable-manifold membership:
    /// `10 / min|λ|`, capped at 40.
    pub fn t_back(&self) -> f64 {
        (10.0 / self.slowest_rate()).min(40.0)
    }

    /// The same point seen as a critical point of `-f`.
    pub fn reversed(&self) -> CriticalPoint {
        let n = self.dim();
        let eigenvalues: Vec<f64> = self.eigenvalues.iter().rev().map(|v| -v).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for k in 0..n {
            eigenvectors.set_column(k, &self.eigenvectors.column(n - 1 - k));
        }
        CriticalPoint {
            location: self.location.clone(),
            morse_index: n - self.morse_index,
            eigenvalues,
            eigenvectors,
            value: -self.value,
        }
    }
}

/// Classifies `x` as a critical point of `f`; fails with a non-Morse error
/// when some Hessian eigenvalue has magnitude below `1e-8`.
pub fn classify(f: &ScalarFunction, m: &ModelManifold, x: &[f64]) -> Result<CriticalPoint> {
    let location = m.wrapped(x);
    let h = f.hessian(&location)?;
    let eig = SymmetricEigen::new(h);
    let n = m.dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        eigenvectors.set_column(k, &col);
    }
    let smallest = eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if smallest < 1e-8 {
        return Err(Error::NonMorse { point: location, eigenvalue: smallest });
    }
    let morse_index = eigenvalues.iter().filter(|&&v| v < 0.0).count();
    let value = f.eval(&location)?;
    Ok(CriticalPoint { location, morse_index, eigenvalues, eigenvectors, value })
}

/// Newton iteration on `∇f = 0` from `x0`, run until the step stalls so
/// that degenerate points are driven close enough to be recognised.
fn newton_critical(f: &ScalarFunction, m: &ModelManifold, x0: &[f64]) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..200 {
        let (g, h) = f.grad_hessian_unchecked(&x);
        if !g.iter().all(|v| v.is_finite()) {
            return None;
        }
        let step = lstsq(&h, &g);
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
        m.wrap(&mut x);
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let snorm = step.norm();
        if snorm <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    let g = f.grad_unchecked(&x);
    (g.norm() <= 1e-10).then_some(x)
}

/// Locates critical points from a uniform seed grid with `resolution` points
/// per coordinate over `[0,1)ⁿ` (torus) or `[-extent, extent]ⁿ` (ℝⁿ).
/// Results are deduplicated at distance `1e-6` and sorted by Morse index,
/// then by location.
pub fn find_critical_points(
    f: &ScalarFunction,
    m: &ModelManifold,
    resolution: usize,
) -> Result<Vec<CriticalPoint>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("seed resolution must be positive".into()));
    }
    let n = m.dim;
    let total = resolution.pow(n as u32);
    let mut found: Vec<Vec<f64>> = Vec::new();
    for idx in 0..total {
        let mut seed = vec![0.0; n];
        let mut rest = idx;
        for s in seed.iter_mut() {
            let k = rest % resolution;
            rest /= resolution;
            *s = if m.is_torus() {
                (k as f64 + 0.5) / resolution as f64
            } else if resolution == 1 {
                0.0
            } else {
                -m.extent + 2.0 * m.extent * k as f64 / (resolution - 1) as f64
            };
        }
        if let Some(x) = newton_critical(f, m, &seed) {
            if !m.is_torus() && x.iter().any(|v| v.abs() > 10.0 * m.extent.max(1.0)) {
                continue;
            }
            if found.iter().all(|y| m.dist(y, &x) >= 1e-6) {
                found.push(x);
            }
        }
    }
    let mut points = found.iter().map(|x| classify(f, m, x)).collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.morse_index
            .cmp(&b.morse_index)
            .then_with(|| a.location.partial_cmp(&b.location).unwrap())
    });
    Ok(points)
}

fn check_step(h: f64, t: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("flow time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

fn rk4_step(f: &ScalarFunction, m: &ModelManifold, x: &mut [f64], dt: f64) {
    let n = x.len();
    let eval = |y: &[f64]| f.grad_unchecked(y);
    let shifted = |k: &DVector<f64>, a: f64| -> Vec<f64> { (0..n).map(|i| x[i] + a * k[i]).collect() };
    let k1 = eval(x);
    let k2 = eval(&shifted(&k1, 0.5 * dt));
    let k3 = eval(&shifted(&k2, 0.5 * dt));
    let k4 = eval(&shifted(&k3, dt));
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    m.wrap(x);
}

fn rk4_step_jac(f: &ScalarFunction, m: &ModelManifold, x: &mut [f64], j: &mut DMatrix<f64>, dt: f64) {
    let n = x.len();
    let shifted = |k: &DVector<f64>, a: f64| -> Vec<f64> { (0..n).map(|i| x[i] + a * k[i]).collect() };
    let (k1, h1) = f.grad_hessian_unchecked(x);
    let l1 = &h1 * &*j;
    let (k2, h2) = f.grad_hessian_unchecked(&shifted(&k1, 0.5 * dt));
    let l2 = &h2 * (&*j + &l1 * (0.5 * dt));
    let (k3, h3) = f.grad_hessian_unchecked(&shifted(&k2, 0.5 * dt));
    let l3 = &h3 * (&*j + &l2 * (0.5 * dt));
    let (k4, h4) = f.grad_hessian_unchecked(&shifted(&k3, dt));
    let l4 = &h4 * (&*j + &l3 * dt);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    *j += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (dt / 6.0);
    m.wrap(x);
}

fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > 1e12)
}

/// Time-`t` map of `γ̇ = ∇f(γ)` by classical fourth-order Runge–Kutta with
/// fixed step `h` (the last step shortened).
pub fn flow(f: &ScalarFunction, m: &ModelManifold, x0: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    check_step(h, t)?;
    let mut x = x0.to_vec();
    if t == 0.0 {
        return Ok(x);
    }
    let steps = (t / h).ceil() as usize;
    let mut done = 0.0;
    for k in 0..steps {
        let dt = if k + 1 == steps { t - done } else { h };
        rk4_step(f, m, &mut x, dt);
        done += dt;
        if diverged(&x) {
            return Err(Error::Divergence { start: x0.to_vec(), time: done });
        }
    }
    Ok(x)
}

/// Flow map and its Jacobian, integrating `J̇ = ∇(∇f)(γ) J` alongside the
/// flow with the same stepper.
pub fn flow_with_jacobian(
    f: &ScalarFunction,
    m: &ModelManifold,
    x0: &[f64],
    t: f64,
    h: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_step(h, t)?;
    let mut x = x0.to_vec();
    let mut j = DMatrix::identity(m.dim, m.dim);
    if t == 0.0 {
        return Ok((x, j));
    }
    let steps = (t / h).ceil() as usize;
    let mut done = 0.0;
    for k in 0..steps {
        let dt = if k + 1 == steps { t - done } else { h };
        rk4_step_jac(f, m, &mut x, &mut j, dt);
        done += dt;
        if diverged(&x) || !j.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { start: x0.to_vec(), time: done });
        }
    }
    Ok((x, j))
}

/// Points of the trajectory through `x0` at the nondecreasing, nonnegative
/// `times`, each reached from the previous sample.
pub fn sample_flow(
    f: &ScalarFunction,
    m: &ModelManifold,
    x0: &[f64],
    times: &[f64],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    let mut t_prev = 0.0;
    for &t in times {
        if t < t_prev {
            return Err(Error::InvalidArgument("sample times must be nondecreasing".into()));
        }
        x = flow(f, m, &x, t - t_prev, h)?;
        t_prev = t;
        out.push(x.clone());
    }
    Ok(out)
}

/// Like [`sample_flow`], also returning the Jacobian of the flow from `x0`
/// to each sample.
pub fn sample_flow_with_jacobian(
    f: &ScalarFunction,
    m: &ModelManifold,
    x0: &[f64],
    times: &[f64],
    h: f64,
) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    let mut j = DMatrix::identity(m.dim, m.dim);
    let mut t_prev = 0.0;
    for &t in times {
        if t < t_prev {
            return Err(Error::InvalidArgument("sample times must be nondecreasing".into()));
        }
        let (y, dj) = flow_with_jacobian(f, m, &x, t - t_prev, h)?;
        x = y;
        j = dj * j;
        t_prev = t;
        out.push((x.clone(), j.clone()));
    }
    Ok(out)
}

fn trust_check(m: &ModelManifold, p: &CriticalPoint, x: &[f64], y: &[f64]) -> Result<()> {
    if m.is_torus() {
        return Ok(());
    }
    let scale = 1e3 * (1.0 + p.location.iter().map(|v| v.abs()).fold(0.0, f64::max));
    if m.dist(y, &p.location) > scale {
        return Err(Error::Inconclusive { point: x.to_vec() });
    }
    Ok(())
}

/// Stable-subspace coordinates of `φ_{-T}(x) - p`; zero (to the backward
/// contraction) exactly when `x ∈ W^u(p)`.
pub fn stable_components(
    f: &ScalarFunction,
    m: &ModelManifold,
    p: &CriticalPoint,
    x: &[f64],
    t_back: f64,
    h: f64,
) -> Result<DVector<f64>> {
    if !(t_back > 0.0) {
        return Err(Error::InvalidArgument("backward time must be positive".into()));
    }
    let y = flow(&f.negated(), m, x, t_back, h).map_err(|_| Error::Inconclusive { point: x.to_vec() })?;
    trust_check(m, p, x, &y)?;
    Ok(p.stable_basis().transpose() * m.diff(&y, &p.location))
}

/// [`stable_components`] together with their derivative in `x`.
pub fn stable_components_with_jacobian(
    f: &ScalarFunction,
    m: &ModelManifold,
    p: &CriticalPoint,
    x: &[f64],
    t_back: f64,
    h: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(t_back > 0.0) {
        return Err(Error::InvalidArgument("backward time must be positive".into()));
    }
    let (y, j) = flow_with_jacobian(&f.negated(), m, x, t_back, h)
        .map_err(|_| Error::Inconclusive { point: x.to_vec() })?;
    trust_check(m, p, x, &y)?;
    let es = p.stable_basis().transpose();
    Ok((&es * m.diff(&y, &p.location), es * j))
}

/// Norm of the stable component of the backward-flowed point; a value below
/// tolerance certifies `x ∈ W^u(p)` numerically.
pub fn unstable_defect(
    f: &ScalarFunction,
    m: &ModelManifold,
    p: &CriticalPoint,
    x: &[f64],
    t_back: f64,
) -> Result<f64> {
    Ok(stable_components(f, m, p, x, t_back, DEFAULT_STEP)?.norm())
}

/// Trajectory samples as CSV with header `t,x0,..`.
pub fn trajectory_csv(times: &[f64], points: &[Vec<f64>]) -> String {
    let n = points.first().map_or(0, |p| p.len());
    let mut s = String::from("t");
    for i in 0..n {
        s.push_str(&format!(",x{i}"));
    }
    s.push('\n');
    for (t, p) in times.iter().zip(points) {
        s.push_str(&format!("{t:?}"));
        for v in p {
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn torus_fn(src: &str, n: usize) -> ScalarFunction {
        parse(src, n, &vec![true; n]).unwrap()
    }

    #[test]
    fn critical_points_of_circle_cosine() {
        let f = torus_fn("cos(2*pi*x0)", 1);
        let pts = find_critical_points(&f, &ModelManifold::torus(1), 16).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].morse_index, 0);
        assert!((pts[0].location[0] - 0.5).abs() < 1e-12);
        assert_eq!(pts[1].morse_index, 1);
        assert!(pts[1].location[0].abs() < 1e-12);
    }

    #[test]
    fn critical_points_of_torus_product() {
        let f = torus_fn("cos(2*pi*x0)+cos(2*pi*x1)", 2);
        let pts = find_critical_points(&f, &ModelManifold::torus(2), 8).unwrap();
        let idx: Vec<usize> = pts.iter().map(|p| p.morse_index).collect();
        assert_eq!(idx, vec![0, 1, 1, 2]);
        for p in &pts {
            assert!(f.grad(&p.location).unwrap().norm() <= 1e-10);
            assert_eq!(p.unstable_dim(), 2 - p.morse_index);
        }
    }

    #[test]
    fn cubic_is_not_morse() {
        let f = parse("x0^3", 1, &[false]).unwrap();
        match find_critical_points(&f, &ModelManifold::euclidean(1), 5) {
            Err(Error::NonMorse { point, .. }) => assert!(point[0].abs() < 1e-6),
            other => panic!("expected a degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn exponential_growth_and_zero_time() {
        let f = parse("x0^2/2", 1, &[false]).unwrap();
        let m = ModelManifold::euclidean(1);
        let x = flow(&f, &m, &[1.0], 1.0, 1e-3).unwrap();
        assert!((x[0] - std::f64::consts::E).abs() < 1e-8);
        assert_eq!(flow(&f, &m, &[0.3], 0.0, 1e-3).unwrap(), vec![0.3]);
        let (_, j) = flow_with_jacobian(&f, &m, &[1.0], 1.0, 1e-3).unwrap();
        assert!((j[(0, 0)] - std::f64::consts::E).abs() < 1e-8);
        let (_, j0) = flow_with_jacobian(&f, &m, &[1.0], 0.0, 1e-3).unwrap();
        assert_eq!(j0, DMatrix::identity(1, 1));
    }

    #[test]
    fn invalid_steps_and_divergence() {
        let f = parse("x0^4", 1, &[false]).unwrap();
        let m = ModelManifold::euclidean(1);
        assert!(flow(&f, &m, &[1.0], 1.0, 0.0).is_err());
        assert!(flow(&f, &m, &[1.0], -1.0, 1e-3).is_err());
        assert!(matches!(flow(&f, &m, &[2.0], 5.0, 1e-2), Err(Error::Divergence { .. })));
    }

    #[test]
    fn unstable_defect_on_the_circle() {
        let f = torus_fn("cos(2*pi*x0)", 1);
        let m = ModelManifold::torus(1);
        let pts = find_critical_points(&f, &m, 16).unwrap();
        let (min, max) = (&pts[0], &pts[1]);
        assert!(unstable_defect(&f, &m, max, &max.location, max.t_back()).unwrap() < 1e-10);
        assert!(unstable_defect(&f, &m, min, &[0.3], 8.0).unwrap() <= 1e-6);
        assert!(unstable_defect(&f, &m, max, &[0.3], 8.0).unwrap() > 0.1);
    }

    #[test]
    fn reversed_point_swaps_subspaces() {
        let f = torus_fn("cos(2*pi*x0)+0.5*cos(2*pi*x1)", 2);
        let m = ModelManifold::torus(2);
        let saddle = classify(&f, &m, &[0.0, 0.5]).unwrap();
        let rev = saddle.reversed();
        let direct = classify(&f.negated(), &m, &[0.0, 0.5]).unwrap();
        assert_eq!(rev.morse_index, direct.morse_index);
        assert!((rev.stable_basis() - direct.stable_basis()).norm() < 1e-12);
    }
}
