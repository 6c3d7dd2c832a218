//! Least-squares primitives shared by the morphometry modules.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

pub type Vec3 = Vector3<f64>;

pub fn v3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

pub fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Solve the overdetermined system `a x = b` in the least-squares sense.
fn lstsq(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if !(max_sv > 0.0) || svd.singular_values.min() <= max_sv * 1e-12 {
        return None;
    }
    svd.solve(&b, max_sv * 1e-12).ok()
}

/// Algebraic sphere fit followed by Gauss-Newton on geometric residuals.
pub fn fit_sphere(points: &[Vec3]) -> Option<Sphere> {
    if points.len() < 4 {
        return None;
    }
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let n = points.len();
    let mut a = DMatrix::zeros(n, 4);
    let mut b = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let q = p - mean;
        a[(i, 0)] = 2.0 * q.x;
        a[(i, 1)] = 2.0 * q.y;
        a[(i, 2)] = 2.0 * q.z;
        a[(i, 3)] = 1.0;
        b[i] = q.norm_squared();
    }
    let x = lstsq(a, b)?;
    let c = Vec3::new(x[0], x[1], x[2]);
    let r2 = x[3] + c.norm_squared();
    if !(r2 > 0.0) {
        return None;
    }
    let mut s = Sphere { center: c + mean, radius: r2.sqrt() };
    for _ in 0..50 {
        let mut jac = DMatrix::zeros(n, 4);
        let mut res = DVector::zeros(n);
        for (i, p) in points.iter().enumerate() {
            let d = p - s.center;
            let dist = d.norm();
            if dist == 0.0 {
                return Some(s);
            }
            let u = d / dist;
            jac[(i, 0)] = -u.x;
            jac[(i, 1)] = -u.y;
            jac[(i, 2)] = -u.z;
            jac[(i, 3)] = -1.0;
            res[i] = dist - s.radius;
        }
        let Some(step) = lstsq(jac, -res) else { break };
        s.center += Vec3::new(step[0], step[1], step[2]);
        s.radius += step[3];
        if step.norm() < 1e-12 * (1.0 + s.radius) {
            break;
        }
    }
    (s.radius.is_finite() && s.radius > 0.0).then_some(s)
}

pub fn sphere_residuals(s: &Sphere, points: &[Vec3]) -> Vec<f64> {
    points.iter().map(|p| ((p - s.center).norm() - s.radius).abs()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sphere fit with one trimming pass: points whose residual exceeds twice the
/// median residual are dropped and the sphere is refitted.
pub fn fit_sphere_trimmed(points: &[Vec3]) -> Option<Sphere> {
    let first = fit_sphere(points)?;
    let res = sphere_residuals(&first, points);
    let limit = (2.0 * median(&res)).max(1e-9);
    let kept: Vec<Vec3> =
        points.iter().zip(&res).filter(|(_, &r)| r <= limit).map(|(p, _)| *p).collect();
    if kept.len() < 4 || kept.len() == points.len() {
        return Some(first);
    }
    fit_sphere(&kept).or(Some(first))
}

/// Algebraic circle fit followed by Gauss-Newton on geometric residuals.
pub fn fit_circle(points: &[[f64; 2]]) -> Option<Circle> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let (x, y) = (p[0] - mx, p[1] - my);
        a[(i, 0)] = 2.0 * x;
        a[(i, 1)] = 2.0 * y;
        a[(i, 2)] = 1.0;
        b[i] = x * x + y * y;
    }
    let sol = lstsq(a, b)?;
    let r2 = sol[2] + sol[0] * sol[0] + sol[1] * sol[1];
    if !(r2 > 0.0) {
        return None;
    }
    let mut c = Circle { center: [sol[0] + mx, sol[1] + my], radius: r2.sqrt() };
    for _ in 0..50 {
        let mut jac = DMatrix::zeros(n, 3);
        let mut res = DVector::zeros(n);
        for (i, p) in points.iter().enumerate() {
            let (dx, dy) = (p[0] - c.center[0], p[1] - c.center[1]);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist == 0.0 {
                return Some(c);
            }
            jac[(i, 0)] = -dx / dist;
            jac[(i, 1)] = -dy / dist;
            jac[(i, 2)] = -1.0;
            res[i] = dist - c.radius;
        }
        let Some(step) = lstsq(jac, -res) else { break };
        c.center[0] += step[0];
        c.center[1] += step[1];
        c.radius += step[2];
        if step.norm() < 1e-12 * (1.0 + c.radius) {
            break;
        }
    }
    (c.radius.is_finite() && c.radius > 0.0).then_some(c)
}

/// Centroid and covariance eigen-decomposition, eigenvalues ascending.
pub fn principal_axes(points: &[Vec3]) -> Option<(Vec3, [f64; 3], [Vec3; 3])> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.map(|i| eig.eigenvalues[i]);
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());
    Some((c, vals, vecs))
}

/// Total-least-squares line: centroid and unit direction.
pub fn fit_line(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 2 {
        return None;
    }
    let (c, vals, vecs) = principal_axes(points)?;
    (vals[2] > 0.0).then_some((c, vecs[2]))
}

/// Least-squares plane: centroid and unit normal. `None` when the points are
/// (nearly) collinear.
pub fn fit_plane(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 3 {
        return None;
    }
    let (c, vals, vecs) = principal_axes(points)?;
    let scale = vals[2].max(f64::MIN_POSITIVE);
    (vals[1] > scale * 1e-12).then_some((c, vecs[0]))
}

/// Two unit vectors completing `axis` to a right-handed orthonormal basis.
pub fn orthonormal_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = a.cross(&helper).normalize();
    let v = a.cross(&u);
    (u, v)
}

/// Angle between two vectors in degrees, in [0, 180].
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_points(c: Vec3, r: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..24 {
                let th = std::f64::consts::PI * (i as f64 + 0.5) / 24.0;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / 24.0;
                pts.push(c + r * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
            }
        }
        pts
    }

    #[test]
    fn exact_hemisphere() {
        let c = Vec3::new(3.0, -2.0, 40.0);
        let s = fit_sphere_trimmed(&sphere_points(c, 24.0)).unwrap();
        assert!((s.radius - 24.0).abs() < 1e-9);
        assert!((s.center - c).norm() < 1e-9);
    }

    #[test]
    fn trimming_rejects_outliers() {
        let c = Vec3::new(0.0, 0.0, 0.0);
        let mut pts = sphere_points(c, 10.0);
        let clean = pts.len();
        for k in 0..20 {
            pts.push(Vec3::new(30.0 + k as f64, 0.0, 0.0));
        }
        let raw = fit_sphere(&pts).unwrap();
        let trimmed = fit_sphere_trimmed(&pts).unwrap();
        assert!((trimmed.radius - 10.0).abs() < (raw.radius - 10.0).abs());
        assert!(pts.len() > clean);
        assert!(fit_sphere(&pts[..3]).is_none());
    }

    #[test]
    fn circle_and_line_and_plane() {
        let pts: Vec<[f64; 2]> = (0..16)
            .map(|k| {
                let t = k as f64 * 0.3;
                [5.0 + 7.0 * t.cos(), -1.0 + 7.0 * t.sin()]
            })
            .collect();
        let c = fit_circle(&pts).unwrap();
        assert!((c.radius - 7.0).abs() < 1e-9 && (c.center[0] - 5.0).abs() < 1e-9);

        let line: Vec<Vec3> = (0..5).map(|k| Vec3::new(1.0, 2.0, 3.0) * k as f64).collect();
        let (_, d) = fit_line(&line).unwrap();
        assert!((d.dot(&Vec3::new(1.0, 2.0, 3.0).normalize()).abs() - 1.0).abs() < 1e-12);
        assert!(fit_plane(&line).is_none());

        let plane = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)];
        let (_, n) = fit_plane(&plane).unwrap();
        assert!((n.z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal() {
        let a = Vec3::new(0.3, -0.2, 0.9).normalize();
        let (u, v) = orthonormal_basis(&a);
        assert!(u.dot(&a).abs() < 1e-12 && v.dot(&a).abs() < 1e-12 && u.dot(&v).abs() < 1e-12);
        assert!((angle_deg(&Vec3::x(), &Vec3::y()) - 90.0).abs() < 1e-12);
    }
}
