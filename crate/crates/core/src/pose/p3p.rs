//! Grunert's perspective-three-point solver.
//!
//! With depths `s2 = u s1`, `s3 = v s1` the three law-of-cosines constraints
//! reduce to a quartic in `v`. Real roots are polished by Newton steps on the
//! original depth equations before the rigid transform is recovered.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

use super::Observation;
use crate::io::{CameraIntrinsics, Pose};

type Poly = Vec<f64>;

fn mul(a: &[f64], b: &[f64]) -> Poly {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Poly {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[i] += x;
    }
    out
}

fn scale(a: &[f64], s: f64) -> Poly {
    a.iter().map(|x| x * s).collect()
}

fn eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots of a polynomial of degree ≤ 4 (coefficients lowest first).
fn real_roots(p: &[f64]) -> Vec<f64> {
    let mut deg = p.len() - 1;
    let lead = p.iter().map(|c| c.abs()).fold(0.0, f64::max);
    if lead == 0.0 {
        return Vec::new();
    }
    while deg > 0 && p[deg].abs() <= 1e-14 * lead {
        deg -= 1;
    }
    let mut roots = match deg {
        0 => return Vec::new(),
        1 => vec![-p[0] / p[1]],
        2 => {
            let (a, b, c) = (p[2], p[1], p[0]);
            let disc = b * b - 4.0 * a * c;
            if disc < -1e-12 * b * b {
                return Vec::new();
            }
            let sq = disc.max(0.0).sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q == 0.0 {
                vec![0.0]
            } else {
                vec![q / a, c / q]
            }
        }
        _ => {
            let n = deg;
            let mut comp = Matrix4::<f64>::zeros();
            for i in 0..n {
                comp[(0, i)] = -p[n - 1 - i] / p[n];
            }
            for i in 1..n {
                comp[(i, i - 1)] = 1.0;
            }
            let comp = comp.view((0, 0), (n, n)).into_owned();
            comp.complex_eigenvalues()
                .iter()
                .filter(|z| z.im.abs() <= 1e-3 * (1.0 + z.re.abs()))
                .map(|z| z.re)
                .collect()
        }
    };
    // Newton polishing on the polynomial itself
    let dp: Poly = (1..=deg).map(|i| p[i] * i as f64).collect();
    for r in roots.iter_mut() {
        for _ in 0..8 {
            let d = eval(&dp, *r);
            if d == 0.0 {
                break;
            }
            let step = eval(&p[..=deg], *r) / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
            if step.abs() <= 1e-15 * (1.0 + r.abs()) {
                break;
            }
        }
    }
    roots
}

/// All poses (world-to-camera) consistent with three unit bearings and
/// their world points. Empty for degenerate configurations.
pub fn p3p_bearings(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let [j1, j2, j3] = bearings.map(|b| b.normalize());
    let [p1, p2, p3] = *points;
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let scale_sq = a2.max(b2).max(c2);
    if scale_sq == 0.0 || (p2 - p1).cross(&(p3 - p1)).norm_squared() <= 1e-18 * scale_sq * scale_sq {
        return Vec::new();
    }
    if j1.cross(&j2).norm() < 1e-12 || j1.cross(&j3).norm() < 1e-12 || j2.cross(&j3).norm() < 1e-12 {
        return Vec::new();
    }
    let (ca, cb, cg) = (j2.dot(&j3), j1.dot(&j3), j1.dot(&j2));

    // q(v) = 1 + v² − 2 v cos β
    let q = [1.0, -2.0 * cb, 1.0];
    // u = N(v) / D(v)
    let n = add(&[b2, 0.0, -b2], &scale(&q, a2 - c2));
    let d = [2.0 * b2 * cg, -2.0 * b2 * ca];
    // b² N² − 2 b² cos γ N D + (b² − c² q) D² = 0
    let t1 = scale(&mul(&n, &n), b2);
    let t2 = scale(&mul(&n, &d), -2.0 * b2 * cg);
    let t3 = mul(&add(&[b2], &scale(&q, -c2)), &mul(&d, &d));
    let quartic = add(&add(&t1, &t2), &t3);

    let mut poses: Vec<Pose> = Vec::new();
    for v in real_roots(&quartic) {
        let dv = eval(&d, v);
        if dv.abs() < 1e-14 * b2 {
            continue;
        }
        let u = eval(&n, v) / dv;
        let qv = eval(&q, v);
        if qv <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let Some(s) = polish_depths([s1, u * s1, v * s1], [ca, cb, cg], [a2, b2, c2]) else {
            continue;
        };
        if s.iter().any(|&x| !(x > 0.0)) {
            continue;
        }
        let cam = [j1 * s[0], j2 * s[1], j3 * s[2]];
        let Some(pose) = rigid_from_triplets(points, &cam) else {
            continue;
        };
        let dup = poses.iter().any(|p| {
            (p.translation() - pose.translation()).norm() < 1e-9 * (1.0 + pose.translation().norm())
                && p.quaternion().angle_to(pose.quaternion()) < 1e-9
        });
        if !dup {
            poses.push(pose);
        }
    }
    poses
}

/// Newton iterations on the three law-of-cosines equations. Rejects the
/// root when the relative residual stays large.
fn polish_depths(mut s: [f64; 3], cos: [f64; 3], d2: [f64; 3]) -> Option<[f64; 3]> {
    let [ca, cb, cg] = cos;
    let [a2, b2, c2] = d2;
    let residual = |s: &[f64; 3]| {
        Vector3::new(
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * ca - a2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cb - b2,
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cg - c2,
        )
    };
    let tol = a2.max(b2).max(c2);
    for _ in 0..10 {
        let r = residual(&s);
        if r.amax() <= 1e-15 * tol {
            break;
        }
        let jac = Matrix3::new(
            0.0,
            2.0 * s[1] - 2.0 * s[2] * ca,
            2.0 * s[2] - 2.0 * s[1] * ca,
            2.0 * s[0] - 2.0 * s[2] * cb,
            0.0,
            2.0 * s[2] - 2.0 * s[0] * cb,
            2.0 * s[0] - 2.0 * s[1] * cg,
            2.0 * s[1] - 2.0 * s[0] * cg,
            0.0,
        );
        let Some(step) = jac.lu().solve(&r) else {
            break;
        };
        for i in 0..3 {
            s[i] -= step[i];
        }
    }
    (residual(&s).amax() <= 1e-6 * tol).then_some(s)
}

/// Rigid transform mapping `world[i]` onto `cam[i]` via orthonormal triads.
fn rigid_from_triplets(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<Pose> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(1e-300)?;
        let e3 = e1.cross(&(p[2] - p[0])).try_normalize(1e-300)?;
        let e2 = e3.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, e3]))
    };
    let (fw, fc) = (frame(world)?, frame(cam)?);
    let r = Rotation3::from_matrix_unchecked(fc * fw.transpose());
    let r = UnitQuaternion::from_rotation_matrix(&r);
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Some(Pose::new(cc - r * cw, r))
}

fn bearing(px: &nalgebra::Vector2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0).normalize()
}

/// P3P from three pixel observations.
pub fn p3p_solve(obs: &[Observation; 3], k: &CameraIntrinsics) -> Vec<Pose> {
    let b = [bearing(&obs[0].pixel, k), bearing(&obs[1].pixel, k), bearing(&obs[2].pixel, k)];
    p3p_bearings(&b, &[obs[0].point, obs[1].point, obs[2].point])
}

pub(super) fn bearing_of(px: &nalgebra::Vector2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    bearing(px, k)
}
