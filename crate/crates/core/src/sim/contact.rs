//! Penalty contact between the peg's four corners and the holed surface.
//!
//! World frame: x to the right, y up, surface at `y = 0`. The TCP sits at the
//! centre of the peg tip; corners are `(±w, 0)` and `(±w, PEG_LENGTH)` in the
//! peg frame.

use super::task::TaskSpec;
use super::{Pose, Twist, Wrench};

/// Peg length, tip to top, in mm.
pub const PEG_LENGTH: f64 = 20.0;

/// Sliding speed (mm/s) at which Coulomb friction saturates. Below it the
/// tangential force ramps linearly, which keeps sticking contacts from
/// chattering under the integrator.
pub const FRICTION_SLIP_SPEED: f64 = 0.1;

/// Corner offsets from the TCP in the peg frame.
pub fn peg_corners_local(task: &TaskSpec) -> [[f64; 2]; 4] {
    let w = task.peg_half_width;
    [[-w, 0.0], [w, 0.0], [-w, PEG_LENGTH], [w, PEG_LENGTH]]
}

#[inline]
fn rotate((s, c): (f64, f64), v: [f64; 2]) -> [f64; 2] {
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Outline of the solid: a polyline from `x = -inf` to `x = +inf`. Material
/// lies below it.
fn outline(task: &TaskSpec) -> [[f64; 2]; 6] {
    let hc = task.hole_center_x;
    let wh = task.hole_half_width();
    let c = task.chamfer;
    let d = task.hole_depth;
    [
        [hc - wh - c, 0.0],
        [hc - wh, -c],
        [hc - wh, -d],
        [hc + wh, -d],
        [hc + wh, -c],
        [hc + wh + c, 0.0],
    ]
}

/// True if the point lies strictly inside the material.
pub fn is_inside(task: &TaskSpec, p: [f64; 2]) -> bool {
    let dx = (p[0] - task.hole_center_x).abs();
    let wh = task.hole_half_width();
    if dx < wh {
        p[1] < -task.hole_depth
    } else if dx < wh + task.chamfer {
        p[1] < dx - wh - task.chamfer
    } else {
        p[1] < 0.0
    }
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return a;
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Penetration depth and unit outward normal for a point, or `None` if the
/// point is not inside the material.
pub fn penetration(task: &TaskSpec, p: [f64; 2]) -> Option<(f64, [f64; 2])> {
    if !is_inside(task, p) {
        return None;
    }
    let v = outline(task);
    // Flat rays on either side of the hole.
    let left = [p[0].min(v[0][0]), 0.0];
    let right = [p[0].max(v[5][0]), 0.0];
    let mut best = left;
    let mut best_d2 = dist2(p, left);
    let mut consider = |q: [f64; 2]| {
        let d2 = dist2(p, q);
        if d2 < best_d2 {
            best_d2 = d2;
            best = q;
        }
    };
    consider(right);
    for seg in v.windows(2) {
        consider(closest_on_segment(p, seg[0], seg[1]));
    }
    let depth = best_d2.sqrt();
    if depth <= 0.0 {
        return None;
    }
    Some((depth, [(best[0] - p[0]) / depth, (best[1] - p[1]) / depth]))
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Force and torque on one corner at world offset `r` from the TCP.
fn corner_force(task: &TaskSpec, pose: &Pose, vel: &Twist, r: [f64; 2]) -> Option<[f64; 3]> {
    let p = [pose[0] + r[0], pose[1] + r[1]];
    let (depth, n) = penetration(task, p)?;
    let vp = [vel[0] - vel[2] * r[1], vel[1] + vel[2] * r[0]];
    let vn = vp[0] * n[0] + vp[1] * n[1];
    let fn_ = (task.contact_stiffness * depth - task.contact_damping * vn).max(0.0);
    let t = [-n[1], n[0]];
    let vt = vp[0] * t[0] + vp[1] * t[1];
    let ft = -task.friction_coeff * fn_ * (vt / FRICTION_SLIP_SPEED).clamp(-1.0, 1.0);
    let fx = fn_ * n[0] + ft * t[0];
    let fy = fn_ * n[1] + ft * t[1];
    Some([fx, fy, r[0] * fy - r[1] * fx])
}

/// Total contact wrench `(fx, fy, tau)` on the peg, torque taken about the
/// TCP, in N and N*mm.
pub fn contact_wrench(pose: &Pose, vel: &Twist, task: &TaskSpec) -> Wrench {
    let mut w = [0.0; 3];
    let sc = pose[2].sin_cos();
    for local in peg_corners_local(task) {
        let r = rotate(sc, local);
        if let Some(f) = corner_force(task, pose, vel, r) {
            w[0] += f[0];
            w[1] += f[1];
            w[2] += f[2];
        }
    }
    w
}

/// Number of corners currently inside the material.
pub fn contact_count(pose: &Pose, task: &TaskSpec) -> usize {
    peg_corners_local(task)
        .iter()
        .filter(|&&l| {
            let r = rotate(pose[2].sin_cos(), l);
            is_inside(task, [pose[0] + r[0], pose[1] + r[1]])
        })
        .count()
}
