//! Contact wrench from a second implementation that measures penetration
//! as distance to the air region: the half-space above the surface united
//! with the hole's shaft and entry funnel.

use oda_core::sim::contact::{FRICTION_SLIP_SPEED, PEG_LENGTH};
use oda_core::sim::TaskSpec;

fn seg_closest(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d = [b[0] - a[0], b[1] - a[1]];
    let t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
    let t = t.clamp(0.0, 1.0);
    [a[0] + t * d[0], a[1] + t * d[1]]
}

fn inside_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    // Counter-clockwise: inside when left of every edge.
    (0..poly.len()).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Closest point of the air region to a point inside the material.
fn nearest_air(t: &TaskSpec, p: [f64; 2]) -> Option<[f64; 2]> {
    let wh = t.peg_half_width + t.clearance;
    let (l, r, c) = (t.hole_center_x - wh, t.hole_center_x + wh, t.chamfer);
    let shaft = vec![[l, 0.0], [l, -t.hole_depth], [r, -t.hole_depth], [r, 0.0]];
    let funnel = vec![[l - c, 0.0], [l, -c], [r, -c], [r + c, 0.0]];
    let pieces: Vec<Vec<[f64; 2]>> = if c > 0.0 { vec![shaft, funnel] } else { vec![shaft] };
    if p[1] >= 0.0 || pieces.iter().any(|q| inside_convex(q, p)) {
        return None;
    }
    let mut best = [p[0], 0.0];
    let mut best_d = -p[1];
    for poly in &pieces {
        for i in 0..poly.len() {
            let q = seg_closest(p, poly[i], poly[(i + 1) % poly.len()]);
            let d = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
    }
    Some(best)
}

pub fn oracle_wrench(t: &TaskSpec, pose: [f64; 3], vel: [f64; 3]) -> [f64; 3] {
    let (c, s) = (pose[2].cos(), pose[2].sin());
    let w = t.peg_half_width;
    let mut out = [0.0; 3];
    for (lx, ly) in [(-w, 0.0), (w, 0.0), (-w, PEG_LENGTH), (w, PEG_LENGTH)] {
        let r = [c * lx - s * ly, s * lx + c * ly];
        let p = [pose[0] + r[0], pose[1] + r[1]];
        let Some(q) = nearest_air(t, p) else { continue };
        let depth = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        if depth == 0.0 {
            continue;
        }
        let n = [(q[0] - p[0]) / depth, (q[1] - p[1]) / depth];
        // Point velocity v + omega x r.
        let v = [vel[0] - vel[2] * r[1], vel[1] + vel[2] * r[0]];
        let f_n = (t.contact_stiffness * depth - t.contact_damping * (v[0] * n[0] + v[1] * n[1])).max(0.0);
        let tan = [n[1], -n[0]];
        let slip = ((v[0] * tan[0] + v[1] * tan[1]) / FRICTION_SLIP_SPEED).clamp(-1.0, 1.0);
        let f_t = -t.friction_coeff * f_n * slip;
        let f = [f_n * n[0] + f_t * tan[0], f_n * n[1] + f_t * tan[1]];
        out[0] += f[0];
        out[1] += f[1];
        out[2] += r[0] * f[1] - r[1] * f[0];
    }
    out
}
