//! Minimal RGB scatter rasterizer for projected embeddings.

use semrecon::recon::{PointKind, ProjectedPoint};

pub const SIZE: usize = 256;
const MARGIN: usize = 16;
const BACKGROUND: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [160, 160, 160];
const POSITIVE: [u8; 3] = [200, 30, 30];
const NEGATIVE: [u8; 3] = [30, 60, 200];

/// Trajectory color from light to dark green by iteration rank.
fn trajectory_color(rank: usize, count: usize) -> [u8; 3] {
    let t = if count > 1 { rank as f64 / (count - 1) as f64 } else { 1.0 };
    let light = (190.0 * (1.0 - t)) as u8;
    [light, 220 - (120.0 * t) as u8, light]
}

/// Renders `points` into a `SIZE × SIZE` RGB buffer: a box frame, the
/// x = 0 and y = 0 axes when in range, priors by role and the trajectory
/// drawn last so it stays visible.
pub fn render(points: &[ProjectedPoint]) -> Vec<u8> {
    let mut px = vec![0u8; SIZE * SIZE * 3];
    for c in px.chunks_mut(3) {
        c.copy_from_slice(&BACKGROUND);
    }
    let set = |px: &mut [u8], r: usize, c: usize, color: [u8; 3]| {
        if r < SIZE && c < SIZE {
            let i = 3 * (r * SIZE + c);
            px[i..i + 3].copy_from_slice(&color);
        }
    };
    let (lo, hi) = (MARGIN, SIZE - 1 - MARGIN);
    for k in lo..=hi {
        for (r, c) in [(lo, k), (hi, k), (k, lo), (k, hi)] {
            set(&mut px, r, c, AXIS);
        }
    }
    if points.is_empty() {
        return px;
    }
    let range = |f: fn(&ProjectedPoint) -> f64| {
        let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            a = a.min(f(p));
            b = b.max(f(p));
        }
        if b - a < 1e-12 {
            (a - 1.0, b + 1.0)
        } else {
            (a, b)
        }
    };
    let (x0, x1) = range(|p| p.x);
    let (y0, y1) = range(|p| p.y);
    let span = (hi - lo) as f64;
    let col = |x: f64| lo + ((x - x0) / (x1 - x0) * span).round() as usize;
    let row = |y: f64| hi - ((y - y0) / (y1 - y0) * span).round() as usize;
    if x0 < 0.0 && x1 > 0.0 {
        let c = col(0.0);
        for r in lo..=hi {
            set(&mut px, r, c, AXIS);
        }
    }
    if y0 < 0.0 && y1 > 0.0 {
        let r = row(0.0);
        for c in lo..=hi {
            set(&mut px, r, c, AXIS);
        }
    }
    let dot = |px: &mut [u8], p: &ProjectedPoint, color: [u8; 3]| {
        let (r, c) = (row(p.y), col(p.x));
        for dr in 0..3 {
            for dc in 0..3 {
                set(px, (r + dr).wrapping_sub(1), (c + dc).wrapping_sub(1), color);
            }
        }
    };
    for p in points {
        match p.kind {
            PointKind::Positive => dot(&mut px, p, POSITIVE),
            PointKind::Negative => dot(&mut px, p, NEGATIVE),
            PointKind::Trajectory => {}
        }
    }
    let traj: Vec<&ProjectedPoint> = points.iter().filter(|p| p.kind == PointKind::Trajectory).collect();
    for (rank, p) in traj.iter().enumerate() {
        dot(&mut px, p, trajectory_color(rank, traj.len()));
    }
    px
}
