//! Synthetic ground-truth images and coil sensitivity fields.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::{CoilSensitivities, ComplexImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
    LayeredRings,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(Self::SheppLogan),
            "random_ellipses" => Ok(Self::RandomEllipses),
            "layered_rings" => Ok(Self::LayeredRings),
            other => Err(Error::invalid(format!("unknown phantom kind {other:?}"))),
        }
    }
}

/// Added disk of constant intensity change, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
    pub delta: f64,
}

/// Monotone intensity remapping used to emulate a second contrast of the
/// same geometry: `m -> knots(m^gamma)` with a piecewise-linear map through
/// increasing `(input, output)` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRemap {
    pub gamma: f64,
    pub knots: Vec<(f64, f64)>,
}

impl ContrastRemap {
    /// Fat-suppression-like remap: compresses bright tissue, lifts mid tones.
    pub fn suppressed() -> Self {
        Self {
            gamma: 0.8,
            knots: vec![(0.0, 0.0), (0.3, 0.45), (0.7, 0.6), (1.0, 0.75)],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("contrast gamma must be positive"));
        }
        if self.knots.len() < 2 {
            return Err(Error::invalid("contrast remap needs at least two knots"));
        }
        for pair in self.knots.windows(2) {
            if !(pair[1].0 > pair[0].0) || pair[1].1 < pair[0].1 {
                return Err(Error::invalid("contrast knots must be increasing"));
            }
        }
        Ok(())
    }

    pub fn apply(&self, m: f64) -> f64 {
        let v = m.max(0.0).powf(self.gamma);
        let first = self.knots[0];
        if v <= first.0 {
            return first.1;
        }
        for pair in self.knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if v <= x1 {
                return y0 + (y1 - y0) * (v - x0) / (x1 - x0);
            }
        }
        self.knots[self.knots.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    #[serde(default = "default_objects")]
    pub n_objects: usize,
    #[serde(default)]
    pub lesion: Option<Lesion>,
    #[serde(default)]
    pub contrast: Option<ContrastRemap>,
    pub seed: u64,
}

fn default_objects() -> usize {
    6
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            n_objects: default_objects(),
            lesion: None,
            contrast: None,
            seed,
        }
    }

    pub fn with_lesion(mut self, lesion: Lesion) -> Self {
        self.lesion = Some(lesion);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::invalid(format!(
                "phantom size must be at least 16, got {}",
                self.size
            )));
        }
        if let Some(l) = &self.lesion {
            let n = self.size as f64;
            if !(l.radius > 0.0)
                || l.center_row - l.radius < 0.0
                || l.center_col - l.radius < 0.0
                || l.center_row + l.radius > n - 1.0
                || l.center_col + l.radius > n - 1.0
            {
                return Err(Error::invalid(format!(
                    "lesion at ({}, {}) radius {} does not fit in a {}x{} image",
                    l.center_row, l.center_col, l.radius, self.size, self.size
                )));
            }
        }
        if let Some(c) = &self.contrast {
            c.validate()?;
        }
        Ok(())
    }
}

/// Ellipse in normalized coordinates (x right, y up, both in [-1, 1]).
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

// Modified Shepp-Logan (Toft) parameters: value, a, b, x0, y0, phi.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Pixel-center coordinate in [-1, 1]; rows map to y pointing up.
fn normalized(idx: usize, n: usize) -> f64 {
    (2.0 * idx as f64 + 1.0) / n as f64 - 1.0
}

fn shepp_logan(n: usize) -> Vec<f64> {
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|&(value, a, b, x0, y0, phi_deg)| Ellipse {
            value,
            a,
            b,
            x0,
            y0,
            phi_deg,
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let y = -normalized(r, n);
        for c in 0..n {
            let x = normalized(c, n);
            out[r * n + c] = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.value)
                .sum();
        }
    }
    out
}

fn random_ellipses(n: usize, n_objects: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let outer = Ellipse {
        value: rng.random_range(0.8..1.0),
        a: rng.random_range(0.7..0.9),
        b: rng.random_range(0.8..0.95),
        x0: 0.0,
        y0: 0.0,
        phi_deg: rng.random_range(-10.0..10.0),
    };
    let inner = Ellipse {
        value: rng.random_range(0.2..0.4),
        a: outer.a - rng.random_range(0.05..0.1),
        b: outer.b - rng.random_range(0.05..0.1),
        ..outer
    };
    let mut painted = vec![outer, inner];
    for _ in 0..n_objects {
        painted.push(Ellipse {
            value: rng.random_range(0.0..0.9),
            a: rng.random_range(0.05..0.3),
            b: rng.random_range(0.05..0.3),
            x0: rng.random_range(-0.4..0.4),
            y0: rng.random_range(-0.5..0.5),
            phi_deg: rng.random_range(-90.0..90.0),
        });
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let y = -normalized(r, n);
        for c in 0..n {
            let x = normalized(c, n);
            // later objects paint over earlier ones but stay inside the inner region
            let mut value = 0.0;
            for (i, e) in painted.iter().enumerate() {
                if e.contains(x, y) && (i < 2 || inner.contains(x, y)) {
                    value = e.value;
                }
            }
            out[r * n + c] = value;
        }
    }
    out
}

fn layered_rings(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cx = rng.random_range(-0.15..0.15);
    let cy = rng.random_range(-0.15..0.15);
    let n_rings = rng.random_range(3..7);
    let mut radii: Vec<f64> = (0..n_rings).map(|_| rng.random_range(0.1..0.85)).collect();
    radii.sort_by(|a, b| b.partial_cmp(a).expect("finite radii"));
    let values: Vec<f64> = (0..n_rings).map(|_| rng.random_range(0.1..1.0)).collect();
    let squash = rng.random_range(0.8..1.0);
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let y = -normalized(r, n);
        for c in 0..n {
            let x = normalized(c, n);
            let d = ((x - cx).powi(2) + ((y - cy) / squash).powi(2)).sqrt();
            for (rad, v) in radii.iter().zip(&values) {
                if d <= *rad {
                    out[r * n + c] = *v;
                }
            }
        }
    }
    out
}

/// Magnitude in [0, 1] before any phase is applied.
pub fn phantom_magnitude(spec: &PhantomSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mag = match spec.kind {
        PhantomKind::SheppLogan => shepp_logan(n),
        PhantomKind::RandomEllipses => random_ellipses(n, spec.n_objects, &mut rng),
        PhantomKind::LayeredRings => layered_rings(n, &mut rng),
    };
    if let Some(remap) = &spec.contrast {
        for m in mag.iter_mut() {
            *m = remap.apply(*m);
        }
    }
    if let Some(l) = &spec.lesion {
        for r in 0..n {
            for c in 0..n {
                let d2 = (r as f64 - l.center_row).powi(2) + (c as f64 - l.center_col).powi(2);
                if d2 <= l.radius * l.radius {
                    mag[r * n + c] += l.delta;
                }
            }
        }
    }
    for m in mag.iter_mut() {
        *m = m.clamp(0.0, 1.0);
    }
    Ok(mag)
}

/// Smooth quadratic phase map with seeded coefficients.
fn phase_map(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a5e);
    let coeffs: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let y = -normalized(r, n);
        for c in 0..n {
            let x = normalized(c, n);
            out[r * n + c] = coeffs[0]
                + coeffs[1] * x
                + coeffs[2] * y
                + coeffs[3] * x * y
                + coeffs[4] * x * x
                + coeffs[5] * y * y;
        }
    }
    out
}

/// Generates the complex ground truth for `spec`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    let mag = phantom_magnitude(spec)?;
    let phase = phase_map(spec.size, spec.seed);
    ComplexImage::new(
        spec.size,
        spec.size,
        mag.iter()
            .zip(&phase)
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect(),
    )
}

/// Gaussian-bump coil fields centered on the inscribed circle at equally
/// spaced angles, normalized to unit per-pixel sum-of-squares.
pub fn simulate_coils(n_coils: usize, height: usize, width: usize) -> Result<CoilSensitivities> {
    if n_coils == 0 {
        return Err(Error::invalid("n_coils must be at least 1"));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("coil fields need a non-empty grid"));
    }
    let spread = 0.9_f64;
    let mut maps: Vec<ComplexImage> = (0..n_coils)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_coils as f64;
            let (cy, cx) = theta.sin_cos();
            let mut data = Vec::with_capacity(height * width);
            for r in 0..height {
                let y = -normalized(r, height);
                for c in 0..width {
                    let x = normalized(c, width);
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    let mag = (-d2 / (2.0 * spread * spread)).exp();
                    let phase = theta + 0.4 * (x * cy - y * cx);
                    data.push(Complex64::from_polar(mag, phase));
                }
            }
            ComplexImage {
                height,
                width,
                data,
            }
        })
        .collect();
    for p in 0..height * width {
        let sos: f64 = maps
            .iter()
            .map(|m| m.data[p].norm_sqr())
            .sum::<f64>()
            .sqrt();
        for m in maps.iter_mut() {
            m.data[p] /= sos;
        }
    }
    CoilSensitivities::new(maps)
}

/// Pixel nearest to the center of coil `j` (on the inscribed circle).
pub fn coil_center_pixel(j: usize, n_coils: usize, height: usize, width: usize) -> (usize, usize) {
    let theta = 2.0 * std::f64::consts::PI * j as f64 / n_coils as f64;
    let (cy, cx) = theta.sin_cos();
    let to_idx = |v: f64, n: usize| {
        (((v + 1.0) * n as f64 - 1.0) / 2.0)
            .round()
            .clamp(0.0, (n - 1) as f64) as usize
    };
    (to_idx(-cy, height), to_idx(cx, width))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shepp_logan_is_canonical() {
        let img = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, 64, 0)).unwrap();
        let mag = img.magnitude();
        let max = mag.iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        // the center sits inside the gray matter region at 0.2
        assert!((mag[32 * 64 + 32] - 0.2).abs() < 1e-9 || (mag[32 * 64 + 32] - 0.3).abs() < 1e-9);
        // corners are background
        assert_eq!(mag[0], 0.0);
        // magnitude does not depend on the seed
        let other = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, 64, 99)).unwrap();
        for (a, b) in mag.iter().zip(other.magnitude()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phantoms_are_complex_and_bounded() {
        for kind in [
            PhantomKind::SheppLogan,
            PhantomKind::RandomEllipses,
            PhantomKind::LayeredRings,
        ] {
            let img = make_phantom(&PhantomSpec::new(kind, 32, 5)).unwrap();
            assert!(
                img.data.iter().any(|c| c.im.abs() > 1e-3),
                "{kind:?} is real"
            );
            assert!(img
                .magnitude()
                .iter()
                .all(|&m| (0.0..=1.0 + 1e-12).contains(&m)));
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = PhantomSpec::new(PhantomKind::RandomEllipses, 64, 3);
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a, b);
        let c = make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, 64, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lesion_changes_exactly_the_disk() {
        let base = PhantomSpec::new(PhantomKind::SheppLogan, 64, 1);
        let lesion = Lesion {
            center_row: 40.0,
            center_col: 26.0,
            radius: 4.0,
            delta: 0.3,
        };
        let plain = make_phantom(&base).unwrap().magnitude();
        let with = make_phantom(&base.clone().with_lesion(lesion))
            .unwrap()
            .magnitude();
        for r in 0..64 {
            for c in 0..64 {
                let inside = (r as f64 - 40.0).powi(2) + (c as f64 - 26.0).powi(2) <= 16.0;
                let diff = with[r * 64 + c] - plain[r * 64 + c];
                if inside {
                    assert!((diff - 0.3).abs() < 1e-12, "pixel ({r},{c}) diff {diff}");
                } else {
                    assert_eq!(diff, 0.0);
                }
            }
        }
    }

    #[test]
    fn lesion_outside_bounds_rejected() {
        let spec = PhantomSpec::new(PhantomKind::SheppLogan, 32, 1).with_lesion(Lesion {
            center_row: 1.0,
            center_col: 16.0,
            radius: 3.0,
            delta: 0.2,
        });
        assert!(matches!(make_phantom(&spec), Err(Error::Validation(_))));
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, 8, 1)).is_err());
    }

    #[test]
    fn contrast_remap_is_monotone() {
        let remap = ContrastRemap::suppressed();
        let mut prev = -1.0;
        for i in 0..=100 {
            let v = remap.apply(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn single_coil_is_unit_magnitude() {
        let coils = simulate_coils(1, 16, 16).unwrap();
        for v in &coils.maps[0].data {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coils_are_sos_normalized() {
        let coils = simulate_coils(4, 64, 64).unwrap();
        for p in 0..64 * 64 {
            let sos: f64 = coils.maps.iter().map(|m| m.data[p].norm_sqr()).sum();
            assert!((sos - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn each_coil_dominates_at_its_center() {
        for n in [2, 4, 8] {
            let coils = simulate_coils(n, 64, 64).unwrap();
            for j in 0..n {
                let (r, c) = coil_center_pixel(j, n, 64, 64);
                let p = r * 64 + c;
                let own = coils.maps[j].data[p].norm();
                for (k, m) in coils.maps.iter().enumerate() {
                    if k != j {
                        assert!(own > m.data[p].norm(), "coil {j} of {n} at ({r},{c})");
                    }
                }
            }
        }
    }
}
