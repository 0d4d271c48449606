//! Ground-truth fixtures: test patterns, line and trajectory kernels, and
//! blurred/noisy observations. All randomness is driven by explicit seeds.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::fourier::circular_convolve;
use crate::image::Image;
use crate::kernel::{Canvas, Kernel};

/// Description of a synthetic blur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurSpec {
    Linear {
        length: f64,
        angle: f64,
        #[serde(default)]
        noise_sigma: f64,
    },
    Trajectory {
        waypoints: Vec<(f64, f64)>,
        #[serde(default = "default_samples")]
        samples_per_segment: usize,
        #[serde(default)]
        noise_sigma: f64,
    },
}

fn default_samples() -> usize {
    64
}

impl BlurSpec {
    pub fn noise_sigma(&self) -> f64 {
        match self {
            BlurSpec::Linear { noise_sigma, .. } | BlurSpec::Trajectory { noise_sigma, .. } => {
                *noise_sigma
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma() >= 0.0) {
            return Err(DeblurError::InvalidParameter(
                "noise_sigma must be >= 0".into(),
            ));
        }
        match self {
            BlurSpec::Linear { length, .. } if !(*length >= 1.0) => Err(
                DeblurError::InvalidParameter(format!("blur length must be >= 1, got {length}")),
            ),
            BlurSpec::Trajectory { waypoints, .. } if waypoints.len() < 2 => Err(
                DeblurError::InvalidParameter("a trajectory needs at least two waypoints".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.validate()?;
        match self {
            BlurSpec::Linear { length, angle, .. } => synthesize_linear_kernel(*length, *angle),
            BlurSpec::Trajectory {
                waypoints,
                samples_per_segment,
                ..
            } => trajectory_kernel(waypoints, *samples_per_segment),
        }
    }
}

/// Coverage-weighted, centered line segment of `length` pixels at `angle`
/// degrees (measured from +x towards +y, where y grows downwards).
pub fn synthesize_linear_kernel(length: f64, angle: f64) -> Result<Kernel> {
    if !(length >= 1.0) || !angle.is_finite() {
        return Err(DeblurError::InvalidParameter(format!(
            "line kernel needs length >= 1 and a finite angle, got ({length}, {angle})"
        )));
    }
    if length <= 1.0 {
        return Ok(Kernel::delta(1));
    }
    Ok(centered_segment(length, angle)?.trimmed())
}

fn centered_segment(length: f64, angle: f64) -> Result<Kernel> {
    let (s, c) = angle.to_radians().sin_cos();
    let half = length / 2.0;
    let mut canvas = Canvas::new((half.ceil() as usize) + 2);
    canvas.segment((-half * c, -half * s), (half * c, half * s), 1.0);
    canvas.into_kernel(1)
}

/// Kernel traced by a piecewise-linear path. Each segment receives
/// `samples_per_segment` equally weighted samples (plus its start point for
/// the first segment), splatted bilinearly; a closed path does not repeat its
/// start point. The kernel is centered on the rounded mass centroid.
pub fn trajectory_kernel(waypoints: &[(f64, f64)], samples_per_segment: usize) -> Result<Kernel> {
    if waypoints.len() < 2 {
        return Err(DeblurError::InvalidParameter(
            "a trajectory needs at least two waypoints".into(),
        ));
    }
    if samples_per_segment == 0 {
        return Err(DeblurError::InvalidParameter(
            "samples_per_segment must be positive".into(),
        ));
    }
    if waypoints
        .iter()
        .any(|p| !p.0.is_finite() || !p.1.is_finite())
    {
        return Err(DeblurError::NonFinite("trajectory waypoint".into()));
    }
    let first = waypoints[0];
    if waypoints.iter().all(|p| *p == first) {
        return Ok(Kernel::delta(1));
    }
    let closed = waypoints.last() == Some(&first);
    let mut points = vec![first];
    let n = samples_per_segment;
    for (si, pair) in waypoints.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let last_segment = si == waypoints.len() - 2;
        for i in 1..=n {
            if closed && last_segment && i == n {
                break;
            }
            let t = i as f64 / n as f64;
            points.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    let m = points.len() as f64;
    let cx = (points.iter().map(|p| p.0).sum::<f64>() / m).round();
    let cy = (points.iter().map(|p| p.1).sum::<f64>() / m).round();
    let reach = points
        .iter()
        .map(|p| (p.0 - cx).abs().max((p.1 - cy).abs()))
        .fold(0.0, f64::max);
    let radius = reach.ceil() as usize + 1;
    let side = 2 * radius + 1;
    let mut weights = vec![0.0; side * side];
    for p in &points {
        let x = p.0 - cx + radius as f64;
        let y = p.1 - cy + radius as f64;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (ox, wx) in [(0usize, 1.0 - fx), (1, fx)] {
            for (oy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                let w = wx * wy;
                if w > 0.0 {
                    weights[(y0 as usize + oy) * side + x0 as usize + ox] += w;
                }
            }
        }
    }
    Ok(Kernel::from_weights(side, side, weights)?.trimmed())
}

/// `L (x) k` under circular boundary, plus seeded i.i.d. Gaussian noise.
pub fn blur_with_kernel(latent: &Image, k: &Kernel, noise_sigma: f64, seed: u64) -> Result<Image> {
    if !(noise_sigma >= 0.0) {
        return Err(DeblurError::InvalidParameter(
            "noise_sigma must be >= 0".into(),
        ));
    }
    let mut out = circular_convolve(latent, k)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| DeblurError::InvalidParameter(e.to_string()))?;
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Checker,
    Noise,
    Edges,
    Circle,
}

impl FromStr for PatternKind {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(PatternKind::Checker),
            "noise" => Ok(PatternKind::Noise),
            "edges" => Ok(PatternKind::Edges),
            "circle" => Ok(PatternKind::Circle),
            other => Err(DeblurError::Parse(format!("unknown pattern {other:?}"))),
        }
    }
}

/// Tile side of the checker pattern.
pub const CHECKER_TILE: usize = 8;

/// Deterministic square test image with values in `[0, 1]`.
///
/// * `checker`: alternating 0/1 tiles of [`CHECKER_TILE`] pixels.
/// * `noise`: i.i.d. uniform values (white spectrum).
/// * `edges`: piecewise-constant scene of overlapping discs and rotated
///   rectangles on a mid-gray background.
/// * `circle`: binary disc of radius `size / 4` at the center.
pub fn test_pattern(kind: PatternKind, size: usize, seed: u64) -> Result<Image> {
    if size < 32 {
        return Err(DeblurError::InvalidDimensions(format!(
            "test patterns need size >= 32, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = match kind {
        PatternKind::Checker => Image::from_fn(size, size, |x, y| {
            ((x / CHECKER_TILE + y / CHECKER_TILE) % 2) as f64
        }),
        PatternKind::Noise => Image::from_fn(size, size, |_, _| rng.random::<f64>()),
        PatternKind::Circle => {
            let c = size as f64 / 2.0;
            let r = size as f64 / 4.0;
            Image::from_fn(size, size, |x, y| {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                if dx * dx + dy * dy <= r * r {
                    1.0
                } else {
                    0.0
                }
            })
        }
        PatternKind::Edges => edges_scene(size, &mut rng),
    };
    Ok(img)
}

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        cx: f64,
        cy: f64,
        hw: f64,
        hh: f64,
        cos: f64,
        sin: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect {
                cx,
                cy,
                hw,
                hh,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * cos + dy * sin).abs() <= hw && (-dx * sin + dy * cos).abs() <= hh
            }
        }
    }
}

fn edges_scene(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let s = size as f64;
    let count = (size * size / 1200).max(12);
    let shapes: Vec<(Shape, f64)> = (0..count)
        .map(|_| {
            let cx = rng.random::<f64>() * s;
            let cy = rng.random::<f64>() * s;
            let value = 0.05 + 0.9 * rng.random::<f64>();
            let shape = if rng.random::<bool>() {
                Shape::Disc {
                    cx,
                    cy,
                    r: s * (0.02 + 0.08 * rng.random::<f64>()),
                }
            } else {
                let theta = rng.random::<f64>() * std::f64::consts::PI;
                Shape::Rect {
                    cx,
                    cy,
                    hw: s * (0.02 + 0.1 * rng.random::<f64>()),
                    hh: s * (0.01 + 0.05 * rng.random::<f64>()),
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            };
            (shape, value)
        })
        .collect();
    Image::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        shapes
            .iter()
            .rev()
            .find(|(shape, _)| shape.contains(px, py))
            .map_or(0.5, |(_, v)| *v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_kernel_invariants(k: &Kernel) {
        assert_eq!(k.width() % 2, 1);
        assert_eq!(k.height() % 2, 1);
        assert!((k.sum() - 1.0).abs() < 1e-9);
        assert!(k.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn unit_length_is_delta() {
        assert_eq!(
            synthesize_linear_kernel(1.0, 37.0).unwrap(),
            Kernel::delta(1)
        );
    }

    #[test]
    fn horizontal_line_has_equal_taps() {
        let k = synthesize_linear_kernel(21.0, 0.0).unwrap();
        assert_eq!((k.width(), k.height()), (21, 1));
        for x in 0..21 {
            assert!((k.get(x, 0) - 1.0 / 21.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oblique_line_second_moment() {
        let k = synthesize_linear_kernel(20.0, 10.0).unwrap();
        assert_kernel_invariants(&k);
        let (s, c) = 10f64.to_radians().sin_cos();
        let (mx, my) = k.centroid();
        let m2: f64 = k
            .taps()
            .map(|(dx, dy, w)| {
                let along = (dx as f64 - mx) * c + (dy as f64 - my) * s;
                w * along * along
            })
            .sum();
        let expect = 20.0 * 20.0 / 12.0;
        assert!((m2 - expect).abs() / expect < 0.05, "{m2} vs {expect}");
    }

    #[test]
    fn half_turn_equivalence() {
        for (len, ang) in [(20.0, 10.0), (13.5, 77.0), (30.0, 135.0)] {
            let a = synthesize_linear_kernel(len, ang).unwrap();
            let b = synthesize_linear_kernel(len, ang + 180.0)
                .unwrap()
                .flipped();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn two_point_trajectory_matches_line() {
        let line = synthesize_linear_kernel(21.0, 0.0).unwrap();
        for n in [20, 40] {
            let t = trajectory_kernel(&[(0.0, 0.0), (20.0, 0.0)], n).unwrap();
            assert_kernel_invariants(&t);
            assert!(
                t.l1_distance(&line) < 0.05,
                "n={n}: {}",
                t.l1_distance(&line)
            );
        }
    }

    #[test]
    fn square_trajectory_has_equal_arms() {
        let path = [
            (0.0, 0.0),
            (10.0, 0.0),
            (10.0, 10.0),
            (0.0, 10.0),
            (0.0, 0.0),
        ];
        for n in [10, 25] {
            let k = trajectory_kernel(&path, n).unwrap();
            assert_kernel_invariants(&k);
            let (cx, cy) = k.center();
            let (cx, cy) = (cx as isize, cy as isize);
            // path (0,0)-(10,10) lands on offsets -5..=5 around the center
            let arm = |f: &dyn Fn(isize) -> (isize, isize)| -> f64 {
                (-4..=4)
                    .map(|i| {
                        let (x, y) = f(i);
                        k.get((cx + x) as usize, (cy + y) as usize)
                    })
                    .sum()
            };
            let arms = [
                arm(&|i| (i, -5)),
                arm(&|i| (5, i)),
                arm(&|i| (i, 5)),
                arm(&|i| (-5, i)),
            ];
            for a in &arms[1..] {
                assert!((a - arms[0]).abs() < 1e-6, "{arms:?}");
            }
        }
    }

    #[test]
    fn repeated_point_is_delta() {
        let k = trajectory_kernel(&[(3.0, 4.0), (3.0, 4.0), (3.0, 4.0)], 8).unwrap();
        assert_eq!(k, Kernel::delta(1));
    }

    #[test]
    fn blur_identity_and_determinism() {
        let l = test_pattern(PatternKind::Edges, 64, 1).unwrap();
        let b = blur_with_kernel(&l, &Kernel::delta(1), 0.0, 0).unwrap();
        assert!(b.max_abs_diff(&l) < 1e-12);
        let k = synthesize_linear_kernel(9.0, 30.0).unwrap();
        let n1 = blur_with_kernel(&l, &k, 0.02, 7).unwrap();
        let n2 = blur_with_kernel(&l, &k, 0.02, 7).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn noise_sigma_matches_sample_statistics() {
        let l = test_pattern(PatternKind::Edges, 256, 2).unwrap();
        let k = synthesize_linear_kernel(9.0, 30.0).unwrap();
        let clean = blur_with_kernel(&l, &k, 0.0, 0).unwrap();
        let noisy = blur_with_kernel(&l, &k, 0.01, 11).unwrap();
        let n = clean.len() as f64;
        let resid: Vec<f64> = noisy
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = resid.iter().sum::<f64>() / n;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.01).abs() / 0.01 < 0.05, "sd {sd}");
    }

    #[test]
    fn pattern_properties() {
        let c = test_pattern(PatternKind::Circle, 256, 0).unwrap();
        assert_eq!(c.get(128, 128), 1.0);
        assert_eq!(c.get(128, 128 - 63), 1.0);
        assert_eq!(c.get(128, 128 - 65), 0.0);
        assert_eq!(c.get(0, 0), 0.0);
        assert!(c.data().iter().all(|&v| v == 0.0 || v == 1.0));

        let a = test_pattern(PatternKind::Noise, 64, 5).unwrap();
        let b = test_pattern(PatternKind::Noise, 64, 5).unwrap();
        assert_eq!(a, b);

        let ch = test_pattern(PatternKind::Checker, 64, 0).unwrap();
        for y in 0..64 - 2 * CHECKER_TILE {
            for x in 0..64 - 2 * CHECKER_TILE {
                assert_eq!(ch.get(x, y), ch.get(x + 2 * CHECKER_TILE, y));
                assert_eq!(ch.get(x, y), ch.get(x, y + 2 * CHECKER_TILE));
                assert_ne!(ch.get(x, y), ch.get(x + CHECKER_TILE, y));
            }
        }
        assert!(test_pattern(PatternKind::Edges, 16, 0).is_err());
    }
}
