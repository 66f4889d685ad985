use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::waveop::Image;

/// Ring radius used when a config does not set one, as a fraction of the
/// grid half-width.
pub const DEFAULT_RING_FRACTION: f64 = 0.9;
/// Phantom support radius as a fraction of the ring radius.
pub const SUPPORT_FRACTION: f64 = 0.9;
/// Sub-samples per pixel side when rasterising shapes.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhantomKind {
    #[default]
    Disks,
    AnnulusWithInclusions,
    SheppLike,
}

impl PhantomKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Disks => "disks",
            PhantomKind::AnnulusWithInclusions => "annulus_with_inclusions",
            PhantomKind::SheppLike => "shepp_like",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disks" => Ok(PhantomKind::Disks),
            "annulus_with_inclusions" | "annulus" => Ok(PhantomKind::AnnulusWithInclusions),
            "shepp_like" | "shepp" => Ok(PhantomKind::SheppLike),
            _ => Err(Error::Config(format!("unknown phantom kind '{s}'"))),
        }
    }
}

/// A filled ellipse with additive amplitude. Coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Rotation in radians.
    pub phi: f64,
    pub amplitude: f64,
}

impl Ellipse {
    pub fn disk(cx: f64, cy: f64, r: f64, amplitude: f64) -> Self {
        Self { cx, cy, a: r, b: r, phi: 0.0, amplitude }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Largest distance from the origin of any point of the ellipse.
    pub fn reach(&self) -> f64 {
        self.cx.hypot(self.cy) + self.a.max(self.b)
    }
}

/// Rasterises the sum of `shapes` with area-weighted pixel coverage.
pub fn rasterize(grid: &Grid, shapes: &[Ellipse]) -> Image {
    let s = SUPERSAMPLE;
    let w = 1.0 / (s * s) as f64;
    let mut img = Array2::zeros(grid.shape());
    for ((i, j), v) in img.indexed_iter_mut() {
        let (x0, y0) = (grid.x_coord(i), grid.y_coord(j));
        let mut acc = 0.0;
        for a in 0..s {
            let x = x0 + ((a as f64 + 0.5) / s as f64 - 0.5) * grid.dx;
            for b in 0..s {
                let y = y0 + ((b as f64 + 0.5) / s as f64 - 0.5) * grid.dx;
                for e in shapes {
                    if e.contains(x, y) {
                        acc += e.amplitude;
                    }
                }
            }
        }
        *v = (acc * w).max(0.0);
    }
    img
}

/// Default ring radius for `grid`.
pub fn default_ring_radius(grid: &Grid) -> f64 {
    let (ex, ey) = grid.extent();
    DEFAULT_RING_FRACTION * 0.5 * ex.min(ey)
}

/// Shapes of a phantom whose support stays within `radius` of the centre.
pub fn phantom_shapes(kind: PhantomKind, seed: u64, radius: f64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = radius;
    match kind {
        PhantomKind::Disks => {
            let n = rng.random_range(3..=6);
            let mut out: Vec<Ellipse> = Vec::with_capacity(n);
            let mut attempts = 0;
            while out.len() < n && attempts < 1000 {
                attempts += 1;
                let rad = r * rng.random_range(0.08..0.25);
                let dist = rng.random_range(0.0..(r - rad) * 0.999);
                let ang = rng.random_range(0.0..2.0 * PI);
                let d = Ellipse::disk(dist * ang.cos(), dist * ang.sin(), rad, rng.random_range(0.3..1.0));
                let clear = out
                    .iter()
                    .all(|o| (o.cx - d.cx).hypot(o.cy - d.cy) > o.a + d.a + 0.02 * r);
                if clear {
                    out.push(d);
                }
            }
            out
        }
        PhantomKind::AnnulusWithInclusions => {
            let outer = r * rng.random_range(0.8..0.95);
            let inner = outer * rng.random_range(0.6..0.75);
            let mut out = vec![
                Ellipse::disk(0.0, 0.0, outer, 0.6),
                Ellipse::disk(0.0, 0.0, inner, -0.6),
            ];
            let n = rng.random_range(2..=4);
            for k in 0..n {
                let rad = inner * rng.random_range(0.1..0.2);
                let dist = rng.random_range(0.0..(inner - rad) * 0.9);
                let ang = 2.0 * PI * k as f64 / n as f64 + rng.random_range(-0.4..0.4);
                out.push(Ellipse::disk(dist * ang.cos(), dist * ang.sin(), rad, rng.random_range(0.5..1.0)));
            }
            out
        }
        PhantomKind::SheppLike => {
            // modified Shepp–Logan layout, scaled to the support and jittered
            let base: [(f64, f64, f64, f64, f64, f64); 10] = [
                (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
                (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
                (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
                (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
                (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
                (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
                (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
                (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
                (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
                (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
            ];
            let s = r / 0.92;
            base.iter()
                .enumerate()
                .map(|(k, &(x, y, a, b, deg, amp))| {
                    let jitter = if k < 2 { 0.0 } else { 0.01 };
                    Ellipse {
                        cx: s * (x + rng.random_range(-jitter..=jitter)),
                        cy: s * (y + rng.random_range(-jitter..=jitter)),
                        a: s * a,
                        b: s * b,
                        phi: deg.to_radians(),
                        amplitude: amp,
                    }
                })
                .collect()
        }
    }
}

/// Non-negative phantom inside the default ring.
pub fn make_phantom(grid: &Grid, kind: PhantomKind, seed: u64) -> Image {
    make_phantom_within(grid, kind, seed, SUPPORT_FRACTION * default_ring_radius(grid))
}

/// Non-negative phantom with support inside the disk of `radius` meters.
pub fn make_phantom_within(grid: &Grid, kind: PhantomKind, seed: u64, radius: f64) -> Image {
    rasterize(grid, &phantom_shapes(kind, seed, radius))
}

/// Averages `factor × factor` blocks, mapping a fine image onto a coarser grid
/// with the same extent.
pub fn block_average(f: &Image, factor: usize) -> Result<Image> {
    let (nx, ny) = f.dim();
    if factor == 0 || nx % factor != 0 || ny % factor != 0 {
        return Err(Error::Shape(format!("cannot reduce {:?} by {factor}", f.dim())));
    }
    let w = 1.0 / (factor * factor) as f64;
    Ok(Array2::from_shape_fn((nx / factor, ny / factor), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..factor {
            for b in 0..factor {
                acc += f[[i * factor + a, j * factor + b]];
            }
        }
        acc * w
    }))
}
