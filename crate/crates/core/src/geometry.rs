//! Computational grids, circular detector arrays and time axes.
//!
//! Coordinates are grid-centred: pixel `i` along an axis of `n` pixels sits at
//! `(i - (n - 1) / 2) * dx`. Element angles are measured counterclockwise from
//! the +x axis.

use crate::error::{Error, Result};

/// Uniform Cartesian grid with constant sound speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch in metres.
    pub dx: f64,
    /// Sound speed in m/s.
    pub c: f64,
    /// Zero-padding multiple used by the spectral propagator.
    pub pad_factor: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, c: f64, pad_factor: usize) -> Result<Self> {
        if nx < 8 || ny < 8 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(Error::Geometry(format!(
                "grid sides must be even and at least 8, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::Geometry(format!(
                "pixel pitch and sound speed must be positive (dx={dx}, c={c})"
            )));
        }
        if !(1..=4).contains(&pad_factor) {
            return Err(Error::Geometry(format!(
                "pad factor must be in 1..=4, got {pad_factor}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            c,
            pad_factor,
        })
    }

    /// Square grid with the default pad factor of 2.
    pub fn square(n: usize, dx: f64, c: f64) -> Result<Self> {
        Self::new(n, n, dx, c, 2)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        (self.nx * self.pad_factor, self.ny * self.pad_factor)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical side lengths in metres.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dx)
    }

    /// Largest propagation distance `c * T` the padded domain supports without
    /// periodic wraparound reaching the detectors.
    pub fn max_propagation_distance(&self) -> f64 {
        self.pad_factor as f64 * self.nx.min(self.ny) as f64 * self.dx / 2.0
    }

    /// Pixel-centre coordinate along x for index `i`.
    pub fn x_coord(&self, i: usize) -> f64 {
        (i as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx
    }

    pub fn y_coord(&self, j: usize) -> f64 {
        (j as f64 - (self.ny as f64 - 1.0) / 2.0) * self.dx
    }

    /// Grid with `factor` times more pixels over the same physical extent.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Geometry("refinement factor must be positive".into()));
        }
        Self::new(
            self.nx * factor,
            self.ny * factor,
            self.dx / factor as f64,
            self.c,
            self.pad_factor,
        )
    }
}

/// Circular transducer array with a contiguous active sub-arc.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRing {
    pub radius: f64,
    pub n_total: usize,
    /// Element angles in radians, increasing counterclockwise.
    pub element_angles: Vec<f64>,
    pub active: Vec<bool>,
    /// Centre of the device arc in radians.
    pub arc_center: f64,
    device_arc_deg: f64,
    arc_center_deg: f64,
}

/// Builds a ring of `n_total` elements at uniform pitch `device_arc / n_total`
/// centred on `arc_center` (both in degrees). All elements start active.
pub fn make_ring(
    radius: f64,
    n_total: usize,
    device_arc: f64,
    arc_center: f64,
) -> Result<DetectorRing> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Geometry(format!("ring radius must be positive, got {radius}")));
    }
    if !(device_arc > 0.0 && device_arc <= 360.0) {
        return Err(Error::Geometry(format!(
            "device arc must lie in (0, 360] degrees, got {device_arc}"
        )));
    }
    if n_total < 4 {
        return Err(Error::Geometry(format!(
            "a ring needs at least 4 elements, got {n_total}"
        )));
    }
    let pitch = device_arc / n_total as f64;
    let mid = (n_total as f64 - 1.0) / 2.0;
    let element_angles = (0..n_total)
        .map(|i| (arc_center + (i as f64 - mid) * pitch).to_radians())
        .collect();
    Ok(DetectorRing {
        radius,
        n_total,
        element_angles,
        active: vec![true; n_total],
        arc_center: arc_center.to_radians(),
        device_arc_deg: device_arc,
        arc_center_deg: arc_center,
    })
}

/// Keeps the `n_active` contiguous elements centred on the arc centre. When the
/// run cannot be centred exactly it is shifted one element counterclockwise.
pub fn subsample_arc(ring: &DetectorRing, n_active: usize) -> Result<DetectorRing> {
    subsample_arc_with_offset(ring, n_active, 0)
}

/// Like [`subsample_arc`] but shifts the kept run by `offset` elements
/// (positive is counterclockwise).
pub fn subsample_arc_with_offset(
    ring: &DetectorRing,
    n_active: usize,
    offset: isize,
) -> Result<DetectorRing> {
    if n_active < 1 || n_active > ring.n_total {
        return Err(Error::Geometry(format!(
            "active count {n_active} outside 1..={}",
            ring.n_total
        )));
    }
    let start = (ring.n_total - n_active).div_ceil(2) as isize + offset;
    if start < 0 || start as usize + n_active > ring.n_total {
        return Err(Error::Geometry(format!(
            "offset {offset} moves the active run off the device arc"
        )));
    }
    let start = start as usize;
    let mut out = ring.clone();
    for (i, a) in out.active.iter_mut().enumerate() {
        *a = i >= start && i < start + n_active;
    }
    Ok(out)
}

impl DetectorRing {
    /// Angular pitch between adjacent elements in degrees.
    pub fn pitch_deg(&self) -> f64 {
        self.device_arc_deg / self.n_total as f64
    }

    pub fn device_arc_deg(&self) -> f64 {
        self.device_arc_deg
    }

    pub fn arc_center_deg(&self) -> f64 {
        self.arc_center_deg
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Angular coverage of the active run in degrees.
    pub fn coverage_deg(&self) -> f64 {
        self.n_active() as f64 * self.pitch_deg()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
    }

    /// Returns a copy with every element inactive.
    pub fn deactivated(&self) -> DetectorRing {
        let mut out = self.clone();
        out.active.iter_mut().for_each(|a| *a = false);
        out
    }

    /// Same mounting (radius, element angles) as `other`.
    pub fn same_mounting(&self, other: &DetectorRing) -> bool {
        self.radius == other.radius && self.element_angles == other.element_angles
    }
}

/// Cartesian element positions (all elements, active or not) relative to the
/// grid centre. Fails if an element falls outside the sampled grid interior.
pub fn detector_positions(ring: &DetectorRing, grid: &Grid) -> Result<Vec<(f64, f64)>> {
    let half_x = (grid.nx as f64 - 1.0) / 2.0 * grid.dx;
    let half_y = (grid.ny as f64 - 1.0) / 2.0 * grid.dx;
    ring.element_angles
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let (s, c) = theta.sin_cos();
            let (x, y) = (ring.radius * c, ring.radius * s);
            if x.abs() >= half_x || y.abs() >= half_y {
                Err(Error::Geometry(format!(
                    "element {i} at ({x:.3e}, {y:.3e}) lies outside the grid interior"
                )))
            } else {
                Ok((x, y))
            }
        })
        .collect()
}

/// Uniform sampling of the observation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub n_t: usize,
    /// Seconds per sample.
    pub dt: f64,
}

impl TimeAxis {
    pub fn new(n_t: usize, dt: f64) -> Result<Self> {
        if n_t < 2 {
            return Err(Error::Geometry(format!("need at least 2 time samples, got {n_t}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Geometry(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { n_t, dt })
    }

    /// `dt = dx / (2c)` with enough samples for a wave to cross the ring
    /// diameter, i.e. `c T >= 2 R`.
    pub fn for_ring(grid: &Grid, radius: f64) -> Result<Self> {
        let dt = grid.dx / (2.0 * grid.c);
        let n_t = (2.0 * radius / (grid.c * dt)).ceil() as usize + 1;
        Self::new(n_t, dt)
    }

    pub fn total_time(&self) -> f64 {
        (self.n_t - 1) as f64 * self.dt
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn msot_ring_pitch() {
        let ring = make_ring(0.04, 256, 270.0, 270.0).unwrap();
        assert_eq!(ring.element_angles.len(), 256);
        assert_eq!(ring.pitch_deg(), 1.0546875);
        assert_eq!(ring.coverage_deg(), 270.0);
        for w in ring.element_angles.windows(2) {
            assert!(close(w[1] - w[0], 1.0546875f64.to_radians(), 1e-14));
        }
        let mean: f64 = ring.element_angles.iter().sum::<f64>() / 256.0;
        assert!(close(mean, 270f64.to_radians(), 1e-12));
    }

    #[test]
    fn full_ring_quarter_positions() {
        let ring = make_ring(1.0, 4, 360.0, 0.0).unwrap();
        let mut degs: Vec<f64> = ring
            .element_angles
            .iter()
            .map(|a| a.to_degrees().rem_euclid(360.0))
            .collect();
        degs.sort_by(f64::total_cmp);
        // centred convention puts the elements half a pitch off the axes
        for (k, d) in degs.iter().enumerate() {
            assert!(close(*d, 45.0 + 90.0 * k as f64, 1e-12), "{degs:?}");
        }
    }

    #[test]
    fn semicircle_arc() {
        let ring = make_ring(1.0, 8, 180.0, 90.0).unwrap();
        let degs: Vec<f64> = ring.element_angles.iter().map(|a| a.to_degrees()).collect();
        let expected = [1.25, 3.75, 6.25, 8.75, 11.25, 13.75, 16.25, 18.75].map(|k| k * 9.0);
        for (d, e) in degs.iter().zip(expected) {
            assert!(close(*d, e, 1e-12), "{d} vs {e}");
        }
    }

    #[test]
    fn ring_rejects_bad_input() {
        assert!(make_ring(0.0, 8, 180.0, 0.0).is_err());
        assert!(make_ring(1.0, 8, 0.0, 0.0).is_err());
        assert!(make_ring(1.0, 8, 361.0, 0.0).is_err());
        assert!(make_ring(1.0, 3, 180.0, 0.0).is_err());
    }

    #[test]
    fn paper_subsets_coverage() {
        let ring = make_ring(0.04, 256, 270.0, 270.0).unwrap();
        assert_eq!(subsample_arc(&ring, 170).unwrap().coverage_deg(), 179.296875);
        assert_eq!(subsample_arc(&ring, 112).unwrap().coverage_deg(), 118.125);
        assert_eq!(subsample_arc(&ring, 256).unwrap(), ring);
        assert!(subsample_arc(&ring, 0).is_err());
        assert!(subsample_arc(&ring, 257).is_err());
    }

    #[test]
    fn subsample_is_centred_and_contiguous() {
        let ring = make_ring(1.0, 256, 270.0, 270.0).unwrap();
        let sub = subsample_arc(&ring, 112).unwrap();
        let idx: Vec<usize> = sub.active_indices().collect();
        assert_eq!(idx.first(), Some(&72));
        assert_eq!(idx.last(), Some(&183));
        let mean: f64 = idx.iter().map(|&i| ring.element_angles[i]).sum::<f64>() / 112.0;
        assert!(close(mean, 270f64.to_radians(), 1e-12));

        // odd count leans counterclockwise
        let odd = subsample_arc(&ring, 5).unwrap();
        let idx: Vec<usize> = odd.active_indices().collect();
        assert_eq!(idx, vec![126, 127, 128, 129, 130]);
    }

    #[test]
    fn subsample_offset() {
        let ring = make_ring(1.0, 16, 270.0, 270.0).unwrap();
        let sub = subsample_arc_with_offset(&ring, 4, 2).unwrap();
        assert_eq!(sub.active_indices().collect::<Vec<_>>(), vec![8, 9, 10, 11]);
        assert!(subsample_arc_with_offset(&ring, 4, 7).is_err());
        assert!(subsample_arc_with_offset(&ring, 4, -7).is_err());
    }

    #[test]
    fn positions_on_circle() {
        let grid = Grid::square(64, 1e-4, 1500.0).unwrap();
        let r = 0.45 * 64.0 * 1e-4;
        let ring = make_ring(r, 256, 270.0, 270.0).unwrap();
        let pos = detector_positions(&ring, &grid).unwrap();
        assert_eq!(pos.len(), 256);
        for (x, y) in pos {
            assert!(close(x.hypot(y), r, 1e-12 * r));
        }
    }

    #[test]
    fn positions_axis_values() {
        let grid = Grid::square(8, 1.0, 1.0).unwrap();
        let ring = make_ring(1.0, 4, 360.0, 45.0).unwrap();
        let pos = detector_positions(&ring, &grid).unwrap();
        // element 1 sits at 0 degrees, element 2 at 90 degrees
        assert!(close(pos[1].0, 1.0, 1e-15) && close(pos[1].1, 0.0, 1e-15));
        assert!(close(pos[2].0, 0.0, 1e-15) && close(pos[2].1, 1.0, 1e-15));
    }

    #[test]
    fn positions_outside_grid_rejected() {
        let grid = Grid::square(8, 1.0, 1.0).unwrap();
        let ring = make_ring(3.6, 8, 360.0, 22.5).unwrap();
        assert!(detector_positions(&ring, &grid).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(7, 8, 1.0, 1.0, 2).is_err());
        assert!(Grid::new(6, 8, 1.0, 1.0, 2).is_err());
        assert!(Grid::new(8, 8, 0.0, 1.0, 2).is_err());
        assert!(Grid::new(8, 8, 1.0, -1.0, 2).is_err());
        assert!(Grid::new(8, 8, 1.0, 1.0, 5).is_err());
        assert!(Grid::new(8, 8, 1.0, 1.0, 0).is_err());
        let g = Grid::new(16, 8, 0.5, 1.0, 3).unwrap();
        assert_eq!(g.padded_shape(), (48, 24));
        assert_eq!(g.max_propagation_distance(), 3.0 * 8.0 * 0.5 / 2.0);
    }

    #[test]
    fn default_time_axis_crosses_diameter() {
        let grid = Grid::square(64, 1e-4, 1500.0).unwrap();
        let r = 0.45 * 64.0 * 1e-4;
        let t = TimeAxis::for_ring(&grid, r).unwrap();
        assert!(grid.c * t.total_time() >= 2.0 * r);
        assert!(grid.c * t.total_time() <= grid.max_propagation_distance());
        assert!(TimeAxis::new(1, 1.0).is_err());
    }
}
