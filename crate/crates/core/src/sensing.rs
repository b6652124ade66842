//! Per-robot preprocessing.
//!
//! Surface-vehicle side: LiDAR scans are corrected for sensor height, roll,
//! and pitch, cropped to points strictly above the waterline (reflections off
//! the water mirror structures below it), then flattened into a 2D cloud of
//! points near the surface. Underwater side: polar sonar intensity grids are
//! reduced to legitimate contacts with a smallest-of cell-averaging CFAR
//! detector run along the range axis of each bearing column.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{Cloud2, Point2, PolarReturn};

/// Partial surface-vehicle state used to level LiDAR scans: sensor height
/// above the waterline plus roll and pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialUsvState {
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl PartialUsvState {
    pub fn new(height: f64, roll: f64, pitch: f64) -> Result<Self, SensingError> {
        let half_pi = core::f64::consts::FRAC_PI_2;
        if !height.is_finite() || !roll.is_finite() || !pitch.is_finite() {
            return Err(SensingError::NonFiniteState);
        }
        if roll.abs() >= half_pi || pitch.abs() >= half_pi {
            return Err(SensingError::AttitudeOutOfRange);
        }
        Ok(PartialUsvState {
            height,
            roll,
            pitch,
        })
    }

    pub fn level(height: f64) -> Self {
        PartialUsvState {
            height,
            roll: 0.0,
            pitch: 0.0,
        }
    }

    /// Level a sensor-frame point: undo roll then pitch, then shift up by the
    /// sensor height so that z = 0 is the waterline.
    pub fn correct(&self, p: [f64; 3]) -> [f64; 3] {
        let (sr, cr) = libm::sincos(self.roll);
        let (sp, cp) = libm::sincos(self.pitch);
        // R_x(roll)
        let y1 = cr * p[1] - sr * p[2];
        let z1 = sr * p[1] + cr * p[2];
        let x1 = p[0];
        // R_y(pitch)
        let x2 = cp * x1 + sp * z1;
        let z2 = -sp * x1 + cp * z1;
        [x2, y1, z2 + self.height]
    }

    /// Inverse of [`Self::correct`]; the simulator uses this to express
    /// waterline-frame hits in the tilted sensor frame.
    pub fn uncorrect(&self, p: [f64; 3]) -> [f64; 3] {
        let (sr, cr) = libm::sincos(self.roll);
        let (sp, cp) = libm::sincos(self.pitch);
        let z0 = p[2] - self.height;
        // R_y(-pitch)
        let x1 = cp * p[0] - sp * z0;
        let z1 = sp * p[0] + cp * z0;
        // R_x(-roll)
        let y2 = cr * p[1] + sr * z1;
        let z2 = -sr * p[1] + cr * z1;
        [x1, y2, z2]
    }
}

/// A leveled LiDAR scan: 3D points with z measured from the waterline,
/// every point strictly above it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrectedScan {
    pub points: Vec<[f64; 3]>,
}

impl CorrectedScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Apply the height/roll/pitch correction and drop everything at or below the
/// waterline (strict `z > 0`: boundary points are treated as surface glints).
pub fn correct_and_crop_lidar(raw: &[PolarReturn], state: &PartialUsvState) -> CorrectedScan {
    let mut points = Vec::with_capacity(raw.len());
    for r in raw {
        let corrected = state.correct(r.to_cartesian_3d());
        if corrected[2] > 0.0 {
            points.push(corrected);
        }
    }
    CorrectedScan { points }
}

/// Keep the waterline band `0 < z <= h_max` and drop the height axis.
pub fn project_lidar_2d(scan: &CorrectedScan, h_max: f64) -> Cloud2 {
    debug_assert!(h_max > 0.0);
    Cloud2::new(
        scan.points
            .iter()
            .filter(|p| p[2] > 0.0 && p[2] <= h_max)
            .map(|p| Point2::new(p[0], p[1]))
            .collect(),
    )
}

/// Polar sonar intensity grid: `range_bins` rows by `angular_bins` columns,
/// zero meaning no return. Row r spans ranges `[r, r+1) * range_resolution`;
/// column b spans an equal slice of `[bearing_min, bearing_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactGrid {
    pub range_bins: usize,
    pub angular_bins: usize,
    pub range_resolution: f64,
    pub bearing_min: f64,
    pub bearing_max: f64,
    pub cells: Vec<f64>,
}

impl ContactGrid {
    pub fn zeroed(
        range_bins: usize,
        angular_bins: usize,
        range_resolution: f64,
        bearing_min: f64,
        bearing_max: f64,
    ) -> Self {
        debug_assert!(range_bins > 0 && angular_bins > 0);
        debug_assert!(range_resolution > 0.0);
        ContactGrid {
            range_bins,
            angular_bins,
            range_resolution,
            bearing_min,
            bearing_max,
            cells: vec![0.0; range_bins * angular_bins],
        }
    }

    #[inline]
    pub fn idx(&self, range_bin: usize, angular_bin: usize) -> usize {
        range_bin * self.angular_bins + angular_bin
    }

    #[inline]
    pub fn get(&self, range_bin: usize, angular_bin: usize) -> f64 {
        self.cells[self.idx(range_bin, angular_bin)]
    }

    #[inline]
    pub fn set(&mut self, range_bin: usize, angular_bin: usize, v: f64) {
        let i = self.idx(range_bin, angular_bin);
        self.cells[i] = v;
    }

    pub fn bearing_step(&self) -> f64 {
        (self.bearing_max - self.bearing_min) / self.angular_bins as f64
    }

    /// Polar center of a cell.
    pub fn cell_center(&self, range_bin: usize, angular_bin: usize) -> (f64, f64) {
        (
            (range_bin as f64 + 0.5) * self.range_resolution,
            self.bearing_min + (angular_bin as f64 + 0.5) * self.bearing_step(),
        )
    }

    pub fn nonzero_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c > 0.0).count()
    }

    /// Indices of nonzero cells in row-major order.
    pub fn contact_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.range_bins {
            for b in 0..self.angular_bins {
                if self.get(r, b) > 0.0 {
                    out.push((r, b));
                }
            }
        }
        out
    }

    /// Convert nonzero cells to an in-plane cartesian cloud (cell centers).
    pub fn to_cloud(&self) -> Cloud2 {
        let mut points = Vec::new();
        for (r, b) in self.contact_cells() {
            let (range, bearing) = self.cell_center(r, b);
            let ret = PolarReturn::in_plane(range, bearing, self.get(r, b))
                .expect("cell centers have non-negative range");
            points.push(ret.to_cartesian());
        }
        Cloud2::new(points)
    }

    /// Resolution-true rendering of nonzero cells: points spread across each
    /// cell's bearing arc at roughly `spacing` meters, so surface density is
    /// uniform instead of thinning with range the way bare cell centers do.
    pub fn to_cloud_dense(&self, spacing: f64) -> Cloud2 {
        debug_assert!(spacing > 0.0);
        let step = self.bearing_step();
        let mut points = Vec::new();
        for (r, b) in self.contact_cells() {
            let (range, bearing) = self.cell_center(r, b);
            let arc = range * step;
            let n = (libm::floor(arc / spacing) as usize).max(1);
            for k in 0..n {
                let offset = ((k as f64 + 0.5) / n as f64 - 0.5) * step;
                let (s, c) = libm::sincos(bearing + offset);
                points.push(Point2::new(range * c, range * s));
            }
        }
        Cloud2::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfarParams {
    /// Guard cells on each side of the cell under test.
    pub guard: usize,
    /// Training cells on each side beyond the guard band.
    pub train: usize,
    /// Detection threshold multiplier on the noise estimate.
    pub threshold_factor: f64,
    /// Additive floor on the noise estimate so all-zero training windows
    /// cannot produce a zero threshold.
    pub noise_floor: f64,
}

impl Default for CfarParams {
    fn default() -> Self {
        CfarParams {
            guard: 2,
            train: 8,
            threshold_factor: 3.0,
            noise_floor: 1e-6,
        }
    }
}

/// Smallest-of cell-averaging CFAR along the range axis of each bearing
/// column.
///
/// The noise estimate for a cell is the smaller of the mean over the leading
/// and trailing training windows (guard cells excluded); at the range edges
/// the available side alone is used. A cell is a contact iff its intensity
/// exceeds `threshold_factor * (noise + noise_floor)`. Output keeps the
/// original intensity at contact cells and zero elsewhere, so detections are
/// always a subset of the input's nonzero cells.
pub fn cfar_detect(grid: &ContactGrid, params: &CfarParams) -> Result<ContactGrid, SensingError> {
    if params.train == 0 {
        return Err(SensingError::InvalidCfarWindow);
    }
    let reach = params.guard + params.train;
    if grid.range_bins < reach + 1 {
        return Err(SensingError::CfarWindowLargerThanGrid);
    }
    let mut out = ContactGrid::zeroed(
        grid.range_bins,
        grid.angular_bins,
        grid.range_resolution,
        grid.bearing_min,
        grid.bearing_max,
    );
    let inv_train = 1.0 / params.train as f64;
    for b in 0..grid.angular_bins {
        for r in 0..grid.range_bins {
            let leading = if r >= reach {
                let mut sum = 0.0;
                for t in (r - reach)..(r - params.guard) {
                    sum += grid.get(t, b);
                }
                Some(sum * inv_train)
            } else {
                None
            };
            let trailing = if r + reach < grid.range_bins {
                let mut sum = 0.0;
                for t in (r + params.guard + 1)..=(r + reach) {
                    sum += grid.get(t, b);
                }
                Some(sum * inv_train)
            } else {
                None
            };
            let noise = match (leading, trailing) {
                (Some(a), Some(c)) => a.min(c),
                (Some(a), None) => a,
                (None, Some(c)) => c,
                (None, None) => unreachable!("grid size checked above"),
            };
            let value = grid.get(r, b);
            if value > params.threshold_factor * (noise + params.noise_floor) {
                out.set(r, b, value);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensingError {
    NonFiniteState,
    AttitudeOutOfRange,
    InvalidCfarWindow,
    CfarWindowLargerThanGrid,
}

impl fmt::Display for SensingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensingError::NonFiniteState => write!(f, "partial state has non-finite values"),
            SensingError::AttitudeOutOfRange => {
                write!(f, "roll/pitch must lie strictly inside (-pi/2, pi/2)")
            }
            SensingError::InvalidCfarWindow => write!(f, "CFAR needs at least one training cell"),
            SensingError::CfarWindowLargerThanGrid => {
                write!(f, "CFAR window does not fit in the grid's range axis")
            }
        }
    }
}

impl core::error::Error for SensingError {}
