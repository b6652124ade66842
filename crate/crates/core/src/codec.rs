//! Lossless rectangle compression of contact grids and the binary wire
//! format for underwater-to-surface perception messages.
//!
//! After CFAR the sonar image is a sparse binary mask. Transmitting every
//! contact as a coordinate pair costs two 32-bit integers per cell; grouping
//! filled axis-aligned blocks into rectangles sends only the top-left and
//! bottom-right corners (four 32-bit integers) per patch while preserving the
//! exact cell set, so the original resolution survives the link. Cells that do
//! not pay for a rectangle stay as coordinate singles.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::Pose2;
use crate::mat3::Mat3;
use crate::sensing::ContactGrid;

/// Inclusive axis-aligned cell rectangle `(r0, c0)..=(r1, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: u32,
    pub c0: u32,
    pub r1: u32,
    pub c1: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        (self.r1 - self.r0 + 1) as u64 * (self.c1 - self.c0 + 1) as u64
    }
}

/// Rectangle-compressed form of a binary contact grid.
///
/// Invariants maintained by [`compress`]: rectangles cover only contact
/// cells, are mutually disjoint, and no single is covered by a rectangle;
/// decompression reproduces the contact cell set exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RectPatchSet {
    pub rects: Vec<Rect>,
    pub singles: Vec<(u32, u32)>,
    /// (range_bins, angular_bins) of the source grid.
    pub grid_dims: (u16, u16),
}

impl RectPatchSet {
    /// Number of cells covered by rectangles plus singles.
    pub fn covered_cells(&self) -> u64 {
        self.rects.iter().map(Rect::area).sum::<u64>() + self.singles.len() as u64
    }

    /// Payload cost in bits: 4 coordinates per rectangle, 2 per single,
    /// 32 bits each.
    pub fn payload_bits(&self) -> u64 {
        self.rects.len() as u64 * RECT_BITS + self.singles.len() as u64 * SINGLE_BITS
    }
}

/// Bits for one rectangle (two 32-bit coordinate pairs).
pub const RECT_BITS: u64 = 128;
/// Bits for one bare contact coordinate (one 32-bit pair).
pub const SINGLE_BITS: u64 = 64;
/// Fixed message header: robot id (u16), keyframe (u32), pose (3 x f32),
/// covariance upper triangle (6 x f32), rect/single counts (2 x u16),
/// grid dims (2 x u16).
pub const HEADER_BITS: u64 = 8 * (2 + 4 + 12 + 24 + 2 + 2 + 4);

/// A rectangle only pays once it covers at least this many cells: two cells
/// cost the same either way, three singles cost 192 bits against 128.
const MIN_RECT_AREA: u64 = 3;

/// Greedy maximal-rectangle cover of the grid's contact mask.
///
/// Repeatedly extracts the largest all-ones rectangle (per-row histogram with
/// a monotone stack) until the largest remaining rectangle would not pay for
/// its corner encoding; leftover contacts become singles. Deterministic:
/// ties keep the first rectangle in row-major scan order.
pub fn compress(grid: &ContactGrid) -> Result<RectPatchSet, CodecError> {
    if grid.range_bins > u16::MAX as usize || grid.angular_bins > u16::MAX as usize {
        return Err(CodecError::GridTooLarge);
    }
    let rows = grid.range_bins;
    let cols = grid.angular_bins;
    let mut mask: Vec<bool> = grid.cells.iter().map(|&c| c > 0.0).collect();

    let mut rects = Vec::new();
    loop {
        let Some(best) = largest_rectangle(&mask, rows, cols) else {
            break;
        };
        if best.area() < MIN_RECT_AREA {
            break;
        }
        for r in best.r0..=best.r1 {
            for c in best.c0..=best.c1 {
                mask[r as usize * cols + c as usize] = false;
            }
        }
        rects.push(best);
    }

    let mut singles = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if mask[r * cols + c] {
                singles.push((r as u32, c as u32));
            }
        }
    }

    Ok(RectPatchSet {
        rects,
        singles,
        grid_dims: (rows as u16, cols as u16),
    })
}

/// Largest all-ones rectangle, or None for an all-zero mask.
fn largest_rectangle(mask: &[bool], rows: usize, cols: usize) -> Option<Rect> {
    let mut heights = vec![0u32; cols];
    let mut best: Option<(u64, Rect)> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(cols + 1);
    for r in 0..rows {
        for c in 0..cols {
            heights[c] = if mask[r * cols + c] { heights[c] + 1 } else { 0 };
        }
        // Largest rectangle in histogram with bottom edge on row r.
        stack.clear();
        for c in 0..=cols {
            let h = if c < cols { heights[c] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= h {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map(|&l| l + 1).unwrap_or(0);
                let width = c - left;
                let area = height as u64 * width as u64;
                let candidate = Rect {
                    r0: (r + 1 - height as usize) as u32,
                    c0: left as u32,
                    r1: r as u32,
                    c1: (c - 1) as u32,
                };
                match best {
                    Some((a, _)) if a >= area => {}
                    _ => best = Some((area, candidate)),
                }
            }
            stack.push(c);
        }
    }
    best.map(|(_, rect)| rect)
}

/// Geometry needed to rebuild a [`ContactGrid`] on the receiver side; known
/// from the sensor configuration, not transmitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub range_resolution: f64,
    pub bearing_min: f64,
    pub bearing_max: f64,
}

/// Rebuild the binary contact grid. Intensities are not transmitted; covered
/// cells are set to 1.
pub fn decompress(patches: &RectPatchSet, geom: &GridGeometry) -> Result<ContactGrid, CodecError> {
    let (rows, cols) = (patches.grid_dims.0 as usize, patches.grid_dims.1 as usize);
    if rows == 0 || cols == 0 {
        return Err(CodecError::EmptyGrid);
    }
    let mut grid = ContactGrid::zeroed(
        rows,
        cols,
        geom.range_resolution,
        geom.bearing_min,
        geom.bearing_max,
    );
    for rect in &patches.rects {
        if rect.r1 < rect.r0 || rect.c1 < rect.c0 {
            return Err(CodecError::InvalidRect);
        }
        if rect.r1 as usize >= rows || rect.c1 as usize >= cols {
            return Err(CodecError::OutOfBounds);
        }
        for r in rect.r0..=rect.r1 {
            for c in rect.c0..=rect.c1 {
                grid.set(r as usize, c as usize, 1.0);
            }
        }
    }
    for &(r, c) in &patches.singles {
        if r as usize >= rows || c as usize >= cols {
            return Err(CodecError::OutOfBounds);
        }
        grid.set(r as usize, c as usize, 1.0);
    }
    Ok(grid)
}

/// One underwater-to-surface perception message: the sender's current pose
/// estimate with covariance plus its compressed sonar contacts.
///
/// Pose and covariance are quantized to the 32-bit wire precision at
/// construction so that serialization round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AuvMessage {
    pub robot_id: u16,
    pub keyframe_index: u32,
    pub pose_estimate: Pose2,
    pub pose_covariance: Mat3,
    pub payload: RectPatchSet,
}

impl AuvMessage {
    pub fn new(
        robot_id: u16,
        keyframe_index: u32,
        pose_estimate: Pose2,
        pose_covariance: Mat3,
        payload: RectPatchSet,
    ) -> Result<Self, CodecError> {
        if !pose_covariance.is_spsd(1e-9) {
            return Err(CodecError::CovarianceNotPsd);
        }
        if payload.rects.len() > u16::MAX as usize || payload.singles.len() > u16::MAX as usize {
            return Err(CodecError::GridTooLarge);
        }
        let pose_estimate = Pose2::new(
            pose_estimate.x as f32 as f64,
            pose_estimate.y as f32 as f64,
            pose_estimate.theta() as f32 as f64,
        );
        let mut upper = pose_covariance.upper_triangle();
        for v in upper.iter_mut() {
            *v = *v as f32 as f64;
        }
        Ok(AuvMessage {
            robot_id,
            keyframe_index,
            pose_estimate,
            pose_covariance: Mat3::from_upper_triangle(&upper),
            payload,
        })
    }

    /// Fixed little-endian wire layout; see the format notes in the repo
    /// docs. The bit count always equals [`message_size_bits`].
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            50 + 16 * self.payload.rects.len() + 8 * self.payload.singles.len(),
        );
        out.extend_from_slice(&self.robot_id.to_le_bytes());
        out.extend_from_slice(&self.keyframe_index.to_le_bytes());
        for v in self.pose_estimate.to_vec3() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in self.pose_covariance.upper_triangle() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.rects.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.payload.singles.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload.grid_dims.0.to_le_bytes());
        out.extend_from_slice(&self.payload.grid_dims.1.to_le_bytes());
        for rect in &self.payload.rects {
            for v in [rect.r0, rect.c0, rect.r1, rect.c1] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &(r, c) in &self.payload.singles {
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let robot_id = cursor.u16()?;
        let keyframe_index = cursor.u32()?;
        let pose = [cursor.f32()?, cursor.f32()?, cursor.f32()?];
        let mut upper = [0.0f64; 6];
        for u in upper.iter_mut() {
            *u = cursor.f32()? as f64;
        }
        let rect_count = cursor.u16()? as usize;
        let single_count = cursor.u16()? as usize;
        let dims = (cursor.u16()?, cursor.u16()?);
        let mut rects = Vec::with_capacity(rect_count);
        for _ in 0..rect_count {
            rects.push(Rect {
                r0: cursor.u32()?,
                c0: cursor.u32()?,
                r1: cursor.u32()?,
                c1: cursor.u32()?,
            });
        }
        let mut singles = Vec::with_capacity(single_count);
        for _ in 0..single_count {
            singles.push((cursor.u32()?, cursor.u32()?));
        }
        if cursor.pos != bytes.len() {
            return Err(CodecError::TrailingBytes);
        }
        Ok(AuvMessage {
            robot_id,
            keyframe_index,
            pose_estimate: Pose2::new(pose[0] as f64, pose[1] as f64, pose[2] as f64),
            pose_covariance: Mat3::from_upper_triangle(&upper),
            payload: RectPatchSet {
                rects,
                singles,
                grid_dims: dims,
            },
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        if self.pos + N > self.bytes.len() {
            return Err(CodecError::Truncated);
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}

/// Exact size of the serialized message in bits.
pub fn message_size_bits(message: &AuvMessage) -> u64 {
    HEADER_BITS + message.payload.payload_bits()
}

/// The encodings compared when accounting for link cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageSizes {
    /// Dense polar image at the given intensity depth.
    pub raw_bits: u64,
    /// Contact coordinate list (32-bit row/column pair per cell) plus header.
    pub coordinate_bits: u64,
    /// Rectangle-compressed payload plus header; equals the wire size.
    pub rectangle_bits: u64,
}

/// Size comparison for a message whose payload covers `contact_count` cells
/// of a `rows x cols` grid at `intensity_bits` per cell.
pub fn compare_encodings(message: &AuvMessage, intensity_bits: u64) -> MessageSizes {
    let (rows, cols) = message.payload.grid_dims;
    MessageSizes {
        raw_bits: rows as u64 * cols as u64 * intensity_bits,
        coordinate_bits: HEADER_BITS + SINGLE_BITS * message.payload.covered_cells(),
        rectangle_bits: message_size_bits(message),
    }
}

/// Per-robot and aggregate link usage over a mission.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthReport {
    /// (robot id, mean kbits/s over the mission).
    pub per_robot_kbits_per_s: Vec<(u16, f64)>,
    pub total_kbits_per_s: f64,
    /// Message size statistics in kbits.
    pub mean_kbits: f64,
    pub std_kbits: f64,
    pub min_kbits: f64,
    pub max_kbits: f64,
    pub message_count: usize,
    pub total_bits: u64,
}

pub fn bandwidth_report(
    messages: &[AuvMessage],
    mission_duration_s: f64,
) -> Result<BandwidthReport, CodecError> {
    if !(mission_duration_s > 0.0) {
        return Err(CodecError::NonPositiveDuration);
    }
    let mut per_robot: Vec<(u16, u64)> = Vec::new();
    let mut sizes_kbits = Vec::with_capacity(messages.len());
    let mut total_bits = 0u64;
    for m in messages {
        let bits = message_size_bits(m);
        total_bits += bits;
        sizes_kbits.push(bits as f64 / 1000.0);
        match per_robot.iter_mut().find(|(id, _)| *id == m.robot_id) {
            Some((_, acc)) => *acc += bits,
            None => per_robot.push((m.robot_id, bits)),
        }
    }
    per_robot.sort_by_key(|&(id, _)| id);
    let n = sizes_kbits.len();
    let (mean, std, min, max) = if n == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let mean = sizes_kbits.iter().sum::<f64>() / n as f64;
        let var = sizes_kbits.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let min = sizes_kbits.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sizes_kbits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, libm::sqrt(var), min, max)
    };
    Ok(BandwidthReport {
        per_robot_kbits_per_s: per_robot
            .into_iter()
            .map(|(id, bits)| (id, bits as f64 / 1000.0 / mission_duration_s))
            .collect(),
        total_kbits_per_s: total_bits as f64 / 1000.0 / mission_duration_s,
        mean_kbits: mean,
        std_kbits: std,
        min_kbits: min,
        max_kbits: max,
        message_count: n,
        total_bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecError {
    GridTooLarge,
    EmptyGrid,
    InvalidRect,
    OutOfBounds,
    CovarianceNotPsd,
    Truncated,
    TrailingBytes,
    NonPositiveDuration,
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::GridTooLarge => write!(f, "grid dimensions exceed the wire format's 16-bit fields"),
            CodecError::EmptyGrid => write!(f, "patch set has zero grid dimensions"),
            CodecError::InvalidRect => write!(f, "rectangle corners are not ordered"),
            CodecError::OutOfBounds => write!(f, "patch coordinates outside grid dimensions"),
            CodecError::CovarianceNotPsd => write!(f, "pose covariance is not symmetric positive semi-definite"),
            CodecError::Truncated => write!(f, "message shorter than its declared contents"),
            CodecError::TrailingBytes => write!(f, "message longer than its declared contents"),
            CodecError::NonPositiveDuration => write!(f, "mission duration must be positive"),
        }
    }
}

impl core::error::Error for CodecError {}
