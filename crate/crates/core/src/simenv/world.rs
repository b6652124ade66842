//! Synthetic world generation: 2D structure footprints with height and
//! per-domain visibility.

use alloc::vec::Vec;

use crate::geom::Point2;
use crate::rng::{label, Pcg32};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    AboveWater,
    BelowWater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    Seawall,
    Pylon,
    Piling,
    PierDeck,
    FloatingDock,
    Ship,
    SubmergedRock,
    Transient,
}

/// A 2D footprint (open polyline or closed polygon) with a height attribute.
///
/// Structures observable in both domains are what make cross-domain loop
/// closure possible; single-domain structures (pier decks, floating docks,
/// submerged rocks) are present as clutter that only one sensor sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub id: u32,
    pub kind: StructureKind,
    pub vertices: Vec<Point2>,
    pub closed: bool,
    /// Extent above the waterline, meters.
    pub height: f64,
    pub visible_above_water: bool,
    pub visible_below_water: bool,
    /// Present in a random subset of frames with this probability
    /// (moving objects: boats, pedestrians, cars).
    pub transient_presence: Option<f64>,
}

impl Structure {
    pub fn visible_in(&self, domain: Domain) -> bool {
        match domain {
            Domain::AboveWater => self.visible_above_water,
            Domain::BelowWater => self.visible_below_water,
        }
    }

    /// Wall segments of the footprint.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        let wrap = if self.closed && n > 2 { n } else { n.saturating_sub(1) };
        (0..wrap).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub structures: Vec<Structure>,
    /// Half-extent of the world square, meters.
    pub bounds: f64,
}

impl WorldModel {
    pub fn dual_visible_count(&self) -> usize {
        self.structures
            .iter()
            .filter(|s| s.visible_above_water && s.visible_below_water)
            .count()
    }

    pub fn count_kind(&self, kind: StructureKind) -> usize {
        self.structures.iter().filter(|s| s.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldTemplate {
    Harbor,
    Bridge,
    Waterfront,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldOptions {
    /// Pilings under each pier (harbor / waterfront).
    pub pilings_per_pier: usize,
    /// Moving objects scattered over open water.
    pub transient_count: usize,
    /// Per-frame presence probability of each moving object.
    pub transient_presence: f64,
}

impl Default for WorldOptions {
    fn default() -> Self {
        WorldOptions {
            pilings_per_pier: 6,
            transient_count: 0,
            transient_presence: 0.3,
        }
    }
}

pub fn generate_world(seed: u64, template: WorldTemplate) -> WorldModel {
    generate_world_with(seed, template, &WorldOptions::default())
}

pub fn generate_world_with(
    seed: u64,
    template: WorldTemplate,
    options: &WorldOptions,
) -> WorldModel {
    let mut rng = Pcg32::stream(seed, label("world"));
    let mut builder = WorldBuilder::new();
    let bounds = match template {
        WorldTemplate::Harbor => {
            harbor(&mut builder, &mut rng, options);
            80.0
        }
        WorldTemplate::Bridge => {
            bridge(&mut builder, &mut rng);
            100.0
        }
        WorldTemplate::Waterfront => {
            waterfront(&mut builder, &mut rng, options);
            90.0
        }
    };
    for _ in 0..options.transient_count {
        let x = rng.uniform(-0.45 * bounds, 0.45 * bounds);
        let y = rng.uniform(-0.45 * bounds, 0.45 * bounds);
        let length = rng.uniform(2.0, 5.0);
        let beam = rng.uniform(1.0, 2.0);
        let heading = rng.uniform(-core::f64::consts::PI, core::f64::consts::PI);
        builder.add(
            StructureKind::Transient,
            rect_footprint(x, y, length, beam, heading),
            true,
            rng.uniform(0.8, 2.0),
            true,
            true,
            Some(options.transient_presence),
        );
    }
    WorldModel {
        structures: builder.structures,
        bounds,
    }
}

struct WorldBuilder {
    structures: Vec<Structure>,
}

impl WorldBuilder {
    fn new() -> Self {
        WorldBuilder {
            structures: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        kind: StructureKind,
        vertices: Vec<Point2>,
        closed: bool,
        height: f64,
        above: bool,
        below: bool,
        transient_presence: Option<f64>,
    ) {
        let id = self.structures.len() as u32;
        self.structures.push(Structure {
            id,
            kind,
            vertices,
            closed,
            height,
            visible_above_water: above,
            visible_below_water: below,
            transient_presence,
        });
    }
}

fn rect_footprint(cx: f64, cy: f64, length: f64, width: f64, heading: f64) -> Vec<Point2> {
    let (s, c) = libm::sincos(heading);
    let hl = length * 0.5;
    let hw = width * 0.5;
    [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)]
        .iter()
        .map(|&(x, y)| Point2::new(cx + c * x - s * y, cy + s * x + c * y))
        .collect()
}

/// Jittered polyline through the given control points.
fn jittered_wall(rng: &mut Pcg32, control: &[(f64, f64)], jitter: f64) -> Vec<Point2> {
    control
        .iter()
        .map(|&(x, y)| {
            Point2::new(
                x + rng.gaussian_scaled(jitter),
                y + rng.gaussian_scaled(jitter),
            )
        })
        .collect()
}

/// Seawalls with an entrance notch, two unequal piers on pilings, a dolphin
/// cluster, floating docks, and moored ships. Deliberately asymmetric:
/// place recognition needs range profiles that differ between basin legs.
fn harbor(builder: &mut WorldBuilder, rng: &mut Pcg32, options: &WorldOptions) {
    // Basin wall: an irregular wharf line open to the west — slips, bays,
    // and a recessed entrance partway up the east side. Straight parallel
    // walls would make every range profile look alike; real harbor outlines
    // do not.
    let wall = jittered_wall(
        rng,
        &[
            (-60.0, 60.0),
            (-38.0, 60.0),
            (-34.0, 68.0),
            (-12.0, 68.0),
            (-8.0, 58.0),
            (14.0, 56.0),
            (20.0, 64.0),
            (42.0, 64.0),
            (46.0, 54.0),
            (60.0, 52.0),
            (58.0, 34.0),
            (66.0, 28.0),
            (60.0, 16.0),
            (70.0, 12.0),
            (70.0, 4.0),
            (60.0, 0.0),
            (62.0, -16.0),
            (54.0, -22.0),
            (60.0, -34.0),
            (58.0, -52.0),
            (44.0, -56.0),
            (40.0, -66.0),
            (18.0, -64.0),
            (14.0, -56.0),
            (-8.0, -58.0),
            (-12.0, -66.0),
            (-34.0, -64.0),
            (-38.0, -56.0),
            (-60.0, -60.0),
        ],
        0.8,
    );
    builder.add(StructureKind::Seawall, wall, false, 2.5, true, true, None);

    // Two unequal piers jutting west from the east wall. The decks stand
    // above the waterline scan band, so only their pilings are raycast
    // geometry.
    let piers = [
        (-25.0, 25.0, options.pilings_per_pier.max(2)),
        (18.0, 38.0, options.pilings_per_pier.max(2) + 2),
    ];
    for &(pier_y, inner_x, n) in &piers {
        let y = pier_y + rng.gaussian_scaled(1.5);
        let inner_x = inner_x + rng.gaussian_scaled(2.0);
        builder.add(
            StructureKind::PierDeck,
            rect_footprint((60.0 + inner_x) * 0.5, y, 60.0 - inner_x, 6.0, 0.0),
            true,
            1.2,
            false,
            false,
            None,
        );
        let per_row = n.div_ceil(2);
        for row in 0..2 {
            let py = y + if row == 0 { -2.2 } else { 2.2 };
            for k in 0..per_row {
                if row * per_row + k >= n {
                    break;
                }
                let px = inner_x + (60.0 - inner_x) * (k as f64 + 0.5) / per_row as f64
                    + rng.gaussian_scaled(0.3);
                builder.add(
                    StructureKind::Piling,
                    rect_footprint(px, py + rng.gaussian_scaled(0.2), 1.0, 1.0, 0.0),
                    true,
                    2.0,
                    true,
                    true,
                    None,
                );
            }
        }
    }

    // Mooring dolphins: tight piling clusters scattered over the basin.
    // Each cluster's geometry differs, so approach profiles stay distinct.
    let dolphins: [(f64, f64, &[(f64, f64)]); 3] = [
        (28.0, 2.0, &[(0.0, 0.0), (2.4, 0.6), (1.0, 2.2)]),
        (18.0, -35.0, &[(0.0, 0.0), (2.8, 0.0), (1.4, 2.0), (1.4, -2.0)]),
        (14.0, 35.0, &[(0.0, 0.0), (0.4, 2.6)]),
    ];
    for &(cx, cy, offsets) in &dolphins {
        let cx = cx + rng.gaussian_scaled(1.5);
        let cy = cy + rng.gaussian_scaled(1.5);
        for &(ox, oy) in offsets {
            builder.add(
                StructureKind::Piling,
                rect_footprint(cx + ox, cy + oy, 1.0, 1.0, 0.0),
                true,
                2.5,
                true,
                true,
                None,
            );
        }
    }

    // Floating docks along the western part of the north wall: above water
    // only, kept away from the survey corridors so they do not dominate any
    // cross-domain view.
    for k in 0..2 {
        let x = -52.0 + 16.0 * k as f64 + rng.gaussian_scaled(2.0);
        builder.add(
            StructureKind::FloatingDock,
            rect_footprint(x, 52.0 + rng.gaussian_scaled(1.0), 12.0, 3.0, 0.0),
            true,
            0.8,
            true,
            false,
            None,
        );
    }

    // Moored ships: hulls reach well below the waterline. One rides at
    // anchor near the east wall inside the survey corridors; the others sit
    // in the western basin.
    let moorings = [
        (48.0, -8.0, 0.35, 16.0),
        (6.0, -34.0, 0.1, 20.0),
        (-26.0, 28.0, -0.5, 14.0),
    ];
    for &(x, y, heading, length) in &moorings {
        builder.add(
            StructureKind::Ship,
            rect_footprint(
                x + rng.gaussian_scaled(1.5),
                y + rng.gaussian_scaled(1.5),
                length + rng.gaussian_scaled(1.0),
                rng.uniform(4.0, 6.0),
                heading + rng.gaussian_scaled(0.1),
            ),
            true,
            rng.uniform(4.0, 8.0),
            true,
            true,
            None,
        );
    }

    // One submerged rock pile only sonar can see.
    builder.add(
        StructureKind::SubmergedRock,
        rect_footprint(
            rng.uniform(-45.0, -20.0),
            rng.uniform(-10.0, 10.0),
            4.0,
            3.0,
            rng.uniform(-1.0, 1.0),
        ),
        true,
        0.0,
        false,
        true,
        None,
    );
}

/// A row of bridge pylons plus long seawalls on both banks.
fn bridge(builder: &mut WorldBuilder, rng: &mut Pcg32) {
    let pylon_count = 3 + rng.below(2) as usize;
    for k in 0..pylon_count {
        let x = -40.0 + 80.0 * k as f64 / (pylon_count - 1) as f64 + rng.gaussian_scaled(1.5);
        let y = rng.gaussian_scaled(2.0);
        let side = rng.uniform(3.5, 5.0);
        builder.add(
            StructureKind::Pylon,
            rect_footprint(x, y, side, side, rng.uniform(-0.3, 0.3)),
            true,
            12.0,
            true,
            true,
            None,
        );
    }
    let south = jittered_wall(
        rng,
        &[(-80.0, -45.0), (-40.0, -45.0), (0.0, -45.0), (40.0, -45.0), (80.0, -45.0)],
        1.0,
    );
    builder.add(StructureKind::Seawall, south, false, 3.0, true, true, None);
    let north = jittered_wall(
        rng,
        &[(-80.0, 45.0), (-30.0, 45.0), (30.0, 45.0), (80.0, 45.0)],
        1.0,
    );
    builder.add(StructureKind::Seawall, north, false, 3.0, true, true, None);
}

/// A long quay wall, piers with pilings, and a piling-supported footbridge.
fn waterfront(builder: &mut WorldBuilder, rng: &mut Pcg32, options: &WorldOptions) {
    let quay = jittered_wall(
        rng,
        &[
            (-50.0, -70.0),
            (-50.0, -35.0),
            (-50.0, 0.0),
            (-50.0, 35.0),
            (-50.0, 70.0),
        ],
        0.7,
    );
    builder.add(StructureKind::Seawall, quay, false, 2.5, true, true, None);

    for &pier_y in &[-40.0, 0.0, 40.0] {
        let y = pier_y + rng.gaussian_scaled(1.5);
        let reach = rng.uniform(20.0, 30.0);
        builder.add(
            StructureKind::PierDeck,
            rect_footprint(-50.0 + reach * 0.5, y, reach, 5.0, 0.0),
            true,
            1.0,
            true,
            false,
            None,
        );
        let n = options.pilings_per_pier.max(2);
        for k in 0..n {
            let px = -50.0 + reach * (k as f64 + 0.5) / n as f64;
            let py = y + if k % 2 == 0 { -1.8 } else { 1.8 };
            builder.add(
                StructureKind::Piling,
                rect_footprint(px + rng.gaussian_scaled(0.2), py, 0.6, 0.6, 0.0),
                true,
                2.2,
                true,
                true,
                None,
            );
        }
    }

    // Footbridge: a line of small-diameter pilings crossing the basin.
    for k in 0..8 {
        let x = -20.0 + 7.0 * k as f64 + rng.gaussian_scaled(0.3);
        let y = 55.0 + rng.gaussian_scaled(0.3);
        builder.add(
            StructureKind::Piling,
            rect_footprint(x, y, 0.5, 0.5, 0.0),
            true,
            2.5,
            true,
            true,
            None,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(0, WorldTemplate::Bridge);
        let b = generate_world(0, WorldTemplate::Bridge);
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_move_the_pylons() {
        let a = generate_world(0, WorldTemplate::Bridge);
        let b = generate_world(1, WorldTemplate::Bridge);
        let pylons = |w: &WorldModel| -> Vec<Point2> {
            w.structures
                .iter()
                .filter(|s| s.kind == StructureKind::Pylon)
                .map(|s| s.vertices[0])
                .collect()
        };
        assert_ne!(pylons(&a), pylons(&b));
    }

    #[test]
    fn bridge_has_pylons_and_seawall() {
        let w = generate_world(0, WorldTemplate::Bridge);
        assert!(w.count_kind(StructureKind::Pylon) >= 2);
        assert!(w.count_kind(StructureKind::Seawall) >= 1);
        assert!(w.dual_visible_count() >= 3);
    }

    #[test]
    fn harbor_has_dual_visible_pilings() {
        let w = generate_world(0, WorldTemplate::Harbor);
        let dual_pilings = w
            .structures
            .iter()
            .filter(|s| {
                s.kind == StructureKind::Piling && s.visible_above_water && s.visible_below_water
            })
            .count();
        assert!(dual_pilings >= 10, "got {dual_pilings}");
        assert!(w.count_kind(StructureKind::PierDeck) >= 2);
    }

    #[test]
    fn waterfront_has_piers_and_quay() {
        let w = generate_world(3, WorldTemplate::Waterfront);
        assert!(w.count_kind(StructureKind::Seawall) >= 1);
        assert!(w.count_kind(StructureKind::PierDeck) >= 3);
        assert!(w.count_kind(StructureKind::Piling) >= 10);
    }

    #[test]
    fn transients_carry_presence() {
        let w = generate_world_with(
            0,
            WorldTemplate::Harbor,
            &WorldOptions {
                transient_count: 4,
                transient_presence: 0.5,
                ..WorldOptions::default()
            },
        );
        let transients: Vec<&Structure> = w
            .structures
            .iter()
            .filter(|s| s.kind == StructureKind::Transient)
            .collect();
        assert_eq!(transients.len(), 4);
        assert!(transients.iter().all(|s| s.transient_presence == Some(0.5)));
    }
}
