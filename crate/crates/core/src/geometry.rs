//! Intersection layout, the twelve fixed vehicle paths and conflict classification.
//!
//! World frame: origin at the intersection center, `+x` towards the right
//! approach, `+y` towards the up approach. Traffic keeps right with one lane
//! per approach, so every lane centerline sits half a lane width right of its
//! road axis.
//!
//! Paths are built once for a vehicle entering from the bottom (`D`) and then
//! rotated onto the other three approaches.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intersection approach. Ordered counter-clockwise starting at the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    D,
    R,
    U,
    L,
}

impl Direction {
    const CCW: [Direction; 4] = [Direction::D, Direction::R, Direction::U, Direction::L];

    fn ccw_index(self) -> usize {
        match self {
            Direction::D => 0,
            Direction::R => 1,
            Direction::U => 2,
            Direction::L => 3,
        }
    }

    /// Rotation taking the canonical `D` approach onto this one.
    pub fn rotation(self) -> f64 {
        self.ccw_index() as f64 * FRAC_PI_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    Right,
    Straight,
    Left,
}

impl Maneuver {
    fn quarter_turns(self) -> usize {
        match self {
            Maneuver::Right => 1,
            Maneuver::Straight => 2,
            Maneuver::Left => 3,
        }
    }
}

/// The twelve entrance→exit vehicle types, numbered as in the reference table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleType {
    DR = 1,
    DU = 2,
    DL = 3,
    RU = 4,
    RL = 5,
    RD = 6,
    LD = 7,
    LR = 8,
    LU = 9,
    UL = 10,
    UD = 11,
    UR = 12,
}

impl VehicleType {
    pub const ALL: [VehicleType; 12] = [
        VehicleType::DR,
        VehicleType::DU,
        VehicleType::DL,
        VehicleType::RU,
        VehicleType::RL,
        VehicleType::RD,
        VehicleType::LD,
        VehicleType::LR,
        VehicleType::LU,
        VehicleType::UL,
        VehicleType::UD,
        VehicleType::UR,
    ];

    /// The eight modes controlled in the experiment, in state-concatenation order.
    pub const EXPERIMENT_MODES: [VehicleType; 8] = [
        VehicleType::DR,
        VehicleType::DL,
        VehicleType::RU,
        VehicleType::RL,
        VehicleType::LD,
        VehicleType::LU,
        VehicleType::UL,
        VehicleType::UD,
    ];

    pub fn number(self) -> usize {
        self as usize
    }

    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn entrance(self) -> Direction {
        use Direction::*;
        use VehicleType::*;
        match self {
            DR | DU | DL => D,
            RU | RL | RD => R,
            LD | LR | LU => L,
            UL | UD | UR => U,
        }
    }

    pub fn exit(self) -> Direction {
        use Direction::*;
        use VehicleType::*;
        match self {
            RD | LD | UD => D,
            DR | LR | UR => R,
            DU | RU | LU => U,
            DL | RL | UL => L,
        }
    }

    pub fn maneuver(self) -> Maneuver {
        let turns = (self.exit().ccw_index() + 4 - self.entrance().ccw_index()) % 4;
        match turns {
            1 => Maneuver::Right,
            2 => Maneuver::Straight,
            3 => Maneuver::Left,
            _ => unreachable!("entrance equals exit"),
        }
    }

    pub fn from_entrance_maneuver(entrance: Direction, maneuver: Maneuver) -> VehicleType {
        let exit = Direction::CCW[(entrance.ccw_index() + maneuver.quarter_turns()) % 4];
        *VehicleType::ALL
            .iter()
            .find(|t| t.entrance() == entrance && t.exit() == exit)
            .expect("every entrance/exit pair with distinct ends is a vehicle type")
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for VehicleType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VehicleType::ALL
            .iter()
            .copied()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown vehicle type `{s}`"))
    }
}

/// Intersection dimensions, all in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntersectionLayout {
    /// Distance from the intersection center to where approach lanes start.
    pub zone_radius: f64,
    pub lane_width: f64,
    pub right_turn_radius: f64,
    pub left_turn_radius: f64,
    /// Arc-length spacing of the sampled centerline.
    pub resolution: f64,
}

impl Default for IntersectionLayout {
    fn default() -> Self {
        Self {
            zone_radius: 50.0,
            lane_width: 3.75,
            right_turn_radius: 5.625,
            left_turn_radius: 9.375,
            resolution: 0.1,
        }
    }
}

impl IntersectionLayout {
    /// Half-width of the square conflict box; straight paths split there.
    pub fn box_half_width(&self) -> f64 {
        self.right_turn_radius + self.lane_width / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("zone_radius", self.zone_radius),
            ("lane_width", self.lane_width),
            ("right_turn_radius", self.right_turn_radius),
            ("left_turn_radius", self.left_turn_radius),
            ("resolution", self.resolution),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidLayout(format!("{name} must be positive, got {value}")));
            }
        }
        let half = self.lane_width / 2.0;
        if self.left_turn_radius <= self.lane_width {
            return Err(Error::InvalidLayout(format!(
                "left_turn_radius {} does not clear the opposing lane (lane_width {})",
                self.left_turn_radius, self.lane_width
            )));
        }
        if self.right_turn_radius >= self.left_turn_radius {
            return Err(Error::InvalidLayout(
                "right_turn_radius must be smaller than left_turn_radius".into(),
            ));
        }
        if self.zone_radius - half - self.right_turn_radius <= 0.0
            || self.zone_radius + half - self.left_turn_radius <= 0.0
        {
            return Err(Error::InvalidLayout(format!(
                "turn radii leave no straight approach inside zone_radius {}",
                self.zone_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Unwrapped heading, radians counter-clockwise from `+x`.
    pub heading: f64,
}

impl Pose {
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn rotated(self, angle: f64) -> Pose {
        let (s, c) = angle.sin_cos();
        Pose {
            x: self.x * c - self.y * s,
            y: self.x * s + self.y * c,
            heading: self.heading + angle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Line {
        x: f64,
        y: f64,
        heading: f64,
        length: f64,
    },
    Arc {
        cx: f64,
        cy: f64,
        radius: f64,
        start_angle: f64,
        start_heading: f64,
        /// +1 counter-clockwise (left), -1 clockwise (right).
        turn: f64,
        length: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } | Segment::Arc { length, .. } => length,
        }
    }

    fn pose(&self, s: f64) -> Pose {
        match *self {
            Segment::Line { x, y, heading, .. } => Pose {
                x: x + s * heading.cos(),
                y: y + s * heading.sin(),
                heading,
            },
            Segment::Arc {
                cx,
                cy,
                radius,
                start_angle,
                start_heading,
                turn,
                ..
            } => {
                let swept = turn * s / radius;
                let angle = start_angle + swept;
                Pose {
                    x: cx + radius * angle.cos(),
                    y: cy + radius * angle.sin(),
                    heading: start_heading + swept,
                }
            }
        }
    }
}

/// A fixed vehicle path through the intersection zone.
#[derive(Debug, Clone)]
pub struct Path {
    pub vehicle_type: VehicleType,
    pub total_length: f64,
    /// Arc length from zone entry to the path's center point.
    pub center_offset: f64,
    /// Centerline poses at arc progress `k * resolution`, `k = 0..`.
    pub sampled_centerline: Vec<Pose>,
    pub resolution: f64,
    segments: Vec<Segment>,
    rotation: f64,
}

impl Path {
    fn new(layout: &IntersectionLayout, vehicle_type: VehicleType) -> Path {
        let segments = canonical_segments(layout, vehicle_type.maneuver());
        let total_length: f64 = segments.iter().map(Segment::length).sum();
        let mut path = Path {
            vehicle_type,
            total_length,
            center_offset: total_length / 2.0,
            sampled_centerline: Vec::new(),
            resolution: layout.resolution,
            segments,
            rotation: vehicle_type.entrance().rotation(),
        };
        let samples = (total_length / layout.resolution + 1e-9).floor() as usize;
        path.sampled_centerline = (0..=samples)
            .map(|k| path.pose_at_progress(k as f64 * layout.resolution))
            .collect();
        path
    }

    /// Smallest admissible `d` (end of the exit lane).
    pub fn d_min(&self) -> f64 {
        self.center_offset - self.total_length
    }

    /// Largest admissible `d` (zone entry).
    pub fn d_max(&self) -> f64 {
        self.center_offset
    }

    /// Exact centerline pose at arc progress `p` from zone entry, clamped to the path.
    pub fn pose_at_progress(&self, p: f64) -> Pose {
        let mut remaining = p.clamp(0.0, self.total_length);
        let last = self.segments.len() - 1;
        for (i, seg) in self.segments.iter().enumerate() {
            if remaining <= seg.length() || i == last {
                return seg.pose(remaining.min(seg.length())).rotated(self.rotation);
            }
            remaining -= seg.length();
        }
        unreachable!("path has at least one segment")
    }

    /// Pose of a vehicle whose signed distance to the path center is `d`.
    pub fn position(&self, d: f64) -> Result<Pose> {
        const TOL: f64 = 1e-9;
        if !d.is_finite() || d > self.d_max() + TOL || d < self.d_min() - TOL {
            return Err(Error::OffPath {
                vehicle: self.vehicle_type,
                d,
                min: self.d_min(),
                max: self.d_max(),
            });
        }
        Ok(self.pose_at_progress(self.center_offset - d))
    }
}

fn canonical_segments(layout: &IntersectionLayout, maneuver: Maneuver) -> Vec<Segment> {
    let z = layout.zone_radius;
    let half = layout.lane_width / 2.0;
    let north = FRAC_PI_2;
    match maneuver {
        Maneuver::Straight => {
            let b = layout.box_half_width();
            vec![
                Segment::Line { x: half, y: -z, heading: north, length: z - b },
                Segment::Line { x: half, y: -b, heading: north, length: 2.0 * b },
                Segment::Line { x: half, y: b, heading: north, length: z - b },
            ]
        }
        Maneuver::Right => {
            let r = layout.right_turn_radius;
            let straight = z - half - r;
            vec![
                Segment::Line { x: half, y: -z, heading: north, length: straight },
                Segment::Arc {
                    cx: half + r,
                    cy: -half - r,
                    radius: r,
                    start_angle: PI,
                    start_heading: north,
                    turn: -1.0,
                    length: r * FRAC_PI_2,
                },
                Segment::Line { x: half + r, y: -half, heading: 0.0, length: straight },
            ]
        }
        Maneuver::Left => {
            let r = layout.left_turn_radius;
            let straight = z + half - r;
            vec![
                Segment::Line { x: half, y: -z, heading: north, length: straight },
                Segment::Arc {
                    cx: half - r,
                    cy: half - r,
                    radius: r,
                    start_angle: 0.0,
                    start_heading: north,
                    turn: 1.0,
                    length: r * FRAC_PI_2,
                },
                Segment::Line { x: half - r, y: half, heading: PI, length: straight },
            ]
        }
    }
}

/// One path per vehicle type, in type-number order.
pub fn build_paths(layout: &IntersectionLayout) -> Result<Vec<Path>> {
    layout.validate()?;
    Ok(VehicleType::ALL.iter().map(|&t| Path::new(layout, t)).collect())
}

/// Immutable layout plus its twelve paths; shared read-only across workers.
#[derive(Debug, Clone)]
pub struct Intersection {
    pub layout: IntersectionLayout,
    paths: Vec<Path>,
}

impl Intersection {
    pub fn new(layout: IntersectionLayout) -> Result<Self> {
        let paths = build_paths(&layout)?;
        Ok(Self { layout, paths })
    }

    pub fn path(&self, t: VehicleType) -> &Path {
        &self.paths[t.index()]
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Crossing,
    Converging,
    Diverging,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRelation {
    pub pair: (VehicleType, VehicleType),
    pub kind: ConflictKind,
    /// Path progress of each vehicle at the closest approach of the two centerlines.
    pub conflict_arc_positions: Option<(f64, f64)>,
    pub min_distance: f64,
}

/// Classifies the interaction between two distinct vehicle types.
///
/// Panics if `a == b`.
pub fn classify_conflict(a: VehicleType, b: VehicleType, paths: &[Path]) -> ConflictRelation {
    assert_ne!(a, b, "a vehicle type does not conflict with itself");
    if a > b {
        let mut rel = classify_conflict(b, a, paths);
        rel.pair = (a, b);
        rel.conflict_arc_positions = rel.conflict_arc_positions.map(|(pa, pb)| (pb, pa));
        return rel;
    }
    let path_a = &paths[a.index()];
    let path_b = &paths[b.index()];
    let (min_distance, pa, pb) = closest_approach(path_a, path_b);
    let lane_width = lane_width_of(paths);
    let kind = if a.entrance() == b.entrance() {
        ConflictKind::Diverging
    } else if a.exit() == b.exit() {
        ConflictKind::Converging
    } else if min_distance < lane_width - 1e-6 {
        ConflictKind::Crossing
    } else {
        ConflictKind::None
    };
    let conflict_arc_positions = match kind {
        ConflictKind::Crossing | ConflictKind::Converging => Some((pa, pb)),
        _ => None,
    };
    ConflictRelation {
        pair: (a, b),
        kind,
        conflict_arc_positions,
        min_distance,
    }
}

// Lateral offset between the DU and UD lanes equals one lane width.
fn lane_width_of(paths: &[Path]) -> f64 {
    let du = paths[VehicleType::DU.index()].pose_at_progress(0.0);
    let ud = paths[VehicleType::UD.index()].pose_at_progress(0.0);
    (du.x - ud.x).abs()
}

/// Minimum centerline distance and the progress pair attaining it.
///
/// Grid search over the samples picks the first pair within 1e-9 m of the
/// global minimum, then refines over the adjacent polyline segments.
fn closest_approach(a: &Path, b: &Path) -> (f64, f64, f64) {
    let sa = &a.sampled_centerline;
    let sb = &b.sampled_centerline;
    let mut best = f64::INFINITY;
    for pa in sa {
        for pb in sb {
            let d2 = (pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2);
            if d2 < best {
                best = d2;
            }
        }
    }
    let threshold = (best.sqrt() + 1e-9).powi(2);
    let (mut bi, mut bj) = (0, 0);
    'outer: for (i, pa) in sa.iter().enumerate() {
        for (j, pb) in sb.iter().enumerate() {
            if (pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2) <= threshold {
                bi = i;
                bj = j;
                break 'outer;
            }
        }
    }

    let res_a = a.resolution;
    let res_b = b.resolution;
    let mut out = (sa[bi].distance(&sb[bj]), bi as f64 * res_a, bj as f64 * res_b);
    for i0 in bi.saturating_sub(1)..=bi.min(sa.len() - 2) {
        for j0 in bj.saturating_sub(1)..=bj.min(sb.len() - 2) {
            let (dist, s, t) = segment_distance(&sa[i0], &sa[i0 + 1], &sb[j0], &sb[j0 + 1]);
            if dist < out.0 - 1e-12 {
                out = (dist, (i0 as f64 + s) * res_a, (j0 as f64 + t) * res_b);
            }
        }
    }
    out
}

/// Closest points between segments `p0p1` and `q0q1`; returns (distance, s, t).
fn segment_distance(p0: &Pose, p1: &Pose, q0: &Pose, q1: &Pose) -> (f64, f64, f64) {
    let d1 = (p1.x - p0.x, p1.y - p0.y);
    let d2 = (q1.x - q0.x, q1.y - q0.y);
    let r = (p0.x - q0.x, p0.y - q0.y);
    let a = d1.0 * d1.0 + d1.1 * d1.1;
    let e = d2.0 * d2.0 + d2.1 * d2.1;
    let f = d2.0 * r.0 + d2.1 * r.1;
    let c = d1.0 * r.0 + d1.1 * r.1;
    let b = d1.0 * d2.0 + d1.1 * d2.1;
    let denom = a * e - b * b;
    let mut s = if denom > 1e-15 {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    let px = p0.x + d1.0 * s;
    let py = p0.y + d1.1 * s;
    let qx = q0.x + d2.0 * t;
    let qy = q0.y + d2.1 * t;
    ((px - qx).hypot(py - qy), s, t)
}
