use serde::{Deserialize, Serialize};

use super::scenario::{IntersectionSpec, ScenarioSpec};
use super::SimError;

/// Number of canonical controlled movements (through + left on 4 arms).
pub const MOVEMENTS: usize = 8;
/// Size of the action space.
pub const NUM_PHASES: usize = 8;
/// Raw observation length: phase one-hot followed by per-movement queues.
pub const OBS_DIM: usize = NUM_PHASES + MOVEMENTS;

/// Turn taken at an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Through,
    Left,
    Right,
}

impl Turn {
    /// Slot offset (counter-clockwise) from the approach arm to the exit arm,
    /// right-hand traffic.
    pub fn exit_offset(self) -> usize {
        match self {
            Turn::Right => 1,
            Turn::Through => 2,
            Turn::Left => 3,
        }
    }

    /// Canonical movement index for a controlled turn on `slot`.
    pub fn movement(self, slot: usize) -> Option<usize> {
        match self {
            Turn::Through => Some(2 * slot),
            Turn::Left => Some(2 * slot + 1),
            Turn::Right => None,
        }
    }
}

/// Canonical 8-phase table. Slots are counter-clockwise relative arm
/// positions 0..4; movement `2s` is through on slot `s`, `2s + 1` is left.
///
/// Phases 0-1 pair opposing throughs, 2-3 opposing lefts, 4-7 release
/// through and left of a single arm.
pub const PHASE_TABLE: [[usize; 2]; NUM_PHASES] = [
    [0, 4],
    [2, 6],
    [1, 5],
    [3, 7],
    [0, 1],
    [2, 3],
    [4, 5],
    [6, 7],
];

/// An entry of a neighbor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighbor {
    /// Intersection index within the scenario.
    Intersection(usize),
    /// Padding; contributes the agent's own observation.
    SelfPad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdIntersection {
    pub id: u32,
    /// Relative slot assigned to each physical arm, in file order.
    pub arm_slots: Vec<usize>,
    /// Physical arm index serving each slot.
    pub slot_arm: [Option<usize>; 4],
    /// Physical arm serving each canonical movement, `None` when absent.
    pub movement_map: [Option<usize>; MOVEMENTS],
    pub right_present: [bool; 4],
    pub valid_phases: [bool; NUM_PHASES],
    pub neighbor_ids: Vec<Neighbor>,
}

impl StdIntersection {
    pub fn movement_present(&self, movement: usize) -> bool {
        self.movement_map[movement].is_some()
    }

    pub fn valid_phase_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_PHASES).filter(|&p| self.valid_phases[p])
    }
}

fn norm_deg(a: f64) -> f64 {
    a.rem_euclid(360.0)
}

/// Counter-clockwise angular distance from `a` to `b`, in [0, 360).
fn ccw_gap(a: f64, b: f64) -> f64 {
    norm_deg(b - a)
}

/// Assigns each arm a relative slot. The anchor (slot 0) is the arm that
/// follows the widest counter-clockwise gap, ties going to the smallest
/// angle, so missing arms always land on the highest slots. Remaining arms
/// take the strictly increasing slots that best match their offset from
/// the anchor.
pub(crate) fn assign_slots(angles: &[f64]) -> Vec<usize> {
    let n = angles.len();
    debug_assert!((1..=4).contains(&n));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        norm_deg(angles[a])
            .partial_cmp(&norm_deg(angles[b]))
            .unwrap()
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = order.iter().map(|&k| norm_deg(angles[k])).collect();

    let mut anchor = 0;
    let mut best_gap = -1.0;
    for pos in 0..n {
        let prev = sorted[(pos + n - 1) % n];
        let gap = if n == 1 { 360.0 } else { ccw_gap(prev, sorted[pos]) };
        if gap > best_gap + 1e-9 {
            best_gap = gap;
            anchor = pos;
        }
    }

    let rel: Vec<f64> = (0..n)
        .map(|step| ccw_gap(sorted[anchor], sorted[(anchor + step) % n]))
        .collect();

    // slot 0 fixed for the anchor; choose the rest from {1,2,3}
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..8 {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut slots = vec![0usize];
        slots.extend((1..4).filter(|s| mask & (1 << (s - 1)) != 0));
        let cost: f64 = slots
            .iter()
            .zip(&rel)
            .map(|(&s, &r)| (r - 90.0 * s as f64).powi(2))
            .sum();
        if best.as_ref().map_or(true, |(c, _)| cost < *c - 1e-9) {
            best = Some((cost, slots));
        }
    }
    let slots = best.expect("at least one slot layout").1;

    let mut out = vec![0; n];
    for step in 0..n {
        out[order[(anchor + step) % n]] = slots[step];
    }
    out
}

/// Maps an intersection onto the canonical 4-slot layout and computes its
/// phase mask and neighbor list.
pub fn standardize_intersection(
    spec: &IntersectionSpec,
    all: &ScenarioSpec,
    n_neighbors: usize,
) -> Result<StdIntersection, SimError> {
    let angles: Vec<f64> = spec.arms.iter().map(|a| a.angle_deg).collect();
    let arm_slots = assign_slots(&angles);

    let mut slot_arm = [None; 4];
    let mut movement_map = [None; MOVEMENTS];
    let mut right_present = [false; 4];
    for (arm_idx, arm) in spec.arms.iter().enumerate() {
        let slot = arm_slots[arm_idx];
        slot_arm[slot] = Some(arm_idx);
        for turn in &arm.movements {
            match turn.movement(slot) {
                Some(m) => movement_map[m] = Some(arm_idx),
                None => right_present[slot] = true,
            }
        }
    }

    let mut valid_phases = [false; NUM_PHASES];
    for (p, pair) in PHASE_TABLE.iter().enumerate() {
        valid_phases[p] = pair.iter().any(|&m| movement_map[m].is_some());
    }

    let neighbor_ids = nearest_neighbors(all, spec.id, n_neighbors)?;

    Ok(StdIntersection {
        id: spec.id,
        arm_slots,
        slot_arm,
        movement_map,
        right_present,
        valid_phases,
        neighbor_ids,
    })
}

/// The `n` intersections closest to intersection `id` (excluding itself),
/// ties broken by ascending id, padded with [`Neighbor::SelfPad`].
pub fn nearest_neighbors(
    scenario: &ScenarioSpec,
    id: u32,
    n: usize,
) -> Result<Vec<Neighbor>, SimError> {
    let me = scenario
        .intersections
        .iter()
        .position(|x| x.id == id)
        .ok_or(SimError::UnknownIntersection(id))?;
    let (x0, y0) = (scenario.intersections[me].x, scenario.intersections[me].y);

    let mut cands: Vec<(f64, u32, usize)> = scenario
        .intersections
        .iter()
        .enumerate()
        .filter(|(idx, _)| *idx != me)
        .map(|(idx, it)| (((it.x - x0).powi(2) + (it.y - y0).powi(2)), it.id, idx))
        .collect();
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut out: Vec<Neighbor> = cands
        .into_iter()
        .take(n)
        .map(|(_, _, idx)| Neighbor::Intersection(idx))
        .collect();
    out.resize(n, Neighbor::SelfPad);
    Ok(out)
}
