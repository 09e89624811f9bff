use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::standardize::{standardize_intersection, StdIntersection, Turn};
use super::SimError;

/// Number of same-scenario neighbors per agent.
pub const DEFAULT_NEIGHBORS: usize = 4;

fn default_episode_length() -> u32 {
    3600
}

fn default_decision_interval() -> u32 {
    15
}

fn default_saturation() -> f64 {
    1.0
}

/// A road network and its demand, as stored in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: usize,
    pub intersections: Vec<IntersectionSpec>,
    /// Nodes at the network edge where vehicles enter or leave.
    #[serde(default)]
    pub boundaries: Vec<BoundarySpec>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default = "default_episode_length")]
    pub episode_length_s: u32,
    #[serde(default = "default_decision_interval")]
    pub decision_interval_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSpec {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub arms: Vec<ArmSpec>,
    /// Fixed-time plan as `[phase, duration_s]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftc: Option<Vec<(usize, u32)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    /// Direction from the intersection center to the arm, degrees
    /// counter-clockwise from +x.
    pub angle_deg: f64,
    /// Entrance-lane movements present on this arm.
    pub movements: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

/// Directed road segment. Its id is its position in `links`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: u32,
    pub to: u32,
    pub free_flow_s: u32,
    #[serde(default = "default_saturation")]
    pub saturation_vps: f64,
}

/// Movement taken at the downstream end of a route hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteMove {
    Through,
    Left,
    Right,
    /// Leave the network; only valid on the final hop into a boundary.
    Exit,
}

impl RouteMove {
    fn turn(self) -> Option<Turn> {
        match self {
            RouteMove::Through => Some(Turn::Through),
            RouteMove::Left => Some(Turn::Left),
            RouteMove::Right => Some(Turn::Right),
            RouteMove::Exit => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub route: Vec<(usize, RouteMove)>,
    pub rate_vph: f64,
    pub start_s: u32,
    pub end_s: u32,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses and validates scenario JSON.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, SimError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let spec: ScenarioSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        SimError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    Network::new(spec.clone())?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Node {
    Intersection(usize),
    Boundary,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledLink {
    pub to: Node,
    pub free_flow: u32,
    pub saturation: f64,
    /// Approach slot at the downstream intersection.
    pub to_slot: Option<usize>,
}

/// Where a vehicle goes when it reaches the end of a hop's link.
#[derive(Debug, Clone, Copy)]
pub(crate) enum HopEnd {
    Queue { inter: usize, slot: usize, turn: Turn },
    Exit,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hop {
    pub link: usize,
    pub end: HopEnd,
}

/// A validated scenario with standardized intersections and compiled routes.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ScenarioSpec,
    pub std: Vec<StdIntersection>,
    pub(crate) links: Vec<CompiledLink>,
    pub(crate) routes: Vec<Vec<Hop>>,
    pub(crate) route_free_flow: Vec<u32>,
    /// Outgoing link for each (intersection, exit slot).
    pub(crate) out_link: Vec<[Option<usize>; 4]>,
    /// Incoming link for each (intersection, approach slot).
    pub(crate) in_link: Vec<[Option<usize>; 4]>,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Validation(msg.into())
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl Network {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        Self::with_neighbors(spec, DEFAULT_NEIGHBORS)
    }

    pub fn with_neighbors(spec: ScenarioSpec, n_neighbors: usize) -> Result<Self, SimError> {
        if spec.intersections.is_empty() {
            return Err(invalid("no intersections"));
        }
        if spec.decision_interval_s == 0 || spec.episode_length_s == 0 {
            return Err(invalid("episode length and decision interval must be positive"));
        }
        if spec.episode_length_s % spec.decision_interval_s != 0 {
            return Err(invalid(format!(
                "decision interval {} does not divide episode length {}",
                spec.decision_interval_s, spec.episode_length_s
            )));
        }

        let mut nodes: HashMap<u32, (Node, f64, f64)> = HashMap::new();
        for (idx, it) in spec.intersections.iter().enumerate() {
            if nodes
                .insert(it.id, (Node::Intersection(idx), it.x, it.y))
                .is_some()
            {
                return Err(invalid(format!("duplicate node id {}", it.id)));
            }
            if !(2..=4).contains(&it.arms.len()) {
                return Err(invalid(format!(
                    "intersection {} has {} arms (expected 2..=4)",
                    it.id,
                    it.arms.len()
                )));
            }
            for (a, arm) in it.arms.iter().enumerate() {
                if !arm.angle_deg.is_finite() {
                    return Err(invalid(format!("intersection {}: bad arm angle", it.id)));
                }
                for other in &it.arms[..a] {
                    if angle_diff(arm.angle_deg, other.angle_deg) < 1.0 {
                        return Err(invalid(format!(
                            "intersection {}: arm angles {} and {} coincide",
                            it.id, other.angle_deg, arm.angle_deg
                        )));
                    }
                }
                for (t, turn) in arm.movements.iter().enumerate() {
                    if arm.movements[..t].contains(turn) {
                        return Err(invalid(format!(
                            "intersection {}: movement {:?} listed twice on one arm",
                            it.id, turn
                        )));
                    }
                }
            }
        }
        for b in &spec.boundaries {
            if nodes.insert(b.id, (Node::Boundary, b.x, b.y)).is_some() {
                return Err(invalid(format!("duplicate node id {}", b.id)));
            }
        }

        let std = spec
            .intersections
            .iter()
            .map(|it| standardize_intersection(it, &spec, n_neighbors))
            .collect::<Result<Vec<_>, _>>()?;

        // Arm slot of intersection `idx` facing the point (x, y).
        let slot_towards = |idx: usize, x: f64, y: f64, link_id: usize| -> Result<usize, SimError> {
            let it = &spec.intersections[idx];
            let bearing = (y - it.y).atan2(x - it.x).to_degrees();
            let (arm, diff) = it
                .arms
                .iter()
                .enumerate()
                .map(|(a, arm)| (a, angle_diff(arm.angle_deg, bearing)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            if diff >= 45.0 {
                return Err(invalid(format!(
                    "link {link_id}: no arm of intersection {} faces bearing {bearing:.1}",
                    it.id
                )));
            }
            Ok(std[idx].arm_slots[arm])
        };

        let n_int = spec.intersections.len();
        let mut in_link: Vec<[Option<usize>; 4]> = vec![[None; 4]; n_int];
        let mut out_link: Vec<[Option<usize>; 4]> = vec![[None; 4]; n_int];
        let mut links = Vec::with_capacity(spec.links.len());
        let mut link_from_slot = Vec::with_capacity(spec.links.len());
        for (lid, l) in spec.links.iter().enumerate() {
            let &(from, fx, fy) = nodes
                .get(&l.from)
                .ok_or_else(|| invalid(format!("link {lid}: unknown node {}", l.from)))?;
            let &(to, tx, ty) = nodes
                .get(&l.to)
                .ok_or_else(|| invalid(format!("link {lid}: unknown node {}", l.to)))?;
            if l.from == l.to {
                return Err(invalid(format!("link {lid} is a self-loop")));
            }
            if matches!((from, to), (Node::Boundary, Node::Boundary)) {
                return Err(invalid(format!("link {lid} joins two boundary nodes")));
            }
            if l.free_flow_s < 1 {
                return Err(invalid(format!("link {lid}: free_flow_s must be >= 1")));
            }
            if !(l.saturation_vps > 0.0 && l.saturation_vps.is_finite()) {
                return Err(invalid(format!("link {lid}: saturation_vps must be > 0")));
            }
            let to_slot = match to {
                Node::Intersection(j) => {
                    let s = slot_towards(j, fx, fy, lid)?;
                    if in_link[j][s].replace(lid).is_some() {
                        return Err(invalid(format!(
                            "link {lid}: arm already has an incoming link"
                        )));
                    }
                    Some(s)
                }
                Node::Boundary => None,
            };
            let from_slot = match from {
                Node::Intersection(i) => {
                    let s = slot_towards(i, tx, ty, lid)?;
                    if out_link[i][s].replace(lid).is_some() {
                        return Err(invalid(format!(
                            "link {lid}: arm already has an outgoing link"
                        )));
                    }
                    Some((i, s))
                }
                Node::Boundary => None,
            };
            link_from_slot.push(from_slot);
            links.push(CompiledLink {
                to,
                free_flow: l.free_flow_s,
                saturation: l.saturation_vps,
                to_slot,
            });
        }

        let mut routes = Vec::with_capacity(spec.flows.len());
        let mut route_free_flow = Vec::with_capacity(spec.flows.len());
        for (fid, flow) in spec.flows.iter().enumerate() {
            let bad = |msg: String| invalid(format!("flow {fid}: {msg}"));
            if !(flow.rate_vph >= 0.0 && flow.rate_vph.is_finite()) {
                return Err(bad("rate_vph must be >= 0".into()));
            }
            if flow.start_s >= flow.end_s || flow.end_s > spec.episode_length_s {
                return Err(bad(format!(
                    "need start_s < end_s <= {}",
                    spec.episode_length_s
                )));
            }
            if flow.route.is_empty() {
                return Err(bad("empty route".into()));
            }
            let mut hops = Vec::with_capacity(flow.route.len());
            let mut ff = 0u32;
            for (h, &(lid, mv)) in flow.route.iter().enumerate() {
                let link = links
                    .get(lid)
                    .ok_or_else(|| bad(format!("hop {h}: unknown link {lid}")))?;
                ff += link.free_flow;
                let last = h + 1 == flow.route.len();
                let end = match (link.to, mv.turn()) {
                    (Node::Boundary, None) if last => HopEnd::Exit,
                    (Node::Boundary, _) => {
                        return Err(bad(format!(
                            "hop {h}: link {lid} leaves the network; it must be the final hop with movement \"exit\""
                        )))
                    }
                    (Node::Intersection(_), None) => {
                        return Err(bad(format!(
                            "hop {h}: \"exit\" used on link {lid}, which ends at an intersection"
                        )))
                    }
                    (Node::Intersection(j), Some(turn)) => {
                        if last {
                            return Err(bad("route must end on a link into a boundary node".into()));
                        }
                        let (next_lid, _) = flow.route[h + 1];
                        let slot = link.to_slot.unwrap();
                        let expected_exit = (slot + turn.exit_offset()) % 4;
                        match link_from_slot.get(next_lid).copied().flatten() {
                            Some((i, s)) if i == j => {
                                if s != expected_exit {
                                    return Err(bad(format!(
                                        "hop {h}: movement {turn:?} at intersection {} does not lead onto link {next_lid}",
                                        spec.intersections[j].id
                                    )));
                                }
                            }
                            _ => {
                                return Err(bad(format!(
                                    "hop {h}: link {next_lid} does not start where link {lid} ends (disconnected route)"
                                )))
                            }
                        }
                        let present = match turn.movement(slot) {
                            Some(m) => std[j].movement_present(m),
                            None => std[j].right_present[slot],
                        };
                        if !present {
                            return Err(bad(format!(
                                "hop {h}: movement {turn:?} is not present on that arm of intersection {}",
                                spec.intersections[j].id
                            )));
                        }
                        HopEnd::Queue { inter: j, slot, turn }
                    }
                };
                hops.push(Hop { link: lid, end });
            }
            routes.push(hops);
            route_free_flow.push(ff);
        }

        for (idx, it) in spec.intersections.iter().enumerate() {
            if let Some(plan) = &it.ftc {
                if plan.is_empty() {
                    return Err(invalid(format!("intersection {}: empty ftc plan", it.id)));
                }
                for &(phase, dur) in plan {
                    if phase >= super::NUM_PHASES || !std[idx].valid_phases[phase] {
                        return Err(invalid(format!(
                            "intersection {}: ftc phase {phase} is not valid",
                            it.id
                        )));
                    }
                    if dur == 0 || dur % spec.decision_interval_s != 0 {
                        return Err(invalid(format!(
                            "intersection {}: ftc duration {dur} is not a positive multiple of {}",
                            it.id, spec.decision_interval_s
                        )));
                    }
                }
            }
        }

        Ok(Network {
            spec,
            std,
            links,
            routes,
            route_free_flow,
            out_link,
            in_link,
        })
    }

    pub fn num_intersections(&self) -> usize {
        self.std.len()
    }

    pub fn decision_steps(&self) -> usize {
        (self.spec.episode_length_s / self.spec.decision_interval_s) as usize
    }

    /// Intersection index for a file id.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.spec.intersections.iter().position(|x| x.id == id)
    }

    /// Free-flow travel time along a flow's whole route.
    pub fn route_free_flow(&self, flow: usize) -> u32 {
        self.route_free_flow[flow]
    }
}
