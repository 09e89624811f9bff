//! Synthetic grid scenarios.

use std::collections::HashMap;

use super::scenario::{ArmSpec, BoundarySpec, FlowSpec, IntersectionSpec, Link, RouteMove, ScenarioSpec};
use super::standardize::Turn;

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub free_flow_s: u32,
    /// Through demand per row, west to east and east to west (veh/h).
    pub we_vph: f64,
    pub ew_vph: f64,
    /// Through demand per column, north to south and south to north.
    pub ns_vph: f64,
    pub sn_vph: f64,
    /// Left-turning demand entering from each boundary.
    pub left_vph: f64,
    pub episode_length_s: u32,
    pub decision_interval_s: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 3,
            cols: 3,
            spacing_m: 300.0,
            free_flow_s: 20,
            we_vph: 600.0,
            ew_vph: 600.0,
            ns_vph: 600.0,
            sn_vph: 600.0,
            left_vph: 0.0,
            episode_length_s: 3600,
            decision_interval_s: 15,
        }
    }
}

const BOUNDARY_BASE: u32 = 10_000;

/// Builds a `rows × cols` grid of 4-arm intersections with boundary
/// entries on every edge. Intersection `(r, c)` has id `r * cols + c`;
/// row 0 is the northernmost.
pub fn grid(scenario_id: usize, cfg: &GridConfig) -> ScenarioSpec {
    let (rows, cols, d) = (cfg.rows, cfg.cols, cfg.spacing_m);
    let iid = |r: usize, c: usize| (r * cols + c) as u32;
    let mut pos: HashMap<u32, (f64, f64)> = HashMap::new();

    let mut intersections = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64 * d, -(r as f64) * d);
            pos.insert(iid(r, c), (x, y));
            intersections.push(IntersectionSpec {
                id: iid(r, c),
                x,
                y,
                arms: [0.0, 90.0, 180.0, 270.0]
                    .iter()
                    .map(|&angle_deg| ArmSpec {
                        angle_deg,
                        movements: vec![Turn::Through, Turn::Left, Turn::Right],
                    })
                    .collect(),
                ftc: None,
            });
        }
    }

    let mut boundaries = Vec::new();
    let mut add_boundary = |x: f64, y: f64, pos: &mut HashMap<u32, (f64, f64)>| {
        let id = BOUNDARY_BASE + boundaries.len() as u32;
        boundaries.push(BoundarySpec { id, x, y });
        pos.insert(id, (x, y));
        id
    };
    let mut west = Vec::new();
    let mut east = Vec::new();
    for r in 0..rows {
        let y = -(r as f64) * d;
        west.push(add_boundary(-d, y, &mut pos));
        east.push(add_boundary(cols as f64 * d, y, &mut pos));
    }
    let mut north = Vec::new();
    let mut south = Vec::new();
    for c in 0..cols {
        let x = c as f64 * d;
        north.push(add_boundary(x, d, &mut pos));
        south.push(add_boundary(x, -(rows as f64) * d, &mut pos));
    }

    let mut links = Vec::new();
    let mut link_id: HashMap<(u32, u32), usize> = HashMap::new();
    let mut add_link = |a: u32, b: u32| {
        link_id.insert((a, b), links.len());
        links.push(Link {
            from: a,
            to: b,
            free_flow_s: cfg.free_flow_s,
            saturation_vps: 1.0,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                add_link(iid(r, c), iid(r, c + 1));
                add_link(iid(r, c + 1), iid(r, c));
            }
            if r + 1 < rows {
                add_link(iid(r, c), iid(r + 1, c));
                add_link(iid(r + 1, c), iid(r, c));
            }
        }
    }
    for r in 0..rows {
        add_link(west[r], iid(r, 0));
        add_link(iid(r, 0), west[r]);
        add_link(east[r], iid(r, cols - 1));
        add_link(iid(r, cols - 1), east[r]);
    }
    for c in 0..cols {
        add_link(north[c], iid(0, c));
        add_link(iid(0, c), north[c]);
        add_link(south[c], iid(rows - 1, c));
        add_link(iid(rows - 1, c), south[c]);
    }

    let route = |nodes: &[u32]| -> Vec<(usize, RouteMove)> {
        let mut hops = Vec::new();
        for w in 0..nodes.len() - 1 {
            let lid = link_id[&(nodes[w], nodes[w + 1])];
            let mv = if w + 2 == nodes.len() {
                RouteMove::Exit
            } else {
                let (px, py) = pos[&nodes[w]];
                let (cx, cy) = pos[&nodes[w + 1]];
                let (nx, ny) = pos[&nodes[w + 2]];
                let arm_in = (py - cy).atan2(px - cx).to_degrees();
                let arm_out = (ny - cy).atan2(nx - cx).to_degrees();
                let off = (((arm_out - arm_in) / 90.0).round() as i64).rem_euclid(4);
                match off {
                    1 => RouteMove::Right,
                    2 => RouteMove::Through,
                    3 => RouteMove::Left,
                    _ => unreachable!("U-turn in synthetic route"),
                }
            };
            hops.push((lid, mv));
        }
        hops
    };

    let end = cfg.episode_length_s;
    let mut flows = Vec::new();
    let mut add_flow = |nodes: Vec<u32>, rate: f64| {
        if rate > 0.0 {
            flows.push(FlowSpec {
                route: route(&nodes),
                rate_vph: rate,
                start_s: 0,
                end_s: end,
            });
        }
    };
    for r in 0..rows {
        let row: Vec<u32> = (0..cols).map(|c| iid(r, c)).collect();
        let mut we = vec![west[r]];
        we.extend(&row);
        we.push(east[r]);
        add_flow(we.clone(), cfg.we_vph);
        we.reverse();
        add_flow(we, cfg.ew_vph);
    }
    for c in 0..cols {
        let col: Vec<u32> = (0..rows).map(|r| iid(r, c)).collect();
        let mut ns = vec![north[c]];
        ns.extend(&col);
        ns.push(south[c]);
        add_flow(ns.clone(), cfg.ns_vph);
        ns.reverse();
        add_flow(ns, cfg.sn_vph);
    }
    if cfg.left_vph > 0.0 {
        // Enter from the west and turn left (north) at the first column.
        for r in 0..rows {
            let mut nodes = vec![west[r]];
            nodes.extend((0..=r).rev().map(|rr| iid(rr, 0)));
            nodes.push(north[0]);
            add_flow(nodes, cfg.left_vph);
        }
        // Enter from the north and turn left (east) at the first row.
        for c in 0..cols {
            let mut nodes = vec![north[c]];
            nodes.extend((c..cols).map(|cc| iid(0, cc)));
            nodes.push(east[0]);
            add_flow(nodes, cfg.left_vph);
        }
    }

    ScenarioSpec {
        scenario_id,
        intersections,
        boundaries,
        links,
        flows,
        episode_length_s: cfg.episode_length_s,
        decision_interval_s: cfg.decision_interval_s,
    }
}
