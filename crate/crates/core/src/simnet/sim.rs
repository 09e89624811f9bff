use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{HopEnd, Network, Node};
use super::standardize::{Turn, MOVEMENTS, NUM_PHASES, OBS_DIM, PHASE_TABLE};
use super::SimError;
use crate::evalkit::VehicleLog;

/// Penalty per stopped vehicle in the reward.
pub const REWARD_WEIGHT: f64 = 0.25;

/// Per-intersection raw observation: phase one-hot then queue counts of the
/// 8 canonical movements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sum of the queue-count entries.
    pub fn stopped(&self) -> f64 {
        self.0[NUM_PHASES..].iter().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// When set, each departure is delayed by a uniform fraction of its
    /// flow headway drawn from this seed.
    pub spawn_jitter_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VehicleCounts {
    pub spawned: usize,
    pub in_transit: usize,
    pub queued: usize,
    pub finished: usize,
}

#[derive(Debug, Clone)]
struct Vehicle {
    flow: usize,
    hop: usize,
    spawn: u32,
    queued_since: Option<u32>,
    wait: u32,
    finish: Option<u32>,
}

const QUEUES_PER_INTERSECTION: usize = 12;

fn queue_index(slot: usize, turn: Turn) -> usize {
    slot * 3
        + match turn {
            Turn::Through => 0,
            Turn::Left => 1,
            Turn::Right => 2,
        }
}

fn movement_queue(movement: usize) -> usize {
    (movement / 2) * 3 + movement % 2
}

/// Mutable simulation state for one scenario.
#[derive(Debug, Clone)]
pub struct SimState {
    net: Arc<Network>,
    clock: u32,
    schedule: Vec<(u32, usize)>,
    cursor: usize,
    vehicles: Vec<Vehicle>,
    transit: Vec<VecDeque<(u32, usize)>>,
    queues: Vec<[VecDeque<usize>; QUEUES_PER_INTERSECTION]>,
    credit: Vec<[f64; QUEUES_PER_INTERSECTION]>,
    saturation: Vec<[f64; 4]>,
    phase: Vec<usize>,
}

impl SimState {
    pub fn new(net: Arc<Network>) -> Self {
        Self::with_options(net, &SimOptions::default())
    }

    pub fn with_options(net: Arc<Network>, opts: &SimOptions) -> Self {
        let mut jitter = opts.spawn_jitter_seed.map(ChaCha8Rng::seed_from_u64);
        let mut schedule = Vec::new();
        for (f, flow) in net.spec.flows.iter().enumerate() {
            if flow.rate_vph <= 0.0 {
                continue;
            }
            let headway = 3600.0 / flow.rate_vph;
            let mut j = 0u64;
            loop {
                let t = flow.start_s as f64 + j as f64 * headway;
                if t >= flow.end_s as f64 {
                    break;
                }
                let sec = t.ceil() as u32;
                if sec < flow.end_s {
                    // jitter moves a departure but never out of its window
                    let sec = match jitter.as_mut() {
                        Some(rng) => ((t + rng.gen::<f64>() * headway).ceil() as u32).min(flow.end_s - 1),
                        None => sec,
                    };
                    schedule.push((sec, f));
                }
                j += 1;
            }
        }
        schedule.sort_by_key(|&(sec, _)| sec);

        let n = net.num_intersections();
        let saturation = (0..n)
            .map(|i| {
                let mut s = [0.0; 4];
                for (slot, l) in net.in_link[i].iter().enumerate() {
                    if let Some(l) = l {
                        s[slot] = net.links[*l].saturation;
                    }
                }
                s
            })
            .collect();
        let phase = net
            .std
            .iter()
            .map(|s| s.valid_phase_indices().next().unwrap_or(0))
            .collect();

        SimState {
            clock: 0,
            schedule,
            cursor: 0,
            vehicles: Vec::new(),
            transit: vec![VecDeque::new(); net.links.len()],
            queues: (0..n).map(|_| Default::default()).collect(),
            credit: vec![[0.0; QUEUES_PER_INTERSECTION]; n],
            saturation,
            phase,
            net,
        }
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.net
    }

    pub fn clock(&self) -> u32 {
        self.clock
    }

    pub fn phase(&self, i: usize) -> usize {
        self.phase[i]
    }

    pub fn num_intersections(&self) -> usize {
        self.phase.len()
    }

    /// Installs a joint action after checking every phase is valid.
    pub fn set_phases(&mut self, actions: &[usize]) -> Result<(), SimError> {
        if actions.len() != self.phase.len() {
            return Err(SimError::ActionCount {
                expected: self.phase.len(),
                got: actions.len(),
            });
        }
        for (i, &a) in actions.iter().enumerate() {
            if a >= NUM_PHASES || !self.net.std[i].valid_phases[a] {
                return Err(SimError::InvalidPhase {
                    intersection: i,
                    phase: a,
                });
            }
        }
        self.phase.copy_from_slice(actions);
        Ok(())
    }

    /// Advances one simulated second: spawn, arrive at queues, discharge.
    pub fn advance_second(&mut self) {
        let now = self.clock;
        let net = Arc::clone(&self.net);

        while self.cursor < self.schedule.len() && self.schedule[self.cursor].0 <= now {
            let flow = self.schedule[self.cursor].1;
            self.cursor += 1;
            let vid = self.vehicles.len();
            self.vehicles.push(Vehicle {
                flow,
                hop: 0,
                spawn: now,
                queued_since: None,
                wait: 0,
                finish: None,
            });
            let link = net.routes[flow][0].link;
            self.transit[link].push_back((now + net.links[link].free_flow, vid));
        }

        for link in 0..self.transit.len() {
            while let Some(&(arrival, vid)) = self.transit[link].front() {
                if arrival > now {
                    break;
                }
                self.transit[link].pop_front();
                let v = &mut self.vehicles[vid];
                match net.routes[v.flow][v.hop].end {
                    HopEnd::Exit => v.finish = Some(now),
                    HopEnd::Queue { inter, slot, turn } => {
                        v.queued_since = Some(now);
                        self.queues[inter][queue_index(slot, turn)].push_back(vid);
                    }
                }
            }
        }

        for i in 0..self.queues.len() {
            let mut served = [false; QUEUES_PER_INTERSECTION];
            for &m in &PHASE_TABLE[self.phase[i]] {
                served[movement_queue(m)] = true;
            }
            for slot in 0..4 {
                served[queue_index(slot, Turn::Right)] = true;
            }
            for q in 0..QUEUES_PER_INTERSECTION {
                if !served[q] {
                    self.credit[i][q] = 0.0;
                    continue;
                }
                let rate = self.saturation[i][q / 3];
                let c = &mut self.credit[i][q];
                *c = (*c + rate).min(rate.max(1.0));
                while *c >= 1.0 {
                    let Some(vid) = self.queues[i][q].pop_front() else {
                        break;
                    };
                    *c -= 1.0;
                    let v = &mut self.vehicles[vid];
                    v.wait += now - v.queued_since.take().expect("queued vehicle");
                    v.hop += 1;
                    let link = net.routes[v.flow][v.hop].link;
                    self.transit[link].push_back((now + net.links[link].free_flow, vid));
                }
            }
        }

        self.clock += 1;
    }

    /// Applies a joint action for one decision interval and returns the
    /// post-step observations and rewards.
    pub fn step(&mut self, actions: &[usize]) -> Result<(Vec<Observation>, Vec<f64>), SimError> {
        self.set_phases(actions)?;
        for _ in 0..self.net.spec.decision_interval_s {
            self.advance_second();
        }
        let obs = self.observe_all();
        let rewards = (0..self.phase.len()).map(|i| self.reward_at(i)).collect();
        Ok((obs, rewards))
    }

    /// Queue length of canonical movement `movement` at intersection `i`.
    pub fn queue_len(&self, i: usize, movement: usize) -> usize {
        self.queues[i][movement_queue(movement)].len()
    }

    /// Right-turn queue on an approach slot.
    pub fn right_queue_len(&self, i: usize, slot: usize) -> usize {
        self.queues[i][queue_index(slot, Turn::Right)].len()
    }

    /// Vehicles waiting at the head of the link a movement discharges into;
    /// zero when that link leaves the network.
    pub fn downstream_queue(&self, i: usize, movement: usize) -> usize {
        let slot = movement / 2;
        let turn = if movement % 2 == 0 { Turn::Through } else { Turn::Left };
        let exit = (slot + turn.exit_offset()) % 4;
        let Some(link) = self.net.out_link[i][exit] else {
            return 0;
        };
        let l = &self.net.links[link];
        match (l.to, l.to_slot) {
            (Node::Intersection(j), Some(s)) => (0..3).map(|t| self.queues[j][s * 3 + t].len()).sum(),
            _ => 0,
        }
    }

    fn observation_at(&self, i: usize) -> Observation {
        let mut o = [0.0; OBS_DIM];
        o[self.phase[i]] = 1.0;
        for m in 0..MOVEMENTS {
            if self.net.std[i].movement_present(m) {
                o[NUM_PHASES + m] = self.queue_len(i, m) as f64;
            }
        }
        Observation(o)
    }

    pub fn observe(&self, i: usize) -> Result<Observation, SimError> {
        if i >= self.phase.len() {
            return Err(SimError::UnknownIntersection(i as u32));
        }
        Ok(self.observation_at(i))
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.phase.len()).map(|i| self.observation_at(i)).collect()
    }

    fn reward_at(&self, i: usize) -> f64 {
        -REWARD_WEIGHT * self.observation_at(i).stopped()
    }

    /// `-0.25 ×` stopped vehicles over the present controlled movements.
    pub fn reward(&self, i: usize) -> Result<f64, SimError> {
        if i >= self.phase.len() {
            return Err(SimError::UnknownIntersection(i as u32));
        }
        Ok(self.reward_at(i))
    }

    /// Counts recomputed from the queue and link structures.
    pub fn counts(&self) -> VehicleCounts {
        VehicleCounts {
            spawned: self.vehicles.len(),
            in_transit: self.transit.iter().map(VecDeque::len).sum(),
            queued: self
                .queues
                .iter()
                .flat_map(|qs| qs.iter().map(VecDeque::len))
                .sum(),
            finished: self.vehicles.iter().filter(|v| v.finish.is_some()).count(),
        }
    }

    /// Per-vehicle logs at the current instant. Unfinished vehicles carry
    /// `finish = None`, queue time up to now, and the free-flow time they
    /// have covered so far.
    pub fn vehicle_logs(&self) -> Vec<VehicleLog> {
        let now = self.clock;
        self.vehicles
            .iter()
            .enumerate()
            .map(|(id, v)| {
                let wait = v.wait + v.queued_since.map_or(0, |q| now - q);
                let free_flow = match v.finish {
                    Some(_) => self.net.route_free_flow(v.flow),
                    None => (now - v.spawn) - wait,
                };
                VehicleLog {
                    id,
                    spawn_s: v.spawn,
                    finish_s: v.finish,
                    wait_s: wait,
                    free_flow_s: free_flow,
                }
            })
            .collect()
    }
}
