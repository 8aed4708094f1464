//! Toy traffic scenes on a torus.
//!
//! Each vehicle keeps one acceleration regime for the whole scene, so its
//! next speed change is readable from two consecutive replicas but not from
//! one. Heading changes are caused only by contact with a road object, whose
//! type lives in the object's own features. Speed labels therefore need the
//! history branch and direction labels need the intra-timestep branch.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorMetadata;
use crate::error::{Error, Result};
use crate::fhgraph::{Edge, FullHistoryGraph, Label, NodeId, NodeRecord};
use crate::numerics::rng::seeded_rng;

pub const SPEED_CLASSES: usize = 4;
pub const DIRECTION_CLASSES: usize = 5;

/// Speed change beyond which a step counts as accelerating / slowing.
pub const SPEED_DELTA: f64 = 0.5;
/// Speed below which a vehicle counts as stopped.
pub const STOP_SPEED: f64 = 0.1;
/// Heading changes under this many degrees count as straight.
pub const STRAIGHT_DEG: f64 = 15.0;
/// Heading changes beyond this many degrees count as sharp turns.
pub const SHARP_DEG: f64 = 45.0;
/// Magnitude of the per-step acceleration regimes.
pub const ACCEL: f64 = 0.8;
/// Heading change in degrees induced by each road-object type.
pub const TURN_DEG: [f64; 4] = [30.0, -30.0, 60.0, -60.0];

const KINEMATIC_FEATURES: usize = 7;
const MAP_FEATURES: usize = 7;
pub const MIN_FEATURE_DIM: usize = KINEMATIC_FEATURES + MAP_FEATURES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficScenarioConfig {
    pub n_vehicles: usize,
    pub n_static: usize,
    pub n_timesteps: usize,
    /// Distance below which two vehicles, or a vehicle and a road object,
    /// are in contact.
    pub interaction_radius: f64,
    pub feature_dim: usize,
    /// Side length of the square torus the scene lives on.
    pub arena: f64,
    pub seed: u64,
}

impl Default for TrafficScenarioConfig {
    fn default() -> Self {
        TrafficScenarioConfig {
            n_vehicles: 20,
            n_static: 12,
            n_timesteps: 12,
            interaction_radius: 6.0,
            feature_dim: MIN_FEATURE_DIM,
            arena: 60.0,
            seed: 0,
        }
    }
}

impl TrafficScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(Error::config("n_vehicles", "must be positive"));
        }
        if self.n_timesteps < 2 {
            return Err(Error::config("n_timesteps", "must be at least 2"));
        }
        if !(self.interaction_radius > 0.0) {
            return Err(Error::config("interaction_radius", "must be positive"));
        }
        if !(self.arena > 0.0) {
            return Err(Error::config("arena", "must be positive"));
        }
        if self.feature_dim < MIN_FEATURE_DIM {
            return Err(Error::config(
                "feature_dim",
                format!("must be at least {MIN_FEATURE_DIM}"),
            ));
        }
        Ok(())
    }
}

/// Ground-truth kinematics of one vehicle, one entry per timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub entity: String,
    pub accel: f64,
    pub speed: Vec<f64>,
    pub heading: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrafficScenario {
    pub graph: FullHistoryGraph,
    pub tracks: Vec<VehicleTrack>,
    pub metadata: GeneratorMetadata,
}

/// Label of the step t → t+1 from ground-truth speed and heading.
pub fn traffic_label(speed_now: f64, speed_next: f64, heading_now: f64, heading_next: f64) -> Label {
    let dv = speed_next - speed_now;
    let speed = if speed_next < STOP_SPEED {
        0
    } else if dv > SPEED_DELTA {
        1
    } else if dv < -SPEED_DELTA {
        2
    } else {
        3
    };
    let mut dh = (heading_next - heading_now).to_degrees();
    dh = (dh + 180.0).rem_euclid(360.0) - 180.0;
    let dir = if dh.abs() < STRAIGHT_DEG {
        0
    } else if dh >= SHARP_DEG {
        3
    } else if dh <= -SHARP_DEG {
        4
    } else if dh > 0.0 {
        1
    } else {
        2
    };
    Label::Dual { speed, dir }
}

fn torus_delta(a: f64, b: f64, side: f64) -> f64 {
    let d = (a - b).rem_euclid(side);
    d.min(side - d)
}

fn vehicle_id(i: usize) -> String {
    format!("veh{i:03}")
}

fn object_id(i: usize) -> String {
    format!("obj{i:03}")
}

pub fn gen_traffic(cfg: &TrafficScenarioConfig) -> Result<TrafficScenario> {
    cfg.validate()?;
    let mut rng = seeded_rng(&[cfg.seed, 0x7AFF1C]);
    let side = cfg.arena;
    let r = cfg.interaction_radius;
    let dist = |ax: f64, ay: f64, bx: f64, by: f64| {
        torus_delta(ax, bx, side).hypot(torus_delta(ay, by, side))
    };

    // Road objects, kept at least 2r apart when the arena allows it so that
    // a vehicle touches at most one of them.
    let mut objects: Vec<(f64, f64, usize)> = Vec::with_capacity(cfg.n_static);
    for _ in 0..cfg.n_static {
        let mut pos = (rng.random_range(0.0..side), rng.random_range(0.0..side));
        for _ in 0..1000 {
            if objects.iter().all(|&(x, y, _)| dist(x, y, pos.0, pos.1) >= 2.0 * r) {
                break;
            }
            pos = (rng.random_range(0.0..side), rng.random_range(0.0..side));
        }
        objects.push((pos.0, pos.1, rng.random_range(0..TURN_DEG.len())));
    }

    let steps = cfg.n_timesteps;
    let mut tracks: Vec<VehicleTrack> = (0..cfg.n_vehicles)
        .map(|i| {
            let accel = [ACCEL, -ACCEL, 0.0][rng.random_range(0..3)];
            VehicleTrack {
                entity: vehicle_id(i),
                accel,
                speed: vec![rng.random_range(2.0..6.0)],
                heading: vec![rng.random_range(-PI..PI)],
                x: vec![rng.random_range(0.0..side)],
                y: vec![rng.random_range(0.0..side)],
            }
        })
        .collect();

    // contacts[t][v] = index of the nearest road object within r.
    let mut contacts: Vec<Vec<Option<usize>>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut row = Vec::with_capacity(tracks.len());
        for tr in &mut tracks {
            let (x, y) = (tr.x[t], tr.y[t]);
            let hit = objects
                .iter()
                .enumerate()
                .map(|(k, &(ox, oy, _))| (k, dist(x, y, ox, oy)))
                .filter(|&(_, d)| d < r)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            row.push(hit);
            if t + 1 < steps {
                let turn = hit.map_or(0.0, |k| TURN_DEG[objects[k].2].to_radians());
                let v = (tr.speed[t] + tr.accel).max(0.0);
                let h = (tr.heading[t] + turn + PI).rem_euclid(2.0 * PI) - PI;
                tr.speed.push(v);
                tr.heading.push(h);
                tr.x.push((x + v * h.cos()).rem_euclid(side));
                tr.y.push((y + v * h.sin()).rem_euclid(side));
            }
        }
        contacts.push(row);
    }

    let mut nodes = Vec::with_capacity(steps * tracks.len() + objects.len());
    for t in 0..steps {
        for tr in &tracks {
            let mut f = vec![0.0; cfg.feature_dim];
            let (v, h) = (tr.speed[t], tr.heading[t]);
            f[0] = tr.x[t] / side;
            f[1] = tr.y[t] / side;
            f[2] = v * h.cos() / 10.0;
            f[3] = v * h.sin() / 10.0;
            f[4] = v / 10.0;
            f[5] = h.cos();
            f[6] = h.sin();
            let id = NodeId::dynamic(tr.entity.clone(), t as u32);
            if t + 1 < steps {
                let label = traffic_label(v, tr.speed[t + 1], h, tr.heading[t + 1]);
                nodes.push(NodeRecord::labeled(id, f, label, t >= 1));
            } else {
                nodes.push(NodeRecord::new(id, f));
            }
        }
    }
    for (k, &(x, y, kind)) in objects.iter().enumerate() {
        let mut f = vec![0.0; cfg.feature_dim];
        f[0] = x / side;
        f[1] = y / side;
        f[KINEMATIC_FEATURES] = 1.0;
        f[KINEMATIC_FEATURES + 1 + kind] = 1.0;
        nodes.push(NodeRecord::new(NodeId::fixed(object_id(k)), f));
    }

    let mut edges = Vec::new();
    for t in 0..steps {
        let tt = t as u32;
        for (a, ta) in tracks.iter().enumerate() {
            for (b, tb) in tracks.iter().enumerate() {
                if a != b && dist(ta.x[t], ta.y[t], tb.x[t], tb.y[t]) < r {
                    edges.push(
                        Edge::intra(NodeId::dynamic(tb.entity.clone(), tt), NodeId::dynamic(ta.entity.clone(), tt))
                            .with_relation("vehicle_proximity"),
                    );
                }
            }
            // Road objects only send messages; they never listen.
            for (k, &(ox, oy, _)) in objects.iter().enumerate() {
                if dist(ta.x[t], ta.y[t], ox, oy) < r {
                    edges.push(
                        Edge::intra(NodeId::fixed(object_id(k)), NodeId::dynamic(ta.entity.clone(), tt))
                            .with_relation("lane_contact"),
                    );
                }
            }
        }
        if t >= 1 {
            for tr in &tracks {
                edges.push(Edge::inter(
                    NodeId::dynamic(tr.entity.clone(), tt - 1),
                    NodeId::dynamic(tr.entity.clone(), tt),
                ));
            }
        }
    }
    debug_assert_eq!(contacts.len(), steps);

    let graph = FullHistoryGraph::build(nodes, edges)?;
    let metadata = GeneratorMetadata::new(
        "traffic",
        serde_json::to_value(cfg)?,
        serde_json::json!({
            "speed_classes": ["stopped", "accelerate", "slow-down", "no-change"],
            "direction_classes": ["straight", "left", "right", "sharp-left", "sharp-right"],
            "speed_delta": SPEED_DELTA,
            "stop_speed": STOP_SPEED,
            "straight_deg": STRAIGHT_DEG,
            "sharp_deg": SHARP_DEG,
            "accel": ACCEL,
            "turn_deg": TURN_DEG,
            "labeled_steps": "1 <= t <= n_timesteps - 2 in the loss mask",
        }),
        &graph,
        None,
    );
    Ok(TrafficScenario {
        graph,
        tracks,
        metadata,
    })
}
