//! Deterministic discrete-time world: person motion, MAV point-mass
//! dynamics with bounded low-level tracking error, yaw pointing,
//! self-localization drift, occlusion and obstacles.
//!
//! Tick order is fixed and determinism depends on it:
//! person -> detections -> network delivery -> fusion -> potential forces ->
//! MPC -> MAV dynamics -> localization drift.

use std::collections::BTreeMap;

use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fusion::{ekf_predict, ekf_update, EkfParams, TargetEstimate};
use crate::geometry::{wrap_angle, CameraModel, MavPose, Vec3};
use crate::mpc::{HorizonPlan, MpcController, MpcParams};
use crate::network::{Channel, ChannelParams, Message, Payload};
use crate::potential::{segment_clear, FieldSet, Obstacle};
use crate::sensing::{convert_measurement, synth_detect, MavId, NoiseModel};

/// One simulated MAV: ground truth, believed (drifted) localization and the
/// on-board camera.
#[derive(Debug, Clone)]
pub struct MavState {
    pub id: MavId,
    pub true_position: Vec3,
    pub true_velocity: Vec3,
    pub yaw: f64,
    /// Believed position = true position + drift offset.
    pub drift_offset: Vec3,
    /// Self-localization covariance (pose, 6x6).
    pub self_cov: Matrix6<f64>,
    pub camera: CameraModel,
}

impl MavState {
    pub fn new(id: MavId, position: Vec3, yaw: f64, camera: CameraModel) -> Self {
        Self {
            id,
            true_position: position,
            true_velocity: Vec3::zeros(),
            yaw,
            drift_offset: Vec3::zeros(),
            self_cov: Matrix6::identity() * 0.01,
            camera,
        }
    }

    pub fn true_pose(&self) -> MavPose {
        MavPose::level(self.true_position, self.yaw)
    }

    pub fn believed_pose(&self) -> MavPose {
        MavPose::level(self.true_position + self.drift_offset, self.yaw)
    }

    pub fn believed_velocity(&self) -> Vec3 {
        self.true_velocity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PersonMode {
    Stationary,
    /// Visit waypoints in order, cycling.
    Waypoints { points: Vec<Vec3> },
    /// Velocity random walk with clamped speed.
    RandomWalk { accel_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonModel {
    /// Person centroid in the world frame.
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed_cap: f64,
    pub mode: PersonMode,
    #[serde(default)]
    pub waypoint_index: usize,
}

impl PersonModel {
    pub fn stationary(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            speed_cap: 0.0,
            mode: PersonMode::Stationary,
            waypoint_index: 0,
        }
    }

    pub fn waypoints(start: Vec3, points: Vec<Vec3>, speed_cap: f64) -> Self {
        Self {
            position: start,
            velocity: Vec3::zeros(),
            speed_cap,
            mode: PersonMode::Waypoints { points },
            waypoint_index: 0,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        match &self.mode {
            PersonMode::Stationary => {
                self.velocity = Vec3::zeros();
            }
            PersonMode::Waypoints { points } => {
                if points.is_empty() {
                    self.velocity = Vec3::zeros();
                    return;
                }
                let target = points[self.waypoint_index % points.len()];
                let to_go = target - self.position;
                let dist = to_go.norm();
                let step = self.speed_cap * dt;
                if dist <= step.max(1e-9) {
                    self.position = target;
                    self.waypoint_index = (self.waypoint_index + 1) % points.len();
                    self.velocity = to_go / dt.max(1e-9);
                } else {
                    let dir = to_go / dist;
                    self.position += dir * step;
                    self.velocity = dir * self.speed_cap;
                }
            }
            PersonMode::RandomWalk { accel_std } => {
                let kick = Vec3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    0.0,
                ) * (*accel_std * dt.sqrt());
                self.velocity += kick;
                self.velocity.z = 0.0;
                let speed = self.velocity.norm();
                if speed > self.speed_cap && speed > 0.0 {
                    self.velocity *= self.speed_cap / speed;
                }
                self.position += self.velocity * dt;
            }
        }
    }
}

/// Static world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Half-extents of the world box, m.
    pub bounds: Vec3,
    pub obstacles: Vec<Obstacle>,
    /// Tick length, s.
    pub dt: f64,
    /// Run duration, s.
    pub duration: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            bounds: Vec3::new(20.0, 20.0, 20.0),
            obstacles: Vec::new(),
            dt: 0.1,
            duration: 60.0,
            seed: 0,
        }
    }
}

/// GPS/IMU drift: random-walk offset on the believed position, reset by a
/// periodic simulated GPS fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    /// Per-step random-walk std per axis, m.
    pub walk_std: f64,
    /// Seconds between fixes; zero disables fixes.
    pub fix_period: f64,
    /// Position variance right after a fix, m².
    pub base_pos_var: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            walk_std: 0.005,
            fix_period: 10.0,
            base_pos_var: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawParams {
    pub gain: f64,
    pub max_rate: f64,
}

impl Default for YawParams {
    fn default() -> Self {
        Self {
            gain: 3.0,
            max_rate: 1.5,
        }
    }
}

/// Proportional yaw-rate command pointing the camera at the target estimate.
pub fn yaw_controller(m: &MavState, target_est: &Vec3, params: &YawParams) -> f64 {
    let desired = (target_est.y - m.true_position.y).atan2(target_est.x - m.true_position.x);
    let err = wrap_angle(desired - m.yaw);
    (params.gain * err).clamp(-params.max_rate, params.max_rate)
}

/// True iff the segment from `a` to `b` is not blocked by any obstacle.
pub fn line_of_sight(a: &Vec3, b: &Vec3, obstacles: &[Obstacle]) -> bool {
    segment_clear(a, b, obstacles)
}

/// Advance one MAV along its plan: the low-level loop tracks the plan's
/// first state in the believed frame within a bounded disturbance.
pub fn step_mav<R: Rng + ?Sized>(
    m: &mut MavState,
    plan: &HorizonPlan,
    now: f64,
    dt: f64,
    e_max: f64,
    v_min: &Vec3,
    v_max: &Vec3,
    rng: &mut R,
) {
    // Disturbance drawn every step to keep the stream aligned.
    let dir = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let mag: f64 = rng.random::<f64>() * e_max;
    let disturbance = if dir.norm() > 1e-12 {
        dir / dir.norm() * mag
    } else {
        Vec3::zeros()
    };

    if now - plan.stamp > 0.5 {
        // Stale plan: decay toward hover.
        m.true_velocity *= 0.7;
        m.true_position += m.true_velocity * dt;
        return;
    }
    let (p1, v1) = plan.state_at_step(1);
    // The plan was made in the believed frame; executing it moves the true
    // position to the waypoint minus the localization offset.
    m.true_position = p1 - m.drift_offset + disturbance;
    let mut v = v1;
    for d in 0..3 {
        v[d] = v[d].clamp(v_min[d], v_max[d]);
    }
    m.true_velocity = v;
}

/// Random-walk the believed-position offset and grow the self covariance;
/// a periodic GPS fix resets both.
pub fn step_self_localization<R: Rng + ?Sized>(
    m: &mut MavState,
    now: f64,
    dt: f64,
    drift: &DriftParams,
    rng: &mut R,
) {
    let kick = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * drift.walk_std;
    if drift.fix_period > 0.0 {
        let phase = (now / dt).round() as u64 % (drift.fix_period / dt).round().max(1.0) as u64;
        if phase == 0 {
            m.drift_offset = Vec3::zeros();
            m.self_cov = Matrix6::identity() * drift.base_pos_var;
            return;
        }
    }
    m.drift_offset += kick;
    let var = drift.walk_std * drift.walk_std;
    for d in 0..3 {
        m.self_cov[(d, d)] += var;
    }
}

/// Everything needed to build a closed-loop world.
#[derive(Debug, Clone)]
pub struct WorldParams {
    pub k: usize,
    pub config: WorldConfig,
    pub noise: NoiseModel,
    pub ekf: EkfParams,
    pub mpc: MpcParams,
    pub fields: FieldSet,
    pub channel: ChannelParams,
    pub d_des: f64,
    pub h_des: f64,
    pub camera: CameraModel,
    pub drift: DriftParams,
    pub yaw: YawParams,
    /// Per-step low-level tracking-error bound used by the simulator, m.
    pub step_disturbance: f64,
    pub person: PersonModel,
    /// Spawn position and yaw per MAV.
    pub spawn: Vec<(Vec3, f64)>,
    /// Initial target-estimate mean (position, velocity), shared by all MAVs.
    pub ekf_init: (Vec3, Vec3),
    /// Add the observer's position covariance to converted measurements.
    pub inflate_with_self_cov: bool,
}

struct MavSim {
    state: MavState,
    estimate: TargetEstimate,
    controller: MpcController,
    plan_registry: BTreeMap<MavId, HorizonPlan>,
    detect_rng: ChaCha8Rng,
    disturb_rng: ChaCha8Rng,
    drift_rng: ChaCha8Rng,
    current_plan: Option<HorizonPlan>,
}

/// Closed-loop deterministic world. Stepping is a pure function of the
/// params (seeds included).
pub struct World {
    pub params: WorldParams,
    person: PersonModel,
    mavs: Vec<MavSim>,
    channel: Channel,
    person_rng: ChaCha8Rng,
    time: f64,
    tick: u64,
}

fn stream_seed(seed: u64, stream: u64, id: u64) -> u64 {
    let mut h = seed ^ stream.wrapping_mul(0xa0761d6478bd642f) ^ id.wrapping_mul(0xe7037ed1a0b428db);
    h ^= h >> 32;
    h = h.wrapping_mul(0xd6e8feb86659fd93);
    h ^= h >> 32;
    h
}

impl World {
    pub fn new(params: WorldParams) -> Self {
        assert_eq!(params.spawn.len(), params.k, "spawn list must match K");
        let seed = params.config.seed;
        let mavs = (0..params.k)
            .map(|id| {
                let (pos, yaw) = params.spawn[id];
                let mut controller = MpcController::new(
                    id,
                    params.mpc.clone(),
                    params.fields,
                    params.d_des,
                    params.h_des,
                );
                controller.person_radius = 0.3;
                MavSim {
                    state: MavState::new(id, pos, yaw, params.camera),
                    estimate: TargetEstimate::new(
                        params.ekf_init.0,
                        params.ekf_init.1,
                        params.ekf.init_pos_std,
                        params.ekf.init_vel_std,
                        0.0,
                    ),
                    controller,
                    plan_registry: BTreeMap::new(),
                    detect_rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, 1, id as u64)),
                    disturb_rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, 2, id as u64)),
                    drift_rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, 3, id as u64)),
                    current_plan: None,
                }
            })
            .collect();
        let channel = Channel::new(params.k, ChannelParams {
            seed: stream_seed(seed, 4, 0),
            ..params.channel
        });
        let person_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0));
        let person = params.person.clone();
        Self {
            params,
            person,
            mavs,
            channel,
            person_rng,
            time: 0.0,
            tick: 0,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn person(&self) -> &PersonModel {
        &self.person
    }

    pub fn mav_states(&self) -> Vec<&MavState> {
        self.mavs.iter().map(|m| &m.state).collect()
    }

    pub fn estimates(&self) -> Vec<&TargetEstimate> {
        self.mavs.iter().map(|m| &m.estimate).collect()
    }

    pub fn plans(&self) -> Vec<Option<&HorizonPlan>> {
        self.mavs.iter().map(|m| m.current_plan.as_ref()).collect()
    }

    pub fn fallback_count(&self) -> u64 {
        self.mavs.iter().map(|m| m.controller.fallback_count).sum()
    }

    /// Advance the world by one tick.
    pub fn step(&mut self) {
        let dt = self.params.config.dt;
        let now = self.time;
        let k = self.params.k;
        let obstacles = self.params.config.obstacles.clone();

        // 1. Person motion.
        self.person.step(dt, &mut self.person_rng);

        // 2. Detections: synthesize, convert, broadcast.
        let mut own_measurements: Vec<Option<Message>> = Vec::with_capacity(k);
        for mav in self.mavs.iter_mut() {
            let detection = synth_detect(
                &self.person.position,
                &mav.state.true_pose(),
                &mav.state.camera,
                &self.params.noise,
                &obstacles,
                now,
                mav.state.id,
                &mut mav.detect_rng,
            );
            let msg = detection.and_then(|m| convert_measurement(&m).ok()).map(|cam_meas| {
                let believed = mav.state.believed_pose();
                let rot = mav.state.camera.rotation_camera_to_world(&believed);
                let self_cov = mav
                    .state
                    .self_cov
                    .fixed_view::<3, 3>(0, 0)
                    .into_owned();
                let world_meas = cam_meas.transformed(
                    &rot,
                    &believed.position,
                    self.params.inflate_with_self_cov.then_some(&self_cov),
                );
                Message {
                    sender: mav.state.id,
                    stamp: now,
                    payload: Payload::Measurement(world_meas),
                }
            });
            if let Some(msg) = &msg {
                self.channel.broadcast(msg, now);
            }
            own_measurements.push(msg);
        }

        // 3.-5. Delivery, fusion and plan-registry refresh per MAV.
        for (id, mav) in self.mavs.iter_mut().enumerate() {
            let inbox = self.channel.poll(id, now);

            mav.estimate = ekf_predict(&mav.estimate, dt, &self.params.ekf);

            let mut updates: Vec<(MavId, &Message)> = Vec::new();
            if let Some(own) = &own_measurements[id] {
                updates.push((id, own));
            }
            let mut teammate_msgs: Vec<&Message> = inbox.iter().collect();
            teammate_msgs.sort_by_key(|m| m.sender);
            for msg in &teammate_msgs {
                updates.push((msg.sender, msg));
            }
            for (_, msg) in updates {
                match &msg.payload {
                    Payload::Measurement(z) => {
                        if now - msg.stamp <= self.params.ekf.staleness {
                            if let Ok(next) = ekf_update(&mav.estimate, z, &self.params.ekf) {
                                mav.estimate = next;
                            }
                        }
                    }
                    Payload::Plan(_) => {}
                }
            }
            for msg in teammate_msgs {
                if let Payload::Plan(plan) = &msg.payload {
                    let slot = mav.plan_registry.entry(msg.sender);
                    let fresher = match &slot {
                        std::collections::btree_map::Entry::Occupied(e) => plan.stamp >= e.get().stamp,
                        std::collections::btree_map::Entry::Vacant(_) => true,
                    };
                    if fresher {
                        mav.plan_registry.insert(msg.sender, plan.clone());
                    }
                }
            }
        }

        // 6. MPC per MAV; broadcast the fresh plan.
        let mut outgoing: Vec<Message> = Vec::with_capacity(k);
        for mav in self.mavs.iter_mut() {
            let believed = mav.state.believed_pose();
            let teammate_plans: Vec<(MavId, &HorizonPlan)> = mav
                .plan_registry
                .iter()
                .map(|(id, plan)| (*id, plan))
                .collect();
            let plan = mav.controller.step(
                now,
                believed.position,
                mav.state.believed_velocity(),
                &mav.estimate,
                &teammate_plans,
                &obstacles,
            );
            if k > 1 {
                outgoing.push(Message {
                    sender: mav.state.id,
                    stamp: now,
                    payload: Payload::Plan(plan.clone()),
                });
            }
            mav.current_plan = Some(plan);
        }
        for msg in &outgoing {
            self.channel.broadcast(msg, now);
        }

        // 7. MAV dynamics with yaw pointing.
        for mav in self.mavs.iter_mut() {
            let rate = yaw_controller(&mav.state, &mav.estimate.position, &self.params.yaw);
            mav.state.yaw = wrap_angle(mav.state.yaw + rate * dt);
            let plan = mav.current_plan.as_ref().expect("plan set above").clone();
            step_mav(
                &mut mav.state,
                &plan,
                now,
                dt,
                self.params.step_disturbance,
                &self.params.mpc.v_min,
                &self.params.mpc.v_max,
                &mut mav.disturb_rng,
            );
        }

        // 8. Localization drift.
        for mav in self.mavs.iter_mut() {
            step_self_localization(&mut mav.state, now, dt, &self.params.drift, &mut mav.drift_rng);
        }

        self.tick += 1;
        self.time = self.tick as f64 * dt;
    }
}
