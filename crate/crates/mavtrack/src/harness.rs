//! Scenario configuration, the closed-loop runner and the preset
//! experiments, plus run metrics and their writers.

pub mod metrics;
pub mod presets;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::EkfParams;
use crate::geometry::{CameraModel, Vec3};
use crate::mpc::MpcParams;
use crate::network::ChannelParams;
use crate::potential::FieldSet;
use crate::sensing::NoiseModel;
use crate::simworld::{
    DriftParams, PersonMode, PersonModel, World, WorldConfig, WorldParams, YawParams,
};

pub use metrics::{record_tick, read_csv, RunMetrics, Summary, TickRecord};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

fn cfg_err(path: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Person trajectory described in the config; concrete waypoints are
/// resolved per seed at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PersonConfig {
    Stationary {
        position: [f64; 3],
    },
    Waypoints {
        start: [f64; 3],
        points: Vec<[f64; 3]>,
        speed: f64,
    },
    /// Seeded random waypoints in a centered square of the given half-extent.
    RandomWaypoints {
        count: usize,
        half_extent: f64,
        speed: f64,
        z: f64,
    },
}

impl Default for PersonConfig {
    fn default() -> Self {
        PersonConfig::Stationary {
            position: [0.0, 0.0, 0.9],
        }
    }
}

impl PersonConfig {
    pub fn start_position(&self) -> Vec3 {
        match self {
            PersonConfig::Stationary { position } => Vec3::from_row_slice(position),
            PersonConfig::Waypoints { start, .. } => Vec3::from_row_slice(start),
            PersonConfig::RandomWaypoints { z, .. } => Vec3::new(0.0, 0.0, *z),
        }
    }

    /// Resolve to a concrete person model; random waypoints draw from the
    /// provided stream.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> PersonModel {
        match self {
            PersonConfig::Stationary { position } => {
                PersonModel::stationary(Vec3::from_row_slice(position))
            }
            PersonConfig::Waypoints { start, points, speed } => PersonModel::waypoints(
                Vec3::from_row_slice(start),
                points.iter().map(|p| Vec3::from_row_slice(p)).collect(),
                *speed,
            ),
            PersonConfig::RandomWaypoints {
                count,
                half_extent,
                speed,
                z,
            } => {
                let mut points = Vec::with_capacity(*count);
                let mut last = Vec3::new(0.0, 0.0, *z);
                for _ in 0..*count {
                    // Keep consecutive waypoints at least 3 m apart.
                    loop {
                        let p = Vec3::new(
                            (rng.random::<f64>() * 2.0 - 1.0) * half_extent,
                            (rng.random::<f64>() * 2.0 - 1.0) * half_extent,
                            *z,
                        );
                        if (p - last).norm() >= 3.0 {
                            points.push(p);
                            last = p;
                            break;
                        }
                    }
                }
                PersonModel::waypoints(Vec3::new(0.0, 0.0, *z), points, *speed)
            }
        }
    }

    pub fn resolved_waypoints(&self, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        match self.build(rng).mode {
            PersonMode::Waypoints { points } => points,
            _ => vec![self.start_position()],
        }
    }
}

/// MAV spawn ring: evenly spaced angles with seeded jitter, all facing the
/// person start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnConfig {
    /// Ring radius; default scales mildly with team size.
    pub ring_radius: Option<f64>,
    pub altitude: f64,
    /// Angular jitter as a fraction of the even gap, in [0, 0.4].
    pub jitter_frac: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            ring_radius: None,
            altitude: 7.0,
            jitter_frac: 0.25,
        }
    }
}

/// Complete experiment description. Every §IV-style constant is a named
/// default; any field can be overridden from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub k: usize,
    pub d_des: f64,
    pub h_des: f64,
    /// Seconds excluded from time-averaged summary aggregates.
    pub warmup: f64,
    /// Final window used for steady-state aggregates, s.
    pub steady_window: f64,
    pub world: WorldConfig,
    pub noise: NoiseModel,
    pub ekf: EkfParams,
    pub mpc: MpcParams,
    pub channel: ChannelParams,
    /// Defaults to `FieldSet::for_team(k)` when absent.
    pub fields: Option<FieldSet>,
    pub drift: DriftParams,
    pub yaw: YawParams,
    /// Per-step low-level tracking disturbance bound, m.
    pub step_disturbance: f64,
    pub camera: CameraModel,
    pub person: PersonConfig,
    pub spawn: SpawnConfig,
    pub inflate_with_self_cov: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            k: 3,
            d_des: 8.0,
            h_des: 8.0,
            warmup: 10.0,
            steady_window: 20.0,
            world: WorldConfig::default(),
            noise: NoiseModel::default(),
            ekf: EkfParams::default(),
            mpc: MpcParams::default(),
            channel: ChannelParams::default(),
            fields: None,
            drift: DriftParams::default(),
            yaw: YawParams::default(),
            step_disturbance: 0.02,
            camera: CameraModel::default(),
            person: PersonConfig::default(),
            spawn: SpawnConfig::default(),
            inflate_with_self_cov: true,
        }
    }
}

impl Scenario {
    pub fn from_toml(content: &str) -> Result<Scenario, HarnessError> {
        let s: Scenario = toml::from_str(content)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(cfg_err(
                "version",
                format!("unsupported version {} (want {CONFIG_VERSION})", self.version),
            ));
        }
        if self.k < 1 {
            return Err(cfg_err("k", "need at least one MAV"));
        }
        if self.d_des <= 0.0 || self.h_des <= 0.0 {
            return Err(cfg_err("d_des/h_des", "must be positive"));
        }
        if self.world.dt <= 0.0 {
            return Err(cfg_err("world.dt", "must be positive"));
        }
        if self.world.duration <= 0.0 {
            return Err(cfg_err("world.duration", "must be positive"));
        }
        self.noise
            .validate()
            .map_err(|e| cfg_err("noise", e.to_string()))?;
        self.mpc
            .validate()
            .map_err(|e| cfg_err("mpc", e.to_string()))?;
        self.channel
            .validate()
            .map_err(|e| cfg_err("channel", e))?;
        if let Some(fields) = &self.fields {
            fields
                .validate()
                .map_err(|e| cfg_err("fields", e.to_string()))?;
        }
        if !(0.0..=0.4).contains(&self.spawn.jitter_frac) {
            return Err(cfg_err("spawn.jitter_frac", "must be in [0, 0.4]"));
        }
        // Person containment: fixed waypoints must lie inside the world box.
        if let PersonConfig::Waypoints { start, points, .. } = &self.person {
            for (i, p) in std::iter::once(start).chain(points.iter()).enumerate() {
                for d in 0..3 {
                    if p[d].abs() > self.world.bounds[d] {
                        return Err(cfg_err(
                            &format!("person.points[{i}]"),
                            "outside world bounds",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn spawn_positions(&self, rng: &mut ChaCha8Rng) -> Vec<(Vec3, f64)> {
        let k = self.k;
        let radius = self
            .spawn
            .ring_radius
            .unwrap_or(10.0 + 0.25 * k as f64);
        let person = self.person.start_position();
        let gap = std::f64::consts::TAU / k as f64;
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        (0..k)
            .map(|i| {
                let jitter = (rng.random::<f64>() * 2.0 - 1.0) * self.spawn.jitter_frac * gap;
                let angle = phase + i as f64 * gap + jitter;
                let pos = Vec3::new(
                    person.x + radius * angle.cos(),
                    person.y + radius * angle.sin(),
                    self.spawn.altitude,
                );
                // Face the person.
                let yaw = (person.y - pos.y).atan2(person.x - pos.x);
                (pos, yaw)
            })
            .collect()
    }

    /// Resolve the scenario into a world, deterministically from
    /// `world.seed` (override with [`Scenario::with_seed`]).
    pub fn build_world(&self) -> Result<World, HarnessError> {
        self.validate()?;
        let seed = self.world.seed;
        let mut person_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70657273);
        let mut spawn_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7370776e);
        let person = self.person.build(&mut person_rng);
        let spawn = self.spawn_positions(&mut spawn_rng);
        let fields = self.fields.unwrap_or_else(|| FieldSet::for_team(self.k));
        Ok(World::new(WorldParams {
            k: self.k,
            config: self.world.clone(),
            noise: self.noise,
            ekf: self.ekf,
            mpc: self.mpc.clone(),
            fields,
            channel: self.channel,
            d_des: self.d_des,
            h_des: self.h_des,
            camera: self.camera,
            drift: self.drift,
            yaw: self.yaw,
            step_disturbance: self.step_disturbance,
            person: person.clone(),
            spawn,
            ekf_init: (person.position, Vec3::zeros()),
            inflate_with_self_cov: self.inflate_with_self_cov,
        }))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.world.duration = duration;
        self
    }
}

/// Execute the closed loop for the configured duration and collect metrics.
/// Deterministic per seed; controller failures are recorded and the run
/// continues on the braking fallback.
pub fn run_scenario(scenario: &Scenario) -> Result<RunMetrics, HarnessError> {
    let mut world = scenario.build_world()?;
    let ticks = (scenario.world.duration / scenario.world.dt).round() as usize;
    let mut records = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        world.step();
        records.push(record_tick(&world, scenario.d_des, scenario.h_des));
    }
    let summary = Summary::from_records(
        &records,
        scenario.k,
        scenario.world.seed,
        scenario.world.dt,
        scenario.world.duration,
        scenario.warmup,
        scenario.steady_window,
    );
    Ok(RunMetrics { records, summary })
}
