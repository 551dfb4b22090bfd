//! Preset experiments: formation convergence, scalability over team size,
//! communication loss and obstacle density. Each preset runs seeded trials
//! (optionally in parallel), aggregates per-condition tables and can write
//! them as CSV.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::Vec3;
use crate::potential::Obstacle;

use super::{run_scenario, HarnessError, PersonConfig, RunMetrics, Scenario};

/// Deterministic seed for trial `t` of a preset family.
pub fn trial_seed(base: u64, family: u64, trial: u64) -> u64 {
    let mut h = base ^ family.wrapping_mul(0x9e3779b97f4a7c15) ^ trial.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 31;
    h.wrapping_mul(0x94d049bb133111eb) | 1
}

/// Place tree-trunk obstacles that keep the person path, the spawn ring and
/// each other at a safe margin. Deterministic per seed.
pub fn place_obstacles(
    count: usize,
    seed: u64,
    path: &[Vec3],
    spawn_hint: &[Vec3],
) -> Vec<Obstacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f627374);
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(count);
    let mut attempts = 0;
    while obstacles.len() < count && attempts < 100_000 {
        attempts += 1;
        let x = (rng.random::<f64>() * 2.0 - 1.0) * 12.0;
        let y = (rng.random::<f64>() * 2.0 - 1.0) * 12.0;
        let radius = 0.3 + 0.3 * rng.random::<f64>();
        let candidate = Obstacle::trunk(Vec3::new(x, y, 0.0), radius, 12.0);

        let clear_of_path = path_segments(path).all(|(a, b)| {
            segment_xy_distance(&candidate.center, &a, &b) > radius + 2.5
        });
        let clear_of_spawn = spawn_hint.iter().all(|s| {
            (s.x - x).hypot(s.y - y) > radius + 2.5
        });
        let clear_of_others = obstacles.iter().all(|o| {
            (o.center.x - x).hypot(o.center.y - y) > o.radius + radius + 3.0
        });
        if clear_of_path && clear_of_spawn && clear_of_others {
            obstacles.push(candidate);
        }
    }
    obstacles
}

fn path_segments(path: &[Vec3]) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
    // Treat the path as a closed loop (the person cycles waypoints).
    (0..path.len()).map(move |i| (path[i], path[(i + 1) % path.len().max(1)]))
}

fn segment_xy_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let (px, py) = (p.x, p.y);
    let (ax, ay) = (a.x, a.y);
    let (bx, by) = (b.x, b.y);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 < 1e-18 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    (px - (ax + t * dx)).hypot(py - (ay + t * dy))
}

/// Spawn ring positions the obstacle placement must respect (recomputed the
/// same way the scenario will).
fn spawn_hint(scenario: &Scenario) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.world.seed ^ 0x7370776e);
    scenario
        .spawn_positions_hint(&mut rng)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

impl Scenario {
    /// Public view of the spawn layout used by obstacle placement.
    pub fn spawn_positions_hint(&self, rng: &mut ChaCha8Rng) -> Vec<(Vec3, f64)> {
        self.spawn_positions(rng)
    }
}

/// Walking-person scenario shared by the sweep presets.
pub fn walking_scenario(k: usize, seed: u64, duration: f64, obstacle_count: usize) -> Scenario {
    let mut s = Scenario::default();
    s.k = k;
    s.world.seed = seed;
    s.world.duration = duration;
    s.person = PersonConfig::RandomWaypoints {
        count: 6,
        half_extent: 6.0,
        speed: 1.2,
        z: 0.9,
    };
    if obstacle_count > 0 {
        let mut person_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70657273);
        let path = s.person.resolved_waypoints(&mut person_rng);
        let spawn = spawn_hint(&s);
        s.world.obstacles = place_obstacles(obstacle_count, seed, &path, &spawn);
    }
    s
}

fn run_trials(scenarios: Vec<Scenario>) -> Result<Vec<RunMetrics>, HarnessError> {
    scenarios
        .par_iter()
        .map(run_scenario)
        .collect::<Result<Vec<_>, _>>()
}

// ---------------------------------------------------------------------------
// Formation preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FormationTrial {
    pub seed: u64,
    pub walking: bool,
    pub sep_err_max_deg: Option<f64>,
    pub range_err_max: f64,
    pub alt_err_max: f64,
    pub in_fov_fraction: f64,
    pub mean_track_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormationReport {
    pub stationary: Vec<FormationTrial>,
    pub walking: Vec<FormationTrial>,
}

/// K=3 formation behavior around a stationary and a walking person.
pub fn preset_formation(
    trials: usize,
    base_seed: u64,
    duration: f64,
) -> Result<FormationReport, HarnessError> {
    let mut stationary = Vec::new();
    let mut walking = Vec::new();
    for (family, walk) in [(1u64, false), (2u64, true)] {
        let scenarios: Vec<Scenario> = (0..trials)
            .map(|t| {
                let seed = trial_seed(base_seed, family, t as u64);
                let mut s = if walk {
                    walking_scenario(3, seed, duration, 0)
                } else {
                    Scenario::default().with_seed(seed).with_duration(duration)
                };
                s.k = 3;
                s
            })
            .collect();
        let runs = run_trials(scenarios.clone())?;
        for (s, m) in scenarios.iter().zip(runs.iter()) {
            let trial = FormationTrial {
                seed: s.world.seed,
                walking: walk,
                sep_err_max_deg: m.summary.steady.sep_err_max.map(|r| r.to_degrees()),
                range_err_max: m.summary.steady.range_err_max,
                alt_err_max: m.summary.steady.alt_err_max,
                in_fov_fraction: m.summary.in_fov_fraction,
                mean_track_err: m.summary.mean_track_err,
            };
            if walk {
                walking.push(trial);
            } else {
                stationary.push(trial);
            }
        }
    }
    Ok(FormationReport {
        stationary,
        walking,
    })
}

// ---------------------------------------------------------------------------
// Scalability preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ScalabilityRow {
    pub k: usize,
    pub mean_track_err: f64,
    pub std_track_err: f64,
    pub per_trial: Vec<f64>,
}

/// Mean tracking error per team size, averaged over seeded trials.
/// The environment has a few known static obstacles and ideal communication.
pub fn preset_scalability(
    ks: &[usize],
    trials: usize,
    base_seed: u64,
    duration: f64,
) -> Result<Vec<ScalabilityRow>, HarnessError> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let scenarios: Vec<Scenario> = (0..trials)
            .map(|t| {
                let seed = trial_seed(base_seed, 10 + k as u64, t as u64);
                let mut s = walking_scenario(k, seed, duration, 4);
                s.channel = crate::network::ChannelParams::ideal(0);
                s
            })
            .collect();
        let runs = run_trials(scenarios)?;
        let per_trial: Vec<f64> = runs.iter().map(|m| m.summary.mean_track_err).collect();
        let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        let var = per_trial
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / per_trial.len() as f64;
        rows.push(ScalabilityRow {
            k,
            mean_track_err: mean,
            std_track_err: var.sqrt(),
            per_trial,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Communication-loss preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CommLossRow {
    pub loss: f64,
    pub mean_track_err: f64,
    pub per_trial: Vec<f64>,
}

/// Mean tracking error per communication-loss level. At 100% loss each MAV
/// fuses only its own detections (own measurements bypass the channel).
pub fn preset_comm_loss(
    losses: &[f64],
    k: usize,
    trials: usize,
    base_seed: u64,
    duration: f64,
) -> Result<Vec<CommLossRow>, HarnessError> {
    let mut rows = Vec::with_capacity(losses.len());
    for &loss in losses {
        let scenarios: Vec<Scenario> = (0..trials)
            .map(|t| {
                let seed = trial_seed(base_seed, 40, t as u64);
                let mut s = walking_scenario(k, seed, duration, 4);
                s.channel.loss = loss;
                s
            })
            .collect();
        let runs = run_trials(scenarios)?;
        let per_trial: Vec<f64> = runs.iter().map(|m| m.summary.mean_track_err).collect();
        rows.push(CommLossRow {
            loss,
            mean_track_err: per_trial.iter().sum::<f64>() / per_trial.len() as f64,
            per_trial,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Obstacle-density preset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ObstacleRow {
    pub count: usize,
    pub mean_track_err: f64,
    pub min_pair_dist: f64,
    pub min_obstacle_clearance: Option<f64>,
    pub min_person_horiz: f64,
    pub collisions: bool,
    pub per_trial: Vec<f64>,
}

/// Mean tracking error and safety minima per obstacle count. A collision
/// (obstacle penetration or pairwise distance below the avoidance floor)
/// flags the row.
pub fn preset_obstacle_density(
    counts: &[usize],
    k: usize,
    trials: usize,
    base_seed: u64,
    duration: f64,
    d_min_floor: f64,
) -> Result<Vec<ObstacleRow>, HarnessError> {
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let scenarios: Vec<Scenario> = (0..trials)
            .map(|t| {
                let seed = trial_seed(base_seed, 60, t as u64);
                walking_scenario(k, seed, duration, count)
            })
            .collect();
        let runs = run_trials(scenarios)?;
        let per_trial: Vec<f64> = runs.iter().map(|m| m.summary.mean_track_err).collect();
        let min_pair = runs
            .iter()
            .filter_map(|m| m.summary.min_pair_dist)
            .fold(f64::INFINITY, f64::min);
        let min_clear = runs
            .iter()
            .filter_map(|m| m.summary.min_obstacle_clearance)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        let min_person = runs
            .iter()
            .map(|m| m.summary.min_person_horiz)
            .fold(f64::INFINITY, f64::min);
        rows.push(ObstacleRow {
            count,
            mean_track_err: per_trial.iter().sum::<f64>() / per_trial.len() as f64,
            min_pair_dist: min_pair,
            min_obstacle_clearance: min_clear,
            min_person_horiz: min_person,
            collisions: min_pair < d_min_floor || min_clear.is_some_and(|c| c <= 0.0),
            per_trial,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Table writers
// ---------------------------------------------------------------------------

pub fn write_table<T: Serialize>(rows: &[T], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_string_pretty(rows).expect("rows serialize");
    fs::write(path, json)?;
    Ok(())
}

/// Install a rayon pool of the requested size for the duration of `f`
/// (0 keeps the default).
pub fn with_parallelism<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}
