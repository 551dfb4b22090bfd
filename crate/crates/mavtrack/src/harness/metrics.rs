//! Per-tick run records, summary aggregates and their CSV/JSON writers.
//!
//! The summary is a pure function of the per-tick records plus the scenario
//! scalars, so it can be recomputed bit-exactly from a written CSV (float
//! formatting is shortest-round-trip).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_about_target, Vec3};
use crate::simworld::World;

/// Metrics captured after every world tick. Optional fields are absent when
/// undefined for the configuration (single MAV, no obstacles, person behind
/// every camera).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    /// Mean over MAVs of the fused-estimate position error, m.
    pub track_err: f64,
    /// Mean over MAVs of the fused position-covariance trace, m².
    pub fused_trace: f64,
    /// Max pairwise distance between the MAVs' fused estimates, m.
    pub est_spread: f64,
    /// Min pairwise true MAV distance, m.
    pub min_pair_dist: Option<f64>,
    /// Min over MAVs of the true horizontal distance to the person, m.
    pub min_person_horiz: f64,
    /// Min over MAVs and obstacles of the surface clearance, m.
    pub min_obstacle_clearance: Option<f64>,
    /// Fraction of MAVs with the person fully inside the image.
    pub in_fov_frac: f64,
    /// Mean normalized distance of the person from the image center.
    pub img_center_frac: f64,
    /// Max deviation of adjacent angular gaps from 2pi/K, rad.
    pub sep_err: Option<f64>,
    /// Max over MAVs of |horizontal range - d_des|, m.
    pub range_err: f64,
    /// Max over MAVs of |altitude - (person z + h_des)|, m.
    pub alt_err: f64,
    /// Max over visible MAVs of |camera-frame inclination - pi/2|, rad.
    pub cam_incl_err: Option<f64>,
    /// Cumulative solver fallbacks so far.
    pub fallbacks: u64,
}

pub const CSV_COLUMNS: &[&str] = &[
    "t",
    "track_err",
    "fused_trace",
    "est_spread",
    "min_pair_dist",
    "min_person_horiz",
    "min_obstacle_clearance",
    "in_fov_frac",
    "img_center_frac",
    "sep_err",
    "range_err",
    "alt_err",
    "cam_incl_err",
    "fallbacks",
];

/// Capture one record from the current world state.
pub fn record_tick(world: &World, d_des: f64, h_des: f64) -> TickRecord {
    let person = world.person().position;
    let states = world.mav_states();
    let estimates = world.estimates();
    let k = states.len();

    let track_err = estimates
        .iter()
        .map(|e| (e.position - person).norm())
        .sum::<f64>()
        / k as f64;
    let fused_trace = estimates
        .iter()
        .map(|e| e.position_cov().trace())
        .sum::<f64>()
        / k as f64;
    let mut est_spread: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            est_spread = est_spread.max((estimates[i].position - estimates[j].position).norm());
        }
    }

    let min_pair_dist = if k >= 2 {
        let mut min = f64::INFINITY;
        for i in 0..k {
            for j in (i + 1)..k {
                min = min.min((states[i].true_position - states[j].true_position).norm());
            }
        }
        Some(min)
    } else {
        None
    };

    let min_person_horiz = states
        .iter()
        .map(|s| {
            (s.true_position.x - person.x).hypot(s.true_position.y - person.y)
        })
        .fold(f64::INFINITY, f64::min);

    let obstacles = &world.params.config.obstacles;
    let min_obstacle_clearance = if obstacles.is_empty() {
        None
    } else {
        let mut min = f64::INFINITY;
        for s in &states {
            for o in obstacles {
                min = min.min(o.surface_distance(&s.true_position));
            }
        }
        Some(min)
    };

    let sep_err = if k >= 2 {
        let mut angles: Vec<f64> = states
            .iter()
            .filter_map(|s| angle_about_target(&s.true_position, &person).ok())
            .collect();
        if angles.len() == k {
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want = std::f64::consts::TAU / k as f64;
            let mut worst: f64 = 0.0;
            for i in 0..k {
                let gap = if i + 1 < k {
                    angles[i + 1] - angles[i]
                } else {
                    std::f64::consts::TAU - (angles[k - 1] - angles[0])
                };
                worst = worst.max((gap - want).abs());
            }
            Some(worst)
        } else {
            None
        }
    } else {
        None
    };

    let range_err = states
        .iter()
        .map(|s| {
            ((s.true_position.x - person.x).hypot(s.true_position.y - person.y) - d_des).abs()
        })
        .fold(0.0f64, f64::max);
    let alt_err = states
        .iter()
        .map(|s| (s.true_position.z - (person.z + h_des)).abs())
        .fold(0.0f64, f64::max);

    // Person modeled as a vertical cylinder (half-height 0.9, radius 0.3)
    // for the fully-in-frame check.
    let mut in_fov = 0usize;
    let mut center_frac_sum = 0.0;
    let mut cam_incl_err: Option<f64> = None;
    for s in &states {
        let pose = s.true_pose();
        let cam = &s.camera;
        let horiz = Vec3::new(person.x - pose.position.x, person.y - pose.position.y, 0.0);
        let side = if horiz.norm() > 1e-9 {
            let h = horiz / horiz.norm();
            Vec3::new(-h.y, h.x, 0.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let extremes = [
            person + Vec3::new(0.0, 0.0, 0.9),
            person - Vec3::new(0.0, 0.0, 0.9),
            person + side * 0.3,
            person - side * 0.3,
            person + Vec3::new(0.0, 0.0, 0.9) + side * 0.3,
            person + Vec3::new(0.0, 0.0, 0.9) - side * 0.3,
        ];
        if extremes
            .iter()
            .all(|p| cam.in_frustum(&cam.world_to_camera(&pose, p)))
        {
            in_fov += 1;
        }
        let p_cam = cam.world_to_camera(&pose, &person);
        match cam.project_normalized(&p_cam) {
            Some((u, v)) => {
                center_frac_sum += (u * u + v * v).sqrt() / std::f64::consts::SQRT_2;
                let incl = (p_cam.z / p_cam.norm()).clamp(-1.0, 1.0).acos();
                let err = (incl - std::f64::consts::FRAC_PI_2).abs();
                cam_incl_err = Some(cam_incl_err.map_or(err, |w: f64| w.max(err)));
            }
            None => center_frac_sum += 1.0,
        }
    }

    TickRecord {
        t: world.time(),
        track_err,
        fused_trace,
        est_spread,
        min_pair_dist,
        min_person_horiz,
        min_obstacle_clearance,
        in_fov_frac: in_fov as f64 / k as f64,
        img_center_frac: center_frac_sum / k as f64,
        sep_err,
        range_err,
        alt_err,
        cam_incl_err,
        fallbacks: world.fallback_count(),
    }
}

/// Steady-state aggregates over the final window of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStats {
    pub window: f64,
    pub sep_err_max: Option<f64>,
    pub range_err_max: f64,
    pub alt_err_max: f64,
    pub cam_incl_err_max: Option<f64>,
    pub mean_track_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub k: usize,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub warmup: f64,
    pub ticks: usize,
    pub mean_track_err: f64,
    pub rms_track_err: f64,
    pub max_track_err: f64,
    pub mean_fused_trace: f64,
    pub max_est_spread: f64,
    pub min_pair_dist: Option<f64>,
    pub min_person_horiz: f64,
    pub min_obstacle_clearance: Option<f64>,
    pub in_fov_fraction: f64,
    pub mean_img_center_frac: f64,
    pub steady: SteadyStats,
    pub fallback_total: u64,
}

impl Summary {
    /// Aggregate the per-tick records. Time-window means skip the warmup;
    /// safety minima cover the whole run.
    pub fn from_records(
        records: &[TickRecord],
        k: usize,
        seed: u64,
        dt: f64,
        duration: f64,
        warmup: f64,
        steady_window: f64,
    ) -> Summary {
        let post: Vec<&TickRecord> = records.iter().filter(|r| r.t >= warmup).collect();
        let post = if post.is_empty() {
            records.iter().collect::<Vec<_>>()
        } else {
            post
        };
        let n = post.len() as f64;

        let mean_track_err = post.iter().map(|r| r.track_err).sum::<f64>() / n;
        let rms_track_err =
            (post.iter().map(|r| r.track_err * r.track_err).sum::<f64>() / n).sqrt();
        let max_track_err = post.iter().map(|r| r.track_err).fold(0.0f64, f64::max);
        let mean_fused_trace = post.iter().map(|r| r.fused_trace).sum::<f64>() / n;
        let max_est_spread = records.iter().map(|r| r.est_spread).fold(0.0f64, f64::max);
        let min_pair_dist = records
            .iter()
            .filter_map(|r| r.min_pair_dist)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        let min_person_horiz = records
            .iter()
            .map(|r| r.min_person_horiz)
            .fold(f64::INFINITY, f64::min);
        let min_obstacle_clearance = records
            .iter()
            .filter_map(|r| r.min_obstacle_clearance)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        let in_fov_fraction = post.iter().map(|r| r.in_fov_frac).sum::<f64>() / n;
        let mean_img_center_frac = post.iter().map(|r| r.img_center_frac).sum::<f64>() / n;

        let steady_start = duration - steady_window;
        let steady_recs: Vec<&TickRecord> =
            records.iter().filter(|r| r.t >= steady_start).collect();
        let steady_recs = if steady_recs.is_empty() {
            records.iter().collect::<Vec<_>>()
        } else {
            steady_recs
        };
        let sn = steady_recs.len() as f64;
        let steady = SteadyStats {
            window: steady_window,
            sep_err_max: steady_recs
                .iter()
                .filter_map(|r| r.sep_err)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
            range_err_max: steady_recs.iter().map(|r| r.range_err).fold(0.0f64, f64::max),
            alt_err_max: steady_recs.iter().map(|r| r.alt_err).fold(0.0f64, f64::max),
            cam_incl_err_max: steady_recs
                .iter()
                .filter_map(|r| r.cam_incl_err)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
            mean_track_err: steady_recs.iter().map(|r| r.track_err).sum::<f64>() / sn,
        };

        Summary {
            k,
            seed,
            dt,
            duration,
            warmup,
            ticks: records.len(),
            mean_track_err,
            rms_track_err,
            max_track_err,
            mean_fused_trace,
            max_est_spread,
            min_pair_dist,
            min_person_horiz,
            min_obstacle_clearance,
            in_fov_fraction,
            mean_img_center_frac,
            steady,
            fallback_total: records.last().map_or(0, |r| r.fallbacks),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<TickRecord>,
    pub summary: Summary,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

impl RunMetrics {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.track_err,
                r.fused_trace,
                r.est_spread,
                fmt_opt(r.min_pair_dist),
                r.min_person_horiz,
                fmt_opt(r.min_obstacle_clearance),
                r.in_fov_frac,
                r.img_center_frac,
                fmt_opt(r.sep_err),
                r.range_err,
                r.alt_err,
                fmt_opt(r.cam_incl_err),
                r.fallbacks,
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())
    }

    pub fn write_summary_json(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(path, json)
    }
}

/// Parse a metrics CSV back into records (round-trip exact: floats are
/// written in shortest-round-trip form).
pub fn read_csv(content: &str) -> Result<Vec<TickRecord>, String> {
    let mut lines = content.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != CSV_COLUMNS.join(",") {
        return Err(format!("unexpected header: {header}"));
    }
    let parse = |s: &str| -> Result<f64, String> {
        s.parse::<f64>().map_err(|e| format!("bad float {s}: {e}"))
    };
    let parse_opt = |s: &str| -> Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s).map(Some)
        }
    };
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != CSV_COLUMNS.len() {
            return Err(format!("wrong column count in line: {line}"));
        }
        records.push(TickRecord {
            t: parse(cells[0])?,
            track_err: parse(cells[1])?,
            fused_trace: parse(cells[2])?,
            est_spread: parse(cells[3])?,
            min_pair_dist: parse_opt(cells[4])?,
            min_person_horiz: parse(cells[5])?,
            min_obstacle_clearance: parse_opt(cells[6])?,
            in_fov_frac: parse(cells[7])?,
            img_center_frac: parse(cells[8])?,
            sep_err: parse_opt(cells[9])?,
            range_err: parse(cells[10])?,
            alt_err: parse(cells[11])?,
            cam_incl_err: parse_opt(cells[12])?,
            fallbacks: cells[13]
                .parse::<u64>()
                .map_err(|e| format!("bad count {}: {e}", cells[13]))?,
        });
    }
    Ok(records)
}
