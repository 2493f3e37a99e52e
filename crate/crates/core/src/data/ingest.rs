//! NGSIM-format trajectory table ingestion.
//!
//! Input is a character-separated table with a header row. The default
//! column map matches the public NGSIM schema (`Vehicle_ID`, `Frame_ID`,
//! `Local_Y`, `v_Vel`, `Lane_ID`, `Preceding`, `Following`); positions are
//! longitudinal feet, speeds ft/s, frames 10 Hz ticks. Malformed rows are
//! rejected individually and counted, never fatal; finding zero platoons
//! is an explicit error.

use std::collections::HashMap;
use std::io::Read;

use log::warn;

use crate::data::platoon::{PlatoonTrajectory, VehicleTrack};
use crate::error::{Error, Result};

/// One parsed table row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub vehicle_id: i64,
    /// 10 Hz tick.
    pub frame_id: i64,
    /// Longitudinal coordinate, feet.
    pub position: f64,
    /// ft/s, non-negative.
    pub speed: f64,
    pub lane_id: i64,
    /// 0 = none.
    pub preceding_id: i64,
    /// 0 = none.
    pub following_id: i64,
}

/// Maps the required fields onto table column names.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ColumnMap {
    pub vehicle_id: String,
    pub frame_id: String,
    pub position: String,
    pub speed: String,
    pub lane_id: String,
    pub preceding: String,
    pub following: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            vehicle_id: "Vehicle_ID".into(),
            frame_id: "Frame_ID".into(),
            position: "Local_Y".into(),
            speed: "v_Vel".into(),
            lane_id: "Lane_ID".into(),
            preceding: "Preceding".into(),
            following: "Following".into(),
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct IngestConfig {
    pub columns: ColumnMap,
    /// Field delimiter, default comma.
    pub delimiter: u8,
    /// Required contiguous platoon length in frames.
    pub platoon_len: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            delimiter: b',',
            platoon_len: 200,
        }
    }
}

/// Per-run ingestion accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub platoons_found: usize,
    /// Three per platoon.
    pub trajectories: usize,
}

pub struct Ingested {
    pub platoons: Vec<PlatoonTrajectory>,
    pub report: IngestReport,
}

struct Columns {
    vehicle: usize,
    frame: usize,
    position: usize,
    speed: usize,
    lane: usize,
    preceding: usize,
    following: usize,
}

fn resolve_columns(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Columns> {
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("column {name} not found in header")))
    };
    Ok(Columns {
        vehicle: find(&map.vehicle_id)?,
        frame: find(&map.frame_id)?,
        position: find(&map.position)?,
        speed: find(&map.speed)?,
        lane: find(&map.lane_id)?,
        preceding: find(&map.preceding)?,
        following: find(&map.following)?,
    })
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Option<TrajectoryRecord> {
    let get_i = |i: usize| -> Option<i64> { row.get(i)?.trim().parse::<f64>().ok().map(|v| v as i64) };
    let get_f = |i: usize| -> Option<f64> {
        let v: f64 = row.get(i)?.trim().parse().ok()?;
        v.is_finite().then_some(v)
    };
    let rec = TrajectoryRecord {
        vehicle_id: get_i(cols.vehicle)?,
        frame_id: get_i(cols.frame)?,
        position: get_f(cols.position)?,
        speed: get_f(cols.speed)?,
        lane_id: get_i(cols.lane)?,
        preceding_id: get_i(cols.preceding)?,
        following_id: get_i(cols.following)?,
    };
    (rec.speed >= 0.0).then_some(rec)
}

/// Ingests a record stream into leader / study / follower platoons of
/// exactly `platoon_len` contiguous frames. A platoon requires the study
/// vehicle's `preceding` and `following` ids constant and non-zero over
/// the span, all three vehicles present in the same lane every frame, and
/// strictly positive gaps. Maximal valid runs are chopped into
/// non-overlapping platoons.
pub fn ingest_ngsim<R: Read>(reader: R, config: &IngestConfig) -> Result<Ingested> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .flexible(true)
        .from_reader(reader);
    let cols = resolve_columns(csv_reader.headers()?, &config.columns)?;

    let mut report = IngestReport::default();
    // (vehicle, frame) -> record, with duplicate rejection
    let mut by_key: HashMap<(i64, i64), TrajectoryRecord> = HashMap::new();
    let mut frames_per_vehicle: HashMap<i64, Vec<i64>> = HashMap::new();
    for row in csv_reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                report.rows_rejected += 1;
                continue;
            }
        };
        report.rows_read += 1;
        let Some(rec) = parse_row(&row, &cols) else {
            report.rows_rejected += 1;
            continue;
        };
        let key = (rec.vehicle_id, rec.frame_id);
        if by_key.contains_key(&key) {
            report.rows_rejected += 1;
            continue;
        }
        by_key.insert(key, rec);
        frames_per_vehicle.entry(rec.vehicle_id).or_default().push(rec.frame_id);
    }

    let mut study_ids: Vec<i64> = frames_per_vehicle.keys().copied().collect();
    study_ids.sort_unstable();

    let mut platoons = Vec::new();
    for stu_id in study_ids {
        let mut frames = frames_per_vehicle[&stu_id].clone();
        frames.sort_unstable();

        // per-frame validity of the triple around this study vehicle
        let valid = |f: i64| -> Option<(i64, i64)> {
            let stu = by_key.get(&(stu_id, f))?;
            if stu.preceding_id <= 0 || stu.following_id <= 0 {
                return None;
            }
            let lea = by_key.get(&(stu.preceding_id, f))?;
            let fol = by_key.get(&(stu.following_id, f))?;
            if lea.lane_id != stu.lane_id || fol.lane_id != stu.lane_id {
                return None;
            }
            if !(lea.position > stu.position && stu.position > fol.position) {
                return None;
            }
            Some((stu.preceding_id, stu.following_id))
        };

        // maximal runs of consecutive frames with constant neighbours
        let mut run_start = 0usize;
        let mut i = 0usize;
        while i < frames.len() {
            let here = valid(frames[i]);
            let extends = i > run_start
                && frames[i] == frames[i - 1] + 1
                && here.is_some()
                && here == valid(frames[i - 1]);
            let starts = here.is_some() && (i == run_start || !extends);
            if !extends && !starts {
                run_start = i + 1;
                i += 1;
                continue;
            }
            if starts && i > run_start {
                run_start = i;
            }
            // extend the run as far as it goes
            let mut j = i + 1;
            while j < frames.len()
                && frames[j] == frames[j - 1] + 1
                && valid(frames[j]) == here
                && here.is_some()
            {
                j += 1;
            }
            // chop non-overlapping platoons out of [run_start, j)
            let run_len = j - run_start;
            let (lea_id, fol_id) = here.unwrap();
            let mut s = run_start;
            while s + config.platoon_len <= run_start + run_len {
                let span = &frames[s..s + config.platoon_len];
                let collect = |vid: i64| -> VehicleTrack {
                    let mut positions = Vec::with_capacity(span.len());
                    let mut speeds = Vec::with_capacity(span.len());
                    for &f in span {
                        let r = &by_key[&(vid, f)];
                        positions.push(r.position);
                        speeds.push(r.speed);
                    }
                    VehicleTrack {
                        vehicle_id: vid,
                        start_frame: span[0],
                        positions,
                        speeds,
                    }
                };
                let lane = by_key[&(stu_id, span[0])].lane_id;
                platoons.push(PlatoonTrajectory {
                    platoon_id: platoons.len() as u64,
                    lane,
                    lea: collect(lea_id),
                    stu: collect(stu_id),
                    fol: collect(fol_id),
                });
                s += config.platoon_len;
            }
            run_start = j;
            i = j;
        }
    }

    report.platoons_found = platoons.len();
    report.trajectories = platoons.len() * 3;
    if platoons.is_empty() {
        warn!(
            "no platoons found: {} rows read, {} rejected",
            report.rows_read, report.rows_rejected
        );
        return Err(Error::NoPlatoonsFound {
            rows_read: report.rows_read,
            rows_rejected: report.rows_rejected,
        });
    }
    Ok(Ingested { platoons, report })
}
