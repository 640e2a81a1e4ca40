//! Immutable dataset model: censored event times, event indicators, and
//! time-stamped covariate measurements, plus CSV ingestion and the data
//! manipulations used for competing-risk and rescaled-time analyses.

use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file} is missing required column '{column}'")]
    MissingColumn { file: &'static str, column: String },
    #[error("{file} row {row}: field '{field}' is not numeric: '{value}'")]
    NonNumeric {
        file: &'static str,
        row: usize,
        field: String,
        value: String,
    },
    #[error("status for id '{id}' must be 0 or 1, got '{value}'")]
    InvalidStatus { id: String, value: String },
    #[error("duplicate id '{0}' in survival file")]
    DuplicateId(String),
    #[error("orphan measurement: id '{0}' has no survival row")]
    OrphanMeasurement(String),
    #[error("empty dataset: survival file has no rows")]
    EmptyDataset,
    #[error("subject '{id}' has nonfinite or negative time {value}")]
    BadTime { id: String, value: f64 },
    #[error("subject '{id}' has a nonfinite covariate value")]
    NonFiniteCovariate { id: String },
    #[error("subject '{id}' has {got} covariates, expected {expected}")]
    CovariateWidth {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("measurement time {time} exceeds end-of-study tau {tau}")]
    MeasurementBeyondTau { time: f64, tau: f64 },
    #[error("follow-up time {x} exceeds end-of-study tau {tau}")]
    FollowupBeyondTau { x: f64, tau: f64 },
    #[error("max_followup {max_followup} is smaller than observed time {x}")]
    MaxFollowupTooSmall { max_followup: f64, x: f64 },
    #[error("cannot rescale: largest follow-up time is zero")]
    DegenerateTimes,
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
}

/// One covariate observation: `z` measured at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub time: f64,
    pub z: Vec<f64>,
}

/// One unit: follow-up time `x = min(event, censoring)`, event indicator,
/// and the measurement history (sorted by time, ties in input order).
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub x: f64,
    pub delta: bool,
    pub measurements: Vec<Measurement>,
}

/// An immutable study dataset. Construction validates every invariant, so
/// downstream code can assume sorted, finite, in-range values and share the
/// dataset across threads freely.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    p: usize,
    tau: f64,
}

impl Dataset {
    pub fn new(mut subjects: Vec<Subject>, p: usize, tau: f64) -> Result<Self, DataError> {
        if subjects.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if tau.is_nan() || tau <= 0.0 || !tau.is_finite() {
            return Err(DataError::BadTau(tau));
        }
        for subject in &mut subjects {
            if !subject.x.is_finite() || subject.x < 0.0 {
                return Err(DataError::BadTime {
                    id: subject.id.clone(),
                    value: subject.x,
                });
            }
            if subject.x > tau {
                return Err(DataError::FollowupBeyondTau { x: subject.x, tau });
            }
            subject
                .measurements
                .sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
            for m in &subject.measurements {
                if !m.time.is_finite() || m.time < 0.0 {
                    return Err(DataError::BadTime {
                        id: subject.id.clone(),
                        value: m.time,
                    });
                }
                if m.time > tau {
                    return Err(DataError::MeasurementBeyondTau { time: m.time, tau });
                }
                if m.z.len() != p {
                    return Err(DataError::CovariateWidth {
                        id: subject.id.clone(),
                        got: m.z.len(),
                        expected: p,
                    });
                }
                if m.z.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::NonFiniteCovariate {
                        id: subject.id.clone(),
                    });
                }
            }
        }
        Ok(Dataset { subjects, p, tau })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// End-of-study time.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn events(&self) -> usize {
        self.subjects.iter().filter(|s| s.delta).count()
    }

    /// Keep only the subjects at `indices` (used by cross-validation folds).
    pub fn restricted_to(&self, indices: &[usize]) -> Result<Self, DataError> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Dataset::new(subjects, self.p, self.tau)
    }
}

/// Summary counts plus the subjects whose event term would get zero kernel
/// weight at bandwidth `h` (no measurement in `(x - h, x]` despite an event).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub events: usize,
    pub mean_measurements: f64,
    pub zero_weight_events: Vec<String>,
    pub zero_measurement_subjects: usize,
    pub warnings: Vec<String>,
}

pub fn validate(data: &Dataset, h: f64) -> ValidationReport {
    assert!(h > 0.0, "bandwidth must be positive");
    let n = data.n();
    let events = data.events();
    let total_meas: usize = data.subjects().iter().map(|s| s.measurements.len()).sum();
    let zero_measurement_subjects = data
        .subjects()
        .iter()
        .filter(|s| s.measurements.is_empty())
        .count();
    let zero_weight_events: Vec<String> = data
        .subjects()
        .iter()
        .filter(|s| {
            s.delta
                && !s
                    .measurements
                    .iter()
                    .any(|m| m.time <= s.x && s.x - m.time < h)
        })
        .map(|s| s.id.clone())
        .collect();
    let mut warnings = Vec::new();
    if events == 0 {
        warnings.push("no events".to_string());
    }
    if !zero_weight_events.is_empty() {
        warnings.push(format!(
            "{} event(s) receive zero kernel weight at h={h}",
            zero_weight_events.len()
        ));
    }
    ValidationReport {
        n,
        events,
        mean_measurements: total_meas as f64 / n as f64,
        zero_weight_events,
        zero_measurement_subjects,
        warnings,
    }
}

/// Recode competing-event subjects as censored at `max_followup`, the
/// subdistribution-hazard device of keeping them in the risk set until the
/// end of the study. Idempotent; `n` and `p` never change.
pub fn recode_competing(
    data: &Dataset,
    competing_ids: &[String],
    max_followup: f64,
) -> Result<Dataset, DataError> {
    if let Some(s) = data.subjects().iter().find(|s| s.x > max_followup) {
        return Err(DataError::MaxFollowupTooSmall {
            max_followup,
            x: s.x,
        });
    }
    let subjects = data
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if competing_ids.contains(&s.id) {
                s.x = max_followup;
                s.delta = false;
            }
            s
        })
        .collect();
    Dataset::new(subjects, data.p(), data.tau().max(max_followup))
}

/// Divide every follow-up and measurement time by the largest follow-up
/// time, so the study lives on `[0, 1]`.
pub fn rescale_time(data: &Dataset) -> Result<Dataset, DataError> {
    let scale = data.subjects().iter().map(|s| s.x).fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return Err(DataError::DegenerateTimes);
    }
    let subjects = data
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.x /= scale;
            for m in &mut s.measurements {
                m.time /= scale;
            }
            s
        })
        .collect();
    Dataset::new(subjects, data.p(), 1.0)
}

fn header_index(
    headers: &csv::StringRecord,
    name: &str,
    file: &'static str,
) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|f| f.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| DataError::MissingColumn {
            file,
            column: name.to_string(),
        })
}

fn parse_num(value: &str, file: &'static str, row: usize, field: &str) -> Result<f64, DataError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::NonNumeric {
            file,
            row,
            field: field.to_string(),
            value: value.to_string(),
        })
}

/// Load a dataset from a survival table `(id, time, status)` and a
/// longitudinal table `(id, obs_time, z1..zp)`. Subjects keep the survival
/// file order; measurements are grouped by id and sorted by time. `tau`
/// defaults to the largest follow-up time.
pub fn load_dataset<R1: Read, R2: Read>(
    survival: R1,
    longitudinal: R2,
) -> Result<Dataset, DataError> {
    let mut surv = csv::Reader::from_reader(survival);
    let headers = surv.headers()?.clone();
    let id_col = header_index(&headers, "id", "survival")?;
    let time_col = header_index(&headers, "time", "survival")?;
    let status_col = header_index(&headers, "status", "survival")?;

    let mut order: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, (f64, bool)> = BTreeMap::new();
    for (i, record) in surv.records().enumerate() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let x = parse_num(
            record.get(time_col).unwrap_or(""),
            "survival",
            i + 2,
            "time",
        )?;
        let status_raw = record.get(status_col).unwrap_or("").trim();
        let status = parse_num(status_raw, "survival", i + 2, "status")?;
        let delta = if status == 0.0 {
            false
        } else if status == 1.0 {
            true
        } else {
            return Err(DataError::InvalidStatus {
                id,
                value: status_raw.to_string(),
            });
        };
        if table.insert(id.clone(), (x, delta)).is_some() {
            return Err(DataError::DuplicateId(id));
        }
        order.push(id);
    }
    if order.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let mut long = csv::Reader::from_reader(longitudinal);
    let long_headers = long.headers()?.clone();
    let l_id = header_index(&long_headers, "id", "longitudinal")?;
    let l_time = header_index(&long_headers, "obs_time", "longitudinal")?;
    let z_cols: Vec<usize> = (0..long_headers.len())
        .filter(|&c| c != l_id && c != l_time)
        .collect();
    let p = z_cols.len();

    let mut measurements: BTreeMap<String, Vec<Measurement>> = BTreeMap::new();
    for (i, record) in long.records().enumerate() {
        let record = record?;
        let id = record.get(l_id).unwrap_or("").trim().to_string();
        if !table.contains_key(&id) {
            return Err(DataError::OrphanMeasurement(id));
        }
        let time = parse_num(
            record.get(l_time).unwrap_or(""),
            "longitudinal",
            i + 2,
            "obs_time",
        )?;
        let z = z_cols
            .iter()
            .map(|&c| {
                parse_num(
                    record.get(c).unwrap_or(""),
                    "longitudinal",
                    i + 2,
                    long_headers.get(c).unwrap_or("z"),
                )
            })
            .collect::<Result<Vec<f64>, _>>()?;
        measurements
            .entry(id)
            .or_default()
            .push(Measurement { time, z });
    }

    let tau = table.values().map(|&(x, _)| x).fold(0.0f64, f64::max);
    let subjects = order
        .into_iter()
        .map(|id| {
            let (x, delta) = table[&id];
            Subject {
                measurements: measurements.remove(&id).unwrap_or_default(),
                id,
                x,
                delta,
            }
        })
        .collect();
    Dataset::new(subjects, p, tau)
}

pub fn load_dataset_paths<P: AsRef<Path>, Q: AsRef<Path>>(
    survival: P,
    longitudinal: Q,
) -> Result<Dataset, DataError> {
    load_dataset(
        std::fs::File::open(survival)?,
        std::fs::File::open(longitudinal)?,
    )
}

/// Write a dataset back to the two-file CSV layout, round-tripping every
/// value at full precision.
pub fn write_dataset<W1: Write, W2: Write>(
    data: &Dataset,
    survival: &mut W1,
    longitudinal: &mut W2,
) -> Result<(), DataError> {
    writeln!(survival, "id,time,status")?;
    for s in data.subjects() {
        writeln!(survival, "{},{},{}", s.id, s.x, u8::from(s.delta))?;
    }
    write!(longitudinal, "id,obs_time")?;
    for j in 1..=data.p() {
        write!(longitudinal, ",z{j}")?;
    }
    writeln!(longitudinal)?;
    for s in data.subjects() {
        for m in &s.measurements {
            write!(longitudinal, "{},{}", s.id, m.time)?;
            for v in &m.z {
                write!(longitudinal, ",{v}")?;
            }
            writeln!(longitudinal)?;
        }
    }
    Ok(())
}
