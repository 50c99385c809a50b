//! Long-format station/species/time/value CSV ingestion and windowing.
//!
//! The on-disk schema is one reading per row: `station_id,timestamp,species,value`
//! with ISO-8601 UTC timestamps and an empty value cell marking a missing
//! reading. A whole species absent at a station is simply an absent series;
//! a gap in the timestamp grid of a present series is a hard error, so every
//! loaded series is uniformly sampled with missing values made explicit.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use thiserror::Error;

/// Chemical species identifier: one of the conventional codes or any
/// non-empty user-defined string.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct SpeciesId(String);

impl SpeciesId {
    pub fn new(code: &str) -> Result<Self, DatasetError> {
        if code.trim().is_empty() {
            return Err(DatasetError::EmptySpeciesCode);
        }
        Ok(SpeciesId(code.trim().to_string()))
    }

    pub fn no2() -> Self {
        SpeciesId("NO2".into())
    }

    pub fn o3() -> Self {
        SpeciesId("O3".into())
    }

    pub fn no() -> Self {
        SpeciesId("NO".into())
    }

    pub fn nox() -> Self {
        SpeciesId("NOx".into())
    }

    pub fn code(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeciesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Station identifier (opaque string key).
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct StationId(pub String);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        StationId(s.to_string())
    }
}

/// Uniformly sampled concentration readings for one species at one station.
///
/// `values[i]` is the reading at `t0 + i * dt_hours`; `None` marks a
/// missing reading on an otherwise intact grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub station: StationId,
    pub species: SpeciesId,
    pub t0: DateTime<Utc>,
    pub dt_hours: f64,
    pub values: Vec<Option<f64>>,
}

impl RawSeries {
    /// Timestamp of the i-th grid slot.
    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.t0 + Duration::seconds((self.dt_hours * 3600.0).round() as i64 * i as i64)
    }

    /// Timestamp of the last grid slot.
    pub fn t_end(&self) -> DateTime<Utc> {
        self.time_at(self.values.len().saturating_sub(1))
    }
}

/// Optional per-station metadata from a `station_id,name,latitude,longitude` CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StationMeta {
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// A collection of [`RawSeries`] keyed by `(station, species)`.
///
/// All series at one station share `t0` and `dt_hours`, so windows cut from
/// different species of the same station are always aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationDataset {
    series: BTreeMap<(StationId, SpeciesId), RawSeries>,
    pub metadata: BTreeMap<StationId, StationMeta>,
}

/// Half-inclusive is the wrong mental model here: both `start` and `end`
/// are sampling instants, so a window spanning k-1 hours of hourly data
/// contains k readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, DatasetError> {
        if start >= end {
            return Err(DatasetError::InvalidWindow { start, end });
        }
        Ok(TimeWindow { start, end })
    }
}

/// Column-name mapping for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub station: String,
    pub timestamp: String,
    pub species: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            station: "station_id".into(),
            timestamp: "timestamp".into(),
            species: "species".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column '{0}' in header")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate reading for ({station}, {species}) at {timestamp}")]
    DuplicateReading {
        station: StationId,
        species: SpeciesId,
        timestamp: DateTime<Utc>,
    },
    #[error("non-uniform time step for ({station}, {species}) at {timestamp}")]
    NonUniformStep {
        station: StationId,
        species: SpeciesId,
        timestamp: DateTime<Utc>,
    },
    #[error("series for ({station}, {species}) does not share the station grid (t0/dt)")]
    MisalignedSeries {
        station: StationId,
        species: SpeciesId,
    },
    #[error("species {species} absent at station {station}")]
    MissingSeries {
        station: StationId,
        species: SpeciesId,
    },
    #[error("missing value for ({station}, {species}) at {timestamp} inside requested window")]
    MissingValue {
        station: StationId,
        species: SpeciesId,
        timestamp: DateTime<Utc>,
    },
    #[error("window [{start}, {end}] is empty or outside the data range")]
    WindowOutsideRange {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("window boundary {0} does not align to the sampling grid")]
    WindowNotAligned(DateTime<Utc>),
    #[error("invalid window: start {start} must precede end {end}")]
    InvalidWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("species code must be non-empty")]
    EmptySpeciesCode,
    #[error("non-finite value at line {line}")]
    NonFiniteValue { line: u64 },
}

impl StationDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a series, enforcing key uniqueness and the shared station grid.
    pub fn insert_series(&mut self, s: RawSeries) -> Result<(), DatasetError> {
        let key = (s.station.clone(), s.species.clone());
        if self.series.contains_key(&key) {
            return Err(DatasetError::DuplicateReading {
                station: s.station,
                species: s.species,
                timestamp: s.t0,
            });
        }
        if let Some(peer) = self.series.values().find(|p| p.station == s.station) {
            if peer.t0 != s.t0 || peer.dt_hours != s.dt_hours {
                return Err(DatasetError::MisalignedSeries {
                    station: s.station,
                    species: s.species,
                });
            }
        }
        self.series.insert(key, s);
        Ok(())
    }

    pub fn get(&self, station: &StationId, species: &SpeciesId) -> Option<&RawSeries> {
        self.series.get(&(station.clone(), species.clone()))
    }

    pub fn stations(&self) -> Vec<StationId> {
        let mut out: Vec<StationId> = self.series.keys().map(|(s, _)| s.clone()).collect();
        out.dedup();
        out
    }

    pub fn species_at(&self, station: &StationId) -> Vec<SpeciesId> {
        self.series
            .keys()
            .filter(|(s, _)| s == station)
            .map(|(_, sp)| sp.clone())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RawSeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

fn parse_timestamp(raw: &str, line: u64) -> Result<DateTime<Utc>, DatasetError> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(DateTime::from_naive_utc_and_offset(naive, Utc));
        }
    }
    Err(DatasetError::MalformedRow {
        line,
        reason: format!("unparseable timestamp '{raw}'"),
    })
}

/// Raw readings grouped per `(station, species)`, still unordered and with
/// missing value cells kept as `None`.
type ReadingGroups = BTreeMap<(StationId, SpeciesId), Vec<(DateTime<Utc>, Option<f64>)>>;

/// Load a long-format CSV into a [`StationDataset`].
///
/// Rows are grouped by `(station, species)`, sorted by time, checked for
/// duplicates and for a uniform timestamp grid, and empty value cells become
/// missing entries.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<StationDataset, DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let (ci_station, ci_time, ci_species, ci_value) = (
        col(&schema.station)?,
        col(&schema.timestamp)?,
        col(&schema.species)?,
        col(&schema.value)?,
    );

    let mut groups = ReadingGroups::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str, DatasetError> {
            rec.get(i).ok_or(DatasetError::MalformedRow {
                line,
                reason: "too few fields".into(),
            })
        };
        let station = StationId(field(ci_station)?.trim().to_string());
        let species =
            SpeciesId::new(field(ci_species)?).map_err(|_| DatasetError::MalformedRow {
                line,
                reason: "empty species code".into(),
            })?;
        let t = parse_timestamp(field(ci_time)?, line)?;
        let vraw = field(ci_value)?.trim();
        let value = if vraw.is_empty() {
            None
        } else {
            let v: f64 = vraw.parse().map_err(|_| DatasetError::MalformedRow {
                line,
                reason: format!("unparseable value '{vraw}'"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFiniteValue { line });
            }
            Some(v)
        };
        groups
            .entry((station, species))
            .or_default()
            .push((t, value));
    }

    let mut ds = StationDataset::new();
    for ((station, species), mut rows) in groups {
        rows.sort_by_key(|(t, _)| *t);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(DatasetError::DuplicateReading {
                    station,
                    species,
                    timestamp: pair[0].0,
                });
            }
        }
        // Uniform grid: every consecutive delta must equal the first one.
        let dt_sec = if rows.len() >= 2 {
            (rows[1].0 - rows[0].0).num_seconds()
        } else {
            3600
        };
        for pair in rows.windows(2) {
            if (pair[1].0 - pair[0].0).num_seconds() != dt_sec {
                return Err(DatasetError::NonUniformStep {
                    station,
                    species,
                    timestamp: pair[1].0,
                });
            }
        }
        ds.insert_series(RawSeries {
            station,
            species,
            t0: rows[0].0,
            dt_hours: dt_sec as f64 / 3600.0,
            values: rows.into_iter().map(|(_, v)| v).collect(),
        })?;
    }
    Ok(ds)
}

/// Load optional station metadata (`station_id,name,latitude,longitude`).
pub fn load_station_meta(ds: &mut StationDataset, path: &Path) -> Result<(), DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<&str, DatasetError> {
            rec.get(i).ok_or(DatasetError::MalformedRow {
                line,
                reason: "too few fields".into(),
            })
        };
        let station = StationId(get(0)?.trim().to_string());
        let meta = StationMeta {
            name: get(1)?.trim().to_string(),
            latitude: get(2)?
                .trim()
                .parse()
                .map_err(|_| DatasetError::MalformedRow {
                    line,
                    reason: "bad latitude".into(),
                })?,
            longitude: get(3)?
                .trim()
                .parse()
                .map_err(|_| DatasetError::MalformedRow {
                    line,
                    reason: "bad longitude".into(),
                })?,
        };
        ds.metadata.insert(station, meta);
    }
    Ok(())
}

/// Write a dataset back to the standard CSV schema.
///
/// Every grid slot is emitted, with an empty value cell for missing readings,
/// so `load_csv(write_csv(ds))` round-trips bit-exactly (f64 `Display` is the
/// shortest round-trip representation).
pub fn write_csv(ds: &StationDataset, path: &Path) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["station_id", "timestamp", "species", "value"])?;
    for s in ds.iter() {
        for (i, v) in s.values.iter().enumerate() {
            let t = s.time_at(i).format("%Y-%m-%dT%H:%M:%SZ").to_string();
            let cell = v.map_or(String::new(), |x| x.to_string());
            wtr.write_record([s.station.0.as_str(), &t, s.species.code(), &cell])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Cut an aligned, gap-free sub-series per requested species.
///
/// All outputs have identical length M (the number of grid points between the
/// window endpoints, both inclusive). Any missing value inside the window is
/// an error naming the first gap timestamp.
pub fn select_window(
    ds: &StationDataset,
    station: &StationId,
    species: &[SpeciesId],
    w: &TimeWindow,
) -> Result<Vec<RawSeries>, DatasetError> {
    let mut out = Vec::with_capacity(species.len());
    for sp in species {
        let s = ds
            .get(station, sp)
            .ok_or_else(|| DatasetError::MissingSeries {
                station: station.clone(),
                species: sp.clone(),
            })?;
        let dt_sec = (s.dt_hours * 3600.0).round() as i64;
        let offset = |t: DateTime<Utc>| -> Result<i64, DatasetError> {
            let d = (t - s.t0).num_seconds();
            if d.rem_euclid(dt_sec) != 0 {
                return Err(DatasetError::WindowNotAligned(t));
            }
            Ok(d.div_euclid(dt_sec))
        };
        let i0 = offset(w.start)?;
        let i1 = offset(w.end)?;
        if i0 < 0 || i1 >= s.values.len() as i64 || i1 < i0 {
            return Err(DatasetError::WindowOutsideRange {
                start: w.start,
                end: w.end,
            });
        }
        let (i0, i1) = (i0 as usize, i1 as usize);
        let mut vals = Vec::with_capacity(i1 - i0 + 1);
        for i in i0..=i1 {
            match s.values[i] {
                Some(v) => vals.push(Some(v)),
                None => {
                    return Err(DatasetError::MissingValue {
                        station: station.clone(),
                        species: sp.clone(),
                        timestamp: s.time_at(i),
                    })
                }
            }
        }
        out.push(RawSeries {
            station: station.clone(),
            species: sp.clone(),
            t0: w.start,
            dt_hours: s.dt_hours,
            values: vals,
        });
    }
    Ok(out)
}
