//! Clustered failure-time records, validation, CSV ingestion, and risk-set
//! queries.
//!
//! Records are stored cluster-major with exactly `J` slots per cluster. A
//! member missing from a cluster occupies its slot as an absent record
//! (`X = 0`, `Δ = 0`) and never enters a risk set.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord<T> {
    pub cluster_id: u64,
    /// Member index `j`, 1-based.
    pub member: usize,
    /// Observed time `X = min(T, C)`.
    pub time: T,
    /// `Δ`: true for an observed failure.
    pub event: bool,
    /// Exposure-modifying covariate `V`.
    pub v: T,
    pub z: Vec<T>,
}

impl<T: Real> SubjectRecord<T> {
    pub fn new(cluster_id: u64, member: usize, time: T, event: bool, v: T, z: Vec<T>) -> Self {
        Self {
            cluster_id,
            member,
            time,
            event,
            v,
            z,
        }
    }

    /// Counting process `N(t) = I(X ≤ t, Δ = 1)`.
    pub fn counting(&self, t: T) -> bool {
        self.event && self.time <= t
    }

    /// At-risk indicator `Y(t) = I(X ≥ t)`.
    pub fn at_risk(&self, t: T) -> bool {
        self.time >= t
    }

    fn absent(cluster_id: u64, member: usize, p: usize) -> Self {
        Self::new(cluster_id, member, T::zero(), false, T::zero(), vec![T::zero(); p])
    }

    fn cast<U: Real>(&self) -> SubjectRecord<U> {
        let c = |x: T| U::lit(x.as_f64());
        SubjectRecord {
            cluster_id: self.cluster_id,
            member: self.member,
            time: c(self.time),
            event: self.event,
            v: c(self.v),
            z: self.z.iter().map(|&x| c(x)).collect(),
        }
    }
}

/// Validated, immutable clustered data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    records: Vec<SubjectRecord<T>>,
    present: Vec<bool>,
    cluster_ids: Vec<u64>,
    members: usize,
    p: usize,
    tau: T,
    /// Per member: slot indices of present records, ascending by (time, cluster id).
    by_time: Vec<Vec<usize>>,
}

impl<T: Real> Dataset<T> {
    /// Validates records and builds the per-member time index. `tau` defaults
    /// to the largest observed time.
    pub fn from_records(records: Vec<SubjectRecord<T>>, tau: Option<T>) -> Result<Self> {
        let rows: Vec<(usize, SubjectRecord<T>)> = records.into_iter().enumerate().collect();
        Self::from_numbered(rows, tau)
    }

    fn from_numbered(rows: Vec<(usize, SubjectRecord<T>)>, tau: Option<T>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoRecords);
        }
        let p = rows[0].1.z.len();
        let mut seen = HashSet::new();
        let mut members = 0;
        for (row, r) in &rows {
            let bad = |message: String| Error::Row { row: *row + 1, message };
            if r.z.len() != p {
                return Err(bad(format!("expected {p} covariates, found {}", r.z.len())));
            }
            if r.member == 0 {
                return Err(bad("member index must be >= 1".into()));
            }
            if !r.time.is_finite() || r.time < T::zero() {
                return Err(bad(format!("negative or non-finite time {}", r.time)));
            }
            if !r.v.is_finite() || r.z.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite covariate".into()));
            }
            if !seen.insert((r.cluster_id, r.member)) {
                return Err(bad(format!(
                    "duplicate (cluster {}, member {})",
                    r.cluster_id, r.member
                )));
            }
            members = members.max(r.member);
        }

        let cluster_ids: Vec<u64> = rows
            .iter()
            .map(|(_, r)| r.cluster_id)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let slot_of: BTreeMap<u64, usize> =
            cluster_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        let n = cluster_ids.len();
        let mut slots: Vec<Option<SubjectRecord<T>>> = vec![None; n * members];
        for (_, r) in rows {
            let idx = slot_of[&r.cluster_id] * members + (r.member - 1);
            slots[idx] = Some(r);
        }
        let mut present = Vec::with_capacity(n * members);
        let records: Vec<SubjectRecord<T>> = slots
            .into_iter()
            .enumerate()
            .map(|(idx, slot)| {
                present.push(slot.is_some());
                slot.unwrap_or_else(|| SubjectRecord::absent(cluster_ids[idx / members], idx % members + 1, p))
            })
            .collect();

        let max_time = records
            .iter()
            .zip(&present)
            .filter(|(_, &pr)| pr)
            .fold(T::zero(), |m, (r, _)| m.max(r.time));
        let tau = match tau {
            Some(t) if !(t.is_finite() && t > T::zero()) => {
                return Err(Error::InvalidArgument(format!("tau must be positive, got {t}")))
            }
            Some(t) => t,
            None => max_time,
        };

        let mut by_time = vec![Vec::new(); members];
        for (idx, r) in records.iter().enumerate() {
            if present[idx] {
                by_time[r.member - 1].push(idx);
            }
        }
        for list in &mut by_time {
            list.sort_by(|&a, &b| {
                records[a]
                    .time
                    .partial_cmp(&records[b].time)
                    .unwrap()
                    .then(records[a].cluster_id.cmp(&records[b].cluster_id))
            });
        }

        Ok(Self {
            records,
            present,
            cluster_ids,
            members,
            p,
            tau,
            by_time,
        })
    }

    /// Number of clusters `n`.
    pub fn n(&self) -> usize {
        self.cluster_ids.len()
    }

    /// Members per cluster `J`.
    pub fn members(&self) -> usize {
        self.members
    }

    /// Covariate dimension `p`.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn with_tau(&self, tau: T) -> Result<Self> {
        let rows = self.present_records().cloned().enumerate().collect();
        Self::from_numbered(rows, Some(tau))
    }

    pub fn cluster_ids(&self) -> &[u64] {
        &self.cluster_ids
    }

    /// All `n·J` slots, cluster-major.
    pub fn records(&self) -> &[SubjectRecord<T>] {
        &self.records
    }

    pub fn slot(&self, cluster: usize, member: usize) -> usize {
        cluster * self.members + (member - 1)
    }

    pub fn record(&self, cluster: usize, member: usize) -> &SubjectRecord<T> {
        &self.records[self.slot(cluster, member)]
    }

    pub fn is_present(&self, slot: usize) -> bool {
        self.present[slot]
    }

    pub fn present_records(&self) -> impl Iterator<Item = &SubjectRecord<T>> {
        self.records
            .iter()
            .zip(&self.present)
            .filter(|(_, &p)| p)
            .map(|(r, _)| r)
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Cluster index (0-based position) of a slot.
    pub fn cluster_of(&self, slot: usize) -> usize {
        slot / self.members
    }

    /// Whether a record's failure counts as an event in `[0, τ]`.
    pub fn counts_as_event(&self, slot: usize) -> bool {
        self.present[slot] && self.records[slot].event && self.records[slot].time <= self.tau
    }

    fn check_member(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.members {
            return Err(Error::MemberOutOfRange {
                index: j,
                members: self.members,
            });
        }
        Ok(())
    }

    /// Slots of present member-`j` records, ascending by (time, cluster id).
    pub fn member_slots(&self, j: usize) -> Result<&[usize]> {
        self.check_member(j)?;
        Ok(&self.by_time[j - 1])
    }

    /// Cluster ids `i` with `X_ij ≥ t`, ascending.
    pub fn risk_set(&self, j: usize, t: T) -> Result<Vec<u64>> {
        let slots = self.member_slots(j)?;
        let start = slots.partition_point(|&s| self.records[s].time < t);
        let mut ids: Vec<u64> = slots[start..]
            .iter()
            .map(|&s| self.records[s].cluster_id)
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// `(time, cluster id)` of member-`j` failures in `[0, τ]`, ascending with
    /// ties broken by cluster id.
    pub fn event_times(&self, j: usize) -> Result<Vec<(T, u64)>> {
        let slots = self.member_slots(j)?;
        Ok(slots
            .iter()
            .filter(|&&s| self.counts_as_event(s))
            .map(|&s| (self.records[s].time, self.records[s].cluster_id))
            .collect())
    }

    /// Range of `V` over present records.
    pub fn v_range(&self) -> (T, T) {
        self.present_records().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), r| (lo.min(r.v), hi.max(r.v)),
        )
    }

    /// The data restricted to member index `j`, re-indexed as a
    /// single-member set over the same clusters.
    pub fn member_subset(&self, j: usize) -> Result<Self> {
        self.check_member(j)?;
        let mut records = Vec::with_capacity(self.n());
        let mut present = Vec::with_capacity(self.n());
        for c in 0..self.n() {
            let slot = self.slot(c, j);
            let mut r = self.records[slot].clone();
            r.member = 1;
            records.push(r);
            present.push(self.present[slot]);
        }
        let mut order = self.by_time[j - 1]
            .iter()
            .map(|&s| self.cluster_of(s))
            .collect::<Vec<_>>();
        order.shrink_to_fit();
        Ok(Self {
            records,
            present,
            cluster_ids: self.cluster_ids.clone(),
            members: 1,
            p: self.p,
            tau: self.tau,
            by_time: vec![order],
        })
    }

    /// Converts the scalar type.
    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            records: self.records.iter().map(SubjectRecord::cast).collect(),
            present: self.present.clone(),
            cluster_ids: self.cluster_ids.clone(),
            members: self.members,
            p: self.p,
            tau: U::lit(self.tau.as_f64()),
            by_time: self.by_time.clone(),
        }
    }
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub cluster: String,
    pub member: String,
    pub time: String,
    pub status: String,
    pub v: String,
    /// Covariate columns in order; empty means every `z<k>` column, by `k`.
    pub z: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            cluster: "cluster".into(),
            member: "member".into(),
            time: "time".into(),
            status: "status".into(),
            v: "v".into(),
            z: Vec::new(),
        }
    }
}

impl Schema {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<ResolvedSchema> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let z = if self.z.is_empty() {
            let mut zs: Vec<(u32, usize)> = headers
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    let h = h.trim();
                    h.strip_prefix('z')
                        .and_then(|k| k.parse::<u32>().ok())
                        .map(|k| (k, i))
                })
                .collect();
            zs.sort_unstable();
            zs.into_iter().map(|(_, i)| i).collect()
        } else {
            self.z.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?
        };
        Ok(ResolvedSchema {
            cluster: find(&self.cluster)?,
            member: find(&self.member)?,
            time: find(&self.time)?,
            status: find(&self.status)?,
            v: find(&self.v)?,
            z,
        })
    }
}

struct ResolvedSchema {
    cluster: usize,
    member: usize,
    time: usize,
    status: usize,
    v: usize,
    z: Vec<usize>,
}

/// Reads a data CSV with a header row from any reader.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema, tau: Option<f64>) -> Result<Dataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidData(e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(Error::NoRecords);
    }
    let cols = schema.resolve(&headers)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<&str> {
            rec.get(idx).ok_or_else(|| Error::Row {
                row,
                message: format!("missing cell in column {}", &headers[idx]),
            })
        };
        let num = |idx: usize| -> Result<f64> {
            let s = cell(idx)?;
            s.parse::<f64>().map_err(|_| Error::Row {
                row,
                message: format!("non-numeric value `{s}` in column {}", &headers[idx]),
            })
        };
        let int = |idx: usize| -> Result<u64> {
            let x = num(idx)?;
            if x < 0.0 || x.fract() != 0.0 || x > u64::MAX as f64 {
                return Err(Error::Row {
                    row,
                    message: format!("expected a non-negative integer in column {}", &headers[idx]),
                });
            }
            Ok(x as u64)
        };
        let status = num(cols.status)?;
        if status != 0.0 && status != 1.0 {
            return Err(Error::Row {
                row,
                message: format!("status must be 0 or 1, found {status}"),
            });
        }
        let time = num(cols.time)?;
        if time < 0.0 {
            return Err(Error::Row {
                row,
                message: format!("negative time {time}"),
            });
        }
        let member = int(cols.member)? as usize;
        let z = cols.z.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        rows.push((
            i,
            SubjectRecord::new(int(cols.cluster)?, member, time, status == 1.0, num(cols.v)?, z),
        ));
    }
    Dataset::from_numbered(rows, tau)
}

/// Loads a data CSV from disk.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file, schema, None)
}

/// Writes present records as CSV with columns `cluster,member,time,status,v,z1..zp`.
pub fn write_dataset<W: Write, T: Real>(ds: &Dataset<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["cluster", "member", "time", "status", "v"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=ds.p()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for r in ds.present_records() {
        let mut row = vec![
            r.cluster_id.to_string(),
            r.member.to_string(),
            r.time.to_string(),
            u8::from(r.event).to_string(),
            r.v.to_string(),
        ];
        row.extend(r.z.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
