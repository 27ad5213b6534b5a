//! Analysis descriptors, execution, and result accumulation.
//!
//! Four analysis kinds run over a station's filtered records: a plain
//! `count`, numeric `summary_stats`, a Paillier-encrypted `paillier_count`
//! whose per-station tallies stay opaque to every station, and a
//! `top_k_hist` value histogram. Results accumulate station by station:
//! each station appends its own entry and the merged view is recomputed
//! from all entries, so the structure is independent of how many hops
//! remain. Raw records never enter a result — only aggregates do.

use crate::model::canonical_json;
use crate::paillier::{self, PaillierCiphertext, PaillierError, PaillierPublicKey};
use crate::query::{DataError, FilterExpr, QueryError, Record, RecordSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("unsupported analysis kind `{0}`")]
    UnsupportedKind(String),
    #[error("malformed analysis parameters: {0}")]
    BadParams(String),
    #[error("previous results are `{found}` but the descriptor requests `{expected}`")]
    KindMismatch {
        expected: AnalysisKind,
        found: AnalysisKind,
    },
    #[error("station `{0}` already contributed to these results")]
    DuplicateStation(String),
    #[error("analysis exceeded its execution time budget")]
    Timeout,
    #[error("malformed result data: {0}")]
    MalformedResult(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Count,
    SummaryStats,
    PaillierCount,
    TopKHist,
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnalysisKind::Count => "count",
            AnalysisKind::SummaryStats => "summary_stats",
            AnalysisKind::PaillierCount => "paillier_count",
            AnalysisKind::TopKHist => "top_k_hist",
        })
    }
}

// ---------------------------------------------------------------------------
// Descriptors

/// A parsed analysis descriptor: the kind plus its validated parameters.
#[derive(Clone, PartialEq, Debug)]
pub enum AnalysisDescriptor {
    Count,
    SummaryStats { field: String },
    PaillierCount { public_key: PaillierPublicKey },
    TopKHist { field: String, k: usize },
}

#[derive(Serialize, Deserialize)]
struct DescriptorWire {
    kind: String,
    #[serde(default = "empty_params")]
    params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldParams {
    field: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaillierParams {
    paillier_public_key: PaillierPublicKey,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistParams {
    field: String,
    k: usize,
}

impl AnalysisDescriptor {
    pub fn kind(&self) -> AnalysisKind {
        match self {
            AnalysisDescriptor::Count => AnalysisKind::Count,
            AnalysisDescriptor::SummaryStats { .. } => AnalysisKind::SummaryStats,
            AnalysisDescriptor::PaillierCount { .. } => AnalysisKind::PaillierCount,
            AnalysisDescriptor::TopKHist { .. } => AnalysisKind::TopKHist,
        }
    }

    /// Parse a descriptor document: `{"kind": ..., "params": {...}}`.
    /// The kind is inspected first so an unknown kind is reported as
    /// unsupported rather than as a parameter error.
    pub fn parse(bytes: &[u8]) -> Result<Self, AnalysisError> {
        let wire: DescriptorWire = serde_json::from_slice(bytes)
            .map_err(|e| AnalysisError::BadParams(e.to_string()))?;
        let bad = |e: serde_json::Error| AnalysisError::BadParams(e.to_string());
        match wire.kind.as_str() {
            "count" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct EmptyParams {}
                let _: EmptyParams = serde_json::from_value(wire.params).map_err(bad)?;
                Ok(AnalysisDescriptor::Count)
            }
            "summary_stats" => {
                let p: FieldParams = serde_json::from_value(wire.params).map_err(bad)?;
                Ok(AnalysisDescriptor::SummaryStats { field: p.field })
            }
            "paillier_count" => {
                let p: PaillierParams = serde_json::from_value(wire.params).map_err(bad)?;
                Ok(AnalysisDescriptor::PaillierCount {
                    public_key: p.paillier_public_key,
                })
            }
            "top_k_hist" => {
                let p: HistParams = serde_json::from_value(wire.params).map_err(bad)?;
                if p.k == 0 {
                    return Err(AnalysisError::BadParams("k must be at least 1".into()));
                }
                Ok(AnalysisDescriptor::TopKHist {
                    field: p.field,
                    k: p.k,
                })
            }
            other => Err(AnalysisError::UnsupportedKind(other.to_string())),
        }
    }

    /// Canonical descriptor document bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, AnalysisError> {
        let params = match self {
            AnalysisDescriptor::Count => empty_params(),
            AnalysisDescriptor::SummaryStats { field } => serde_json::to_value(FieldParams {
                field: field.clone(),
            })
            .expect("plain struct serialization cannot fail"),
            AnalysisDescriptor::PaillierCount { public_key } => {
                serde_json::to_value(PaillierParams {
                    paillier_public_key: public_key.clone(),
                })
                .expect("plain struct serialization cannot fail")
            }
            AnalysisDescriptor::TopKHist { field, k } => serde_json::to_value(HistParams {
                field: field.clone(),
                k: *k,
            })
            .expect("plain struct serialization cannot fail"),
        };
        canonical_json(&DescriptorWire {
            kind: self.kind().to_string(),
            params,
        })
        .map_err(|e| AnalysisError::MalformedResult(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Results

/// One station's contribution to the accumulated results.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StationEntry {
    Count {
        count: u64,
    },
    SummaryStats {
        count: u64,
        sum: f64,
        min: Option<f64>,
        max: Option<f64>,
    },
    PaillierCount {
        encrypted_count: PaillierCiphertext,
    },
    TopKHist {
        histogram: BTreeMap<String, u64>,
    },
}

impl StationEntry {
    fn kind(&self) -> AnalysisKind {
        match self {
            StationEntry::Count { .. } => AnalysisKind::Count,
            StationEntry::SummaryStats { .. } => AnalysisKind::SummaryStats,
            StationEntry::PaillierCount { .. } => AnalysisKind::PaillierCount,
            StationEntry::TopKHist { .. } => AnalysisKind::TopKHist,
        }
    }
}

/// The cross-station view recomputed from all entries after each hop.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MergedView {
    Count {
        total: u64,
    },
    SummaryStats {
        count: u64,
        sum: f64,
        min: Option<f64>,
        max: Option<f64>,
        mean: Option<f64>,
    },
    PaillierCount {
        encrypted_total: PaillierCiphertext,
    },
    TopKHist {
        histogram: BTreeMap<String, u64>,
        top: Vec<(String, u64)>,
        k: usize,
    },
}

impl MergedView {
    fn kind(&self) -> AnalysisKind {
        match self {
            MergedView::Count { .. } => AnalysisKind::Count,
            MergedView::SummaryStats { .. } => AnalysisKind::SummaryStats,
            MergedView::PaillierCount { .. } => AnalysisKind::PaillierCount,
            MergedView::TopKHist { .. } => AnalysisKind::TopKHist,
        }
    }
}

/// Accumulated analysis results: one entry per visited station plus the
/// merged cross-station view.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ResultData {
    pub kind: AnalysisKind,
    pub stations: BTreeMap<String, StationEntry>,
    pub merged: MergedView,
}

impl ResultData {
    /// Canonical JSON bytes; equal results always serialize identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self).expect("result data always serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnalysisError> {
        let data: ResultData = serde_json::from_slice(bytes)
            .map_err(|e| AnalysisError::MalformedResult(e.to_string()))?;
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        for entry in self.stations.values() {
            if entry.kind() != self.kind {
                return Err(AnalysisError::MalformedResult(format!(
                    "station entry kind `{}` does not match result kind `{}`",
                    entry.kind(),
                    self.kind
                )));
            }
        }
        if self.merged.kind() != self.kind {
            return Err(AnalysisError::MalformedResult(format!(
                "merged view kind `{}` does not match result kind `{}`",
                self.merged.kind(),
                self.kind
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Execution

/// How often the record scan checks its deadline.
const DEADLINE_STRIDE: usize = 1024;

/// Run one analysis over a station's records and fold the contribution into
/// `previous`. The descriptor's field parameters are validated against the
/// record schema exactly like query fields.
pub fn run_analysis(
    descriptor: &AnalysisDescriptor,
    filter: &FilterExpr,
    records: &RecordSet,
    station_pid: &str,
    previous: Option<&ResultData>,
    deadline: Option<Instant>,
) -> Result<ResultData, AnalysisError> {
    let kind = descriptor.kind();
    if let Some(prev) = previous {
        prev.validate()?;
        if prev.kind != kind {
            return Err(AnalysisError::KindMismatch {
                expected: kind,
                found: prev.kind,
            });
        }
        if prev.stations.contains_key(station_pid) {
            return Err(AnalysisError::DuplicateStation(station_pid.to_string()));
        }
    }
    filter.validate(records.schema())?;
    check_descriptor_fields(descriptor, records)?;

    let check_deadline = |i: usize| -> Result<(), AnalysisError> {
        if i.is_multiple_of(DEADLINE_STRIDE) {
            if let Some(deadline) = deadline {
                if Instant::now() > deadline {
                    return Err(AnalysisError::Timeout);
                }
            }
        }
        Ok(())
    };

    let entry = match descriptor {
        AnalysisDescriptor::Count => {
            let mut count = 0u64;
            for (i, record) in records.records().iter().enumerate() {
                check_deadline(i)?;
                if filter.matches(record)? {
                    count += 1;
                }
            }
            StationEntry::Count { count }
        }
        AnalysisDescriptor::SummaryStats { field } => {
            let mut count = 0u64;
            let mut sum = 0f64;
            let mut min: Option<f64> = None;
            let mut max: Option<f64> = None;
            for (i, record) in records.records().iter().enumerate() {
                check_deadline(i)?;
                if filter.matches(record)? {
                    let value = numeric_field(record, field)?;
                    count += 1;
                    sum += value;
                    min = Some(min.map_or(value, |m| m.min(value)));
                    max = Some(max.map_or(value, |m| m.max(value)));
                }
            }
            StationEntry::SummaryStats {
                count,
                sum,
                min,
                max,
            }
        }
        AnalysisDescriptor::PaillierCount { public_key } => {
            let mut count = 0u64;
            for (i, record) in records.records().iter().enumerate() {
                check_deadline(i)?;
                if filter.matches(record)? {
                    count += 1;
                }
            }
            // The local tally leaves this function only in encrypted form.
            let encrypted_count =
                paillier::encrypt(&num_bigint::BigUint::from(count), public_key)?;
            StationEntry::PaillierCount { encrypted_count }
        }
        AnalysisDescriptor::TopKHist { field, .. } => {
            let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
            for (i, record) in records.records().iter().enumerate() {
                check_deadline(i)?;
                if filter.matches(record)? {
                    let bucket = bucket_key(record, field)?;
                    *histogram.entry(bucket).or_insert(0) += 1;
                }
            }
            StationEntry::TopKHist { histogram }
        }
    };

    let mut stations = previous.map(|p| p.stations.clone()).unwrap_or_default();
    stations.insert(station_pid.to_string(), entry);
    let merged = recompute_merged(descriptor, &stations)?;

    if let Some(deadline) = deadline {
        if Instant::now() > deadline {
            return Err(AnalysisError::Timeout);
        }
    }
    Ok(ResultData {
        kind,
        stations,
        merged,
    })
}

fn check_descriptor_fields(
    descriptor: &AnalysisDescriptor,
    records: &RecordSet,
) -> Result<(), AnalysisError> {
    use crate::query::FieldType;
    match descriptor {
        AnalysisDescriptor::SummaryStats { field } => match records.schema().field(field) {
            Some(FieldType::Number) => Ok(()),
            Some(other) => Err(AnalysisError::BadParams(format!(
                "summary_stats field `{field}` is declared {other}, not number"
            ))),
            None => Err(QueryError::UnknownField(field.clone()).into()),
        },
        AnalysisDescriptor::TopKHist { field, .. } => match records.schema().field(field) {
            Some(_) => Ok(()),
            None => Err(QueryError::UnknownField(field.clone()).into()),
        },
        AnalysisDescriptor::Count | AnalysisDescriptor::PaillierCount { .. } => Ok(()),
    }
}

fn numeric_field(record: &Record, field: &str) -> Result<f64, AnalysisError> {
    record
        .get(field)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| DataError::FieldAbsent(field.to_string()).into())
}

fn bucket_key(record: &Record, field: &str) -> Result<String, AnalysisError> {
    match record.get(field) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        _ => Err(DataError::FieldAbsent(field.to_string()).into()),
    }
}

/// Rebuild the merged view from every station entry. Deterministic: entries
/// iterate in pid order and the Paillier fold reuses the stored ciphertexts.
fn recompute_merged(
    descriptor: &AnalysisDescriptor,
    stations: &BTreeMap<String, StationEntry>,
) -> Result<MergedView, AnalysisError> {
    match descriptor {
        AnalysisDescriptor::Count => {
            let mut total = 0u64;
            for entry in stations.values() {
                let StationEntry::Count { count } = entry else {
                    return Err(AnalysisError::MalformedResult(
                        "mixed entry kinds in count results".into(),
                    ));
                };
                total += count;
            }
            Ok(MergedView::Count { total })
        }
        AnalysisDescriptor::SummaryStats { .. } => {
            let mut count = 0u64;
            let mut sum = 0f64;
            let mut min: Option<f64> = None;
            let mut max: Option<f64> = None;
            for entry in stations.values() {
                let StationEntry::SummaryStats {
                    count: c,
                    sum: s,
                    min: mn,
                    max: mx,
                } = entry
                else {
                    return Err(AnalysisError::MalformedResult(
                        "mixed entry kinds in summary_stats results".into(),
                    ));
                };
                count += c;
                sum += s;
                min = match (min, *mn) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                max = match (max, *mx) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
            let mean = if count > 0 {
                Some(sum / count as f64)
            } else {
                None
            };
            Ok(MergedView::SummaryStats {
                count,
                sum,
                min,
                max,
                mean,
            })
        }
        AnalysisDescriptor::PaillierCount { public_key } => {
            let mut running: Option<PaillierCiphertext> = None;
            for entry in stations.values() {
                let StationEntry::PaillierCount { encrypted_count } = entry else {
                    return Err(AnalysisError::MalformedResult(
                        "mixed entry kinds in paillier_count results".into(),
                    ));
                };
                running = Some(match running {
                    None => encrypted_count.clone(),
                    Some(acc) => paillier::add(&acc, encrypted_count, public_key)?,
                });
            }
            let encrypted_total = running.ok_or_else(|| {
                AnalysisError::MalformedResult("paillier_count results hold no entries".into())
            })?;
            Ok(MergedView::PaillierCount { encrypted_total })
        }
        AnalysisDescriptor::TopKHist { k, .. } => {
            let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
            for entry in stations.values() {
                let StationEntry::TopKHist { histogram: h } = entry else {
                    return Err(AnalysisError::MalformedResult(
                        "mixed entry kinds in top_k_hist results".into(),
                    ));
                };
                for (bucket, count) in h {
                    *histogram.entry(bucket.clone()).or_insert(0) += count;
                }
            }
            // Ties break toward the lexicographically smaller value.
            let mut top: Vec<(String, u64)> =
                histogram.iter().map(|(k, v)| (k.clone(), *v)).collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            top.truncate(*k);
            Ok(MergedView::TopKHist {
                histogram,
                top,
                k: *k,
            })
        }
    }
}
