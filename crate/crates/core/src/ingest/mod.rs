//! Interaction event logs, their aggregation into `senders x receivers x
//! time bins` tensors, and a planted-structure generator.

mod synth;

use std::collections::HashMap;
use std::path::Path;

pub use synth::{synth_interactions, synth_with, Scenario, SynthConfig, SynthData};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// One interaction: `source` sent `value` to `target` at `timestamp`
/// (seconds since the Unix epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub source: String,
    pub target: String,
    pub timestamp: i64,
    pub value: f64,
}

/// How events falling into the same cell are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Number of events.
    Count,
    /// Sum of event values.
    Sum,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Self::Count),
            "sum" => Ok(Self::Sum),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation {other:?} (expected count or sum)"
            ))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Count => "count",
            Self::Sum => "sum",
        })
    }
}

/// Time window, bin count and entity filter for [`build_tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinningConfig {
    /// Inclusive start of the window.
    pub t_start: i64,
    /// Exclusive end of the window.
    pub t_end: i64,
    pub k_bins: usize,
    pub aggregation: Aggregation,
    /// Fraction of the most active sources (and, separately, targets) kept.
    pub top_fraction: f64,
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_start >= self.t_end {
            return Err(Error::InvalidConfig(format!(
                "t_start ({}) must be before t_end ({})",
                self.t_start, self.t_end
            )));
        }
        if self.k_bins == 0 {
            return Err(Error::InvalidConfig("k_bins must be positive".into()));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "top_fraction must lie in (0, 1], got {}",
                self.top_fraction
            )));
        }
        Ok(())
    }

    /// Bin of `timestamp`, or `None` outside `[t_start, t_end)`.
    pub fn bin_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.t_start || timestamp >= self.t_end {
            return None;
        }
        let offset = (timestamp - self.t_start) as i128;
        let span = (self.t_end - self.t_start) as i128;
        Some((offset * self.k_bins as i128 / span) as usize)
    }

    /// First timestamp that falls into bin `k` (`k == k_bins` gives `t_end`).
    pub fn bin_start(&self, k: usize) -> i64 {
        let span = (self.t_end - self.t_start) as i128;
        let n = self.k_bins as i128;
        // smallest offset t with floor(t * n / span) >= k
        let offset = (k as i128 * span + n - 1) / n;
        self.t_start + offset as i64
    }

    /// The same window truncated after the first `k` bins.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k_bins {
            return Err(Error::InvalidConfig(format!(
                "cannot keep {k} of {} bins",
                self.k_bins
            )));
        }
        Ok(Self {
            t_end: self.bin_start(k),
            k_bins: k,
            ..self.clone()
        })
    }
}

/// A binned tensor together with the entity id of every row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltTensor {
    pub tensor: Tensor3,
    /// `sources[i]` is the id behind row `i`.
    pub sources: Vec<String>,
    /// `targets[j]` is the id behind column `j`.
    pub targets: Vec<String>,
}

/// Ids ordered by descending event count, ties by id; only the first
/// `ceil(fraction * n)` are kept.
fn rank_entities<'a>(ids: impl Iterator<Item = &'a str>, fraction: f64) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = ((fraction * ranked.len() as f64).ceil() as usize).min(ranked.len());
    ranked
        .into_iter()
        .take(keep)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Aggregates events into a dense tensor.
///
/// Only events inside `[t_start, t_end)` take part, both in activity ranking
/// and in the tensor. Rows and columns are ordered by activity. A negative
/// value is reported with the line it would occupy in a file with a header.
pub fn build_tensor(events: &[EventRecord], cfg: &BinningConfig) -> Result<BuiltTensor> {
    cfg.validate()?;
    if let Some((n, e)) = events.iter().enumerate().find(|(_, e)| !(e.value >= 0.0)) {
        return Err(Error::NegativeValue {
            line: n + 2,
            value: e.value,
        });
    }
    let windowed: Vec<(&EventRecord, usize)> = events
        .iter()
        .filter_map(|e| cfg.bin_of(e.timestamp).map(|k| (e, k)))
        .collect();
    let sources = rank_entities(
        windowed.iter().map(|(e, _)| e.source.as_str()),
        cfg.top_fraction,
    );
    let targets = rank_entities(
        windowed.iter().map(|(e, _)| e.target.as_str()),
        cfg.top_fraction,
    );
    let src_index: HashMap<&str, usize> = sources
        .iter()
        .enumerate()
        .map(|(n, s)| (s.as_str(), n))
        .collect();
    let tgt_index: HashMap<&str, usize> = targets
        .iter()
        .enumerate()
        .map(|(n, s)| (s.as_str(), n))
        .collect();

    let mut tensor = Tensor3::zeros(sources.len(), targets.len(), cfg.k_bins);
    let mut kept = 0usize;
    for (e, k) in windowed {
        let (Some(&i), Some(&j)) = (
            src_index.get(e.source.as_str()),
            tgt_index.get(e.target.as_str()),
        ) else {
            continue;
        };
        kept += 1;
        *tensor.get_mut(i, j, k) += match cfg.aggregation {
            Aggregation::Count => 1.0,
            Aggregation::Sum => e.value,
        };
    }
    if kept == 0 {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(BuiltTensor {
        tensor,
        sources,
        targets,
    })
}

pub const EVENT_HEADER: [&str; 4] = ["source", "target", "timestamp", "value"];

fn field_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::format("event log", format!("missing column {name:?}")))
}

/// Reads an event log with a header row naming `source`, `target`,
/// `timestamp` and `value` (in any order).
pub fn read_events(path: &Path, delimiter: u8) -> Result<Vec<EventRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events_from(file, delimiter)
}

pub fn read_events_from(reader: impl std::io::Read, delimiter: u8) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = [
        field_index(&headers, "source")?,
        field_index(&headers, "target")?,
        field_index(&headers, "timestamp")?,
        field_index(&headers, "value")?,
    ];
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let get = |c: usize| {
            rec.get(c)
                .map(str::trim)
                .ok_or_else(|| Error::format("event log", format!("line {line}: too few fields")))
        };
        let timestamp = get(cols[2])?
            .parse::<i64>()
            .map_err(|e| Error::format("event log", format!("line {line}: timestamp: {e}")))?;
        let value = get(cols[3])?
            .parse::<f64>()
            .map_err(|e| Error::format("event log", format!("line {line}: value: {e}")))?;
        if !(value >= 0.0) {
            return Err(Error::NegativeValue { line, value });
        }
        out.push(EventRecord {
            source: get(cols[0])?.to_string(),
            target: get(cols[1])?.to_string(),
            timestamp,
            value,
        });
    }
    Ok(out)
}

/// Writes an event log with a header row.
pub fn write_events(path: &Path, events: &[EventRecord], delimiter: u8) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events_to(std::io::BufWriter::new(file), events, delimiter)
}

pub fn write_events_to(
    writer: impl std::io::Write,
    events: &[EventRecord],
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            e.source.as_str(),
            e.target.as_str(),
            &e.timestamp.to_string(),
            &e.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<event log>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, t: &str, ts: i64, v: f64) -> EventRecord {
        EventRecord {
            source: s.into(),
            target: t.into(),
            timestamp: ts,
            value: v,
        }
    }

    fn cfg(k: usize, agg: Aggregation) -> BinningConfig {
        BinningConfig {
            t_start: 0,
            t_end: 100,
            k_bins: k,
            aggregation: agg,
            top_fraction: 1.0,
        }
    }

    #[test]
    fn single_event_count() {
        let b = build_tensor(&[ev("a", "b", 5, 9.0)], &cfg(1, Aggregation::Count)).unwrap();
        assert_eq!(b.tensor.dims(), (1, 1, 1));
        assert_eq!(b.tensor.get(0, 0, 0), 1.0);
    }

    #[test]
    fn sums_are_additive() {
        let b = build_tensor(
            &[ev("a", "b", 5, 2.5), ev("a", "b", 7, 1.5)],
            &cfg(2, Aggregation::Sum),
        )
        .unwrap();
        assert_eq!(b.tensor.get(0, 0, 0), 4.0);
    }

    #[test]
    fn window_is_half_open() {
        let c = cfg(4, Aggregation::Count);
        assert_eq!(c.bin_of(0), Some(0));
        assert_eq!(c.bin_of(99), Some(3));
        assert_eq!(c.bin_of(100), None);
        assert_eq!(c.bin_of(-1), None);
        for k in 0..=4 {
            let s = c.bin_start(k);
            if k < 4 {
                assert_eq!(c.bin_of(s), Some(k));
            }
            if k > 0 {
                assert_eq!(c.bin_of(s - 1), Some(k - 1));
            }
        }
    }

    #[test]
    fn odd_spans_bin_consistently() {
        let c = BinningConfig {
            t_start: 13,
            t_end: 13 + 97,
            k_bins: 7,
            aggregation: Aggregation::Count,
            top_fraction: 1.0,
        };
        for t in 13..110 {
            let k = c.bin_of(t).unwrap();
            assert!(c.bin_start(k) <= t && t < c.bin_start(k + 1));
        }
        let p = c.prefix(3).unwrap();
        for t in 13..p.t_end {
            assert_eq!(p.bin_of(t), c.bin_of(t));
        }
        assert_eq!(p.bin_of(p.t_end), None);
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let events = vec![
            ev("b", "x", 1, 1.0),
            ev("a", "x", 1, 1.0),
            ev("c", "x", 1, 1.0),
            ev("c", "y", 1, 1.0),
        ];
        let mut c = cfg(1, Aggregation::Count);
        let all = build_tensor(&events, &c).unwrap();
        assert_eq!(all.sources, vec!["c", "a", "b"]);
        c.top_fraction = 0.5;
        let top = build_tensor(&events, &c).unwrap();
        assert_eq!(top.sources, vec!["c", "a"]);
        assert_eq!(top.targets, vec!["x"]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_tensor(&[ev("a", "b", 500, 1.0)], &cfg(1, Aggregation::Count)),
            Err(Error::EmptyAfterFilter)
        ));
        assert!(matches!(
            build_tensor(
                &[ev("a", "b", 5, 1.0), ev("a", "b", 5, -1.0)],
                &cfg(1, Aggregation::Sum)
            ),
            Err(Error::NegativeValue { line: 3, .. })
        ));
        let mut c = cfg(1, Aggregation::Sum);
        c.top_fraction = 0.0;
        assert!(matches!(
            build_tensor(&[], &c),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn csv_roundtrip_with_custom_delimiter() {
        let events = vec![ev("a", "b", 5, 2.5), ev("x y", "z", -3, 0.1 + 0.2)];
        let mut buf = Vec::new();
        write_events_to(&mut buf, &events, b';').unwrap();
        let back = read_events_from(buf.as_slice(), b';').unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn csv_columns_in_any_order() {
        let text = "value,timestamp,target,source\n1.5,10,t,s\n";
        let back = read_events_from(text.as_bytes(), b',').unwrap();
        assert_eq!(back, vec![ev("s", "t", 10, 1.5)]);
        let bad = "value,timestamp,target\n1.5,10,t\n";
        assert!(matches!(
            read_events_from(bad.as_bytes(), b','),
            Err(Error::Format { .. })
        ));
        let neg = "source,target,timestamp,value\na,b,1,2\na,b,1,-2\n";
        assert!(matches!(
            read_events_from(neg.as_bytes(), b','),
            Err(Error::NegativeValue { line: 3, .. })
        ));
    }
}
