//! Subject-level event-history data.
//!
//! Each [`EventRecord`] is one at-risk interval `(entry, exit]` ending either
//! in censoring (`event_code == 0`) or in an event of cause `event_code`.
//! Subjects with recurrent events contribute several records sharing an id.
//!
//! A subject is at risk at `t` when `entry < t <= exit`, so it counts in the
//! risk set at its own event time.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::StepPath;

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub subject_id: String,
    pub entry_time: f64,
    pub exit_time: f64,
    pub event_code: u32,
    pub group: Option<i64>,
    pub covariates: Vec<f64>,
}

/// Validated, immutable collection of event records.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    records: Vec<EventRecord>,
    n_subjects: usize,
    horizon: f64,
    n_covariates: usize,
}

/// Column names used when reading delimited text. The defaults match the
/// `id, entry, exit, event[, group][, x1..xp]` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub entry: String,
    pub exit: String,
    pub event: String,
    pub group: String,
    /// Covariate columns are `<prefix>1`, `<prefix>2`, ...
    pub covariate_prefix: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            entry: "entry".into(),
            exit: "exit".into(),
            event: "event".into(),
            group: "group".into(),
            covariate_prefix: "x".into(),
        }
    }
}

impl EventDataset {
    /// Validates the records. The horizon defaults to the largest exit time
    /// when not given.
    pub fn new(records: Vec<EventRecord>, horizon: Option<f64>) -> Result<Self> {
        let n_covariates = records.first().map_or(0, |r| r.covariates.len());
        let mut bad = Vec::new();
        for r in &records {
            if !(r.entry_time >= 0.0 && r.entry_time < r.exit_time && r.exit_time.is_finite()) {
                bad.push(r.subject_id.clone());
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation {
                subjects: bad,
                message: "entry time must be nonnegative and strictly below the exit time".into(),
            });
        }
        let ragged: Vec<String> = records
            .iter()
            .filter(|r| r.covariates.len() != n_covariates)
            .map(|r| r.subject_id.clone())
            .collect();
        if !ragged.is_empty() {
            return Err(Error::Validation {
                subjects: ragged,
                message: format!("every record must carry {n_covariates} covariate(s)"),
            });
        }
        let n_subjects = records
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<HashSet<_>>()
            .len();
        let max_exit = records.iter().map(|r| r.exit_time).fold(0.0, f64::max);
        let horizon = match horizon {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(Error::Domain(format!("horizon must be positive, got {h}"))),
            None if max_exit > 0.0 => max_exit,
            None => 1.0,
        };
        Ok(EventDataset {
            records,
            n_subjects,
            horizon,
            n_covariates,
        })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Distinct group labels present, in ascending order.
    pub fn groups(&self) -> Vec<i64> {
        self.records
            .iter()
            .filter_map(|r| r.group)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Number of distinct subjects with the given group label.
    pub fn subjects_in(&self, group: Option<i64>) -> usize {
        self.records
            .iter()
            .filter(|r| group.is_none() || r.group == group)
            .map(|r| r.subject_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub(crate) fn check_group(&self, group: Option<i64>) -> Result<()> {
        match group {
            Some(g) if !self.records.iter().any(|r| r.group == Some(g)) => {
                Err(Error::Domain(format!("unknown group label {g}")))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn in_group<'a>(&'a self, group: Option<i64>) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| group.is_none() || r.group == group)
    }

    /// Distinct event times of `cause` within the horizon, with the number of
    /// tied events at each.
    pub(crate) fn event_counts(&self, cause: u32, group: Option<i64>) -> Vec<(f64, u32)> {
        let mut times: Vec<f64> = self
            .in_group(group)
            .filter(|r| r.event_code == cause && r.exit_time <= self.horizon)
            .map(|r| r.exit_time)
            .collect();
        times.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, u32)> = Vec::new();
        for t in times {
            match out.last_mut() {
                Some((s, c)) if *s == t => *c += 1,
                _ => out.push((t, 1)),
            }
        }
        out
    }
}

/// Reads a comma-separated dataset with a header row.
pub fn parse_dataset<R: Read>(source: R, columns: &ColumnMap, horizon: Option<f64>) -> Result<EventDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column `{name}`"),
        })
    };
    let id_col = required(&columns.id)?;
    let entry_col = required(&columns.entry)?;
    let exit_col = required(&columns.exit)?;
    let event_col = required(&columns.event)?;
    let group_col = find(&columns.group);
    let mut covariate_cols = Vec::new();
    while let Some(c) = find(&format!("{}{}", columns.covariate_prefix, covariate_cols.len() + 1)) {
        covariate_cols.push(c);
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let real = |c: usize, what: &str| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("{what} `{}` is not a finite number", field(c)),
                })
        };
        let event_code = field(event_col).parse::<u32>().map_err(|_| Error::Parse {
            line,
            message: format!("event code `{}` is not a nonnegative integer", field(event_col)),
        })?;
        let group = match group_col.map(field) {
            None | Some("") => None,
            Some(g) => Some(g.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("group `{g}` is not an integer"),
            })?),
        };
        records.push(EventRecord {
            subject_id: field(id_col).to_string(),
            entry_time: real(entry_col, "entry time")?,
            exit_time: real(exit_col, "exit time")?,
            event_code,
            group,
            covariates: covariate_cols
                .iter()
                .map(|&c| real(c, "covariate"))
                .collect::<Result<_>>()?,
        });
    }
    EventDataset::new(records, horizon)
}

/// Writes the dataset in the layout [`parse_dataset`] reads.
pub fn write_dataset<W: Write>(ds: &EventDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let has_group = ds.records.iter().any(|r| r.group.is_some());
    let mut header = vec!["id".to_string(), "entry".into(), "exit".into(), "event".into()];
    if has_group {
        header.push("group".into());
    }
    header.extend((1..=ds.n_covariates).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row = vec![
            r.subject_id.clone(),
            r.entry_time.to_string(),
            r.exit_time.to_string(),
            r.event_code.to_string(),
        ];
        if has_group {
            row.push(r.group.map(|g| g.to_string()).unwrap_or_default());
        }
        row.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Counting process of events of `cause` (optionally within one group).
/// Tied events produce a single jump of the tie size.
pub fn counting_path(ds: &EventDataset, cause: u32, group: Option<i64>) -> Result<StepPath> {
    if cause == 0 {
        return Err(Error::Domain("cause must be at least 1 (0 marks censoring)".into()));
    }
    ds.check_group(group)?;
    let counts = ds.event_counts(cause, group);
    let times = counts.iter().map(|c| c.0).collect();
    let increments = counts.iter().map(|c| f64::from(c.1)).collect();
    StepPath::from_increments(vec![0.0], times, increments)
}

/// Number of records with `entry < t <= exit`.
pub fn at_risk(ds: &EventDataset, t: f64, group: Option<i64>) -> usize {
    ds.in_group(group)
        .filter(|r| r.entry_time < t && t <= r.exit_time)
        .count()
}

/// Sorted entry and exit times for fast at-risk counting.
pub(crate) struct RiskIndex {
    entries: Vec<f64>,
    exits: Vec<f64>,
}

impl RiskIndex {
    pub(crate) fn new(ds: &EventDataset, group: Option<i64>) -> Self {
        let mut entries: Vec<f64> = ds.in_group(group).map(|r| r.entry_time).collect();
        let mut exits: Vec<f64> = ds.in_group(group).map(|r| r.exit_time).collect();
        entries.sort_by(f64::total_cmp);
        exits.sort_by(f64::total_cmp);
        RiskIndex { entries, exits }
    }

    /// `#{entry < t} - #{exit < t}`, which equals `#{entry < t <= exit}`.
    pub(crate) fn at_risk(&self, t: f64) -> usize {
        let entered = self.entries.partition_point(|&e| e < t);
        let left = self.exits.partition_point(|&e| e < t);
        entered - left
    }

    /// First time after which nobody is at risk, where the risk set had been
    /// nonempty before: the earliest exit time `e` with `Y(e+) = 0`.
    pub(crate) fn first_empty_after_start(&self) -> Option<f64> {
        let mut candidates: Vec<f64> = self.exits.clone();
        candidates.dedup();
        candidates.into_iter().find(|&e| {
            let entered = self.entries.partition_point(|&s| s <= e);
            let left = self.exits.partition_point(|&x| x <= e);
            entered == left
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "id,entry,exit,event\na,0,1.0,1\nb,0,1.5,0\nc,0,2.0,1\n";

    fn three() -> EventDataset {
        parse_dataset(THREE.as_bytes(), &ColumnMap::default(), None).unwrap()
    }

    #[test]
    fn parses_small_file() {
        let ds = three();
        assert_eq!(ds.n_subjects(), 3);
        assert_eq!(ds.records()[1].exit_time, 1.5);
        assert_eq!(ds.records()[1].event_code, 0);
        assert_eq!(ds.horizon(), 2.0);
    }

    #[test]
    fn header_only_is_empty() {
        let ds = parse_dataset("id,entry,exit,event\n".as_bytes(), &ColumnMap::default(), None).unwrap();
        assert_eq!(ds.n_subjects(), 0);
    }

    #[test]
    fn entry_after_exit_names_subject() {
        let src = "id,entry,exit,event\nok,0,1,1\nbad,2,1,0\n";
        match parse_dataset(src.as_bytes(), &ColumnMap::default(), None) {
            Err(Error::Validation { subjects, .. }) => assert_eq!(subjects, vec!["bad".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let src = "id,entry,exit,event\na,0,1,1\nb,0,oops,1\n";
        match parse_dataset(src.as_bytes(), &ColumnMap::default(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn optional_group_and_covariates() {
        let src = "id,entry,exit,event,group,x1,x2\na,0,1,1,1,0.5,2\nb,0,2,0,0,1.5,3\n";
        let ds = parse_dataset(src.as_bytes(), &ColumnMap::default(), None).unwrap();
        assert_eq!(ds.n_covariates(), 2);
        assert_eq!(ds.records()[1].covariates, vec![1.5, 3.0]);
        assert_eq!(ds.groups(), vec![0, 1]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice(), &ColumnMap::default(), None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn counting_path_jumps() {
        let ds = three();
        let n = counting_path(&ds, 1, None).unwrap();
        assert_eq!(n.times(), &[1.0, 2.0]);
        assert_eq!(n.final_value(), &[2.0]);
        let none = counting_path(&ds, 2, None).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.eval(5.0), &[0.0]);
    }

    #[test]
    fn tied_events_aggregate() {
        let src = "id,entry,exit,event\na,0,1,1\nb,0,1,1\nc,0,3,0\n";
        let ds = parse_dataset(src.as_bytes(), &ColumnMap::default(), None).unwrap();
        let n = counting_path(&ds, 1, None).unwrap();
        assert_eq!(n.times(), &[1.0]);
        assert_eq!(n.increment(0), &[2.0]);
    }

    #[test]
    fn unknown_group_is_domain_error() {
        assert!(matches!(counting_path(&three(), 1, Some(4)), Err(Error::Domain(_))));
        assert!(matches!(counting_path(&three(), 0, None), Err(Error::Domain(_))));
    }

    #[test]
    fn at_risk_convention() {
        let ds = three();
        assert_eq!(at_risk(&ds, 1.0, None), 3);
        assert_eq!(at_risk(&ds, 1.2, None), 2);
        assert_eq!(at_risk(&ds, 2.5, None), 0);
        assert_eq!(at_risk(&ds, 0.0, None), 0);
        let idx = RiskIndex::new(&ds, None);
        for t in [0.0, 0.5, 1.0, 1.2, 1.5, 1.7, 2.0, 2.5] {
            assert_eq!(idx.at_risk(t), at_risk(&ds, t, None));
        }
        assert_eq!(idx.first_empty_after_start(), Some(2.0));
    }

    #[test]
    fn empty_gap_with_delayed_entry() {
        let src = "id,entry,exit,event\na,0,1,1\nb,2,3,1\n";
        let ds = parse_dataset(src.as_bytes(), &ColumnMap::default(), None).unwrap();
        assert_eq!(RiskIndex::new(&ds, None).first_empty_after_start(), Some(1.0));
    }
}
