//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the exact values that were written.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazards::DriverMeta;
use crate::path::StepPath;
use crate::plugin::{ConfidenceBand, PluginFit};
use crate::simlab::{StudyResult, StudyRows};

/// JSON sidecar for a path CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub origin: Vec<f64>,
    #[serde(flatten)]
    pub driver: DriverMeta,
}

/// JSON sidecar for a fit CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub system: String,
    pub labels: Vec<String>,
    pub scale_n: usize,
    pub level: Option<f64>,
    pub driver: DriverMeta,
    pub jumps: usize,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn field(record: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    let raw = record.get(i).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {}", i + 1),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{raw}` is not a number"),
    })
}

/// Writes `time,<labels...>` with one row per jump holding the values after
/// the jump. The origin lives in the sidecar.
pub fn write_path_csv<W: Write>(path: &StepPath, labels: &[String], sink: W) -> Result<()> {
    if labels.len() != path.dim() {
        return Err(Error::Contract(format!(
            "{} labels for a {}-dimensional path",
            labels.len(),
            path.dim()
        )));
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(std::iter::once("time").chain(labels.iter().map(String::as_str)))?;
    for (i, &t) in path.times().iter().enumerate() {
        w.write_record(std::iter::once(fmt(t)).chain(path.value(i).iter().map(|&v| fmt(v))))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a path written by [`write_path_csv`].
pub fn read_path_csv<R: Read>(source: R, origin: Vec<f64>) -> Result<StepPath> {
    let mut r = csv::Reader::from_reader(source);
    let dim = r.headers()?.len().saturating_sub(1);
    if dim != origin.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {dim} value columns but the origin has {}", origin.len()),
        });
    }
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row + 2;
        times.push(field(&record, 0, line)?);
        for c in 0..dim {
            values.push(field(&record, c + 1, line)?);
        }
    }
    StepPath::from_values(origin, times, values)
}

/// Column names of a fit CSV for an `n`-dimensional state.
pub fn fit_header(n: usize, with_band: bool) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    h.extend((1..=n).map(|i| format!("X_{i}")));
    for i in 1..=n {
        h.extend((i..=n).map(|j| format!("V_{i}_{j}")));
    }
    if with_band {
        for i in 1..=n {
            h.push(format!("lo_{i}"));
            h.push(format!("hi_{i}"));
        }
    }
    h
}

/// Writes one row per time (0 first, then every jump): the state, the upper
/// triangle of `V̂` and, when given, the band.
pub fn write_fit_csv<W: Write>(fit: &PluginFit, band: Option<&ConfidenceBand>, sink: W) -> Result<()> {
    let n = fit.state.dim();
    let times = fit.cov_times();
    if let Some(b) = band {
        if b.times != times {
            return Err(Error::Contract("band does not belong to this fit".into()));
        }
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(fit_header(n, band.is_some()))?;
    for (k, &t) in times.iter().enumerate() {
        let x = if k == 0 { fit.state.origin() } else { fit.state.value(k - 1) };
        let v = &fit.cov[k];
        let mut row = vec![fmt(t)];
        row.extend(x.iter().map(|&x| fmt(x)));
        for i in 0..n {
            row.extend((i..n).map(|j| fmt(v[(i, j)])));
        }
        if let Some(b) = band {
            for i in 0..n {
                row.push(fmt(b.lower[k][i]));
                row.push(fmt(b.upper[k][i]));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the state and covariance columns of a fit CSV; band columns, if
/// present, are ignored.
pub fn read_fit_csv<R: Read>(source: R, labels: Vec<String>, scale_n: usize) -> Result<PluginFit> {
    let n = labels.len();
    let mut r = csv::Reader::from_reader(source);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = fit_header(n, false);
    if header.len() < expected.len() || header[..expected.len()] != expected[..] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected columns starting {}", expected.join(",")),
        });
    }
    let mut times = Vec::new();
    let mut origin = Vec::new();
    let mut values = Vec::new();
    let mut cov = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let t = field(&record, 0, line)?;
        let x = (0..n).map(|i| field(&record, 1 + i, line)).collect::<Result<Vec<f64>>>()?;
        let mut v = DMatrix::zeros(n, n);
        let mut col = 1 + n;
        for i in 0..n {
            for j in i..n {
                let value = field(&record, col, line)?;
                v[(i, j)] = value;
                v[(j, i)] = value;
                col += 1;
            }
        }
        if row == 0 {
            if t != 0.0 {
                return Err(Error::Parse {
                    line,
                    message: "the first row must be at time 0".into(),
                });
            }
            origin = x;
        } else {
            times.push(t);
            values.extend(x);
        }
        cov.push(v);
    }
    if cov.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no rows".into(),
        });
    }
    Ok(PluginFit {
        state: StepPath::from_values(origin, times, values)?,
        cov,
        scale_n,
        labels,
    })
}

/// Writes `n,L` or `t,coverage,wilson_lo,wilson_hi,level`.
pub fn write_study_csv<W: Write>(result: &StudyResult, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    match &result.rows {
        StudyRows::Convergence(rows) => {
            w.write_record(["n", "L"])?;
            for r in rows {
                w.write_record([r.n.to_string(), fmt(r.l)])?;
            }
        }
        StudyRows::Coverage(rows) => {
            w.write_record(["t", "coverage", "wilson_lo", "wilson_hi", "level"])?;
            for r in rows {
                w.write_record([fmt(r.t), fmt(r.coverage), fmt(r.wilson_lo), fmt(r.wilson_hi), fmt(r.level)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{parse_dataset, ColumnMap};
    use crate::hazards::nelson_aalen;
    use crate::plugin::{confidence_band, fit};
    use crate::systems::{make_system, SystemKind};
    use proptest::prelude::*;

    fn path_strategy() -> impl Strategy<Value = StepPath> {
        (1usize..4, prop::collection::vec(0.001f64..1.0, 0..30)).prop_flat_map(|(dim, gaps)| {
            let len = gaps.len();
            (
                Just(gaps),
                prop::collection::vec(-5.0f64..5.0, dim),
                prop::collection::vec(-1.0f64..1.0, len * dim),
            )
                .prop_map(|(gaps, origin, inc)| {
                    let times = gaps
                        .iter()
                        .scan(0.0, |t, g| {
                            *t += g;
                            Some(*t)
                        })
                        .collect();
                    StepPath::from_increments(origin, times, inc).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn path_csv_round_trip(p in path_strategy()) {
            let labels: Vec<String> = (0..p.dim()).map(|i| format!("d{i}")).collect();
            let mut buf = Vec::new();
            write_path_csv(&p, &labels, &mut buf).unwrap();
            let back = read_path_csv(&buf[..], p.origin().to_vec()).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn fit_csv_round_trip() {
        let ds = parse_dataset(
            "id,entry,exit,event\na,0,1,1\nb,0,1.5,0\nc,0,2,1\nd,0,2.5,1\n".as_bytes(),
            &ColumnMap::default(),
            None,
        )
        .unwrap();
        let (driver, meta) = nelson_aalen(&ds, 1, None).unwrap();
        let sys = make_system(SystemKind::Survival).unwrap();
        let f = fit(&sys, &driver, &meta, None, None).unwrap();
        let band = confidence_band(&f, 0.9).unwrap();
        let mut buf = Vec::new();
        write_fit_csv(&f, Some(&band), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,X_1,V_1_1,lo_1,hi_1\n0,1,0,1,1\n"));
        let back = read_fit_csv(&buf[..], f.labels.clone(), f.scale_n).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn multi_state_header() {
        assert_eq!(
            fit_header(2, true).join(","),
            "time,X_1,X_2,V_1_1,V_1_2,V_2_2,lo_1,hi_1,lo_2,hi_2"
        );
    }

    #[test]
    fn bad_number_reports_line() {
        let err = read_path_csv("time,a\n1,0.5\n2,zz\n".as_bytes(), vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
