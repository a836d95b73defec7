use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A hazard rate function with an exact cumulative integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum HazardSpec {
    Constant { rate: f64 },
    /// `intercept + slope · t`.
    Linear { intercept: f64, slope: f64 },
    /// Rates at increasing knots, interpolated linearly in between and held
    /// flat outside the table.
    Table { points: Vec<(f64, f64)> },
}

impl HazardSpec {
    pub fn rate(&self, t: f64) -> f64 {
        match self {
            HazardSpec::Constant { rate } => *rate,
            HazardSpec::Linear { intercept, slope } => intercept + slope * t,
            HazardSpec::Table { points } => {
                let k = points.partition_point(|p| p.0 <= t);
                if k == 0 {
                    points[0].1
                } else if k == points.len() {
                    points[k - 1].1
                } else {
                    let (t0, r0) = points[k - 1];
                    let (t1, r1) = points[k];
                    r0 + (r1 - r0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }

    /// `Λ(t) = ∫₀ᵗ rate(s) ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            HazardSpec::Constant { rate } => rate * t,
            HazardSpec::Linear { intercept, slope } => intercept * t + 0.5 * slope * t * t,
            HazardSpec::Table { points } => {
                let trapezoid = |a: f64, b: f64| 0.5 * (self.rate(a) + self.rate(b)) * (b - a);
                let mut total = 0.0;
                let mut left = 0.0;
                for &(knot, _) in points.iter().filter(|p| p.0 > 0.0) {
                    if knot >= t {
                        break;
                    }
                    total += trapezoid(left, knot);
                    left = knot;
                }
                total + trapezoid(left, t)
            }
        }
    }

    /// Checks that the rate is finite and nonnegative on `[0, horizon]`.
    /// Every form is piecewise linear, so the knots and endpoints suffice.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let mut probes = vec![0.0, horizon];
        if let HazardSpec::Table { points } = self {
            if points.is_empty() {
                return Err(Error::Domain("hazard table is empty".into()));
            }
            if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                return Err(Error::Domain("hazard table knots must be strictly increasing".into()));
            }
            probes.extend(points.iter().map(|p| p.0).filter(|&t| (0.0..=horizon).contains(&t)));
        }
        for t in probes {
            let r = self.rate(t);
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Domain(format!("hazard {self} has rate {r} at t = {t}")));
            }
        }
        Ok(())
    }

    /// Smallest `t` in `(from, horizon]` with `Λ(t) - Λ(from) ≥ exposure`,
    /// located by bisection to 1e-10, or `None` when the exposure is not
    /// reached by the horizon.
    pub fn invert(&self, from: f64, exposure: f64, horizon: f64) -> Option<f64> {
        let base = self.cumulative(from);
        if self.cumulative(horizon) - base < exposure {
            return None;
        }
        let (mut lo, mut hi) = (from, horizon);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cumulative(mid) - base < exposure {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi)
    }
}

impl fmt::Display for HazardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HazardSpec::Constant { rate } => write!(f, "constant:{rate}"),
            HazardSpec::Linear { intercept, slope } => write!(f, "linear:{intercept},{slope}"),
            HazardSpec::Table { points } => {
                write!(f, "table:")?;
                for (i, (t, r)) in points.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{t}:{r}")?;
                }
                Ok(())
            }
        }
    }
}

/// Parses `constant:RATE`, `linear:INTERCEPT,SLOPE` or `table:T:R,T:R,...`.
impl FromStr for HazardSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse hazard `{s}`"));
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        let (form, args) = s.split_once(':').ok_or_else(bad)?;
        match form.trim() {
            "constant" => Ok(HazardSpec::Constant { rate: num(args)? }),
            "linear" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                Ok(HazardSpec::Linear {
                    intercept: num(a)?,
                    slope: num(b)?,
                })
            }
            "table" => {
                let points = args
                    .split(',')
                    .map(|pair| {
                        let (t, r) = pair.split_once(':').ok_or_else(bad)?;
                        Ok((num(t)?, num(r)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(HazardSpec::Table { points })
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_forms() {
        let lin = HazardSpec::Linear {
            intercept: 1.5,
            slope: -1.0,
        };
        assert!((lin.cumulative(1.0) - 1.0).abs() < 1e-15);
        let table = HazardSpec::Table {
            points: vec![(0.0, 1.0), (1.0, 3.0), (2.0, 3.0)],
        };
        assert!((table.cumulative(1.0) - 2.0).abs() < 1e-15);
        assert!((table.cumulative(0.5) - 0.5 * (1.0 + 2.0) * 0.5).abs() < 1e-15);
        assert!((table.cumulative(3.0) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn negative_rate_rejected() {
        let lin: HazardSpec = "linear:0.5,-1".parse().unwrap();
        assert!(matches!(lin.validate(1.0), Err(Error::Domain(_))));
        assert!(lin.validate(0.4).is_ok());
        let c: HazardSpec = "constant:-0.1".parse().unwrap();
        assert!(c.validate(1.0).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["constant:1", "linear:1.5,-1", "table:0:1,0.5:2"] {
            let h: HazardSpec = s.parse().unwrap();
            assert_eq!(h.to_string(), s);
        }
        assert!("cubic:1".parse::<HazardSpec>().is_err());
    }

    #[test]
    fn inversion_hits_target() {
        let h = HazardSpec::Constant { rate: 2.0 };
        let t = h.invert(0.1, 0.5, 5.0).unwrap();
        assert!((t - 0.35).abs() < 1e-9);
        assert_eq!(h.invert(0.0, 100.0, 1.0), None);
        assert_eq!(HazardSpec::Constant { rate: 0.0 }.invert(0.0, 1e-3, 1.0), None);
    }
}
