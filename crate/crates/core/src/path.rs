//! Right-continuous piecewise-constant vector paths.
//!
//! A [`StepPath`] holds an origin value, a strictly increasing list of jump
//! times and one increment vector per jump. Cumulative values are cached so
//! that evaluation is a binary search. Cumulative hazard drivers, counting
//! processes and plugin solutions all live in this type.

use crate::error::{Error, Result};

/// Two paths are equal when they start from the same origin and take the
/// same values at the same jump times; cached increments are not compared.
#[derive(Debug, Clone)]
pub struct StepPath {
    dim: usize,
    origin: Vec<f64>,
    times: Vec<f64>,
    // Row-major, `times.len() * dim`.
    increments: Vec<f64>,
    values: Vec<f64>,
}

impl PartialEq for StepPath {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.origin == other.origin
            && self.times == other.times
            && self.values == other.values
    }
}

impl StepPath {
    /// A path that never jumps.
    pub fn constant(origin: Vec<f64>) -> Self {
        StepPath {
            dim: origin.len(),
            origin,
            times: Vec::new(),
            increments: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::constant(vec![0.0; dim])
    }

    /// Builds a path from jump increments; cumulative values are summed in
    /// time order starting from `origin`.
    pub fn from_increments(origin: Vec<f64>, times: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        let dim = origin.len();
        check_layout(dim, &times, increments.len())?;
        let mut values = Vec::with_capacity(increments.len());
        let mut current = origin.clone();
        for inc in increments.chunks_exact(dim.max(1)).take(times.len()) {
            for (c, d) in current.iter_mut().zip(inc) {
                *c += d;
            }
            values.extend_from_slice(&current);
        }
        Ok(StepPath {
            dim,
            origin,
            times,
            increments,
            values,
        })
    }

    /// Builds a path from the values it takes after each jump. Increments are
    /// the successive differences, and the stored values are kept verbatim.
    pub fn from_values(origin: Vec<f64>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let dim = origin.len();
        check_layout(dim, &times, values.len())?;
        let mut increments = Vec::with_capacity(values.len());
        let mut previous = origin.as_slice();
        for row in values.chunks_exact(dim.max(1)).take(times.len()) {
            increments.extend(row.iter().zip(previous).map(|(v, p)| v - p));
            previous = row;
        }
        Ok(StepPath {
            dim,
            origin,
            times,
            increments,
            values,
        })
    }

    /// Assembles a path whose increments and values were computed together
    /// by the caller. No consistency check beyond the layout is made.
    pub(crate) fn from_raw(
        origin: Vec<f64>,
        times: Vec<f64>,
        increments: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(increments.len(), times.len() * origin.len());
        debug_assert_eq!(values.len(), times.len() * origin.len());
        StepPath {
            dim: origin.len(),
            origin,
            times,
            increments,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of jumps.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Increment vector of the `i`-th jump.
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    /// Value right after the `i`-th jump.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn increments_flat(&self) -> &[f64] {
        &self.increments
    }

    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    /// Value after the last jump (the origin if the path never jumps).
    pub fn final_value(&self) -> &[f64] {
        match self.len() {
            0 => &self.origin,
            n => self.value(n - 1),
        }
    }

    /// Number of jumps at or before `t`.
    pub fn jumps_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Right-continuous evaluation: origin plus all increments with time ≤ t.
    pub fn eval(&self, t: f64) -> &[f64] {
        match self.jumps_until(t) {
            0 => &self.origin,
            k => self.value(k - 1),
        }
    }

    /// Left limit at `t`: origin plus all increments with time < t.
    pub fn eval_left(&self, t: f64) -> &[f64] {
        match self.times.partition_point(|&s| s < t) {
            0 => &self.origin,
            k => self.value(k - 1),
        }
    }

    /// The one-dimensional path of component `c`. Jump times are kept even
    /// where that component does not move.
    pub fn component(&self, c: usize) -> StepPath {
        self.select(&[c])
    }

    /// Sub-path with the listed components, in the listed order.
    pub fn select(&self, components: &[usize]) -> StepPath {
        let pick = |flat: &[f64]| -> Vec<f64> {
            flat.chunks_exact(self.dim.max(1))
                .take(self.len())
                .flat_map(|row| components.iter().map(move |&c| row[c]))
                .collect()
        };
        StepPath::from_raw(
            components.iter().map(|&c| self.origin[c]).collect(),
            self.times.clone(),
            pick(&self.increments),
            pick(&self.values),
        )
    }

    /// One-dimensional path whose increments are `weights · increment`.
    pub fn combine(&self, weights: &[f64]) -> Result<StepPath> {
        if weights.len() != self.dim {
            return Err(Error::Contract(format!(
                "weight vector has length {} but the path has dimension {}",
                weights.len(),
                self.dim
            )));
        }
        let dot = |row: &[f64]| row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        let increments = self
            .increments
            .chunks_exact(self.dim.max(1))
            .take(self.len())
            .map(dot)
            .collect();
        StepPath::from_increments(vec![dot(&self.origin)], self.times.clone(), increments)
    }

    /// Drops every jump after `t`.
    pub fn truncate_after(&self, t: f64) -> StepPath {
        let k = self.jumps_until(t);
        StepPath::from_raw(
            self.origin.clone(),
            self.times[..k].to_vec(),
            self.increments[..k * self.dim].to_vec(),
            self.values[..k * self.dim].to_vec(),
        )
    }
}

fn check_layout(dim: usize, times: &[f64], flat_len: usize) -> Result<()> {
    if flat_len != times.len() * dim {
        return Err(Error::Contract(format!(
            "expected {} entries for {} jumps of dimension {dim}, got {flat_len}",
            times.len() * dim,
            times.len()
        )));
    }
    if let Some(bad) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Contract(format!("non-finite jump time {bad}")));
    }
    if let Some(w) = times.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!(
            "jump times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Exact integral over `[0, horizon]` of the squared difference between
/// component `ca` of `a` and component `cb` of `b`, both piecewise constant.
pub fn integrated_squared_difference(
    a: &StepPath,
    ca: usize,
    b: &StepPath,
    cb: usize,
    horizon: f64,
) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut left = 0.0;
    let mut va = a.origin[ca];
    let mut vb = b.origin[cb];
    let mut total = 0.0;
    loop {
        let ta = a.times.get(i).copied().unwrap_or(f64::INFINITY);
        let tb = b.times.get(j).copied().unwrap_or(f64::INFINITY);
        let next = ta.min(tb).min(horizon);
        if next > left {
            let d = va - vb;
            total += d * d * (next - left);
            left = next;
        }
        if next >= horizon {
            break;
        }
        if ta == next {
            va = a.value(i)[ca];
            i += 1;
        }
        if tb == next {
            vb = b.value(j)[cb];
            j += 1;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StepPath {
        StepPath::from_increments(vec![1.0, 0.0], vec![0.5, 1.0], vec![0.1, 1.0, 0.2, 2.0]).unwrap()
    }

    #[test]
    fn right_continuous_evaluation() {
        let p = sample();
        assert_eq!(p.eval(0.0), &[1.0, 0.0]);
        assert_eq!(p.eval(0.49), &[1.0, 0.0]);
        assert_eq!(p.eval(0.5), &[1.1, 1.0]);
        assert_eq!(p.eval_left(0.5), &[1.0, 0.0]);
        assert_eq!(p.eval(7.0), &[1.1 + 0.2, 3.0]);
    }

    #[test]
    fn rejects_unordered_times() {
        let err = StepPath::from_increments(vec![0.0], vec![1.0, 1.0], vec![0.1, 0.1]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = StepPath::from_increments(vec![0.0], vec![1.0], vec![0.1, 0.1]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn from_values_keeps_values_verbatim() {
        let p = StepPath::from_values(vec![1.0], vec![1.0, 2.0], vec![0.9, 0.72]).unwrap();
        assert_eq!(p.value(1), &[0.72]);
        assert!((p.increment(1)[0] + 0.18).abs() < 1e-15);
    }

    #[test]
    fn select_and_combine() {
        let p = sample();
        let c = p.component(1);
        assert_eq!(c.times(), p.times());
        assert_eq!(c.eval(1.0), &[3.0]);
        let w = p.combine(&[1.0, -1.0]).unwrap();
        assert!((w.eval(1.0)[0] - (1.3 - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn squared_difference_integral() {
        let a = StepPath::from_increments(vec![0.0], vec![0.25], vec![1.0]).unwrap();
        let b = StepPath::from_increments(vec![0.0], vec![0.5], vec![2.0]).unwrap();
        // [0.25,0.5): 1, [0.5,1): 1
        assert!((integrated_squared_difference(&a, 0, &b, 0, 1.0) - 0.75).abs() < 1e-15);
        assert_eq!(integrated_squared_difference(&a, 0, &a, 0, 1.0), 0.0);
    }
}
