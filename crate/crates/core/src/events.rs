//! Event sequences and their CSV representation.
//!
//! File format: UTF-8, one timestamp per line, optional header line `t`.
//! Timestamps are sorted on load; duplicates are rejected.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Strictly increasing timestamps observed on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    times: Vec<f64>,
    t_end: f64,
}

impl EventSequence {
    pub fn new(times: Vec<f64>, t_end: f64) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::invalid(format!(
                "observation window must be positive, got {t_end}"
            )));
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || t > t_end {
                return Err(Error::invalid(format!("event {i} at {t} lies outside [0, {t_end}]")));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::invalid(format!(
                    "timestamps must be strictly increasing (event {i} at {t})"
                )));
            }
        }
        Ok(Self { times, t_end })
    }

    /// Sort the timestamps first; duplicates are still an error.
    pub fn from_unsorted(mut times: Vec<f64>, t_end: f64) -> Result<Self> {
        if times.iter().any(|t| t.is_nan()) {
            return Err(Error::invalid("NaN timestamp"));
        }
        times.sort_by(f64::total_cmp);
        if let Some(w) = times.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate timestamp {}", w[0])));
        }
        Self::new(times, t_end)
    }

    pub fn empty(t_end: f64) -> Result<Self> {
        Self::new(Vec::new(), t_end)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The first `n` events, on the same window.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            times: self.times[..n.min(self.times.len())].to_vec(),
            t_end: self.t_end,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t\n");
        for t in &self.times {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv())
            .map_err(|e| Error::invalid(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn read_csv(path: impl AsRef<Path>, t_end: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_unsorted(parse_timestamps(&text)?, t_end)
    }
}

/// Parse the event file body into (unsorted) timestamps.
pub fn parse_timestamps(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() || (lineno == 0 && field == "t") {
            continue;
        }
        let t: f64 = field
            .parse()
            .map_err(|_| Error::invalid(format!("line {}: cannot parse {field:?}", lineno + 1)))?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_window_and_duplicates() {
        assert!(EventSequence::new(vec![0.5, 2.0], 1.0).is_err());
        assert!(EventSequence::new(vec![0.5, 0.5], 1.0).is_err());
        assert!(EventSequence::from_unsorted(vec![0.2, 0.1, 0.2], 1.0).is_err());
        let s = EventSequence::from_unsorted(vec![0.3, 0.1], 1.0).unwrap();
        assert_eq!(s.times(), &[0.1, 0.3]);
    }

    #[test]
    fn header_is_optional() {
        assert_eq!(parse_timestamps("t\n1.5\n2\n").unwrap(), vec![1.5, 2.0]);
        assert_eq!(parse_timestamps("1.5\n\n2\n").unwrap(), vec![1.5, 2.0]);
        assert!(parse_timestamps("t\nabc\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(mut xs in proptest::collection::vec(0.0f64..100.0, 0..50)) {
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let s = EventSequence::new(xs, 100.0).unwrap();
            let back = EventSequence::from_unsorted(parse_timestamps(&s.to_csv()).unwrap(), 100.0).unwrap();
            prop_assert_eq!(s, back);
        }
    }
}
