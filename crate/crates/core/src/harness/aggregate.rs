use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::train::RunLog;

/// How the variation band around the mean curve is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BandKind {
    /// Pointwise min and max across seeds.
    #[default]
    MinMax,
    /// Mean plus or minus one population standard deviation.
    StdDev,
}

impl FromStr for BandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(BandKind::MinMax),
            "std" => Ok(BandKind::StdDev),
            other => Err(Error::arg(format!(
                "unknown band `{other}` (expected minmax or std)"
            ))),
        }
    }
}

impl fmt::Display for BandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandKind::MinMax => "minmax",
            BandKind::StdDev => "std",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregatedCurve {
    pub iterations: Vec<usize>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_seeds: usize,
}

impl AggregatedCurve {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

pub fn aggregate(logs: &[RunLog]) -> Result<AggregatedCurve> {
    aggregate_with(logs, BandKind::MinMax)
}

pub fn aggregate_with(logs: &[RunLog], band: BandKind) -> Result<AggregatedCurve> {
    let traces: Vec<Vec<(usize, f64)>> = logs.iter().map(|l| l.losses.clone()).collect();
    aggregate_traces(&traces, band)
}

/// Pointwise statistics over traces that share one iteration grid.
pub fn aggregate_traces(traces: &[Vec<(usize, f64)>], band: BandKind) -> Result<AggregatedCurve> {
    let first = traces
        .first()
        .ok_or_else(|| Error::arg("nothing to aggregate"))?;
    for (k, t) in traces.iter().enumerate() {
        if t.len() != first.len() || t.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::arg(format!(
                "trace {k} does not share the iteration grid of trace 0"
            )));
        }
    }
    let n = traces.len() as f64;
    let mut curve = AggregatedCurve {
        n_seeds: traces.len(),
        ..Default::default()
    };
    for (i, &(iter, _)) in first.iter().enumerate() {
        let values = traces.iter().map(|t| t[i].1);
        let mean = values.clone().sum::<f64>() / n;
        let (lo, hi) = match band {
            BandKind::MinMax => values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            }),
            BandKind::StdDev => {
                let sd = (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                (mean - sd, mean + sd)
            }
        };
        curve.iterations.push(iter);
        // Rounding in the mean can leave it an ulp outside [min, max].
        curve.mean.push(mean.clamp(lo, hi));
        curve.lo.push(lo);
        curve.hi.push(hi);
    }
    Ok(curve)
}
