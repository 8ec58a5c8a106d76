//! Cost curves and the area under them.

use std::io::Write;

use serde::Serialize;

use super::RankedUnit;
use crate::{Error, Result};

pub const DEFAULT_BUCKETS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Share of the ranked population in the prefix.
    pub fraction: f64,
    /// Normalized engagement loss.
    pub x: f64,
    /// Normalized monetization gain.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    /// Starts at `(0, 0)` and ends at `(1, 1)`; the interior is sorted by `x`.
    pub points: Vec<CurvePoint>,
    pub aucc: f64,
    /// Some interior point left the unit square (not clamped).
    pub exceeds_unit_box: bool,
    /// Prefixes skipped because they held only one arm.
    pub skipped_buckets: usize,
}

#[derive(Default, Clone, Copy)]
struct Arm {
    n: usize,
    rev: f64,
    eng: f64,
}

impl Arm {
    fn add(&mut self, u: &RankedUnit) {
        self.n += 1;
        self.rev += u.observed_rev;
        self.eng += u.observed_eng;
    }
}

/// Cumulative `(gain, engagement loss)` of treating a prefix of size `m`:
/// the prefix difference of arm means scaled by `m`.
fn cumulative(treated: &Arm, control: &Arm, m: usize) -> Option<(f64, f64)> {
    if treated.n == 0 || control.n == 0 {
        return None;
    }
    let (nt, nc) = (treated.n as f64, control.n as f64);
    let d_rev = treated.rev / nt - control.rev / nc;
    let d_eng = treated.eng / nt - control.eng / nc;
    Some((d_rev * m as f64, -d_eng * m as f64))
}

/// Builds the cost curve of `units` ranked by descending score (ties by
/// ascending `unit_id`), evaluated at prefixes `k / n_buckets`.
pub fn cost_curve(units: &[RankedUnit], n_buckets: usize) -> Result<CostCurve> {
    if n_buckets == 0 {
        return Err(Error::config("n_buckets must be >= 1"));
    }
    if units.is_empty() {
        return Err(Error::Normalization("no units to rank".into()));
    }
    if units.iter().any(|u| u.score.is_nan()) {
        return Err(Error::Numerical("NaN ranking score".into()));
    }
    let mut order: Vec<&RankedUnit> = units.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.unit_id.cmp(&b.unit_id)));

    let n = order.len();
    let (mut treated, mut control) = (Arm::default(), Arm::default());
    let mut prefix = Vec::with_capacity(n_buckets);
    let mut next = 0;
    for k in 1..=n_buckets {
        let m = (k * n / n_buckets).max(1);
        while next < m {
            let u = order[next];
            if u.treated {
                treated.add(u);
            } else {
                control.add(u);
            }
            next += 1;
        }
        prefix.push((k, m, cumulative(&treated, &control, m)));
    }
    let (total_gain, total_loss) = prefix.last().and_then(|p| p.2).ok_or_else(|| {
        Error::Normalization("population lacks a treated or a control unit".into())
    })?;
    if !(total_gain > 0.0) {
        return Err(Error::Normalization(format!(
            "aggregate revenue gain {total_gain} is not positive"
        )));
    }
    if !(total_loss > 0.0) {
        return Err(Error::Normalization(format!(
            "aggregate engagement loss {total_loss} is not positive"
        )));
    }

    let mut skipped = 0;
    let mut interior = Vec::with_capacity(n_buckets);
    for &(k, _, cum) in &prefix[..prefix.len() - 1] {
        match cum {
            Some((gain, loss)) => interior.push(CurvePoint {
                fraction: k as f64 / n_buckets as f64,
                x: loss / total_loss,
                y: gain / total_gain,
            }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("cost curve: skipped {skipped} prefix bucket(s) holding a single arm");
    }
    let exceeds_unit_box = interior
        .iter()
        .any(|p| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y));
    interior.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.fraction.total_cmp(&b.fraction)));

    let mut points = Vec::with_capacity(interior.len() + 2);
    points.push(CurvePoint {
        fraction: 0.0,
        x: 0.0,
        y: 0.0,
    });
    points.extend(interior);
    points.push(CurvePoint {
        fraction: 1.0,
        x: 1.0,
        y: 1.0,
    });
    let aucc = trapezoid(&points);
    Ok(CostCurve {
        points,
        aucc,
        exceeds_unit_box,
        skipped_buckets: skipped,
    })
}

fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0)
        .sum()
}

/// CSV with header `fraction,x,y`.
pub fn write_curve_csv<W: Write>(curve: &CostCurve, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in &curve.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}
