//! Cost/accuracy Pareto frontier and each point's marginal contribution.
//!
//! Costs are held as integer micro-dollars so that domination checks never
//! depend on floating-point rounding.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub pipeline_key: String,
    pub cost_micros: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParetoError {
    #[error("point `{0}` is not in the set")]
    PointNotFound(String),
}

/// Dollars to integer micro-dollars, rounding to nearest.
pub fn to_micros(cost: f64) -> u64 {
    if cost.is_finite() && cost > 0.0 {
        (cost * 1e6).round() as u64
    } else {
        0
    }
}

impl EvalPoint {
    /// Builds a point from a dollar cost; accuracy is clamped to [0, 1].
    pub fn new(pipeline_key: impl Into<String>, cost: f64, accuracy: f64) -> Self {
        let pipeline_key = pipeline_key.into();
        let clamped = if accuracy.is_nan() { 0.0 } else { accuracy.clamp(0.0, 1.0) };
        if clamped != accuracy {
            log::warn!("accuracy {accuracy} of `{pipeline_key}` clamped to {clamped}");
        }
        EvalPoint {
            pipeline_key,
            cost_micros: to_micros(cost),
            accuracy: clamped,
        }
    }

    pub fn from_micros(pipeline_key: impl Into<String>, cost_micros: u64, accuracy: f64) -> Self {
        let mut p = EvalPoint::new(pipeline_key, 0.0, accuracy);
        p.cost_micros = cost_micros;
        p
    }

    pub fn cost(&self) -> f64 {
        self.cost_micros as f64 / 1e6
    }
}

/// Indices ordered by cost, stable on input order.
fn by_cost(points: &[EvalPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| points[i].cost_micros);
    order
}

/// Indices of the points that no other point beats on accuracy at equal or
/// lower cost, in input order. Equal-accuracy points at different costs
/// both survive.
pub fn pareto_indices(points: &[EvalPoint]) -> Vec<usize> {
    let order = by_cost(points);
    let mut keep = vec![false; points.len()];
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let cost = points[order[i]].cost_micros;
        let mut j = i;
        let mut best_here = best_before;
        while j < order.len() && points[order[j]].cost_micros == cost {
            best_here = best_here.max(points[order[j]].accuracy);
            j += 1;
        }
        for &idx in &order[i..j] {
            keep[idx] = points[idx].accuracy >= best_here;
        }
        best_before = best_here;
        i = j;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// The frontier itself, sorted by cost then by descending accuracy.
pub fn pareto_set(points: &[EvalPoint]) -> Vec<EvalPoint> {
    let mut out: Vec<EvalPoint> = pareto_indices(points)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    out.sort_by(|a, b| {
        a.cost_micros
            .cmp(&b.cost_micros)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.pipeline_key.cmp(&b.pipeline_key))
    });
    out
}

/// For every point, the best accuracy any *other* point reaches at equal or
/// lower cost, or 0 when there is none.
///
/// The best accuracy among the remaining points at cost ≤ c equals the best
/// among the frontier of the remaining points at cost ≤ c, so no frontier
/// needs to be materialized.
pub fn ceilings(points: &[EvalPoint]) -> Vec<f64> {
    let order = by_cost(points);
    let mut out = vec![0.0; points.len()];
    // best two (accuracy, index) among all points with cost ≤ current
    let mut top: [Option<(f64, usize)>; 2] = [None, None];
    let mut i = 0;
    while i < order.len() {
        let cost = points[order[i]].cost_micros;
        let mut j = i;
        while j < order.len() && points[order[j]].cost_micros == cost {
            let idx = order[j];
            let cand = (points[idx].accuracy, idx);
            match top {
                [None, _] => top[0] = Some(cand),
                [Some(a), _] if cand.0 > a.0 => {
                    top[1] = top[0];
                    top[0] = Some(cand);
                }
                [Some(_), None] => top[1] = Some(cand),
                [Some(_), Some(b)] if cand.0 > b.0 => top[1] = Some(cand),
                _ => {}
            }
            j += 1;
        }
        for &idx in &order[i..j] {
            let other = match top {
                [Some((_, t)), second] if t == idx => second,
                [first, _] => first,
            };
            out[idx] = other.map_or(0.0, |(a, _)| a);
        }
        i = j;
    }
    out
}

/// Marginal contribution of every point: its accuracy minus its ceiling.
pub fn deltas(points: &[EvalPoint]) -> Vec<f64> {
    ceilings(points)
        .into_iter()
        .zip(points)
        .map(|(c, p)| p.accuracy - c)
        .collect()
}

fn position(points: &[EvalPoint], p: &EvalPoint) -> Result<usize, ParetoError> {
    points
        .iter()
        .position(|q| q == p)
        .ok_or_else(|| ParetoError::PointNotFound(p.pipeline_key.clone()))
}

/// Highest accuracy reachable at cost ≤ cost(p) by the frontier of the set
/// with `p` removed; 0 when nothing qualifies.
pub fn ceiling_accuracy(points: &[EvalPoint], p: &EvalPoint) -> Result<f64, ParetoError> {
    let idx = position(points, p)?;
    Ok(points
        .iter()
        .enumerate()
        .filter(|&(i, q)| i != idx && q.cost_micros <= p.cost_micros)
        .map(|(_, q)| q.accuracy)
        .fold(0.0, f64::max))
}

/// How far `p` sits above (positive) or below (negative) the frontier of
/// the other points.
pub fn delta(points: &[EvalPoint], p: &EvalPoint) -> Result<f64, ParetoError> {
    Ok(p.accuracy - ceiling_accuracy(points, p)?)
}
