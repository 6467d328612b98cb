use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::exec::Exec;
use crate::model::{compensator, CompensatorEdge, HawkesModel};

/// Responsibilities of one event: background versus each admissible parent.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub background: f64,
    /// Index of the earliest admissible parent; parents are `first_parent..i`.
    pub first_parent: usize,
    pub parents: Vec<f64>,
}

impl BranchRow {
    pub fn sum(&self) -> f64 {
        self.background + self.parents.iter().sum::<f64>()
    }
}

/// The latent branching structure of one sequence. Only parents within the
/// triggering support (`t_i - t_j <= t_phi`) are represented; all other
/// entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingMatrix {
    rows: Vec<BranchRow>,
    t_phi: f64,
}

fn first_parents(times: &[f64], t_phi: f64) -> Vec<usize> {
    times
        .iter()
        .map(|&ti| times.partition_point(|&tj| ti - tj > t_phi))
        .collect()
}

impl BranchingMatrix {
    /// Uniform over `{self} ∪ admissible parents`.
    pub fn uniform(events: &EventSequence, t_phi: f64) -> Self {
        let rows = first_parents(events.times(), t_phi)
            .into_iter()
            .enumerate()
            .map(|(i, first)| {
                let w = 1.0 / (i - first + 1) as f64;
                BranchRow {
                    background: w,
                    first_parent: first,
                    parents: vec![w; i - first],
                }
            })
            .collect();
        Self { rows, t_phi }
    }

    /// Every event attributed to the background.
    pub fn background_only(events: &EventSequence, t_phi: f64) -> Self {
        let rows = first_parents(events.times(), t_phi)
            .into_iter()
            .enumerate()
            .map(|(i, first)| BranchRow {
                background: 1.0,
                first_parent: first,
                parents: vec![0.0; i - first],
            })
            .collect();
        Self { rows, t_phi }
    }

    pub fn from_rows(rows: Vec<BranchRow>, t_phi: f64) -> Self {
        Self { rows, t_phi }
    }

    pub fn rows(&self) -> &[BranchRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn t_phi(&self) -> f64 {
        self.t_phi
    }

    /// Dense accessor: `get(i, i)` is `p_ii`, `get(i, j)` for `j < i` is `p_ij`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        if i == j {
            row.background
        } else if j < i && j >= row.first_parent {
            row.parents[j - row.first_parent]
        } else {
            0.0
        }
    }

    pub fn background_sum(&self) -> f64 {
        self.rows.iter().map(|r| r.background).sum()
    }

    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(|r| r.parents.len()).sum()
    }

    /// `p_ii` in event order.
    pub fn background_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.background)
    }

    /// `p_ij` in pair order (by child, then parent).
    pub fn pair_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flat_map(|r| r.parents.iter().copied())
    }

    /// Largest `|sum_j p_ij - 1|` over rows.
    pub fn row_sum_deviation(&self) -> f64 {
        self.rows.iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let d = (a.background - b.background).abs();
                a.parents
                    .iter()
                    .zip(&b.parents)
                    .map(|(x, y)| (x - y).abs())
                    .fold(d, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Elapsed times `t_i - t_j` for every admissible pair, in pair order.
pub fn pair_lags(events: &EventSequence, t_phi: f64) -> Vec<f64> {
    let t = events.times();
    first_parents(t, t_phi)
        .into_iter()
        .enumerate()
        .flat_map(|(i, first)| (first..i).map(move |j| t[i] - t[j]))
        .collect()
}

/// E-step: `p_ij ∝ phi(t_i - t_j)`, `p_ii ∝ mu(t_i)`.
pub fn update_branching(
    model: &(impl HawkesModel + ?Sized),
    events: &EventSequence,
    exec: Exec,
) -> Result<BranchingMatrix> {
    let t_phi = model.trigger_support();
    if !t_phi.is_finite() {
        return Err(Error::invalid("branching structure needs a finite triggering support"));
    }
    let t = events.times();
    let firsts = first_parents(t, t_phi);
    let rows = exec.map_range(t.len(), |i| {
        let first = firsts[i];
        let mu = model.baseline(t[i]);
        let parents: Vec<f64> = (first..i).map(|j| model.trigger(t[i] - t[j])).collect();
        let total = mu + parents.iter().sum::<f64>();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateIntensity { index: i, time: t[i] });
        }
        Ok(BranchRow {
            background: mu / total,
            first_parent: first,
            parents: parents.into_iter().map(|v| v / total).collect(),
        })
    });
    Ok(BranchingMatrix {
        rows: rows.into_iter().collect::<Result<_>>()?,
        t_phi,
    })
}

fn xlogx_ratio(p: f64, value: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (value / p).ln()
    }
}

/// Jensen lower bound on the log-likelihood for a fixed branching structure,
/// including the entropy of the branching rows:
/// `sum_i [p_ii log(mu_i / p_ii) + sum_j p_ij log(phi_ij / p_ij)] - Lambda(T)`.
pub fn lower_bound(
    model: &(impl HawkesModel + ?Sized),
    events: &EventSequence,
    p: &BranchingMatrix,
    edge: CompensatorEdge,
) -> f64 {
    let t = events.times();
    let data: f64 = p
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut acc = xlogx_ratio(row.background, model.baseline(t[i]));
            for (k, &pij) in row.parents.iter().enumerate() {
                let j = row.first_parent + k;
                acc += xlogx_ratio(pij, model.trigger(t[i] - t[j]));
            }
            acc
        })
        .sum();
    data - compensator(model, t, events.t_end(), edge)
}
