//! Subsequence DTW between a query bootleg and a MIDI bootleg.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::midi::MidiBootleg;
use crate::score::{BootlegScore, ColumnWord};

/// Normalized negative inner product of two columns, in `[-1, 0]`.
pub fn column_cost(q: ColumnWord, r: ColumnWord) -> f64 {
    let denom = q.count().max(r.count());
    if denom == 0 {
        return 0.0;
    }
    -f64::from(q.intersection(r).count()) / f64::from(denom)
}

/// One allowed DP step: advance `dq` query and `dr` reference columns,
/// paying `weight` times the target cell's cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub dq: usize,
    pub dr: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPattern {
    /// (1,1), (1,2), (2,1) with weights 1, 1, 2.
    #[default]
    Standard,
    /// (1,1), (1,0), (0,1) with unit weights.
    Symmetric1,
}

impl StepPattern {
    /// Steps in tie-break priority order.
    pub fn steps(self) -> &'static [Step] {
        const STANDARD: [Step; 3] = [
            Step { dq: 1, dr: 1, weight: 1.0 },
            Step { dq: 1, dr: 2, weight: 1.0 },
            Step { dq: 2, dr: 1, weight: 2.0 },
        ];
        const SYMMETRIC1: [Step; 3] = [
            Step { dq: 1, dr: 1, weight: 1.0 },
            Step { dq: 1, dr: 0, weight: 1.0 },
            Step { dq: 0, dr: 1, weight: 1.0 },
        ];
        match self {
            StepPattern::Standard => &STANDARD,
            StepPattern::Symmetric1 => &SYMMETRIC1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && end >= start) {
            return Err(invalid(format!("invalid interval [{start}, {end}]")));
        }
        Ok(TimeInterval { start, end })
    }

    pub fn zero() -> Self {
        TimeInterval { start: 0.0, end: 0.0 }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub ref_start_col: usize,
    pub ref_end_col: usize,
    /// Step endpoints as (query column, reference column).
    pub path: Vec<(usize, usize)>,
    pub total_cost: f64,
}

const NO_STEP: u8 = u8::MAX;

pub fn subsequence_dtw(query: &BootlegScore, reference: &BootlegScore, pattern: StepPattern) -> Result<AlignmentResult> {
    if query.is_empty() || reference.is_empty() {
        return Err(invalid("query and reference must be nonempty"));
    }
    let (q, r) = (query.columns(), reference.columns());
    let (nq, nr) = (q.len(), r.len());
    let steps = pattern.steps();
    let ref_counts: Vec<u32> = r.iter().map(|c| c.count()).collect();

    // Rolling cost rows; back pointers kept for the whole table.
    let max_dq = steps.iter().map(|s| s.dq).max().unwrap_or(1);
    let mut rows: Vec<Vec<f64>> = vec![vec![f64::INFINITY; nr]; max_dq + 1];
    let mut back = vec![NO_STEP; nq * nr];
    // quotients[k * W + d] = -k / d, so the inner loop needs no division.
    const W: usize = 65;
    let quotients: Vec<f64> = (0..W * W)
        .map(|x| {
            let (k, d) = (x / W, x % W);
            if d == 0 {
                0.0
            } else {
                -(k as f64) / d as f64
            }
        })
        .collect();

    for i in 0..nq {
        let qc = q[i];
        let qn = qc.count();
        let slot = i % (max_dq + 1);
        let mut cur = std::mem::take(&mut rows[slot]);
        // Source row for each step, resolved once per query column; `None`
        // means the step reads the row being filled.
        let sources: Vec<(Option<&[f64]>, Step, u8)> = steps
            .iter()
            .enumerate()
            .filter(|(_, step)| step.dq <= i)
            .map(|(s, &step)| {
                let src = (step.dq > 0).then(|| rows[(i - step.dq) % (max_dq + 1)].as_slice());
                (src, step, s as u8)
            })
            .collect();
        let back_row = &mut back[i * nr..(i + 1) * nr];
        let cost = |j: usize| quotients[qc.intersection(r[j]).count() as usize * W + qn.max(ref_counts[j]) as usize];

        // Three steps that all read earlier rows: fixed-size, no bound checks
        // once j clears the largest reference advance.
        let fixed: Option<[(&[f64], usize, f64, u8); 3]> = match sources.as_slice() {
            [(Some(a), sa, ia), (Some(b), sb, ib), (Some(c), sc, ic)] => {
                Some([(a, sa.dr, sa.weight, *ia), (b, sb.dr, sb.weight, *ib), (c, sc.dr, sc.weight, *ic)])
            }
            _ => None,
        };
        let general_until = match fixed {
            Some(_) => sources.iter().map(|(_, st, _)| st.dr).max().unwrap_or(0).min(nr),
            None => nr,
        };
        for j in 0..general_until {
            let c = cost(j);
            let mut best = if i == 0 { c } else { f64::INFINITY };
            let mut best_step = NO_STEP;
            for &(src, step, s) in &sources {
                if step.dr > j {
                    continue;
                }
                let prev = match src {
                    Some(row) => row[j - step.dr],
                    None => cur[j - step.dr],
                };
                let candidate = prev + step.weight * c;
                if candidate < best {
                    best = candidate;
                    best_step = s;
                }
            }
            cur[j] = best;
            back_row[j] = best_step;
        }
        if let Some(fixed) = fixed {
            for j in general_until..nr {
                let c = cost(j);
                let mut best = f64::INFINITY;
                let mut best_step = NO_STEP;
                for &(row, dr, weight, s) in &fixed {
                    let candidate = row[j - dr] + weight * c;
                    if candidate < best {
                        best = candidate;
                        best_step = s;
                    }
                }
                cur[j] = best;
                back_row[j] = best_step;
            }
        }
        rows[slot] = cur;
    }

    let last = &rows[(nq - 1) % (max_dq + 1)];
    let (end, total_cost) = last
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
    if !total_cost.is_finite() {
        return Err(invalid("no admissible alignment path"));
    }
    let mut path = vec![(nq - 1, end)];
    let (mut i, mut j) = (nq - 1, end);
    loop {
        let s = back[i * nr + j];
        if s == NO_STEP {
            break;
        }
        let step = steps[s as usize];
        i -= step.dq;
        j -= step.dr;
        path.push((i, j));
    }
    path.reverse();
    Ok(AlignmentResult {
        ref_start_col: path[0].1,
        ref_end_col: end,
        path,
        total_cost,
    })
}

/// Maps a matched column range to seconds. The end extends to the onset of
/// the event after the last matched one, when there is one.
pub fn columns_to_interval(result: &AlignmentResult, midi: &MidiBootleg) -> Result<TimeInterval> {
    let n = midi.column_events.len();
    if result.ref_start_col >= n || result.ref_end_col >= n || result.ref_start_col > result.ref_end_col {
        return Err(invalid(format!(
            "columns {}..{} outside a {n}-column reference",
            result.ref_start_col, result.ref_end_col
        )));
    }
    let first = midi.column_events[result.ref_start_col];
    let last = midi.column_events[result.ref_end_col];
    let start = midi.event_times[first];
    let end = midi.event_times.get(last + 1).copied().unwrap_or(midi.event_times[last]);
    TimeInterval::new(start, end)
}
