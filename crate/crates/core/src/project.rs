//! Turns detected noteheads plus staff and bar-line evidence into a query
//! bootleg score.

use serde::{Deserialize, Serialize};

use crate::cv;
use crate::detect::{BarlineFeatures, NoteheadBox, StaffFeatureTensor};
use crate::error::{Error, Result};
use crate::score::{BootlegScore, ColumnWord, Hand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectParams {
    pub context_rows: usize,
    pub narrow_context_rows: usize,
    pub cluster_threshold: f64,
    pub max_staves: usize,
    /// Activations at or below this are treated as no staff evidence.
    pub min_activation: f32,
    /// Height of a staff (top to bottom line) at the normalized interline.
    pub staff_height: f64,
    pub staffline_reestimate: bool,
    pub filler_repetition: bool,
}

impl Default for ProjectParams {
    fn default() -> Self {
        ProjectParams {
            context_rows: 40,
            narrow_context_rows: 15,
            cluster_threshold: 40.0,
            max_staves: 24,
            min_activation: 0.05,
            staff_height: 40.0,
            staffline_reestimate: true,
            filler_repetition: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalStaffEstimate {
    pub notehead: usize,
    /// Row of the staff's top line.
    pub staff_row: usize,
    pub spacing: f64,
    pub response: f32,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStaff {
    pub centroid_row: f64,
    pub members: Vec<usize>,
    pub hand: Option<Hand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandStaff {
    /// Index of the upper (treble) staff.
    pub right: usize,
    /// Index of the lower (bass) staff.
    pub left: usize,
    pub right_row: f64,
    pub left_row: f64,
}

fn estimate_in_window(
    notehead: usize,
    nb: &NoteheadBox,
    tensor: &StaffFeatureTensor,
    center: f64,
    half: usize,
    min_activation: f32,
) -> LocalStaffEstimate {
    let c = tensor.column_of(nb.center.1);
    let lo = (center - half as f64).max(0.0).round() as usize;
    let hi = ((center + half as f64).round().max(0.0) as usize).min(tensor.height - 1);
    match tensor.argmax(c, lo.min(hi), hi) {
        Some((k, h, v)) => LocalStaffEstimate {
            notehead,
            staff_row: h,
            spacing: tensor.spacings[k],
            response: v,
            reliable: v > min_activation,
        },
        None => LocalStaffEstimate {
            notehead,
            staff_row: lo,
            spacing: tensor.spacings[0],
            response: 0.0,
            reliable: false,
        },
    }
}

/// Best (spacing, row) in each notehead's column within `context_rows` of its center.
pub fn estimate_local_staves(noteheads: &[NoteheadBox], tensor: &StaffFeatureTensor, params: &ProjectParams) -> Vec<LocalStaffEstimate> {
    noteheads
        .iter()
        .enumerate()
        .map(|(i, nb)| estimate_in_window(i, nb, tensor, nb.center.0, params.context_rows, params.min_activation))
        .collect()
}

fn min_gap(centroids: &[[f64; 1]]) -> f64 {
    centroids.windows(2).map(|w| w[1][0] - w[0][0]).fold(f64::INFINITY, f64::min)
}

fn objective(points: &[[f64; 1]], km: &cv::KMeans<1>) -> f64 {
    points
        .iter()
        .zip(&km.assignments)
        .map(|(p, &a)| (p[0] - km.centroids[a][0]).powi(2))
        .sum()
}

/// Adaptive 1-D k-means over staff rows: grows k while all centroids stay
/// at least `threshold` apart.
pub fn cluster_staves(estimates: &[LocalStaffEstimate], params: &ProjectParams) -> Result<Vec<GlobalStaff>> {
    let reliable: Vec<&LocalStaffEstimate> = estimates.iter().filter(|e| e.reliable).collect();
    if reliable.is_empty() {
        return Err(Error::Projection("no reliable staff estimates".into()));
    }
    let points: Vec<[f64; 1]> = reliable.iter().map(|e| [e.staff_row as f64]).collect();
    let mut distinct: Vec<usize> = reliable.iter().map(|e| e.staff_row).collect();
    distinct.sort_unstable();
    distinct.dedup();

    let mut best = cv::kmeans(&points, 1)?;
    for k in 2..=distinct.len().min(params.max_staves) {
        // Quantile seeds can split a dense staff; keep the better of two seedings.
        let a = cv::kmeans_from_seeds(&points, cv::quantile_seeds(&points, k));
        let b = cv::kmeans_from_seeds(&points, cv::farthest_seeds(&points, k));
        let km = if objective(&points, &b) < objective(&points, &a) { b } else { a };
        if min_gap(&km.centroids) < params.cluster_threshold {
            break;
        }
        best = km;
    }
    let mut staves: Vec<GlobalStaff> = best
        .centroids
        .iter()
        .map(|c| GlobalStaff {
            centroid_row: c[0],
            members: Vec::new(),
            hand: None,
        })
        .collect();
    for (e, &a) in reliable.iter().zip(&best.assignments) {
        staves[a].members.push(e.notehead);
    }
    staves.retain(|s| !s.members.is_empty());
    Ok(staves)
}

/// Reassigns every notehead to the staff whose middle line is nearest and
/// re-runs the argmax in a narrow band around that staff.
pub fn refine_local_estimates(
    noteheads: &[NoteheadBox],
    staves: &mut [GlobalStaff],
    tensor: &StaffFeatureTensor,
    params: &ProjectParams,
) -> Vec<LocalStaffEstimate> {
    for s in staves.iter_mut() {
        s.members.clear();
    }
    let middle = params.staff_height / 2.0;
    noteheads
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let nearest = (0..staves.len())
                .min_by(|&a, &b| {
                    let da = (nb.center.0 - (staves[a].centroid_row + middle)).abs();
                    let db = (nb.center.0 - (staves[b].centroid_row + middle)).abs();
                    da.total_cmp(&db)
                })
                .expect("at least one staff");
            staves[nearest].members.push(i);
            estimate_in_window(i, nb, tensor, staves[nearest].centroid_row, params.narrow_context_rows, params.min_activation)
        })
        .collect()
}

fn median(values: &mut [u32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        f64::from(values[n / 2])
    } else {
        (f64::from(values[n / 2 - 1]) + f64::from(values[n / 2])) / 2.0
    }
}

/// Median bar-line evidence in the gap between two staves.
fn pair_score(upper: f64, lower: f64, bars: &BarlineFeatures, staff_height: f64) -> f64 {
    let clamp = |r: f64| (r.round().max(0.0) as usize).min(bars.rowsum.len());
    let (mut lo, hi) = (clamp(upper + staff_height), clamp(lower));
    if lo >= hi {
        lo = clamp(upper);
    }
    if lo >= hi {
        return 0.0;
    }
    median(&mut bars.rowsum[lo..hi].to_vec())
}

/// Chooses between pairing staves (0,1),(2,3)... and (1,2),(3,4)... by
/// average bar-line evidence. Staves left unpaired are dropped.
pub fn group_grand_staves(staves: &mut [GlobalStaff], bars: &BarlineFeatures, params: &ProjectParams) -> Result<Vec<GrandStaff>> {
    let n = staves.len();
    if n < 2 {
        return Err(Error::Projection(format!("{n} staff found; need at least 2")));
    }
    let pairing = |offset: usize| -> Vec<(usize, usize)> { (offset..n - 1).step_by(2).map(|i| (i, i + 1)).collect() };
    let score = |pairs: &[(usize, usize)]| -> f64 {
        pairs
            .iter()
            .map(|&(a, b)| pair_score(staves[a].centroid_row, staves[b].centroid_row, bars, params.staff_height))
            .sum::<f64>()
            / pairs.len() as f64
    };
    let even = pairing(0);
    let odd = pairing(1);
    let chosen = if odd.is_empty() || score(&even) >= score(&odd) { even } else { odd };
    for s in staves.iter_mut() {
        s.hand = None;
    }
    Ok(chosen
        .into_iter()
        .map(|(a, b)| {
            staves[a].hand = Some(Hand::Right);
            staves[b].hand = Some(Hand::Left);
            GrandStaff {
                right: a,
                left: b,
                right_row: staves[a].centroid_row,
                left_row: staves[b].centroid_row,
            }
        })
        .collect())
}

/// Global bootleg row of a notehead from its staff's top line and spacing.
/// Half-space ties round toward the middle line.
pub fn note_to_staff_position(center_row: f64, staff_row: f64, spacing: f64, hand: Hand) -> usize {
    let p = (staff_row + 4.0 * spacing - center_row) / (spacing / 2.0);
    let frac = p - p.floor();
    let steps = if (frac - 0.5).abs() < 1e-9 {
        if p < 4.0 {
            p.ceil()
        } else {
            p.floor()
        }
    } else {
        p.round()
    };
    let row = i64::from(hand.bottom_line_row()) + steps as i64;
    let range = hand.row_range();
    row.clamp(*range.start() as i64, *range.end() as i64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedNote {
    pub notehead: usize,
    pub grand_staff: usize,
    pub hand: Hand,
    pub row: usize,
    pub col_min: usize,
    pub col_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBootleg {
    pub score: BootlegScore,
    /// Noteheads behind each simultaneous group, in column order.
    pub groups: Vec<Vec<usize>>,
    /// Grand staff of each group.
    pub group_grand_staff: Vec<usize>,
}

/// Merges horizontally overlapping noteheads within each grand staff into
/// one column each, left to right, grand staves top to bottom.
pub fn build_query_bootleg(placed: &[PlacedNote], num_grand_staves: usize, filler_repetition: bool) -> QueryBootleg {
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    let mut group_grand_staff = Vec::new();
    for g in 0..num_grand_staves {
        let mut notes: Vec<&PlacedNote> = placed.iter().filter(|p| p.grand_staff == g).collect();
        notes.sort_by_key(|p| (p.col_min, p.col_max, p.notehead));
        let mut current: Option<(usize, ColumnWord, Vec<usize>)> = None;
        for note in notes {
            match &mut current {
                Some((right, col, members)) if note.col_min <= *right => {
                    *right = (*right).max(note.col_max);
                    *col = col.union(ColumnWord::from_rows([note.row]));
                    members.push(note.notehead);
                }
                _ => {
                    if let Some((_, col, members)) = current.take() {
                        columns.push(col);
                        groups.push(members);
                        group_grand_staff.push(g);
                    }
                    current = Some((note.col_max, ColumnWord::from_rows([note.row]), vec![note.notehead]));
                }
            }
        }
        if let Some((_, col, members)) = current {
            columns.push(col);
            groups.push(members);
            group_grand_staff.push(g);
        }
    }
    QueryBootleg {
        score: BootlegScore::from_events(&columns, filler_repetition),
        groups,
        group_grand_staff,
    }
}

/// Everything the projection stage learned about the page.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub query: QueryBootleg,
    pub local: Vec<LocalStaffEstimate>,
    pub refined: Vec<LocalStaffEstimate>,
    pub staves: Vec<GlobalStaff>,
    pub grand_staves: Vec<GrandStaff>,
    pub placed: Vec<PlacedNote>,
}

pub fn project(
    noteheads: &[NoteheadBox],
    tensor: &StaffFeatureTensor,
    bars: &BarlineFeatures,
    params: &ProjectParams,
) -> Result<Projection> {
    if noteheads.is_empty() {
        return Err(Error::Projection("no noteheads".into()));
    }
    let local = estimate_local_staves(noteheads, tensor, params);
    let mut staves = cluster_staves(&local, params)?;
    let refined = if params.staffline_reestimate {
        refine_local_estimates(noteheads, &mut staves, tensor, params)
    } else {
        local.clone()
    };
    let grand_staves = group_grand_staves(&mut staves, bars, params)?;

    let mut staff_of = vec![None; noteheads.len()];
    for (s, staff) in staves.iter().enumerate() {
        for &m in &staff.members {
            staff_of[m] = Some(s);
        }
    }
    let mut placed = Vec::new();
    for (i, nb) in noteheads.iter().enumerate() {
        let est = &refined[i];
        let Some(s) = staff_of[i] else { continue };
        if !est.reliable {
            continue;
        }
        let Some((g, hand)) = grand_staves.iter().enumerate().find_map(|(g, gs)| {
            if gs.right == s {
                Some((g, Hand::Right))
            } else if gs.left == s {
                Some((g, Hand::Left))
            } else {
                None
            }
        }) else {
            continue;
        };
        placed.push(PlacedNote {
            notehead: i,
            grand_staff: g,
            hand,
            row: note_to_staff_position(nb.center.0, est.staff_row as f64, est.spacing, hand),
            col_min: nb.bbox.col_min,
            col_max: nb.bbox.col_max,
        });
    }
    if placed.is_empty() {
        return Err(Error::Projection("no notehead could be placed on a grand staff".into()));
    }
    let query = build_query_bootleg(&placed, grand_staves.len(), params.filler_repetition);
    Ok(Projection {
        query,
        local,
        refined,
        staves,
        grand_staves,
        placed,
    })
}
