//! Greedy 1:1 nearest-neighbour matching without replacement.
//!
//! Rule:
//! 1. Treated units are processed in descending score order (ties: lower id first).
//! 2. Each takes the remaining control with the smallest `|Δ score|`.
//! 3. Distance ties go to the lower-scored control, then the lower id.
//!
//! Controls are kept sorted by `(score, id)` and removed controls are skipped
//! through two path-compressed "next available" link arrays, one per
//! direction, so a full run costs `O((nT + nC) log(nT + nC))`.

use std::cmp::Ordering;

use super::{check_finite, MatchError, Scored, UnitId};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchOptions {
    /// Maximum admissible distance; `None` (the default) means no caliper.
    pub caliper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub treated: UnitId,
    pub control: UnitId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchedSample {
    /// Pairs in processing order.
    pub pairs: Vec<MatchedPair>,
    pub n_on_support_treated: usize,
    pub n_on_support_untreated: usize,
    /// Treated units left without a control (control shortfall or caliper).
    pub unmatched_treated: Vec<UnitId>,
}

impl MatchedSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).sum()
    }
}

fn by_score_then_id(a: &Scored, b: &Scored) -> Ordering {
    a.score.total_cmp(&b.score).then(a.id.cmp(&b.id))
}

/// Order in which treated units are served.
pub(crate) fn processing_order(treated: &[Scored]) -> Vec<Scored> {
    let mut order = treated.to_vec();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    order
}

/// Path-compressed successor links over `0..=len`, where `len` is a sentinel.
struct NextFree {
    link: Vec<usize>,
}

impl NextFree {
    fn new(len: usize) -> Self {
        NextFree {
            link: (0..=len).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        let mut root = i;
        while self.link[root] != root {
            root = self.link[root];
        }
        while self.link[i] != root {
            let next = self.link[i];
            self.link[i] = root;
            i = next;
        }
        root
    }

    fn remove(&mut self, i: usize, to: usize) {
        self.link[i] = to;
    }
}

/// Controls sorted by `(score, id)` with O(α) lookup of the nearest
/// still-available control on either side of a position.
struct ControlPool {
    sorted: Vec<Scored>,
    group_start: Vec<usize>,
    right: NextFree,
    // slot k stands for control k - 1; slot 0 is the "none" sentinel
    left: NextFree,
    remaining: usize,
}

impl ControlPool {
    fn new(controls: &[Scored]) -> Self {
        let mut sorted = controls.to_vec();
        sorted.sort_by(by_score_then_id);
        let m = sorted.len();
        let mut group_start = vec![0; m];
        for i in 1..m {
            group_start[i] = if sorted[i].score == sorted[i - 1].score {
                group_start[i - 1]
            } else {
                i
            };
        }
        ControlPool {
            sorted,
            group_start,
            right: NextFree::new(m),
            left: NextFree::new(m),
            remaining: m,
        }
    }

    fn first_available_at_or_after(&mut self, i: usize) -> Option<usize> {
        let r = self.right.find(i);
        (r < self.sorted.len()).then_some(r)
    }

    fn last_available_before(&mut self, i: usize) -> Option<usize> {
        let k = self.left.find(i);
        (k > 0).then(|| k - 1)
    }

    fn take(&mut self, i: usize) {
        self.right.remove(i, i + 1);
        self.left.remove(i + 1, i);
        self.remaining -= 1;
    }

    /// Best remaining control for `score` under the documented tie rule.
    fn nearest(&mut self, score: f64) -> Option<(usize, f64)> {
        let pos = self.sorted.partition_point(|c| c.score < score);
        let right = self.first_available_at_or_after(pos);
        let mut left = self.last_available_before(pos);

        if let Some(mut li) = left {
            let dl = score - self.sorted[li].score;
            // walk further left while the rounded distance is unchanged
            loop {
                let gs = self.group_start[li];
                match self.last_available_before(gs) {
                    Some(prev) if score - self.sorted[prev].score == dl => li = prev,
                    _ => break,
                }
            }
            let gs = self.group_start[li];
            left = self.first_available_at_or_after(gs);
        }

        match (left, right) {
            (None, None) => None,
            (Some(l), None) => Some((l, score - self.sorted[l].score)),
            (None, Some(r)) => Some((r, self.sorted[r].score - score)),
            (Some(l), Some(r)) => {
                let dl = score - self.sorted[l].score;
                let dr = self.sorted[r].score - score;
                if dl <= dr {
                    Some((l, dl))
                } else {
                    Some((r, dr))
                }
            }
        }
    }
}

/// Greedy nearest-neighbour matching of treated units to controls.
///
/// When controls run out, the remaining (lowest-scored) treated units are
/// reported in `unmatched_treated`; nothing is padded.
pub fn nn_match(treated: &[Scored], controls: &[Scored], options: MatchOptions) -> Result<MatchedSample, MatchError> {
    check_finite(treated)?;
    check_finite(controls)?;
    let mut pool = ControlPool::new(controls);
    let mut pairs = Vec::with_capacity(treated.len().min(controls.len()));
    let mut unmatched = Vec::new();
    for t in processing_order(treated) {
        if pool.remaining == 0 {
            unmatched.push(t.id);
            continue;
        }
        let (idx, distance) = pool.nearest(t.score).expect("pool is non-empty");
        if options.caliper.is_some_and(|c| distance > c) {
            unmatched.push(t.id);
            continue;
        }
        pool.take(idx);
        pairs.push(MatchedPair {
            treated: t.id,
            control: pool.sorted[idx].id,
            distance,
        });
    }
    Ok(MatchedSample {
        pairs,
        n_on_support_treated: treated.len(),
        n_on_support_untreated: controls.len(),
        unmatched_treated: unmatched,
    })
}

/// Three-column export: treated id, control id, distance.
pub fn render_pairs<'a>(sample: &MatchedSample, id_of: impl Fn(UnitId) -> &'a str) -> String {
    let mut out = String::with_capacity(sample.len() * 32 + 32);
    out.push_str("treated_id,control_id,distance\n");
    for p in &sample.pairs {
        out.push_str(id_of(p.treated));
        out.push(',');
        out.push_str(id_of(p.control));
        out.push(',');
        out.push_str(&format!("{:.10}\n", p.distance));
    }
    out
}
