//! Builders and independent oracles shared by the integration tests.
#![allow(dead_code)]

use progeval::psmatch::Scored;
use progeval::tabular::{AnalysisFrame, ObservationRecord, Wave};

pub fn record(id: usize) -> ObservationRecord {
    ObservationRecord {
        household_id: format!("h{id}"),
        state: 17,
        age: 45,
        religion: 1,
        caste: 3,
        education: 1,
        wealth_index: 2,
        urban_rural: 2,
        gender: 1,
        hh_size: 5,
        treatment: false,
        lpg_access: false,
        firewood_use: true,
        wave: Wave::Pre,
    }
}

/// `(urban_rural code, treated, count)` cells of a 2×2 table, expanded to records.
pub fn two_by_two(cells: &[(u8, bool, usize)]) -> AnalysisFrame {
    let mut recs = Vec::new();
    for &(x, t, n) in cells {
        for _ in 0..n {
            let mut r = record(recs.len());
            r.urban_rural = x;
            r.treatment = t;
            recs.push(r);
        }
    }
    AnalysisFrame::from_records(recs, "cells")
}

/// The documented greedy rule, executed literally: treated units by
/// descending score (lower id first on ties), each taking the remaining
/// control minimising `(|distance|, control score, control id)`.
pub fn brute_force_greedy(
    treated: &[Scored],
    controls: &[Scored],
    caliper: Option<f64>,
) -> (Vec<(usize, usize, f64)>, Vec<usize>) {
    let mut order = treated.to_vec();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut available = controls.to_vec();
    let (mut pairs, mut unmatched) = (Vec::new(), Vec::new());
    for t in order {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in available.iter().enumerate() {
            let d = (t.score - c.score).abs();
            let better = match best {
                None => true,
                Some((bk, bd)) => {
                    let b = &available[bk];
                    d < bd || (d == bd && (c.score < b.score || (c.score == b.score && c.id < b.id)))
                }
            };
            if better {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if caliper.is_none_or(|cal| d <= cal) => {
                pairs.push((t.id, available[k].id, d));
                available.remove(k);
            }
            _ => unmatched.push(t.id),
        }
    }
    (pairs, unmatched)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Mean and variance of the extended hypergeometric distribution by summing
/// the probability mass `C(n1,k) C(n-n1,ys-k) γ^k` over its whole support.
pub fn enumerated_moments(n: u64, n1: u64, ys: u64, gamma: f64) -> (f64, f64) {
    let lo = ys.saturating_sub(n - n1);
    let hi = n1.min(ys);
    let logw: Vec<(f64, f64)> = (lo..=hi)
        .map(|k| {
            (
                k as f64,
                ln_choose(n1, k) + ln_choose(n - n1, ys - k) + k as f64 * gamma.ln(),
            )
        })
        .collect();
    let top = logw.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|(_, l)| (l - top).exp()).sum();
    let mean: f64 = logw.iter().map(|(k, l)| k * (l - top).exp()).sum::<f64>() / total;
    let var: f64 = logw.iter().map(|(k, l)| (k - mean).powi(2) * (l - top).exp()).sum::<f64>() / total;
    (mean, var)
}
