//! Score agreement and one-way ANOVA.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mie::ScoreGrid;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty confusion table")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("anova: {0}")]
    Anova(String),
}

pub const N_GRADES: usize = 5;

/// Rows are visual (expert) grades, columns automatic grades.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub counts: [[u64; N_GRADES]; N_GRADES],
}

/// Exact fraction `numerator / denominator`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub numerator: u64,
    pub denominator: u64,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl ConfusionTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Share of entries whose grades differ by at most `tolerance`.
    pub fn agreement(&self, tolerance: usize) -> Result<Agreement, StatsError> {
        let total = self.total();
        if total == 0 {
            return Err(StatsError::Empty);
        }
        let mut hit = 0;
        for (r, row) in self.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                if r.abs_diff(c) <= tolerance {
                    hit += n;
                }
            }
        }
        Ok(Agreement { numerator: hit, denominator: total })
    }
}

pub fn agreement(t: &ConfusionTable, tolerance: usize) -> Result<Agreement, StatsError> {
    t.agreement(tolerance)
}

/// Tallies matched sub-segments of `auto` against `expert`, skipping the
/// slice ids in `excluded`.
pub fn build_confusion(auto: &ScoreGrid, expert: &ScoreGrid, excluded: &[usize]) -> Result<ConfusionTable, StatsError> {
    if auto.slices.len() != expert.slices.len() {
        return Err(StatsError::Shape(format!("{} automatic slices vs {} expert slices", auto.slices.len(), expert.slices.len())));
    }
    let mut t = ConfusionTable::default();
    for i in 0..auto.slices.len() {
        let id = auto.slice_id(i);
        if expert.slice_id(i) != id {
            return Err(StatsError::Shape(format!("entry {i}: automatic slice {id} vs expert slice {}", expert.slice_id(i))));
        }
        if excluded.contains(&id) {
            continue;
        }
        for (&a, &e) in auto.slices[i].sub_segments.iter().zip(&expert.slices[i].sub_segments) {
            if a as usize >= N_GRADES || e as usize >= N_GRADES {
                return Err(StatsError::Shape(format!("slice {id}: grade outside 0..=4")));
            }
            t.counts[e as usize][a as usize] += 1;
        }
    }
    Ok(t)
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of
/// freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    pub group_means: Vec<f64>,
    pub group_counts: Vec<usize>,
    /// Zero within-group variance with nonzero between-group variance.
    pub zero_within_variance: bool,
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::Anova("need at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::Anova("every group needs at least one value".into()));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::Anova("non-finite value".into()));
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if n < k + 2 {
        return Err(StatsError::Anova(format!("{} within-group degrees of freedom, at least 2 needed", n - k)));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let ssb: f64 = groups.iter().zip(&means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = groups.iter().zip(&means).map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sum();
    let (df_b, df_w) = (k - 1, n - k);
    // Sums of squares at roundoff level of the data count as zero.
    let scale = groups.iter().flatten().map(|v| (v - grand).powi(2)).sum::<f64>().max(grand * grand) * 1e-24;
    let (f, p, zero_within) = if ssw <= scale {
        if ssb <= scale {
            (0.0, 1.0, false)
        } else {
            (f64::INFINITY, 0.0, true)
        }
    } else {
        let f = (ssb / df_b as f64) / (ssw / df_w as f64);
        (f, f_survival(f, df_b as f64, df_w as f64), false)
    };
    Ok(AnovaResult {
        f,
        df_between: df_b,
        df_within: df_w,
        p,
        group_means: means,
        group_counts: groups.iter().map(|g| g.len()).collect(),
        zero_within_variance: zero_within,
    })
}

/// Wall-motion class of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Contraction {
    N,
    H,
    AD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: Contraction,
    pub second: Contraction,
    pub anova: Option<AnovaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// ANOVA of AD vs H and of H vs N over labeled per-segment values.
pub fn group_by_contraction(values: &[(f64, Contraction)]) -> Vec<PairComparison> {
    let pick = |c: Contraction| values.iter().filter(|v| v.1 == c).map(|v| v.0).collect::<Vec<f64>>();
    [(Contraction::AD, Contraction::H), (Contraction::H, Contraction::N)]
        .into_iter()
        .map(|(a, b)| {
            let (ga, gb) = (pick(a), pick(b));
            if ga.is_empty() || gb.is_empty() {
                return PairComparison { first: a, second: b, anova: None, note: Some("a class has no segments; comparison skipped".into()) };
            }
            match one_way_anova(&[ga, gb]) {
                Ok(r) => PairComparison { first: a, second: b, anova: Some(r), note: None },
                Err(e) => PairComparison { first: a, second: b, anova: None, note: Some(e.to_string()) },
            }
        })
        .collect()
}
