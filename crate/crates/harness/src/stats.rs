//! Rank correlation and seed aggregation.

use std::collections::HashMap;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One of the inputs was constant; `rho` is reported as 0.
    pub degenerate: bool,
}

/// Ranks from 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average-rank ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Spearman, HarnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::Validation(format!(
            "spearman needs two equal-length series of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    Ok(match pearson(&average_ranks(xs), &average_ranks(ys)) {
        Some(rho) => Spearman {
            rho,
            degenerate: false,
        },
        None => Spearman {
            rho: 0.0,
            degenerate: true,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub algorithm: String,
    pub objective: String,
    pub measure_kind: String,
    pub n: usize,
    pub mean: f64,
    /// `1.96 sd / √n`; absent for a single score.
    pub ci_half_width: Option<f64>,
    /// The interval overlaps that of the best entry for the same
    /// environment and objective.
    pub bold: bool,
}

/// Key of one aggregated entry and its score.
pub struct Scored<'a> {
    pub env: &'a str,
    pub algorithm: &'a str,
    pub objective: &'a str,
    pub measure_kind: &'a str,
    pub score: f64,
}

/// Mean and normal-approximation 95% interval per entry, in first-seen order.
pub fn aggregate<'a>(rows: impl IntoIterator<Item = Scored<'a>>) -> Vec<SummaryRow> {
    let mut order: Vec<(&str, &str, &str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str, &str, &str), Vec<f64>> = HashMap::new();
    for r in rows {
        let key = (r.env, r.algorithm, r.objective, r.measure_kind);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r.score);
    }
    let mut out: Vec<SummaryRow> = order
        .into_iter()
        .map(|key| {
            let xs = &groups[&key];
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let ci = (n > 1).then(|| {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * var.sqrt() / (n as f64).sqrt()
            });
            SummaryRow {
                env: key.0.into(),
                algorithm: key.1.into(),
                objective: key.2.into(),
                measure_kind: key.3.into(),
                n,
                mean,
                ci_half_width: ci,
                bold: false,
            }
        })
        .collect();
    for i in 0..out.len() {
        let peers: Vec<usize> = (0..out.len())
            .filter(|&j| out[j].env == out[i].env && out[j].objective == out[i].objective)
            .collect();
        let best = peers
            .iter()
            .copied()
            .max_by(|&a, &b| out[a].mean.total_cmp(&out[b].mean).then(b.cmp(&a)))
            .expect("entry is its own peer");
        let h = |k: usize| out[k].ci_half_width.unwrap_or(0.0);
        out[i].bold = i == best || (out[i].mean - out[best].mean).abs() <= h(i) + h(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s<'a>(alg: &'a str, score: f64) -> Scored<'a> {
        Scored {
            env: "e",
            algorithm: alg,
            objective: "o",
            measure_kind: "exact",
            score,
        }
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&xs, &xs).unwrap().rho, 1.0);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(spearman(&xs, &neg).unwrap().rho, -1.0);
        let r = spearman(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap().rho;
        assert!((r - 0.8).abs() < 1e-12);
        let flat = spearman(&xs, &[2.0; 4]).unwrap();
        assert!(flat.degenerate && flat.rho == 0.0);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_share_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(
            average_ranks(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]),
            vec![1.5, 3.0, 1.5]
        );
    }

    #[test]
    fn aggregate_examples() {
        let rows = aggregate([s("a", 0.5), s("a", 0.5), s("a", 0.5)]);
        assert_eq!(rows[0].mean, 0.5);
        assert_eq!(rows[0].ci_half_width, Some(0.0));
        let rows = aggregate([s("a", 0.0), s("a", 1.0)]);
        let h = rows[0].ci_half_width.unwrap();
        assert!((h - 1.96 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert!((h - 0.98).abs() < 1e-12);
        let rows = aggregate([s("a", 0.3)]);
        assert_eq!(rows[0].ci_half_width, None);
    }

    #[test]
    fn best_entry_is_always_bold() {
        let rows = aggregate([s("a", 0.1), s("b", 0.9), s("a", 0.1), s("b", 0.9)]);
        assert!(!rows[0].bold);
        assert!(rows[1].bold);
        let rows = aggregate([s("a", 0.4), s("a", 0.6), s("b", 0.55), s("b", 0.56)]);
        assert!(rows[0].bold && rows[1].bold);
    }
}
