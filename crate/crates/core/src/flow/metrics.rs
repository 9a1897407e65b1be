use rayon::prelude::*;

use crate::error::{Error, Result};

/// Energy distance V-statistic `2 E|a − b| − E|a − a'| − E|b − b'|` between
/// two samples stored as rows of length `d`.
pub fn energy_distance(a: &[f64], b: &[f64], d: usize) -> Result<f64> {
    if d == 0 || a.is_empty() || b.is_empty() || a.len() % d != 0 || b.len() % d != 0 {
        return Err(Error::InvalidArgument(
            "energy distance needs two nonempty samples of rows of length d".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy distance sample".into()));
    }
    let (ab, aa, bb) = if d == 1 {
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        (cross_sorted(&sa, &sb), within_sorted(&sa), within_sorted(&sb))
    } else {
        (
            mean_pairwise(a, b, d),
            mean_pairwise(a, a, d),
            mean_pairwise(b, b, d),
        )
    };
    Ok(2.0 * ab - aa - bb)
}

fn mean_pairwise(a: &[f64], b: &[f64], d: usize) -> f64 {
    let nb = b.len() / d;
    // per-row sums are collected first so the final reduction order is fixed
    let rows: Vec<f64> = a
        .par_chunks(d)
        .map(|x| {
            b.chunks(d)
                .map(|y| {
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = rows.iter().sum();
    total / ((a.len() / d) as f64 * nb as f64)
}

/// Mean of `|x_i − x_j|` over all ordered pairs (including `i = j`).
fn within_sorted(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let s: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| v * (2.0 * i as f64 - n + 1.0))
        .sum();
    2.0 * s / (n * n)
}

/// Mean of `|a_i − b_j|` over all pairs, both inputs sorted.
fn cross_sorted(a: &[f64], b: &[f64]) -> f64 {
    let total_b: f64 = b.iter().sum();
    let m = b.len() as f64;
    let mut j = 0;
    let mut prefix = 0.0;
    let mut sum = 0.0;
    for &x in a {
        while j < b.len() && b[j] <= x {
            prefix += b[j];
            j += 1;
        }
        let below = j as f64;
        sum += x * below - prefix + (total_b - prefix) - x * (m - below);
    }
    sum / (a.len() as f64 * m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_route_matches_pairwise() {
        let a = [0.3, -1.2, 2.5, 0.0, 0.7];
        let b = [1.1, -0.4, 0.9];
        let fast = energy_distance(&a, &b, 1).unwrap();
        let slow = 2.0 * mean_pairwise(&a, &b, 1) - mean_pairwise(&a, &a, 1) - mean_pairwise(&b, &b, 1);
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!(energy_distance(&a, &a, 2).unwrap().abs() < 1e-12);
        assert!(energy_distance(&a, &a, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(energy_distance(&[], &[1.0], 1).is_err());
    }
}
