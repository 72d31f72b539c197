//! Small numeric helpers shared across modules.

/// Pairwise (tree) summation. The reduction tree depends only on the length,
/// so the result is independent of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |a, b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Column-wise pairwise sum of fixed-width rows.
pub fn pairwise_sum_rows<const N: usize>(rows: &[[f64; N]]) -> [f64; N] {
    const LEAF: usize = 8;
    if rows.len() <= LEAF {
        let mut acc = [0.0; N];
        for r in rows {
            for (a, b) in acc.iter_mut().zip(r) {
                *a += b;
            }
        }
        return acc;
    }
    let mid = rows.len() / 2;
    let l = pairwise_sum_rows(&rows[..mid]);
    let r = pairwise_sum_rows(&rows[mid..]);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = l[i] + r[i];
    }
    out
}

/// Pairwise sum of equal-length vectors, in place into the first.
pub fn pairwise_sum_vecs(mut vs: Vec<Vec<f64>>) -> Vec<f64> {
    if vs.is_empty() {
        return Vec::new();
    }
    while vs.len() > 1 {
        let mut next = Vec::with_capacity(vs.len().div_ceil(2));
        let mut it = vs.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        vs = next;
    }
    vs.pop().unwrap()
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        let rows: Vec<[f64; 2]> = (0..37).map(|i| [i as f64, 1.0]).collect();
        assert_eq!(pairwise_sum_rows(&rows), [666.0, 37.0]);
        let vs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 3]).collect();
        assert_eq!(pairwise_sum_vecs(vs), vec![10.0; 3]);
    }

    #[test]
    fn slope_of_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -0.5 * x + 2.0).collect();
        assert!((linear_slope(&xs, &ys) + 0.5).abs() < 1e-14);
    }
}
