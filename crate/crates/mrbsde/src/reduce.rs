//! Deterministic reductions over path indices.
//!
//! Every statistical reduction in the solver (means, sums, sups over paths)
//! goes through the pairwise tree in this module. The tree splits at the
//! midpoint of the index range, so the floating-point result depends only on
//! the input length, never on the number of worker threads.

const SEQ_LEAF: usize = 1024;
const PAR_MIN: usize = 1 << 15;

/// Pairwise sum of `f(i)` over `i in 0..n`, parallelized above `PAR_MIN`.
pub fn pairwise_sum_of<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    sum_range(0, n, f)
}

fn sum_range<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len <= SEQ_LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PAR_MIN {
        let (a, b) = rayon::join(|| sum_range(lo, mid, f), || sum_range(mid, hi, f));
        a + b
    } else {
        sum_range(lo, mid, f) + sum_range(mid, hi, f)
    }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_of(xs.len(), &|i| xs[i])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

pub fn mean_of<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    pairwise_sum_of(n, f) / n as f64
}

/// Maximum of `f(i)` over `i in 0..n`. Max is exact regardless of order, but
/// the fixed tree is kept for symmetry with the sums.
pub fn max_of<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    max_range(0, n, f)
}

fn max_range<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len == 0 {
        return f64::NEG_INFINITY;
    }
    if len <= SEQ_LEAF {
        let mut acc = f64::NEG_INFINITY;
        for i in lo..hi {
            acc = acc.max(f(i));
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PAR_MIN {
        let (a, b) = rayon::join(|| max_range(lo, mid, f), || max_range(mid, hi, f));
        a.max(b)
    } else {
        max_range(lo, mid, f).max(max_range(mid, hi, f))
    }
}

/// Sample variance (denominator `n - 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    pairwise_sum_of(n, &|i| {
        let d = xs[i] - m;
        d * d
    }) / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    (sample_variance(xs) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_on_small_inputs() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - seq).abs() < 1e-12);
    }

    #[test]
    fn sum_is_length_deterministic() {
        let xs: Vec<f64> = (0..100_000u64).map(|i| ((i * 2654435761) as f64).cos()).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum(&xs);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let xs = vec![3.5; 1000];
        assert_eq!(sample_variance(&xs), 0.0);
    }

    #[test]
    fn max_of_picks_largest() {
        let xs = [1.0, -2.0, 7.5, 3.0];
        assert_eq!(max_of(xs.len(), &|i| xs[i]), 7.5);
    }
}
