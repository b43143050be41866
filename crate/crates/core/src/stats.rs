//! Scalar-generic statistics kernels shared across the engine.
//!
//! Everything here is pure and generic over [`Float`], so the same code backs
//! `f32` experiments and the `f64` production path ([`crate::Real`]).

use num_traits::Float;

/// Arithmetic mean. Returns `None` on an empty slice.
pub fn mean<F: Float>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let n = F::from(xs.len()).unwrap();
    Some(xs.iter().fold(F::zero(), |a, &x| a + x) / n)
}

/// Sample standard deviation (n−1 denominator). `None` when fewer than 2 points.
pub fn sample_std<F: Float>(xs: &[F]) -> Option<F> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let n1 = F::from(xs.len() - 1).unwrap();
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - m) * (x - m));
    Some((ss / n1).sqrt())
}

/// Pearson correlation coefficient of two equal-length slices.
///
/// `None` when fewer than 2 points or either side has zero variance.
pub fn pearson<F: Float>(xs: &[F], ys: &[F]) -> Option<F> {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= F::zero() || syy <= F::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Ascending ranks with ties assigned their average rank (1-based).
pub fn average_ranks<F: Float>(xs: &[F]) -> Vec<F> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![F::zero(); xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average
        let avg = F::from(i + j + 2).unwrap() / F::from(2).unwrap();
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average-tie ranks.
pub fn spearman<F: Float>(xs: &[F], ys: &[F]) -> Option<F> {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

/// Slope of the ordinary least squares fit `y = a + b·x`.
///
/// `None` when fewer than 2 points or `x` is constant.
pub fn ols_slope<F: Float>(xs: &[F], ys: &[F]) -> Option<F> {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
    }
    if sxx <= F::zero() {
        return None;
    }
    Some(sxy / sxx)
}

/// Logistic function 1/(1+e^{−x}).
pub fn logistic<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Quantile by linear interpolation between closest ranks, `q` in [0,1].
///
/// The input need not be sorted. `None` on an empty slice.
pub fn quantile<F: Float>(xs: &[F], q: F) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    if n == 1 {
        return Some(sorted[0]);
    }
    let pos = q * F::from(n - 1).unwrap();
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = pos.ceil().to_usize().unwrap_or(0).min(n - 1);
    let frac = pos - pos.floor();
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
