use super::SampleSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest sample count accepted by [`em_exact_assignment`].
pub const MAX_ASSIGNMENT_SIZE: usize = 256;

fn check_pair<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::Contract(format!("equal sample counts required, got {} and {}", a.n(), b.n())));
    }
    if a.d() != b.d() {
        return Err(Error::dim("em_exact", format!("dimensions {} and {}", a.d(), b.d())));
    }
    Ok(())
}

/// Exact `W₁` between two equal-size one-dimensional empirical measures.
pub fn em_exact_1d<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<T> {
    check_pair(a, b)?;
    if a.d() != 1 {
        return Err(Error::dim("em_exact_1d", format!("expected d = 1, got {}", a.d())));
    }
    let sorted = |s: &SampleSet<T>| {
        let mut v = s.samples().data().to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).expect("sample sets are finite"));
        v
    };
    let (x, y) = (sorted(a), sorted(b));
    let total: T = x.iter().zip(&y).map(|(&p, &q)| (p - q).abs()).sum();
    Ok(total / T::of(a.n() as f64))
}

/// Exact `W₁` between two equal-size empirical measures in `ℝᵈ`: the minimum
/// mean Euclidean cost over perfect matchings.
pub fn em_exact_assignment<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<T> {
    check_pair(a, b)?;
    let n = a.n();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::Capacity(format!("assignment oracle limited to n ≤ {MAX_ASSIGNMENT_SIZE}, got {n}")));
    }
    // W₁ is symmetric; solving in a canonical argument order makes the result
    // bit-identical under swapping even when several matchings are optimal
    let swap = a
        .samples()
        .data()
        .iter()
        .zip(b.samples().data())
        .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
        .find(|o| o.is_ne())
        .is_some_and(|o| o.is_gt());
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let cost: Vec<T> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a.row(i).iter().zip(b.row(j)).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>().sqrt())
        .collect();
    let matched = hungarian(&cost, n);
    let total: T = matched.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / T::of(n as f64))
}

/// Minimum-cost perfect matching on a dense `n×n` cost matrix (shortest
/// augmenting paths with potentials). Returns the column assigned to each row.
fn hungarian<T: Scalar>(cost: &[T], n: usize) -> Vec<usize> {
    let inf = T::infinity();
    // 1-based rows/columns; index 0 is the virtual source
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] = u[owner[col]] + delta;
                    v[col] = v[col] - delta;
                } else {
                    minv[col] = minv[col] - delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        while col0 != 0 {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}
