use std::cmp::Ordering;

use super::ToolError;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Descending score, then ascending index.
fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Exact top-`k` rows of `corpus` by cosine similarity to `query`.
///
/// Zero-norm rows score `-inf` and so rank after every other row. Ties go to
/// the lower index. Returns `min(k, N)` pairs.
pub fn cosine_top_k(query: &[f32], corpus: &[&[f32]], k: usize) -> Result<Vec<(usize, f64)>, ToolError> {
    if k == 0 {
        return Err(ToolError::InvalidK { k, max_k: usize::MAX });
    }
    let qn = norm(query);
    if !qn.is_finite() {
        return Err(ToolError::InvalidArgument("query vector is not finite".into()));
    }
    if qn == 0.0 {
        return Err(ToolError::ZeroNormQuery);
    }
    let mut scored = Vec::with_capacity(corpus.len());
    for (i, row) in corpus.iter().enumerate() {
        if row.len() != query.len() {
            return Err(ToolError::DimensionMismatch { expected: query.len(), found: row.len(), row: i });
        }
        let rn = norm(row);
        let score = if rn == 0.0 { f64::NEG_INFINITY } else { dot(query, row) / (qn * rn) };
        scored.push((i, score));
    }
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank);
    Ok(scored)
}

/// Indices of at most `cap` items spread uniformly over `0..n`:
/// all of them when `n <= cap`, else `round(j (n-1) / (cap-1))` for `j < cap`.
pub fn sample_uniform(n: usize, cap: usize) -> Result<Vec<usize>, ToolError> {
    if n == 0 || cap == 0 {
        return Err(ToolError::InvalidArgument(format!("sample_uniform needs n, cap >= 1 (got {n}, {cap})")));
    }
    if n <= cap {
        return Ok((0..n).collect());
    }
    if cap == 1 {
        return Ok(vec![0]);
    }
    // integer form of round-half-up(j (n-1) / (cap-1))
    let (num, den) = ((n - 1) as u128, (cap - 1) as u128);
    Ok((0..cap as u128)
        .map(|j| ((2 * j * num + den) / (2 * den)) as usize)
        .collect())
}
