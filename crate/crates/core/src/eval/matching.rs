//! Topic alignment between an estimate and a reference.

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Maximum-weight perfect assignment on a square score matrix.
/// Returns `assign[row] = column`.
pub fn hungarian_max(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n == 0 {
        return Vec::new();
    }
    // Shortest augmenting path with potentials on the cost matrix -score.
    // Indices are 1-based internally; row/col 0 is the virtual source.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -score[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Aligns estimated topics to reference topics by cosine similarity of the
/// given per-topic vectors. Returns `(assign, similarity)` with
/// `assign[reference] = estimate`.
pub fn match_topics(reference: &[Vec<f64>], estimate: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let score: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| estimate.iter().map(|e| cosine_similarity(r, e)).collect())
        .collect();
    let assign = hungarian_max(&score);
    let sims = assign.iter().enumerate().map(|(i, &j)| score[i][j]).collect();
    (assign, sims)
}
