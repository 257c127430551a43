use super::{AssignmentPlan, AssignmentProblem};

/// Minimum-cost perfect matching by the O(n^3) Hungarian method with
/// potentials. Used as an independent check on the simplex solvers.
///
/// Costs are shifted by their minimum first so the potentials start from a
/// non-negative matrix; the returned value is in the original units.
pub fn hungarian_oracle(p: &AssignmentProblem) -> (AssignmentPlan, f64) {
    let n = p.size();
    let offset = p.costs().iter().flatten().fold(f64::INFINITY, |m, &c| m.min(c));
    let a = |i: usize, j: usize| p.cost(i - 1, j - 1) - offset;

    // 1-based, row/column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut region_of = vec![0; n];
    for j in 1..=n {
        region_of[matched_row[j] - 1] = j - 1;
    }
    let plan = AssignmentPlan::new(region_of).expect("hungarian output is a permutation");
    let value = p.value(&plan);
    (plan, value)
}
