/// Eigen-decomposition of a symmetric 3x3 matrix.
///
/// `values` are sorted algebraically descending (`values[0]` is the largest)
/// and `vectors[i]` is the unit eigenvector of `values[i]`, signed so that its
/// first non-zero component is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eig3 {
    pub values: [f64; 3],
    pub vectors: [[f64; 3]; 3],
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn eig3_sym(m: [[f64; 3]; 3]) -> Eig3 {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    if scale > 0.0 && scale.is_finite() {
        for _ in 0..50 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            if off <= f64::EPSILON * 1e-3 * scale {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J with J the (p, q) rotation
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in &mut v {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (slot, &col) in order.iter().enumerate() {
        values[slot] = a[col][col];
        let mut e = [v[0][col], v[1][col], v[2][col]];
        if let Some(&first) = e.iter().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                e = e.map(|x| -x);
            }
        }
        vectors[slot] = e;
    }
    Eig3 { values, vectors }
}
