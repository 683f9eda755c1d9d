/// Euclidean projection of `v` onto `{w : Σw = 1, lo <= w_i <= hi}`.
///
/// The projection is `clip(v - τ, lo, hi)` for the shift `τ` that restores
/// the budget; `τ` is found by bisection. Requires `n·lo <= 1 <= n·hi`.
pub fn project_box_simplex(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let excess = |tau: f64| -> f64 { v.iter().map(|x| (x - tau).clamp(lo, hi)).sum::<f64>() - 1.0 };
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut a = vmin - hi;
    let mut b = vmax - lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if excess(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let tau = 0.5 * (a + b);
    let mut w: Vec<f64> = v.iter().map(|x| (x - tau).clamp(lo, hi)).collect();
    // Put the remaining rounding residue on a coordinate with room to absorb it.
    let residue = 1.0 - w.iter().sum::<f64>();
    if residue != 0.0 {
        if let Some(i) = (0..w.len()).find(|&i| {
            let x = w[i] + residue;
            x >= lo && x <= hi
        }) {
            w[i] += residue;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interior_point_is_fixed() {
        let w = project_box_simplex(&[0.2, 0.3, 0.5], 0.0, 1.0);
        for (a, b) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clips_to_bounds() {
        let w = project_box_simplex(&[2.0, 0.0, -1.0], 0.1, 0.7);
        assert_abs_diff_eq!(w[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w.iter().all(|x| *x >= 0.1 - 1e-12 && *x <= 0.7 + 1e-12));
    }
}
