use nalgebra::{Matrix2, Matrix3};

use super::system::AnosovSystem;

/// `dφ^n(x)` by the chain rule along the orbit; negative `n` uses the inverse map.
pub fn jacobian_cocycle(sys: &AnosovSystem, x: [f64; 2], n: i64) -> Matrix2<f64> {
    let mut d = Matrix2::identity();
    let mut y = x;
    if n >= 0 {
        for _ in 0..n {
            d = sys.derivative(y) * d;
            y = sys.step(y);
        }
    } else {
        for _ in 0..(-n) {
            y = sys.step_inverse(y);
            let inv = sys.derivative(y).try_inverse().expect("dφ is invertible");
            d = inv * d;
        }
    }
    d
}

/// `dφ_t` of the suspension flow at `(x, τ)` in coordinates `(x1, x2, τ)`.
/// The fiber coordinate is taken modulo the roof.
pub fn flow_jacobian(sys: &AnosovSystem, x: [f64; 2], tau: f64, t: f64) -> Matrix3<f64> {
    let roof = sys.roof();
    let tau = tau.rem_euclid(roof);
    let crossings = ((tau + t) / roof).floor() as i64;
    let d = jacobian_cocycle(sys, x, crossings);
    let mut out = Matrix3::identity();
    out.fixed_view_mut::<2, 2>(0, 0).copy_from(&d);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_system, r2_points, Perturbation};

    #[test]
    fn linear_powers() {
        let sys = make_system([[2, 1], [1, 1]], None, None).unwrap();
        let x = [0.3, 0.7];
        assert_eq!(jacobian_cocycle(&sys, x, 1), Matrix2::new(2.0, 1.0, 1.0, 1.0));
        assert_eq!(jacobian_cocycle(&sys, x, 3), Matrix2::new(13.0, 8.0, 8.0, 5.0));
        let back = jacobian_cocycle(&sys, x, -1);
        assert!((back - Matrix2::new(1.0, -1.0, -1.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn cocycle_identity_and_volume() {
        let p = Perturbation::synthesize(3, 0.1, f64::INFINITY, 11).unwrap();
        let sys = make_system([[2, 1], [1, 1]], Some(p), None).unwrap();
        for x in r2_points(20) {
            let (n, m) = (4, 3);
            let lhs = jacobian_cocycle(&sys, x, n + m);
            let rhs = jacobian_cocycle(&sys, sys.iterate(x, m), n) * jacobian_cocycle(&sys, x, m);
            assert!((lhs - rhs).norm() <= 1e-9 * lhs.norm());
            assert!((lhs.determinant() - 1.0).abs() <= 1e-9);
            let round = jacobian_cocycle(&sys, sys.iterate(x, 5), -5) * jacobian_cocycle(&sys, x, 5);
            assert!((round - Matrix2::identity()).norm() < 1e-8);
        }
    }

    #[test]
    fn suspension_block() {
        let sys = make_system([[2, 1], [1, 1]], None, Some(2.0)).unwrap();
        let d = flow_jacobian(&sys, [0.1, 0.2], 1.5, 1.0);
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(2, 2)], 1.0);
        assert_eq!(flow_jacobian(&sys, [0.1, 0.2], 0.0, 1.0), Matrix3::identity());
    }
}
