//! Exact geometry of the unit-square orbit under the scalar coordination
//! map `(x, y) -> (x + y, x + 2y)`.
//!
//! The images of `[-1, 1]^2` stay parallelograms of area 4 whose corners are
//! pairs of Fibonacci numbers, so the diameter grows like the square of the
//! golden ratio per iteration while the volume never changes. Everything
//! here is integer arithmetic; floating point would mask the exactness of
//! the claim.

use num_bigint::BigInt;

/// Extreme points, area, and diameter of the t-th image of `[-1, 1]^2`.
#[derive(Debug, Clone)]
pub struct ChaosGeometry {
    pub t: u64,
    /// Four corners in counterclockwise order.
    pub extreme_points: [(BigInt, BigInt); 4],
    pub area: BigInt,
    pub diameter_squared: BigInt,
}

impl ChaosGeometry {
    pub fn diameter(&self) -> f64 {
        bigint_to_f64(&self.diameter_squared).sqrt()
    }
}

fn bigint_to_f64(v: &BigInt) -> f64 {
    v.to_string().parse::<f64>().unwrap_or(f64::INFINITY)
}

/// Fibonacci number `F_k` for `k >= -2`, with `F_-2 = -1`, `F_-1 = 1`.
pub fn fibonacci(k: i64) -> BigInt {
    assert!(k >= -2, "sequence extended back to F_-2 only");
    let mut a = BigInt::from(-1); // F_-2
    let mut b = BigInt::from(1); // F_-1
    for _ in -2..k {
        let next = &a + &b;
        a = b;
        b = next;
    }
    a
}

/// The four extreme points `(+-(F_{2t-2}, F_{2t-1}), +-(F_{2t+1}, F_{2t+2}))`
/// with the shoelace area of their hull (always 4) and the squared diameter
/// `4 (F_{2t+1}^2 + F_{2t+2}^2)`.
pub fn chaos_extreme_points(t: u64) -> ChaosGeometry {
    let t_i = t as i64;
    let p = (fibonacci(2 * t_i + 1), fibonacci(2 * t_i + 2));
    let q = (fibonacci(2 * t_i - 2), fibonacci(2 * t_i - 1));
    let corners = [
        (p.0.clone(), p.1.clone()),
        (q.0.clone(), q.1.clone()),
        (-p.0.clone(), -p.1.clone()),
        (-q.0.clone(), -q.1.clone()),
    ];
    let area = shoelace(&corners);
    let diameter_squared = 4 * (&p.0 * &p.0 + &p.1 * &p.1);
    ChaosGeometry { t, extreme_points: corners, area, diameter_squared }
}

/// Twice the signed area of a polygon, divided by two at the end; corners
/// must be in order around the hull.
fn shoelace(corners: &[(BigInt, BigInt)]) -> BigInt {
    let n = corners.len();
    let mut twice = BigInt::from(0);
    for i in 0..n {
        let (x1, y1) = &corners[i];
        let (x2, y2) = &corners[(i + 1) % n];
        twice += x1 * y2 - x2 * y1;
    }
    if twice < BigInt::from(0) {
        twice = -twice;
    }
    twice / 2
}

/// One application of the map to an integer point.
pub fn chaos_map(x: &BigInt, y: &BigInt) -> (BigInt, BigInt) {
    (x + y, x + 2 * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    #[test]
    fn base_case_is_the_unit_square() {
        let g = chaos_extreme_points(0);
        assert_eq!(g.extreme_points[0], (big(1), big(1)));
        assert_eq!(g.extreme_points[1], (big(-1), big(1)));
        assert_eq!(g.area, big(4));
        // Opposite corners (1,1) and (-1,-1) are 2*sqrt(2) apart.
        assert_eq!(g.diameter_squared, big(8));
    }

    #[test]
    fn first_image_from_mapping_the_square() {
        let g = chaos_extreme_points(1);
        assert_eq!(g.extreme_points[0], (big(2), big(3)));
        assert_eq!(g.extreme_points[1], (big(0), big(1)));
        assert_eq!(g.area, big(4));
        // Cross-check: map all four corners of the square and keep the hull.
        let (a, b) = chaos_map(&big(1), &big(1));
        assert_eq!((a, b), (big(2), big(3)));
        let (a, b) = chaos_map(&big(-1), &big(1));
        assert_eq!((a, b), (big(0), big(1)));
    }

    #[test]
    fn fifth_image_matches_fibonacci_corners() {
        let g = chaos_extreme_points(5);
        assert_eq!(g.extreme_points[0], (big(89), big(144)));
        assert_eq!(g.extreme_points[1], (big(21), big(34)));
        assert_eq!(g.area, big(4));
    }

    #[test]
    fn corners_propagate_under_the_map() {
        // E^t maps onto E^{t+1} corner by corner.
        for t in 0..20u64 {
            let now = chaos_extreme_points(t);
            let next = chaos_extreme_points(t + 1);
            for corner in 0..2 {
                let (a, b) =
                    chaos_map(&now.extreme_points[corner].0, &now.extreme_points[corner].1);
                assert_eq!((a, b), next.extreme_points[corner]);
            }
        }
    }

    #[test]
    fn diameter_tracks_golden_ratio_growth() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        for t in 5..=20u64 {
            let g = chaos_extreme_points(t);
            let ratio = g.diameter() / phi.powi(2 * t as i32);
            assert!(
                (1.0..4.0).contains(&ratio),
                "t={t}: diameter/phi^(2t) = {ratio}"
            );
        }
    }
}
