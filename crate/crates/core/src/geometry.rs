//! Boxes and Euclidean balls, with the handful of exact set operations the
//! tube construction needs: translation, Pontryagin erosion by a ball, and
//! containment / disjointness predicates.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("eroding {set} by radius {radius} leaves an empty set (largest admissible radius {limit})")]
    EmptyErosion {
        set: String,
        radius: f64,
        limit: f64,
    },
    #[error("negative radius {0}")]
    NegativeRadius(f64),
    #[error("box lower bound exceeds upper bound in dimension {0}")]
    InvertedBounds(usize),
}

/// Closed Euclidean ball `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball<const N: usize> {
    pub center: SVector<f64, N>,
    pub radius: f64,
}

/// Closed axis-aligned box `{p : lower <= p <= upper}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb<const N: usize> {
    pub lower: SVector<f64, N>,
    pub upper: SVector<f64, N>,
}

impl<const N: usize> Ball<N> {
    pub fn new(center: SVector<f64, N>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius >= 0.0) {
            return Err(GeometryError::NegativeRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn translate(&self, t: &SVector<f64, N>) -> Self {
        Self {
            center: self.center + t,
            radius: self.radius,
        }
    }

    /// `self ⊖ B(0, r)`: the ball of points whose r-neighbourhood stays inside.
    pub fn erode(&self, r: f64) -> Result<Self, GeometryError> {
        if r < 0.0 {
            return Err(GeometryError::NegativeRadius(r));
        }
        if r > self.radius {
            return Err(GeometryError::EmptyErosion {
                set: "ball".into(),
                radius: r,
                limit: self.radius,
            });
        }
        Ok(Self {
            center: self.center,
            radius: self.radius - r,
        })
    }

    pub fn inflate(&self, r: f64) -> Self {
        Self {
            center: self.center,
            radius: self.radius + r,
        }
    }

    pub fn contains_point(&self, p: &SVector<f64, N>) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

impl<const N: usize> Aabb<N> {
    pub fn new(lower: SVector<f64, N>, upper: SVector<f64, N>) -> Result<Self, GeometryError> {
        if let Some(d) = (0..N).find(|&d| !(lower[d] <= upper[d])) {
            return Err(GeometryError::InvertedBounds(d));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half, half]^N`.
    pub fn symmetric(half: f64) -> Self {
        Self {
            lower: SVector::repeat(-half),
            upper: SVector::repeat(half),
        }
    }

    pub fn translate(&self, t: &SVector<f64, N>) -> Self {
        Self {
            lower: self.lower + t,
            upper: self.upper + t,
        }
    }

    /// `self ⊖ B(0, r)`. For a box this is the box shrunk by `r` on every face.
    pub fn erode(&self, r: f64) -> Result<Self, GeometryError> {
        self.erode_named(r, "box")
    }

    pub fn erode_named(&self, r: f64, name: &str) -> Result<Self, GeometryError> {
        if r < 0.0 {
            return Err(GeometryError::NegativeRadius(r));
        }
        let lower = self.lower.add_scalar(r);
        let upper = self.upper.add_scalar(-r);
        if (0..N).any(|d| lower[d] > upper[d]) {
            return Err(GeometryError::EmptyErosion {
                set: name.to_string(),
                radius: r,
                limit: self.inradius(),
            });
        }
        Ok(Self { lower, upper })
    }

    /// Half of the smallest side length; the largest erosion radius that
    /// leaves the box nonempty.
    pub fn inradius(&self) -> f64 {
        (0..N)
            .map(|d| 0.5 * (self.upper[d] - self.lower[d]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_point(&self, p: &SVector<f64, N>) -> bool {
        (0..N).all(|d| self.lower[d] <= p[d] && p[d] <= self.upper[d])
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        self.contains_point(&other.lower) && self.contains_point(&other.upper)
    }

    pub fn contains_origin(&self) -> bool {
        self.contains_point(&SVector::zeros())
    }

    /// Componentwise clamp into the box.
    pub fn project(&self, p: &SVector<f64, N>) -> SVector<f64, N> {
        SVector::from_fn(|d, _| p[d].clamp(self.lower[d], self.upper[d]))
    }

    pub fn center(&self) -> SVector<f64, N> {
        (self.lower + self.upper) * 0.5
    }
}

/// Translates a box or ball; the only Minkowski sum the construction uses.
pub trait Translate<const N: usize> {
    fn translated(&self, t: &SVector<f64, N>) -> Self;
}

impl<const N: usize> Translate<N> for Ball<N> {
    fn translated(&self, t: &SVector<f64, N>) -> Self {
        self.translate(t)
    }
}

impl<const N: usize> Translate<N> for Aabb<N> {
    fn translated(&self, t: &SVector<f64, N>) -> Self {
        self.translate(t)
    }
}

pub fn translate_set<S: Translate<N>, const N: usize>(set: &S, t: &SVector<f64, N>) -> S {
    set.translated(t)
}

pub fn erode_box_by_ball<const N: usize>(b: &Aabb<N>, r: f64) -> Result<Aabb<N>, GeometryError> {
    b.erode(r)
}

pub fn erode_ball_by_ball<const N: usize>(b: &Ball<N>, r: f64) -> Result<Ball<N>, GeometryError> {
    b.erode(r)
}

/// Radius of the smallest origin-centred ball containing
/// `{-k e - k v : |e| <= r_e, |v| <= r_v}`.
pub fn feedback_image_radius(k: f64, r_e: f64, r_v: f64) -> f64 {
    k * (r_e + r_v)
}

pub fn ball_in_box<const N: usize>(b: &Ball<N>, bx: &Aabb<N>) -> bool {
    (0..N).all(|d| bx.lower[d] + b.radius <= b.center[d] && b.center[d] <= bx.upper[d] - b.radius)
}

pub fn balls_disjoint<const N: usize>(a: &Ball<N>, b: &Ball<N>) -> bool {
    (a.center - b.center).norm() > a.radius + b.radius
}

/// `inner ⊆ outer` for two balls.
pub fn ball_in_ball<const N: usize>(inner: &Ball<N>, outer: &Ball<N>) -> bool {
    (inner.center - outer.center).norm() + inner.radius <= outer.radius
}

/// Strict containment, used for the "entire volume inside the region" test.
pub fn ball_strictly_in_ball<const N: usize>(inner: &Ball<N>, outer: &Ball<N>) -> bool {
    (inner.center - outer.center).norm() + inner.radius < outer.radius
}

/// A workspace box minus a set of forbidden balls, tested pointwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeSpace<const N: usize> {
    pub bounds: Aabb<N>,
    pub forbidden: Vec<Ball<N>>,
}

impl<const N: usize> FreeSpace<N> {
    pub fn contains(&self, p: &SVector<f64, N>) -> bool {
        self.bounds.contains_point(p)
            && self
                .forbidden
                .iter()
                .all(|b| (p - b.center).norm() > b.radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn bx(l: [f64; 2], u: [f64; 2]) -> Aabb<2> {
        Aabb::new(Vector2::from(l), Vector2::from(u)).unwrap()
    }

    #[test]
    fn translation_examples() {
        let b = Ball::new(Vector2::new(1.0, 1.0), 2.0).unwrap();
        let t = translate_set(&b, &Vector2::new(-1.0, -1.0));
        assert_eq!(t, Ball::new(Vector2::zeros(), 2.0).unwrap());

        let w = bx([-5.0, -5.0], [5.0, 5.0]);
        assert_eq!(
            translate_set(&w, &Vector2::new(3.0, 0.0)),
            bx([-2.0, -5.0], [8.0, 5.0])
        );

        let unit = Ball::new(Vector2::zeros(), 1.0).unwrap();
        assert_eq!(translate_set(&unit, &Vector2::zeros()), unit);
    }

    #[test]
    fn box_erosion_examples() {
        let w = bx([-5.0, -5.0], [5.0, 5.0]);
        assert_eq!(
            erode_box_by_ball(&w, 0.5).unwrap(),
            bx([-4.5, -4.5], [4.5, 4.5])
        );
        let u = bx([-2.125, -2.125], [2.125, 2.125]);
        assert_eq!(erode_box_by_ball(&u, 0.0).unwrap(), u);
        let unit = bx([0.0, 0.0], [1.0, 1.0]);
        match erode_box_by_ball(&unit, 0.6) {
            Err(GeometryError::EmptyErosion { radius, limit, .. }) => {
                assert_eq!(radius, 0.6);
                assert_eq!(limit, 0.5);
            }
            other => panic!("expected empty erosion, got {other:?}"),
        }
    }

    #[test]
    fn empty_box_erosion_matches_grid_search() {
        // No grid point p of the box admits p + B(0, 0.6) inside [0,1]^2.
        let unit = bx([0.0, 0.0], [1.0, 1.0]);
        let r = 0.6;
        let mut any = false;
        for i in 0..=100 {
            for j in 0..=100 {
                let p = Vector2::new(i as f64 / 100.0, j as f64 / 100.0);
                let fits = (0..64).all(|k| {
                    let th = k as f64 * std::f64::consts::TAU / 64.0;
                    unit.contains_point(&(p + r * Vector2::new(th.cos(), th.sin())))
                });
                any |= fits;
            }
        }
        assert!(!any);
        assert!(erode_box_by_ball(&unit, r).is_err());
    }

    #[test]
    fn ball_erosion_examples() {
        let c = Vector2::new(0.3, -1.0);
        let b = Ball::new(c, 0.7).unwrap();
        let e = erode_ball_by_ball(&b, 0.2).unwrap();
        assert!((e.radius - 0.5).abs() < 1e-15);
        assert_eq!(e.center, c);
        assert_eq!(erode_ball_by_ball(&b, 0.0).unwrap(), b);
        assert_eq!(erode_ball_by_ball(&b, 0.7).unwrap().radius, 0.0);
        assert!(matches!(
            erode_ball_by_ball(&b, 0.71),
            Err(GeometryError::EmptyErosion { .. })
        ));
    }

    #[test]
    fn feedback_image_radius_examples() {
        assert!((feedback_image_radius(12.0, 0.6124, 1.2247) - 22.0452).abs() < 1e-9);
        assert_eq!(feedback_image_radius(1.0, 0.0, 0.0), 0.0);
        assert_eq!(feedback_image_radius(2.0, 0.5, 0.5), 2.0);
    }

    #[test]
    fn containment_and_disjointness_examples() {
        let w = bx([-5.0, -5.0], [5.0, 5.0]);
        let unit = |x: f64| Ball::new(Vector2::new(x, 0.0), 1.0).unwrap();
        assert!(ball_in_box(&unit(0.0), &w));
        assert!(!ball_in_box(&unit(4.5), &w));
        assert!(balls_disjoint(&unit(0.0), &unit(3.0)));
        assert!(!balls_disjoint(&unit(0.0), &unit(1.5)));
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(Ball::new(Vector2::<f64>::zeros(), -0.1).is_err());
        assert!(bx([0.0, 0.0], [1.0, 1.0]).erode(-0.1).is_err());
        assert!(Aabb::new(Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)).is_err());
    }

    fn arb_box() -> impl Strategy<Value = Aabb<2>> {
        (-5.0..5.0f64, -5.0..5.0f64, 0.1..6.0f64, 0.1..6.0f64).prop_map(|(x, y, w, h)| Aabb {
            lower: Vector2::new(x, y),
            upper: Vector2::new(x + w, y + h),
        })
    }

    proptest! {
        #[test]
        fn erosion_composes(b in arb_box(), r1 in 0.0..1.5f64, r2 in 0.0..1.5f64) {
            if let Ok(joint) = b.erode(r1 + r2) {
                let stepwise = b.erode(r1).and_then(|e| e.erode(r2)).unwrap();
                prop_assert!((stepwise.lower - joint.lower).norm() < 1e-12);
                prop_assert!((stepwise.upper - joint.upper).norm() < 1e-12);
            }
        }

        #[test]
        fn containment_is_centre_in_eroded_box(
            b in arb_box(), cx in -6.0..6.0f64, cy in -6.0..6.0f64, r in 0.0..2.0f64
        ) {
            let ball = Ball { center: Vector2::new(cx, cy), radius: r };
            let expected = b.erode(r).map(|e| e.contains_point(&ball.center)).unwrap_or(false);
            prop_assert_eq!(ball_in_box(&ball, &b), expected);
        }
    }
}
