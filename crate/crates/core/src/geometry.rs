//! Geometry on the sphere of unit surface area.
//!
//! Points are unit direction vectors; the embedding radius is fixed at
//! `1/(2√π)` so the total surface area is 1. Every public distance is a
//! great-circle (surface) length.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedding radius of the unit-area sphere.
pub const RADIUS: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))

/// Largest possible surface distance (half a great circle), `√π/2`.
pub const MAX_DISTANCE: f64 = 0.886_226_925_452_758; // sqrt(pi) / 2

pub const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Slack used when validating user-supplied lengths against the closed range.
const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    v: [f64; 3],
}

impl SpherePoint {
    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Geometry(format!(
                "cannot normalize vector ({x}, {y}, {z})"
            )));
        }
        Ok(Self {
            v: [x / norm, y / norm, z / norm],
        })
    }

    /// Point at polar angle `theta` from the north pole and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            v: [st * cp, st * sp, ct],
        }
    }

    pub fn north_pole() -> Self {
        Self { v: [0.0, 0.0, 1.0] }
    }

    #[inline]
    pub fn direction(&self) -> [f64; 3] {
        self.v
    }

    #[inline]
    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.v[0] * other.v[0] + self.v[1] * other.v[1] + self.v[2] * other.v[2]
    }

    pub fn antipode(&self) -> Self {
        Self {
            v: [-self.v[0], -self.v[1], -self.v[2]],
        }
    }

    fn cross(&self, other: &SpherePoint) -> [f64; 3] {
        let (a, b) = (self.v, other.v);
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    /// Central angle in radians, stable at both ends of the range.
    pub fn central_angle(&self, other: &SpherePoint) -> f64 {
        let c = self.cross(other);
        let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        s.atan2(self.dot(other))
    }
}

/// Great-circle distance between two points.
#[inline]
pub fn surface_distance(a: &SpherePoint, b: &SpherePoint) -> f64 {
    RADIUS * a.central_angle(b)
}

/// Converts a surface length into the central angle it subtends.
#[inline]
pub fn length_to_angle(length: f64) -> f64 {
    length / RADIUS
}

fn check_length(name: &str, l: f64) -> Result<f64> {
    if !(l.is_finite() && (-RANGE_SLACK..=MAX_DISTANCE + RANGE_SLACK).contains(&l)) {
        return Err(Error::Domain(format!(
            "{name} = {l} outside [0, sqrt(pi)/2]"
        )));
    }
    Ok(l.clamp(0.0, MAX_DISTANCE))
}

/// Area of a spherical cap of surface radius `rho`: `sin²(√π·ρ)`.
pub fn cap_area(rho: f64) -> Result<f64> {
    let rho = check_length("cap radius", rho)?;
    Ok((SQRT_PI * rho).sin().powi(2))
}

/// Inverse of [`cap_area`].
pub fn rho_for_area(area: f64) -> Result<f64> {
    if !(area.is_finite() && (0.0..=1.0).contains(&area)) {
        return Err(Error::Domain(format!("cap area {area} outside [0, 1]")));
    }
    Ok(area.sqrt().asin() / SQRT_PI)
}

/// CDF of the distance between two independent uniform points.
pub fn distance_cdf(l: f64) -> Result<f64> {
    let l = check_length("distance", l)?;
    Ok(0.5 * (1.0 - (2.0 * SQRT_PI * l).cos()))
}

/// Density of the pair distance, `√π·sin(2√π·l)`.
pub fn distance_pdf(l: f64) -> Result<f64> {
    let l = check_length("distance", l)?;
    Ok(SQRT_PI * (2.0 * SQRT_PI * l).sin())
}

/// Closed form of `E[δ^L]` for the distance `L` between two uniform points.
///
/// `delta = 1` is accepted and returns the limit value 1 (the general
/// expression is 0/0-free there, but the limit is taken explicitly).
pub fn expected_delta_pow_l(delta: f64) -> Result<f64> {
    if delta == 1.0 {
        return Ok(1.0);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} outside (0, 1)")));
    }
    let ln = delta.ln();
    Ok(2.0 * PI * (1.0 + delta.powf(SQRT_PI / 2.0)) / (4.0 * PI + ln * ln))
}

/// Uniform point: a normalized standard Gaussian 3-vector.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R) -> SpherePoint {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(p) = SpherePoint::from_vector(x, y, z) {
            return p;
        }
    }
}

/// Point at arclength `s` from `a` along the minor great-circle arc to `b`.
pub fn geodesic_point(a: &SpherePoint, b: &SpherePoint, s: f64) -> Result<SpherePoint> {
    let theta = a.central_angle(b);
    if PI - theta < 1e-9 {
        return Err(Error::Geometry(
            "geodesic between antipodal points is not unique".into(),
        ));
    }
    let d = RADIUS * theta;
    if !(s.is_finite() && (-RANGE_SLACK..=d + RANGE_SLACK).contains(&s)) {
        return Err(Error::Domain(format!("arclength {s} outside [0, {d}]")));
    }
    if theta == 0.0 {
        return Ok(*a);
    }
    let t = (s / RADIUS).clamp(0.0, theta);
    let sin_theta = theta.sin();
    let wa = (theta - t).sin() / sin_theta;
    let wb = t.sin() / sin_theta;
    let (va, vb) = (a.direction(), b.direction());
    SpherePoint::from_vector(
        wa * va[0] + wb * vb[0],
        wa * va[1] + wb * vb[1],
        wa * va[2] + wb * vb[2],
    )
}
