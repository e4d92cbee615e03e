//! SINR and packet-success models.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::geometry::{surface_distance, SpherePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub power: f64,
    pub noise: f64,
    pub alpha: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            power: 1.0,
            noise: 1e-9,
            alpha: 3.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.noise >= 0.0 && self.alpha > 2.0) {
            return Err(Error::Config(format!(
                "radio parameters need P > 0, N >= 0, alpha > 2 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Received power at surface distance `d`.
    #[inline]
    pub fn received(&self, d: f64) -> f64 {
        self.power * d.powf(-self.alpha)
    }
}

/// SINR at `receiver` for a transmission from `transmitter`, with every
/// point of `interferers` transmitting concurrently.
pub fn sinr(
    receiver: &SpherePoint,
    transmitter: &SpherePoint,
    interferers: &[SpherePoint],
    radio: &RadioParams,
) -> Result<f64> {
    let d = surface_distance(receiver, transmitter);
    if d <= 0.0 {
        return Err(Error::Geometry("transmitter and receiver coincide".into()));
    }
    let mut interference = 0.0;
    for p in interferers {
        let dk = surface_distance(receiver, p);
        if dk <= 0.0 {
            return Err(Error::Geometry("interferer coincides with receiver".into()));
        }
        interference += radio.received(dk);
    }
    Ok(sinr_from_powers(
        radio.received(d),
        interference,
        radio.noise,
    ))
}

#[inline]
pub fn sinr_from_powers(signal: f64, interference: f64, noise: f64) -> f64 {
    let den = noise + interference;
    if den == 0.0 {
        f64::INFINITY
    } else {
        signal / den
    }
}

/// Map from SINR to the probability that a packet is decoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkModel {
    /// Ideal receiver: success iff SINR ≥ β. Discontinuous baseline.
    Threshold { beta: f64 },
    /// Fixed success probability regardless of SINR. Discontinuous baseline.
    ConstantP { p: f64 },
    /// Uncoded BPSK over AWGN, `bits` independent bits per packet.
    BpskPacket { bits: u32 },
    /// Logistic curve in dB.
    Logistic {
        #[serde(default = "default_slope", alias = "a")]
        slope: f64,
        #[serde(default = "default_midpoint_db")]
        midpoint_db: f64,
    },
}

fn default_slope() -> f64 {
    1.0
}

fn default_midpoint_db() -> f64 {
    10.0
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::Logistic {
            slope: default_slope(),
            midpoint_db: default_midpoint_db(),
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LinkModel::Threshold { beta } => beta >= 0.0 && beta.is_finite(),
            LinkModel::ConstantP { p } => p > 0.0 && p < 1.0,
            LinkModel::BpskPacket { bits } => bits >= 1,
            LinkModel::Logistic { slope, midpoint_db } => slope > 0.0 && midpoint_db.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid link model parameters: {self:?}"
            )))
        }
    }

    /// True for the families that satisfy continuity (threshold and
    /// constant-p exist only to reproduce the two limiting models).
    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            LinkModel::BpskPacket { .. } | LinkModel::Logistic { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinkModel::Threshold { .. } => "threshold",
            LinkModel::ConstantP { .. } => "constant_p",
            LinkModel::BpskPacket { .. } => "bpsk_packet",
            LinkModel::Logistic { .. } => "logistic",
        }
    }

    #[inline]
    pub fn success_probability(&self, gamma: f64) -> f64 {
        success_probability(gamma, self)
    }
}

/// `φ(γ)` for the given model.
pub fn success_probability(gamma: f64, model: &LinkModel) -> f64 {
    let gamma = gamma.max(0.0);
    match *model {
        LinkModel::Threshold { beta } => {
            if gamma >= beta {
                1.0
            } else {
                0.0
            }
        }
        LinkModel::ConstantP { p } => p,
        LinkModel::BpskPacket { bits } => {
            if gamma.is_infinite() {
                return 1.0;
            }
            let ber = 0.5 * erfc(gamma.sqrt());
            (1.0 - ber).powi(bits as i32)
        }
        LinkModel::Logistic { slope, midpoint_db } => {
            if gamma == 0.0 {
                return 0.0;
            }
            if gamma.is_infinite() {
                return 1.0;
            }
            let db = 10.0 * gamma.log10();
            1.0 / (1.0 + (-slope * (db - midpoint_db)).exp())
        }
    }
}

/// Probability that a hop succeeds within `attempts` tries, given the SINR
/// seen by each try. A sequence shorter than `attempts` repeats its last value.
pub fn hop_success_with_retries(gammas: &[f64], model: &LinkModel, attempts: u32) -> Result<f64> {
    if attempts < 1 {
        return Err(Error::Argument(
            "attempt budget R must be at least 1".into(),
        ));
    }
    let Some(&last) = gammas.last() else {
        return Err(Error::Argument("need at least one SINR value".into()));
    };
    if attempts == 1 {
        return Ok(success_probability(gammas[0], model));
    }
    let fail: f64 = (0..attempts as usize)
        .map(|i| 1.0 - success_probability(*gammas.get(i).unwrap_or(&last), model))
        .product();
    Ok(1.0 - fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpherePoint;
    use proptest::prelude::*;

    fn radio(noise: f64) -> RadioParams {
        RadioParams {
            noise,
            ..RadioParams::default()
        }
    }

    #[test]
    fn sinr_without_interferers() {
        let rx = SpherePoint::from_angles(0.0, 0.0);
        let tx = SpherePoint::from_angles(0.2, 0.0);
        let r = radio(1e-3);
        let d = surface_distance(&rx, &tx);
        let g = sinr(&rx, &tx, &[], &r).unwrap();
        assert!((g - d.powf(-3.0) / 1e-3).abs() / g < 1e-14);
    }

    #[test]
    fn symmetric_interferer_gives_unit_sinr() {
        let rx = SpherePoint::from_angles(0.0, 0.0);
        let tx = SpherePoint::from_angles(0.2, 0.0);
        let other = SpherePoint::from_angles(0.2, 1.7);
        assert!((sinr(&rx, &tx, &[other], &radio(0.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_geometry_gives_beta0() {
        // signal at t0*rho, single interferer at (M0+8)*rho, N = 0
        let rho = 0.01;
        let (t0, m0) = (0.05, 70.0);
        let r = radio(0.0);
        let rx = SpherePoint::from_angles(0.0, 0.0);
        let tx = SpherePoint::from_angles(crate::geometry::length_to_angle(t0 * rho), 0.0);
        let it = SpherePoint::from_angles(crate::geometry::length_to_angle((m0 + 8.0) * rho), 2.0);
        let g = sinr(&rx, &tx, &[it], &r).unwrap();
        let beta0 = ((m0 + 8.0) / t0).powf(3.0);
        assert!((g - beta0).abs() / beta0 < 1e-9);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let p = SpherePoint::from_angles(0.3, 0.3);
        assert!(matches!(
            sinr(&p, &p, &[], &radio(1.0)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn model_definitions() {
        let th = LinkModel::Threshold { beta: 10.0 };
        assert_eq!(th.success_probability(10.0), 1.0);
        assert_eq!(th.success_probability(9.999), 0.0);
        let cp = LinkModel::ConstantP { p: 0.9 };
        assert_eq!(cp.success_probability(0.0), 0.9);
        assert_eq!(cp.success_probability(1e9), 0.9);
        // 1/2 erfc(5) = 7.7e-13
        let bpsk = LinkModel::BpskPacket { bits: 1 };
        assert!((1.0 - bpsk.success_probability(25.0)) < 1e-6);
        assert!((1.0 - bpsk.success_probability(25.0) - 0.5 * erfc(5.0)).abs() < 1e-15);
        let lg = LinkModel::default();
        assert!((lg.success_probability(10.0) - 0.5).abs() < 1e-12);
        assert_eq!(lg.success_probability(0.0), 0.0);
    }

    #[test]
    fn retry_examples() {
        let half = LinkModel::ConstantP { p: 0.5 };
        assert!((hop_success_with_retries(&[1.0], &half, 2).unwrap() - 0.75).abs() < 1e-15);
        let p9 = LinkModel::ConstantP { p: 0.9 };
        // direct expansion: 0.9 + 0.1*0.9 + 0.01*0.9
        assert!(
            (hop_success_with_retries(&[1.0], &p9, 3).unwrap() - (0.9 + 0.09 + 0.009)).abs()
                < 1e-14
        );
        let lg = LinkModel::default();
        let g = 7.3;
        assert_eq!(
            hop_success_with_retries(&[g], &lg, 1).unwrap(),
            lg.success_probability(g)
        );
        assert!(hop_success_with_retries(&[g], &lg, 0).is_err());
        assert!(hop_success_with_retries(&[], &lg, 1).is_err());
    }

    #[test]
    fn config_round_trip() {
        let m: LinkModel = toml::from_str("model = \"logistic\"\nslope = 0.5\n").unwrap();
        assert_eq!(
            m,
            LinkModel::Logistic {
                slope: 0.5,
                midpoint_db: 10.0
            }
        );
        let m: LinkModel = toml::from_str("model = \"constant_p\"\np = 0.9\n").unwrap();
        assert_eq!(m, LinkModel::ConstantP { p: 0.9 });
        assert!(LinkModel::ConstantP { p: 1.0 }.validate().is_err());
    }

    fn models() -> Vec<LinkModel> {
        vec![
            LinkModel::Threshold { beta: 3.0 },
            LinkModel::ConstantP { p: 0.7 },
            LinkModel::BpskPacket { bits: 64 },
            LinkModel::default(),
            LinkModel::Logistic {
                slope: 0.3,
                midpoint_db: 2.0,
            },
        ]
    }

    #[test]
    fn phi_nondecreasing_and_continuous_on_grid() {
        for m in models() {
            let mut prev = 0.0;
            for i in 0..20_000 {
                let g = 10f64.powf(-3.0 + i as f64 * 7.0 / 20_000.0);
                let v = m.success_probability(g);
                assert!((0.0..=1.0).contains(&v));
                assert!(v >= prev, "{m:?} at {g}");
                if m.is_continuous() {
                    let h = g * 1e-7;
                    assert!(
                        (m.success_probability(g + h) - v).abs() < 1e-5,
                        "{m:?} at {g}"
                    );
                }
                prev = v;
            }
            if m.is_continuous() {
                assert!(m.success_probability(1e12) > 1.0 - 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn adding_an_interferer_never_raises_sinr(
            a in 0.01f64..3.0, b in 0.0f64..std::f64::consts::TAU, c in 0.01f64..3.0, d in 0.0f64..std::f64::consts::TAU,
            noise in 0.0f64..1e-3,
        ) {
            let rx = SpherePoint::from_angles(0.0, 0.0);
            let tx = SpherePoint::from_angles(0.05, 0.0);
            let i1 = SpherePoint::from_angles(a, b);
            let i2 = SpherePoint::from_angles(c, d);
            let r = radio(noise);
            let one = sinr(&rx, &tx, &[i1], &r).unwrap();
            let two = sinr(&rx, &tx, &[i1, i2], &r).unwrap();
            prop_assert!(two < one);
        }

        #[test]
        fn power_scaling_is_neutral_without_noise(c in 0.001f64..1000.0, a in 0.01f64..3.0) {
            let rx = SpherePoint::from_angles(0.0, 0.0);
            let tx = SpherePoint::from_angles(0.05, 0.0);
            let it = SpherePoint::from_angles(a, 1.0);
            let r1 = radio(0.0);
            let r2 = RadioParams { power: c, ..r1 };
            let g1 = sinr(&rx, &tx, &[it], &r1).unwrap();
            let g2 = sinr(&rx, &tx, &[it], &r2).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1);
        }

        #[test]
        fn retries_monotone(g1 in 0.0f64..100.0, g2 in 0.0f64..100.0, r in 1u32..6) {
            let m = LinkModel::default();
            let base = hop_success_with_retries(&[g1, g2], &m, r).unwrap();
            prop_assert!(hop_success_with_retries(&[g1, g2], &m, r + 1).unwrap() >= base);
            prop_assert!(hop_success_with_retries(&[g1 + 1.0, g2], &m, r).unwrap() >= base);
        }
    }
}
