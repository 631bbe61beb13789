//! Synthetic many-to-many datasets and their exact conditional laws.
//!
//! Each pair couples a point `x` on a surface in ℝ³ (a torus or a Möbius band)
//! with a point `y` on the unit circle:
//!
//! - `Torus1`: the revolution angle `φ` of `x` is perturbed by `α ~ U[−π/4, π/4]`
//!   to give the angle of `y`.
//! - `Torus2`: `y` sits at angle `φ/2` or `φ/2 + π` with equal probability.
//! - `Mobius`: the band angle `θ` plays the role of `φ` in `Torus1`; the band
//!   offset `s` is the fiber coordinate.
//!
//! [`conditional_oracle`] draws exact samples from `f(x)` and `f⁻¹(y)`, which is
//! what the local evaluation compares the model against.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::Rng;

/// Major radius of the torus and centerline radius of the Möbius band.
pub const MAJOR_RADIUS: f64 = 1.0;
/// Tube radius of the torus and half-width of the Möbius band.
pub const MINOR_RADIUS: f64 = 0.25;
/// Half-width of the angular window used by `Torus1` and `Mobius`.
pub const ANGLE_WINDOW: f64 = FRAC_PI_4;
/// Largest manifold residual accepted for an oracle anchor.
pub const ANCHOR_TOLERANCE: f64 = 1e-6;

/// Generator stream for dataset draws.
const DATA_STREAM: u64 = 1;

/// One training pair: `x ∈ ℝ³` on the surface, `y ∈ ℝ²` on the unit circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedSample {
    pub x: [f64; 3],
    pub y: [f64; 2],
}

/// The three synthetic dataset families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetId {
    Torus1,
    Torus2,
    Mobius,
}

impl DatasetId {
    pub const ALL: [DatasetId; 3] = [DatasetId::Torus1, DatasetId::Torus2, DatasetId::Mobius];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Torus1 => "torus1",
            DatasetId::Torus2 => "torus2",
            DatasetId::Mobius => "mobius",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus1" => Ok(DatasetId::Torus1),
            "torus2" => Ok(DatasetId::Torus2),
            "mobius" => Ok(DatasetId::Mobius),
            other => Err(Error::invalid(format!(
                "unknown dataset `{other}` (expected torus1, torus2 or mobius)"
            ))),
        }
    }
}

/// Direction of a many-to-many query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Sample `f(x)` given `x`.
    Forward,
    /// Sample `f⁻¹(y)` given `y`.
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fwd" | "forward" => Ok(Direction::Forward),
            "rev" | "reverse" => Ok(Direction::Reverse),
            other => Err(Error::invalid(format!(
                "unknown direction `{other}` (expected fwd or rev)"
            ))),
        }
    }
}

/// Which half of a pair a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
}

/// An ordered collection of pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Generator and seed, when the pairs were generated rather than loaded.
    pub origin: Option<(DatasetId, u64)>,
    pub pairs: Vec<PairedSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.x.to_vec()).collect()
    }

    pub fn ys(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.y.to_vec()).collect()
    }
}

/// Point of the torus at tube angle `theta` and revolution angle `phi`.
pub fn torus_point(theta: f64, phi: f64) -> [f64; 3] {
    let ring = MAJOR_RADIUS + MINOR_RADIUS * theta.cos();
    [
        ring * phi.cos(),
        ring * phi.sin(),
        MINOR_RADIUS * theta.sin(),
    ]
}

/// Point of the Möbius band at angle `theta` and offset `s ∈ [−r, r]`.
pub fn mobius_point(theta: f64, s: f64) -> [f64; 3] {
    let half = theta / 2.0;
    let ring = MAJOR_RADIUS - s * half.cos();
    [ring * theta.cos(), ring * theta.sin(), s * half.sin()]
}

pub fn circle_point(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

/// Angle of the projection of `x` onto the `x0/x1` plane, in `[0, 2π)`.
pub fn azimuth(x: &[f64]) -> f64 {
    let a = x[1].atan2(x[0]);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

fn uniform_angle(rng: &mut Rng) -> f64 {
    rng.random::<f64>() * TAU
}

fn window_offset(rng: &mut Rng) -> f64 {
    rng.random_range(-ANGLE_WINDOW..=ANGLE_WINDOW)
}

/// Draws one pair of the named dataset.
pub fn sample_pair(id: DatasetId, rng: &mut Rng) -> PairedSample {
    match id {
        DatasetId::Torus1 => {
            let theta = uniform_angle(rng);
            let phi = uniform_angle(rng);
            let alpha = window_offset(rng);
            PairedSample {
                x: torus_point(theta, phi),
                y: circle_point(phi + alpha),
            }
        }
        DatasetId::Torus2 => {
            let theta = uniform_angle(rng);
            let phi = uniform_angle(rng);
            let branch = if rng.random_bool(0.5) { PI } else { 0.0 };
            PairedSample {
                x: torus_point(theta, phi),
                y: circle_point(phi / 2.0 + branch),
            }
        }
        DatasetId::Mobius => {
            let theta = uniform_angle(rng);
            let s = rng.random_range(-MINOR_RADIUS..=MINOR_RADIUS);
            let alpha = window_offset(rng);
            PairedSample {
                x: mobius_point(theta, s),
                y: circle_point(theta + alpha),
            }
        }
    }
}

/// Generates `n` independent pairs; identical `(id, n, seed)` give identical output.
pub fn generate_dataset(id: DatasetId, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let mut rng = crate::seeded_rng(seed, DATA_STREAM);
    let pairs = (0..n).map(|_| sample_pair(id, &mut rng)).collect();
    Ok(Dataset {
        origin: Some((id, seed)),
        pairs,
    })
}

/// Parameters of the band point nearest to `x` within the meridian half-plane
/// of `x`, plus the distance to it.
fn mobius_projection(x: &[f64]) -> (f64, f64, f64) {
    let theta = azimuth(x);
    let radial = x[0].hypot(x[1]) - MAJOR_RADIUS;
    let (dir_r, dir_z) = (-(theta / 2.0).cos(), (theta / 2.0).sin());
    let s = (radial * dir_r + x[2] * dir_z).clamp(-MINOR_RADIUS, MINOR_RADIUS);
    let residual = (radial - s * dir_r).hypot(x[2] - s * dir_z);
    (theta, s, residual)
}

/// Distance-like residual of `point` from the manifold of the named side.
///
/// Torus points use the implicit equation `|(√(x₀²+x₁²) − R)² + x₂² − r²|`,
/// Möbius points the distance to the nearest band point in the meridian plane,
/// and circle points `|‖y‖ − 1|`.
pub fn manifold_residual(id: DatasetId, point: &[f64], side: Side) -> Result<f64> {
    match side {
        Side::X => {
            if point.len() != 3 {
                return Err(Error::Shape(format!(
                    "x points have 3 coordinates, got {}",
                    point.len()
                )));
            }
            Ok(match id {
                DatasetId::Torus1 | DatasetId::Torus2 => {
                    let radial = point[0].hypot(point[1]) - MAJOR_RADIUS;
                    (radial * radial + point[2] * point[2] - MINOR_RADIUS * MINOR_RADIUS).abs()
                }
                DatasetId::Mobius => mobius_projection(point).2,
            })
        }
        Side::Y => {
            if point.len() != 2 {
                return Err(Error::Shape(format!(
                    "y points have 2 coordinates, got {}",
                    point.len()
                )));
            }
            Ok((point[0].hypot(point[1]) - 1.0).abs())
        }
    }
}

fn check_anchor(id: DatasetId, anchor: &[f64], side: Side) -> Result<()> {
    let residual = manifold_residual(id, anchor, side)?;
    if residual > ANCHOR_TOLERANCE || !residual.is_finite() {
        return Err(Error::OffManifold {
            dataset: id.name(),
            side: match side {
                Side::X => "x",
                Side::Y => "y",
            },
            residual,
        });
    }
    Ok(())
}

/// Draws `n` exact samples of `f(anchor)` (forward) or `f⁻¹(anchor)` (reverse).
pub fn conditional_oracle(
    id: DatasetId,
    direction: Direction,
    anchor: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    match direction {
        Direction::Forward => {
            check_anchor(id, anchor, Side::X)?;
            let base = match id {
                DatasetId::Torus1 | DatasetId::Torus2 => azimuth(anchor),
                DatasetId::Mobius => mobius_projection(anchor).0,
            };
            Ok((0..n)
                .map(|_| {
                    let angle = match id {
                        DatasetId::Torus2 => {
                            base / 2.0 + if rng.random_bool(0.5) { PI } else { 0.0 }
                        }
                        _ => base + window_offset(rng),
                    };
                    circle_point(angle).to_vec()
                })
                .collect())
        }
        Direction::Reverse => {
            check_anchor(id, anchor, Side::Y)?;
            let psi = azimuth(anchor);
            Ok((0..n)
                .map(|_| {
                    let x = match id {
                        DatasetId::Torus1 => {
                            let phi = psi + window_offset(rng);
                            torus_point(uniform_angle(rng), phi)
                        }
                        DatasetId::Torus2 => {
                            let phi = (2.0 * psi).rem_euclid(TAU);
                            torus_point(uniform_angle(rng), phi)
                        }
                        DatasetId::Mobius => {
                            let theta = psi + window_offset(rng);
                            let s = rng.random_range(-MINOR_RADIUS..=MINOR_RADIUS);
                            mobius_point(theta, s)
                        }
                    };
                    x.to_vec()
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn parametrization_corner_values() {
        let x = torus_point(0.0, 0.0);
        assert_abs_diff_eq!(x[0], 1.25);
        assert_abs_diff_eq!(x[1], 0.0);
        assert_abs_diff_eq!(x[2], 0.0);
        assert_eq!(circle_point(0.0), [1.0, 0.0]);

        let x = torus_point(FRAC_PI_2, 0.0);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[2], 0.25, epsilon = 1e-15);

        let x = mobius_point(0.0, 0.25);
        assert_eq!(x, [0.75, 0.0, 0.0]);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            manifold_residual(DatasetId::Torus1, &[1.25, 0.0, 0.0], Side::X).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            manifold_residual(DatasetId::Torus1, &[0.0, 0.0, 0.0], Side::X).unwrap(),
            0.9375
        );
        assert_eq!(
            manifold_residual(DatasetId::Torus1, &[1.0, 0.0], Side::Y).unwrap(),
            0.0
        );
        assert!(manifold_residual(DatasetId::Torus1, &[1.0, 0.0], Side::X).is_err());
        // off the band by 0.1 along z at θ = 0
        assert_abs_diff_eq!(
            manifold_residual(DatasetId::Mobius, &[0.9, 0.0, 0.1], Side::X).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        // past the edge of the band
        assert_abs_diff_eq!(
            manifold_residual(DatasetId::Mobius, &[0.5, 0.0, 0.0], Side::X).unwrap(),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn generated_pairs_lie_on_manifolds() {
        for id in DatasetId::ALL {
            let data = generate_dataset(id, 5000, 7).unwrap();
            assert_eq!(data.len(), 5000);
            for p in &data.pairs {
                assert!(manifold_residual(id, &p.x, Side::X).unwrap() <= 1e-12);
                assert!(manifold_residual(id, &p.y, Side::Y).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_rejects_empty() {
        let a = generate_dataset(DatasetId::Torus2, 1, 7).unwrap();
        let b = generate_dataset(DatasetId::Torus2, 1, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.pairs[0].x.map(f64::to_bits),
            b.pairs[0].x.map(f64::to_bits)
        );
        assert!(generate_dataset(DatasetId::Torus1, 0, 7).is_err());
    }

    #[test]
    fn mobius_outputs_are_centered() {
        let data = generate_dataset(DatasetId::Mobius, 1000, 3).unwrap();
        let n = data.len() as f64;
        let mean0 = data.pairs.iter().map(|p| p.y[0]).sum::<f64>() / n;
        let mean1 = data.pairs.iter().map(|p| p.y[1]).sum::<f64>() / n;
        assert!(mean0.abs() < 0.1 && mean1.abs() < 0.1, "{mean0} {mean1}");
    }

    #[test]
    fn torus1_forward_oracle_stays_in_window() {
        let mut rng = crate::seeded_rng(11, 0);
        let anchor = torus_point(1.3, 0.0);
        let samples = conditional_oracle(
            DatasetId::Torus1,
            Direction::Forward,
            &anchor,
            20_000,
            &mut rng,
        )
        .unwrap();
        let mut mean = 0.0;
        for y in &samples {
            let a = y[1].atan2(y[0]);
            assert!(a.abs() <= FRAC_PI_4 + 1e-12);
            mean += a;
        }
        mean /= samples.len() as f64;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn torus2_forward_oracle_is_two_point() {
        let mut rng = crate::seeded_rng(5, 0);
        let anchor = torus_point(0.7, 0.0);
        let n = 4000;
        let samples =
            conditional_oracle(DatasetId::Torus2, Direction::Forward, &anchor, n, &mut rng)
                .unwrap();
        let mut right = 0usize;
        for y in &samples {
            if (y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12 {
                right += 1;
            } else {
                assert!((y[0] + 1.0).abs() < 1e-12 && y[1].abs() < 1e-12, "{y:?}");
            }
        }
        let frac = right as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn torus2_reverse_oracle_fixes_revolution_angle() {
        let mut rng = crate::seeded_rng(5, 0);
        let samples = conditional_oracle(
            DatasetId::Torus2,
            Direction::Reverse,
            &[1.0, 0.0],
            500,
            &mut rng,
        )
        .unwrap();
        for x in &samples {
            assert!(x[1].abs() < 1e-12);
            assert!(x[0] > 0.0);
            assert!(manifold_residual(DatasetId::Torus2, x, Side::X).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn oracle_outputs_stay_on_their_side() {
        let mut rng = crate::seeded_rng(9, 0);
        for id in DatasetId::ALL {
            let data = generate_dataset(id, 20, 1).unwrap();
            for p in &data.pairs {
                let ys = conditional_oracle(id, Direction::Forward, &p.x, 30, &mut rng).unwrap();
                for y in &ys {
                    assert!(manifold_residual(id, y, Side::Y).unwrap() <= 1e-12);
                }
                let xs = conditional_oracle(id, Direction::Reverse, &p.y, 30, &mut rng).unwrap();
                for x in &xs {
                    assert!(manifold_residual(id, x, Side::X).unwrap() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn oracle_rejects_off_manifold_anchor() {
        let mut rng = crate::seeded_rng(1, 0);
        let err = conditional_oracle(
            DatasetId::Torus1,
            Direction::Forward,
            &[0.0; 3],
            1,
            &mut rng,
        );
        assert!(matches!(err, Err(Error::OffManifold { .. })));
        let err = conditional_oracle(
            DatasetId::Mobius,
            Direction::Reverse,
            &[0.5, 0.0],
            1,
            &mut rng,
        );
        assert!(matches!(err, Err(Error::OffManifold { .. })));
    }

    #[test]
    fn mobius_forward_oracle_follows_band_angle() {
        let mut rng = crate::seeded_rng(2, 0);
        let theta = 2.0;
        let anchor = mobius_point(theta, -0.1);
        let ys = conditional_oracle(
            DatasetId::Mobius,
            Direction::Forward,
            &anchor,
            2000,
            &mut rng,
        )
        .unwrap();
        for y in &ys {
            let d = (azimuth(y) - theta + PI).rem_euclid(TAU) - PI;
            assert!(d.abs() <= FRAC_PI_4 + 1e-9);
        }
    }

    #[test]
    fn names_round_trip() {
        for id in DatasetId::ALL {
            assert_eq!(id.name().parse::<DatasetId>().unwrap(), id);
        }
        assert!("sphere".parse::<DatasetId>().is_err());
        assert_eq!("fwd".parse::<Direction>().unwrap(), Direction::Forward);
        assert_eq!("rev".parse::<Direction>().unwrap(), Direction::Reverse);
    }
}
