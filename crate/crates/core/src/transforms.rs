//! Measure-preserving maps of (0,1) and the rejection-rescale fix.
//!
//! A map leaves the uniform law unchanged, so feeding `f(x)` instead of `x`
//! must not move any statistic of a consumer when the source is uniform.
//! None of the maps consume draws; only [`rejection_rescale`] does.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::UnitSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("rotate_half is undefined at exactly 1/2 (sample not from the reference grid)")]
    HalfPoint,
    #[error("{map} of {input} rounds onto the interval boundary (sample not from the reference grid)")]
    OffGrid { map: &'static str, input: f64 },
    #[error("invalid fix window ({a}, {b}): need 0 <= a < b <= 1")]
    InvalidWindow { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurePreservingMap {
    /// `1 - x`
    Reflect,
    /// `x + 1/2` below one half, `x - 1/2` otherwise.
    RotateHalf,
    /// Stages applied left to right.
    Compose(Vec<MeasurePreservingMap>),
}

impl MeasurePreservingMap {
    pub fn apply(&self, x: UnitSample) -> Result<UnitSample, TransformError> {
        match self {
            MeasurePreservingMap::Reflect => reflect(x),
            MeasurePreservingMap::RotateHalf => rotate_half(x),
            MeasurePreservingMap::Compose(maps) => compose(maps, x),
        }
    }

    /// Flattened stage names, e.g. `rotate_half,reflect`.
    pub fn name(&self) -> String {
        match self {
            MeasurePreservingMap::Reflect => "reflect".to_string(),
            MeasurePreservingMap::RotateHalf => "rotate_half".to_string(),
            MeasurePreservingMap::Compose(maps) if maps.is_empty() => "identity".to_string(),
            MeasurePreservingMap::Compose(maps) => {
                maps.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
            }
        }
    }
}

pub fn reflect(x: UnitSample) -> Result<UnitSample, TransformError> {
    UnitSample::new(1.0 - x.value()).map_err(|_| TransformError::OffGrid {
        map: "reflect",
        input: x.value(),
    })
}

pub fn rotate_half(x: UnitSample) -> Result<UnitSample, TransformError> {
    let v = x.value();
    if v == 0.5 {
        return Err(TransformError::HalfPoint);
    }
    let y = if v < 0.5 { v + 0.5 } else { v - 0.5 };
    UnitSample::new(y).map_err(|_| TransformError::OffGrid {
        map: "rotate_half",
        input: v,
    })
}

pub fn compose(maps: &[MeasurePreservingMap], x: UnitSample) -> Result<UnitSample, TransformError> {
    maps.iter().try_fold(x, |acc, m| m.apply(acc))
}

/// Trusted subinterval `(a, b)` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixWindow {
    a: f64,
    b: f64,
}

impl FixWindow {
    pub fn new(a: f64, b: f64) -> Result<Self, TransformError> {
        if a >= 0.0 && a < b && b <= 1.0 {
            Ok(Self { a, b })
        } else {
            Err(TransformError::InvalidWindow { a, b })
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Strict containment followed by the affine rescale. `None` means discard.
    pub fn accept(&self, x: UnitSample) -> Option<UnitSample> {
        let v = x.value();
        if self.a < v && v < self.b {
            // rounding can still land on 0 or 1; those are discarded too
            UnitSample::new((v - self.a) / (self.b - self.a)).ok()
        } else {
            None
        }
    }
}

/// Result of one rescaled draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescaled {
    pub sample: UnitSample,
    pub discards: u64,
}

/// Draws from `draw` until a sample falls strictly inside the window, then
/// rescales it onto (0,1). No attempt cap.
pub fn rejection_rescale<E, F>(window: &FixWindow, mut draw: F) -> Result<Rescaled, E>
where
    F: FnMut() -> Result<UnitSample, E>,
{
    let mut discards = 0;
    loop {
        if let Some(sample) = window.accept(draw()?) {
            return Ok(Rescaled { sample, discards });
        }
        discards += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Seed, StreamId};
    use proptest::prelude::*;
    use std::convert::Infallible;

    fn u(v: f64) -> UnitSample {
        UnitSample::new(v).unwrap()
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(u(0.25)).unwrap().value(), 0.75);
        assert_eq!(reflect(u(0.5)).unwrap().value(), 0.5);
        assert_eq!(reflect(reflect(u(0.37)).unwrap()).unwrap().value(), 0.37);
    }

    #[test]
    fn rotate_half_examples() {
        assert_eq!(rotate_half(u(0.3)).unwrap().value(), 0.8);
        assert!((rotate_half(u(0.7)).unwrap().value() - 0.2).abs() < 1e-15);
        // decimal literals are off the reference grid, so only approximately involutive
        let back = rotate_half(rotate_half(u(0.3)).unwrap()).unwrap().value();
        assert!((back - 0.3).abs() < 1e-15);
        assert_eq!(rotate_half(u(0.5)), Err(TransformError::HalfPoint));
    }

    #[test]
    fn compose_examples() {
        use MeasurePreservingMap::*;
        let y = compose(&[RotateHalf, Reflect], u(0.3)).unwrap().value();
        assert!((y - 0.2).abs() < 1e-15, "{y}");
        assert_eq!(compose(&[], u(0.42)).unwrap().value(), 0.42);
        assert_eq!(compose(&[Reflect, Reflect], u(0.9)).unwrap().value(), 0.9);
        assert_eq!(
            Compose(vec![Reflect, RotateHalf]).apply(u(0.5)),
            Err(TransformError::HalfPoint)
        );
    }

    #[test]
    fn off_grid_reflection_is_an_error() {
        assert!(matches!(
            reflect(u(1e-20)),
            Err(TransformError::OffGrid { map: "reflect", .. })
        ));
    }

    #[test]
    fn window_validation() {
        assert!(FixWindow::new(0.0, 1.0).is_ok());
        assert!(FixWindow::new(0.9, 0.1).is_err());
        assert!(FixWindow::new(0.5, 0.5).is_err());
        assert!(FixWindow::new(-0.1, 0.5).is_err());
        assert!(FixWindow::new(0.1, 1.5).is_err());
    }

    fn scripted(values: &[f64]) -> impl FnMut() -> Result<UnitSample, Infallible> + '_ {
        let mut it = values.iter();
        move || Ok(u(*it.next().expect("script exhausted")))
    }

    #[test]
    fn rescale_examples() {
        let full = FixWindow::new(0.0, 1.0).unwrap();
        let r = rejection_rescale(&full, scripted(&[0.3])).unwrap();
        assert_eq!((r.sample.value(), r.discards), (0.3, 0));

        let mid = FixWindow::new(0.25, 0.75).unwrap();
        let r = rejection_rescale(&mid, scripted(&[0.5])).unwrap();
        assert_eq!(r.sample.value(), 0.5);

        let r = rejection_rescale(&mid, scripted(&[0.2, 0.6])).unwrap();
        assert!((r.sample.value() - 0.7).abs() < 1e-15);
        assert_eq!(r.discards, 1);

        // boundaries are excluded
        let r = rejection_rescale(&mid, scripted(&[0.25, 0.75, 0.5])).unwrap();
        assert_eq!(r.discards, 2);
    }

    #[test]
    fn discard_rate_matches_window_mass() {
        let w = FixWindow::new(0.2, 0.7).unwrap();
        let mut g = substream(Seed(11), StreamId(0));
        let n = 100_000u64;
        let mut discards = 0;
        for _ in 0..n {
            discards += rejection_rescale(&w, || Ok::<_, Infallible>(g.next_unit()))
                .unwrap()
                .discards;
        }
        let attempts = (n + discards) as f64;
        let accepted = n as f64 / attempts;
        let se = (0.5 * 0.5 / attempts).sqrt();
        assert!((accepted - 0.5).abs() < 3.0 * se, "accepted {accepted}");
    }

    proptest! {
        #[test]
        fn involutions_exact_on_reference_grid(word in any::<u64>()) {
            let x = UnitSample::from_bits(word);
            prop_assert_eq!(reflect(reflect(x).unwrap()).unwrap(), x);
            let r = rotate_half(x).unwrap();
            prop_assert!(r.value() > 0.0 && r.value() < 1.0);
            prop_assert_eq!(rotate_half(r).unwrap(), x);
        }

        #[test]
        fn rescale_lands_inside(word in any::<u64>(), a in 0.0f64..0.9, width in 0.01f64..0.1) {
            let w = FixWindow::new(a, a + width).unwrap();
            if let Some(y) = w.accept(UnitSample::from_bits(word)) {
                prop_assert!(y.value() > 0.0 && y.value() < 1.0);
            }
        }
    }
}
