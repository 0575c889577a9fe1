//! Reference uniform source, substream derivation and fault injection.
//!
//! The generator is the SplitMix64 recurrence: the state advances by the
//! golden-ratio increment and each output is the finalizer mix of the new
//! state. Everything downstream (serial and parallel clocks, A/B arms, the
//! fix demo) draws from streams derived here, so the constants and the
//! unit-interval mapping below are fixed bit-for-bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// Spacing of the unit-interval lattice: outputs are odd multiples of 2^-53.
const GRID_STEP: f64 = 1.0 / (1u64 << 52) as f64;

/// Smallest value the reference mapping can emit (2^-53).
pub const UNIT_MIN: f64 = 0.5 * GRID_STEP;
/// Largest value the reference mapping can emit (1 - 2^-53).
pub const UNIT_MAX: f64 = 1.0 - 0.5 * GRID_STEP;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("sample {0} is outside the open unit interval")]
    OutOfUnitInterval(f64),
    #[error("invalid fault model: {0}")]
    InvalidFault(String),
}

/// Finalizer-style mix with the stream increment folded in.
#[inline]
pub const fn mix64(z: u64) -> u64 {
    let z = z.wrapping_add(GOLDEN_GAMMA);
    output_mix(z)
}

#[inline]
const fn output_mix(z: u64) -> u64 {
    let z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    let z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamId(pub u64);

/// One draw from the source process, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct UnitSample(f64);

impl UnitSample {
    pub fn new(value: f64) -> Result<Self, RngError> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(RngError::OutOfUnitInterval(value))
        }
    }

    /// Maps the top 52 bits of a raw word onto the half-offset lattice.
    #[inline]
    pub fn from_bits(word: u64) -> Self {
        Self(((word >> 12) as f64 + 0.5) * GRID_STEP)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<UnitSample> for f64 {
    fn from(u: UnitSample) -> f64 {
        u.0
    }
}

/// Generator position. Copying it forks the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorState {
    pub state: u64,
    pub draw_count: u64,
}

impl GeneratorState {
    pub const fn from_state(state: u64) -> Self {
        Self {
            state,
            draw_count: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        self.draw_count += 1;
        output_mix(self.state)
    }

    #[inline]
    pub fn next_unit(&mut self) -> UnitSample {
        UnitSample::from_bits(self.next_u64())
    }

    /// Uniform index in `0..bound` by widening multiply. Used for shuffles only.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }
}

/// Pure form of [`GeneratorState::next_unit`].
pub fn next_unit(state: GeneratorState) -> (UnitSample, GeneratorState) {
    let mut next = state;
    let u = next.next_unit();
    (u, next)
}

/// Initial state of the logical stream `id` under `seed`.
pub fn substream(seed: Seed, id: StreamId) -> GeneratorState {
    GeneratorState::from_state(mix64(seed.0 ^ mix64(id.0)))
}

/// Parametric generator defect layered over the ideal source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultModel {
    #[default]
    Ideal,
    /// Output `x^(1/gamma)`; density `gamma * y^(gamma-1)`.
    PowerBias { gamma: f64 },
    /// Draws below `c` are discarded with probability `q`.
    LowThinning { c: f64, q: f64 },
}

/// A fault-layer draw together with the number of candidates it threw away.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultDraw {
    pub sample: UnitSample,
    pub rejected: u64,
}

impl FaultModel {
    pub fn validate(&self) -> Result<(), RngError> {
        match *self {
            FaultModel::Ideal => Ok(()),
            FaultModel::PowerBias { gamma } => {
                if gamma.is_finite() && gamma > 0.0 {
                    Ok(())
                } else {
                    Err(RngError::InvalidFault(format!("gamma must be > 0, got {gamma}")))
                }
            }
            FaultModel::LowThinning { c, q } => {
                if !(c > 0.0 && c < 1.0) {
                    Err(RngError::InvalidFault(format!("c must lie in (0,1), got {c}")))
                } else if !(0.0..=1.0).contains(&q) {
                    Err(RngError::InvalidFault(format!("q must lie in [0,1], got {q}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self, FaultModel::Ideal)
    }

    /// Draws one faulted sample, advancing `state` by every raw draw consumed.
    pub fn draw(&self, state: &mut GeneratorState) -> FaultDraw {
        match *self {
            FaultModel::Ideal => FaultDraw {
                sample: state.next_unit(),
                rejected: 0,
            },
            FaultModel::PowerBias { gamma } => {
                let x = state.next_unit().value();
                FaultDraw {
                    sample: power_bias(x, gamma),
                    rejected: 0,
                }
            }
            FaultModel::LowThinning { c, q } => {
                let mut rejected = 0;
                loop {
                    let x = state.next_unit();
                    // q = 0 never rejects; skip the auxiliary draw so the stream matches Ideal
                    if x.value() < c && q > 0.0 {
                        let r = state.next_unit().value();
                        if r < q {
                            rejected += 1;
                            continue;
                        }
                    }
                    return FaultDraw {
                        sample: x,
                        rejected,
                    };
                }
            }
        }
    }
}

fn power_bias(x: f64, gamma: f64) -> UnitSample {
    // powf can round onto the boundary for extreme exponents.
    UnitSample(x.powf(gamma.recip()).clamp(f64::MIN_POSITIVE, UNIT_MAX))
}

/// Pure form of [`FaultModel::draw`].
pub fn draw_with_fault(model: FaultModel, state: GeneratorState) -> (UnitSample, GeneratorState) {
    let mut next = state;
    let d = model.draw(&mut next);
    (d.sample, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_reference_values() {
        // Frozen from an independent big-integer evaluation of the recurrence.
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(1), 0x910A_2DEC_8902_5CC1);
        assert_eq!(mix64(0), mix64(0));
        assert_ne!(mix64(0), mix64(1));
    }

    #[test]
    fn stream_from_zero_matches_reference() {
        let mut g = GeneratorState::from_state(0);
        assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(g.draw_count, 2);
    }

    #[test]
    fn substream_derivation() {
        assert_eq!(substream(Seed(0), StreamId(0)).state, 0xA706_DD2F_4D19_7E6F);
        assert_eq!(substream(Seed(0), StreamId(1)).state, 0x5E41_AB08_7439_611E);
        assert_eq!(
            substream(Seed(0), StreamId(0)).state,
            mix64(mix64(0))
        );
        assert_eq!(substream(Seed(9), StreamId(3)), substream(Seed(9), StreamId(3)));
        assert_eq!(substream(Seed(9), StreamId(3)).draw_count, 0);
    }

    #[test]
    fn unit_mapping_edges() {
        assert_eq!(UnitSample::from_bits(0).value(), 2f64.powi(-53));
        assert_eq!(UnitSample::from_bits(u64::MAX).value(), 1.0 - 2f64.powi(-53));
        assert_eq!(UnitSample::from_bits(0xFFF).value(), 2f64.powi(-53));
        // The word that would land on one half under a 53-bit grid.
        assert_ne!(UnitSample::from_bits(1u64 << 63).value(), 0.5);
        assert_ne!(UnitSample::from_bits((1u64 << 63) - 1).value(), 0.5);
    }

    #[test]
    fn unit_sample_rejects_boundaries() {
        assert!(UnitSample::new(0.0).is_err());
        assert!(UnitSample::new(1.0).is_err());
        assert!(UnitSample::new(f64::NAN).is_err());
        assert!(UnitSample::new(0.3).is_ok());
    }

    #[test]
    fn ideal_mean_seed_42() {
        let mut g = GeneratorState::from_state(42);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| g.next_unit().value()).sum();
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        assert_eq!(g.draw_count, n);
    }

    #[test]
    fn power_bias_values() {
        assert_eq!(power_bias(0.37, 1.0).value(), 0.37);
        assert_eq!(power_bias(0.0625, 4.0).value(), 0.5);
        assert!(power_bias(UNIT_MAX, 64.0).value() < 1.0);
        assert!(power_bias(UNIT_MIN, 0.001).value() > 0.0);
    }

    #[test]
    fn power_bias_one_is_ideal() {
        let s = substream(Seed(5), StreamId(1));
        let mut a = s;
        let mut b = s;
        for _ in 0..1000 {
            let x = FaultModel::Ideal.draw(&mut a);
            let y = FaultModel::PowerBias { gamma: 1.0 }.draw(&mut b);
            assert_eq!(x, y);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn thinning_with_zero_q_is_ideal_output() {
        let s = substream(Seed(5), StreamId(2));
        let mut a = s;
        let mut b = s;
        for _ in 0..1000 {
            let x = FaultModel::Ideal.draw(&mut a).sample;
            let y = FaultModel::LowThinning { c: 0.5, q: 0.0 }.draw(&mut b).sample;
            assert_eq!(x, y);
        }
    }

    #[test]
    fn thinning_counts_every_raw_draw() {
        let mut g = substream(Seed(1), StreamId(1));
        let model = FaultModel::LowThinning { c: 0.5, q: 1.0 };
        let mut rejected = 0;
        for _ in 0..10_000 {
            let d = model.draw(&mut g);
            assert!(d.sample.value() >= 0.5);
            rejected += d.rejected;
        }
        // each rejection costs the candidate and the auxiliary draw
        assert_eq!(g.draw_count, 10_000 + 2 * rejected);
    }

    #[test]
    fn pure_forms_match_mutating_forms() {
        let s = substream(Seed(77), StreamId(0));
        let (u, s2) = next_unit(s);
        let mut m = s;
        assert_eq!(m.next_unit(), u);
        assert_eq!(m, s2);
        let model = FaultModel::LowThinning { c: 0.4, q: 0.7 };
        let (v, s3) = draw_with_fault(model, s);
        let mut m = s;
        assert_eq!(model.draw(&mut m).sample, v);
        assert_eq!(m, s3);
    }

    #[test]
    fn fault_validation() {
        assert!(FaultModel::PowerBias { gamma: 0.0 }.validate().is_err());
        assert!(FaultModel::PowerBias { gamma: f64::NAN }.validate().is_err());
        assert!(FaultModel::LowThinning { c: 1.0, q: 0.5 }.validate().is_err());
        assert!(FaultModel::LowThinning { c: 0.5, q: 1.5 }.validate().is_err());
        assert!(FaultModel::LowThinning { c: 0.5, q: 1.0 }.validate().is_ok());
    }

    #[test]
    fn next_index_in_range() {
        let mut g = GeneratorState::from_state(3);
        for bound in 1..50 {
            assert!(g.next_index(bound) < bound);
        }
    }
}
