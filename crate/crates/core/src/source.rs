//! Sample pipeline: raw stream, then fault layer, then fix window, then map.

use serde::{Deserialize, Serialize};

use crate::rng::{FaultModel, GeneratorState, UnitSample};
use crate::transforms::{FixWindow, MeasurePreservingMap, TransformError};

/// How draws are shaped before a consumer sees them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub fault: FaultModel,
    pub fix: Option<FixWindow>,
    pub map: Option<MeasurePreservingMap>,
}

impl PipelineSpec {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: FaultModel) -> Self {
        Self {
            fault,
            ..Self::default()
        }
    }
}

/// Anything the clocks can tick from.
pub trait DrawSource {
    fn next_sample(&mut self) -> Result<UnitSample, TransformError>;
    /// Raw generator draws consumed so far.
    fn raw_draws(&self) -> u64;
}

/// A stream plus its shaping, with candidate accounting.
#[derive(Debug, Clone)]
pub struct SampleSource<'a> {
    spec: &'a PipelineSpec,
    state: GeneratorState,
    candidates: u64,
    emitted: u64,
}

impl<'a> SampleSource<'a> {
    pub fn new(spec: &'a PipelineSpec, state: GeneratorState) -> Self {
        Self {
            spec,
            state,
            candidates: 0,
            emitted: 0,
        }
    }

    pub fn draw(&mut self) -> Result<UnitSample, TransformError> {
        let x = match &self.spec.fix {
            None => self.faulted(),
            Some(window) => loop {
                let x = self.faulted();
                if let Some(y) = window.accept(x) {
                    break y;
                }
            },
        };
        self.emitted += 1;
        match &self.spec.map {
            None => Ok(x),
            Some(map) => map.apply(x),
        }
    }

    fn faulted(&mut self) -> UnitSample {
        let d = self.spec.fault.draw(&mut self.state);
        self.candidates += d.rejected + 1;
        d.sample
    }

    pub fn state(&self) -> GeneratorState {
        self.state
    }

    /// Raw generator draws consumed so far, auxiliary draws included.
    pub fn raw_draws(&self) -> u64 {
        self.state.draw_count
    }

    /// Primary candidates drawn (excludes auxiliary thinning draws).
    pub fn candidates(&self) -> u64 {
        self.candidates
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Fraction of primary candidates that did not become output.
    pub fn discard_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            1.0 - self.emitted as f64 / self.candidates as f64
        }
    }
}

impl DrawSource for SampleSource<'_> {
    fn next_sample(&mut self) -> Result<UnitSample, TransformError> {
        self.draw()
    }

    fn raw_draws(&self) -> u64 {
        self.state.draw_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Seed, StreamId};

    #[test]
    fn ideal_pipeline_is_the_raw_stream() {
        let spec = PipelineSpec::ideal();
        let s = substream(Seed(3), StreamId(0));
        let mut src = SampleSource::new(&spec, s);
        let mut raw = s;
        for _ in 0..100 {
            assert_eq!(src.draw().unwrap(), raw.next_unit());
        }
        assert_eq!(src.raw_draws(), 100);
        assert_eq!(src.discard_rate(), 0.0);
    }

    #[test]
    fn window_and_thinning_share_discard_accounting() {
        let spec = PipelineSpec {
            fault: FaultModel::LowThinning { c: 0.5, q: 1.0 },
            fix: Some(FixWindow::new(0.5, 1.0).unwrap()),
            map: None,
        };
        let mut src = SampleSource::new(&spec, substream(Seed(3), StreamId(0)));
        for _ in 0..20_000 {
            src.draw().unwrap();
        }
        let rate = src.discard_rate();
        let se = (0.25 / src.candidates() as f64).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * se, "{rate}");
        assert!(src.raw_draws() > src.candidates());
    }

    #[test]
    fn map_is_applied_last() {
        let spec = PipelineSpec {
            fault: FaultModel::Ideal,
            fix: Some(FixWindow::new(0.0, 0.5).unwrap()),
            map: Some(MeasurePreservingMap::Reflect),
        };
        let s = substream(Seed(8), StreamId(0));
        let mut src = SampleSource::new(&spec, s);
        let mut raw = s;
        let y = src.draw().unwrap().value();
        let x = loop {
            let x = raw.next_unit().value();
            if x < 0.5 {
                break x;
            }
        };
        assert_eq!(y, 1.0 - x / 0.5);
    }
}
