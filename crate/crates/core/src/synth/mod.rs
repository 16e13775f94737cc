//! Synthetic event logs with a planted precursor rule.
//!
//! Every sparse relation `S_j` has a frequent precursor `F_{j mod F}`. Each
//! sparse event `S_j(a, b, t)` is preceded by `F_p(a, b, t − lag)` unless it is
//! drawn as noise. Frequent relations additionally carry uniform background
//! events so that they clear the high frequency threshold.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FrequencyThresholds;
use crate::kg::{deduplicate, write_quads, KgError, Quadruple, Vocab};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_frequent_rels: usize,
    pub n_sparse_rels: usize,
    pub horizon: u32,
    pub precursor_lag: u32,
    pub noise_rate: f64,
    pub seed: u64,
    /// History length the benchmark is meant for; the lag must fit inside it.
    pub ell: usize,
    pub events_per_sparse: usize,
    /// Expected background events per tick for each frequent relation.
    pub background_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 50,
            n_frequent_rels: 4,
            n_sparse_rels: 24,
            horizon: 360,
            precursor_lag: 3,
            noise_rate: 0.05,
            seed: 0,
            ell: 5,
            events_per_sparse: 60,
            background_rate: 0.25,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_entities < 2 {
            return fail("need at least two entities".into());
        }
        if self.n_frequent_rels == 0 {
            return fail("need at least one frequent relation".into());
        }
        if self.precursor_lag == 0 || self.precursor_lag as usize >= self.ell {
            return fail(format!("precursorLag {} must lie in [1, ell = {})", self.precursor_lag, self.ell));
        }
        if self.horizon <= self.precursor_lag {
            return fail("horizon must exceed precursorLag".into());
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return fail(format!("backgroundRate {} must be a finite non-negative number", self.background_rate));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return fail(format!("noiseRate {} outside [0, 1)", self.noise_rate));
        }
        Ok(())
    }

    /// Frequency band matching the calibrated rates: sparse relations hold
    /// about `events_per_sparse` events, frequent ones at least `horizon`.
    pub fn suggested_thresholds(&self) -> FrequencyThresholds {
        let low = (self.events_per_sparse / 2).max(1);
        let high = (self.events_per_sparse * 5 / 2).max(low + 1);
        FrequencyThresholds { low, high }
    }

    pub fn precursor_of(&self, sparse: usize) -> usize {
        sparse % self.n_frequent_rels
    }

    pub fn sparse_name(&self, j: usize) -> String {
        format!("S{j:03}")
    }

    pub fn frequent_name(&self, f: usize) -> String {
        format!("F{f:02}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlantedRule {
    pub sparse: String,
    pub precursor: String,
    pub lag: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundTruth {
    pub rule: String,
    pub spec: SynthSpec,
    pub rules: Vec<PlantedRule>,
    /// Sparse events emitted without a precursor.
    pub noise_events: usize,
}

pub struct SynthData {
    pub vocab: Vocab,
    /// Deduplicated, sorted events.
    pub quads: Vec<Quadruple>,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn write_events<W: Write>(&self, w: W) -> Result<(), SynthError> {
        Ok(write_quads(w, &self.quads, &self.vocab)?)
    }

    pub fn write_truth<W: Write>(&self, w: W) -> Result<(), SynthError> {
        serde_json::to_writer_pretty(w, &self.truth).map_err(|e| SynthError::Io(e.to_string()))
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut vocab = Vocab::new();
    let width = spec.n_entities.to_string().len();
    for e in 0..spec.n_entities {
        vocab.intern_entity(&format!("E{e:0width$}"));
    }
    for f in 0..spec.n_frequent_rels {
        vocab.intern_relation(&spec.frequent_name(f));
    }
    for j in 0..spec.n_sparse_rels {
        vocab.intern_relation(&spec.sparse_name(j));
    }
    // zero-padded so label order equals numeric order
    let tw = (spec.horizon - 1).to_string().len();
    for t in 0..spec.horizon {
        vocab.intern_time(&format!("{t:0tw$}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ne = spec.n_entities as u32;
    let pair = |rng: &mut ChaCha8Rng| {
        let a = rng.gen_range(0..ne);
        let b = (a + rng.gen_range(1..ne)) % ne;
        (a, b)
    };
    let mut quads = Vec::new();
    let mut noise_events = 0;
    for j in 0..spec.n_sparse_rels {
        let r = (spec.n_frequent_rels + j) as u32;
        let p = spec.precursor_of(j) as u32;
        for _ in 0..spec.events_per_sparse {
            let t = rng.gen_range(spec.precursor_lag..spec.horizon);
            let (a, b) = pair(&mut rng);
            quads.push(Quadruple::new(a, r, b, t));
            if rng.gen::<f64>() < spec.noise_rate {
                noise_events += 1;
            } else {
                quads.push(Quadruple::new(a, p, b, t - spec.precursor_lag));
            }
        }
    }
    for f in 0..spec.n_frequent_rels as u32 {
        for t in 0..spec.horizon {
            let whole = spec.background_rate.floor();
            let n = whole as usize + usize::from(rng.gen::<f64>() < spec.background_rate - whole);
            for _ in 0..n {
                let (a, b) = pair(&mut rng);
                quads.push(Quadruple::new(a, f, b, t));
            }
        }
    }
    let rules = (0..spec.n_sparse_rels)
        .map(|j| PlantedRule {
            sparse: spec.sparse_name(j),
            precursor: spec.frequent_name(spec.precursor_of(j)),
            lag: spec.precursor_lag,
        })
        .collect();
    Ok(SynthData {
        vocab,
        quads: deduplicate(&quads),
        truth: GroundTruth {
            rule: "sparse(a, b, t) is preceded by precursor(a, b, t - lag) unless emitted as noise".into(),
            spec: *spec,
            rules,
            noise_events,
        },
    })
}
