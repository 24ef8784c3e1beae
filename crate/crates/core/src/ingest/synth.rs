//! Planted-structure interaction logs.
//!
//! Every sender belongs to exactly one sender group and every receiver to
//! one receiver group. Group activity follows a smooth periodic signal with a
//! mild linear trend, and a group-to-group link matrix with random weights
//! decides which groups interact and how strongly. The presets link every
//! pair of groups. The expected intensity of a pair in a bin is therefore an
//! exact PARATUCK2 model, which is returned as ground truth.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{Aggregation, BinningConfig, BuiltTensor, EventRecord};
use crate::error::{Error, Result};
use crate::paratuck2::Paratuck2Model;
use crate::rng::{stream, SeedSplitter};
use crate::tensor::Matrix;

/// Built-in scenario presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Users watching movies: 100 x 125 entities, 25 bins, event counts.
    Vod,
    /// Token transfers between accounts: 100 x 200 entities, 50 bins,
    /// summed amounts.
    Contracts,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vod" => Ok(Self::Vod),
            "contracts" => Ok(Self::Contracts),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario {other:?} (expected vod or contracts)"
            ))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Vod => "vod",
            Self::Contracts => "contracts",
        })
    }
}

/// Shape and noise of a synthetic log.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub senders: usize,
    pub receivers: usize,
    pub sender_groups: usize,
    pub receiver_groups: usize,
    /// Receiver groups each sender group talks to.
    pub links_per_group: usize,
    pub binning: BinningConfig,
    /// Bins forming the training period.
    pub train_bins: usize,
    /// Standard deviation of the log-normal multiplier on every cell. In
    /// count mode a positive value also switches to Poisson sampling; zero
    /// reproduces the planted intensities exactly.
    pub noise: f64,
    /// Range of signal periods, in bins.
    pub period_range: (f64, f64),
    /// Prefixes of generated sender and receiver ids.
    pub id_prefixes: (String, String),
}

impl SynthConfig {
    pub fn preset(scenario: Scenario) -> Self {
        match scenario {
            // 10 April 2014 to 31 March 2015, training until mid November
            Scenario::Vod => Self {
                senders: 100,
                receivers: 125,
                sender_groups: 20,
                receiver_groups: 30,
                links_per_group: 30,
                binning: BinningConfig {
                    t_start: 1_397_088_000,
                    t_end: 1_427_760_000,
                    k_bins: 25,
                    aggregation: Aggregation::Count,
                    top_fraction: 1.0,
                },
                train_bins: 15,
                noise: 0.1,
                period_range: (5.0, 8.0),
                id_prefixes: ("user".into(), "movie".into()),
            },
            // 1 January 2016 to 1 July 2016, training on the first quarter
            Scenario::Contracts => Self {
                senders: 100,
                receivers: 200,
                sender_groups: 20,
                receiver_groups: 30,
                links_per_group: 30,
                binning: BinningConfig {
                    t_start: 1_451_606_400,
                    t_end: 1_467_331_200,
                    k_bins: 50,
                    aggregation: Aggregation::Sum,
                    top_fraction: 1.0,
                },
                train_bins: 25,
                noise: 0.1,
                period_range: (6.0, 12.0),
                id_prefixes: ("sender".into(), "contract".into()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.binning.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sender_groups == 0 || self.receiver_groups == 0 {
            return bad("group counts must be positive");
        }
        if self.senders < self.sender_groups || self.receivers < self.receiver_groups {
            return bad("every group needs at least one member");
        }
        if self.links_per_group == 0 || self.links_per_group > self.receiver_groups {
            return bad("links_per_group must lie in 1..=receiver_groups");
        }
        if self.train_bins == 0 || self.train_bins > self.binning.k_bins {
            return bad("train_bins must lie in 1..=k_bins");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and non-negative");
        }
        let (lo, hi) = self.period_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("period_range must be positive and ordered");
        }
        if ((self.binning.t_end - self.binning.t_start) as u128) < self.binning.k_bins as u128 {
            return bad("window too short for the requested bins");
        }
        Ok(())
    }
}

/// A generated log with the model that produced it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub events: Vec<EventRecord>,
    /// Planted intensities; row `i` of `A` belongs to `source_ids[i]` and
    /// row `j` of `B` to `target_ids[j]`.
    pub truth: Paratuck2Model,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub binning: BinningConfig,
    pub train_bins: usize,
}

impl SynthData {
    /// The planted model with rows reordered to match a tensor built from
    /// this log. Entities missing from `built` are dropped.
    pub fn truth_for(&self, built: &BuiltTensor) -> Result<Paratuck2Model> {
        let pick = |ids: &[String], wanted: &[String], m: &Matrix| -> Result<Matrix> {
            let pos: std::collections::HashMap<&str, usize> = ids
                .iter()
                .enumerate()
                .map(|(n, id)| (id.as_str(), n))
                .collect();
            let rows: Vec<usize> = wanted
                .iter()
                .map(|id| {
                    pos.get(id.as_str()).copied().ok_or_else(|| {
                        Error::InvalidConfig(format!("entity {id:?} is not part of this log"))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(m.select(ndarray::Axis(0), &rows))
        };
        Paratuck2Model::new(
            pick(&self.source_ids, &built.sources, &self.truth.a)?,
            self.truth.h.clone(),
            pick(&self.target_ids, &built.targets, &self.truth.b)?,
            self.truth.da.clone(),
            self.truth.db.clone(),
        )
    }
}

/// Generates the preset log for `scenario`.
pub fn synth_interactions(scenario: Scenario, seed: u64) -> SynthData {
    synth_with(&SynthConfig::preset(scenario), seed).expect("presets are valid")
}

fn signal(rng: &mut ChaCha8Rng, k_bins: usize, periods: (f64, f64), integer: bool) -> Vec<f64> {
    let base = if integer {
        rng.random_range(0.8..1.8)
    } else {
        rng.random_range(1.0..2.0)
    };
    let amp = rng.random_range(0.3..0.7);
    let period = if periods.1 > periods.0 {
        rng.random_range(periods.0..periods.1)
    } else {
        periods.0
    };
    let phase = rng.random_range(0.0..2.0 * PI);
    let trend = rng.random_range(-0.15..0.15);
    let last = (k_bins.max(2) - 1) as f64;
    (0..k_bins)
        .map(|k| {
            let k = k as f64;
            let v = base
                * (1.0 + amp * (2.0 * PI * k / period + phase).sin())
                * (1.0 + trend * k / last);
            if integer {
                v.round().max(0.0)
            } else {
                v
            }
        })
        .collect()
}

/// Balanced random assignment of `n` members to `groups` groups.
fn memberships(rng: &mut ChaCha8Rng, n: usize, groups: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![0; n];
    for (pos, member) in order.into_iter().enumerate() {
        out[member] = pos % groups;
    }
    out
}

/// Generates a log from an explicit configuration.
pub fn synth_with(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = SeedSplitter::new(seed).rng(stream::SYNTH);
    let (i_n, j_n, k_n) = (cfg.senders, cfg.receivers, cfg.binning.k_bins);
    let (p_n, q_n) = (cfg.sender_groups, cfg.receiver_groups);
    let counting = cfg.binning.aggregation == Aggregation::Count;
    let weight = |rng: &mut ChaCha8Rng| {
        if counting {
            1.0
        } else {
            rng.random_range(0.5..1.5)
        }
    };

    let sender_group = memberships(&mut rng, i_n, p_n);
    let receiver_group = memberships(&mut rng, j_n, q_n);
    let mut a = Matrix::zeros((i_n, p_n));
    for (i, &g) in sender_group.iter().enumerate() {
        a[[i, g]] = weight(&mut rng);
    }
    let mut b = Matrix::zeros((j_n, q_n));
    for (j, &g) in receiver_group.iter().enumerate() {
        b[[j, g]] = weight(&mut rng);
    }

    let mut h = Matrix::zeros((p_n, q_n));
    let mut receivers: Vec<usize> = (0..q_n).collect();
    for p in 0..p_n {
        receivers.shuffle(&mut rng);
        for &q in &receivers[..cfg.links_per_group] {
            h[[p, q]] = weight(&mut rng);
        }
    }
    for q in 0..q_n {
        if h.column(q).iter().all(|v| *v == 0.0) {
            let p = rng.random_range(0..p_n);
            h[[p, q]] = weight(&mut rng);
        }
    }

    let mut da = Matrix::zeros((k_n, p_n));
    for p in 0..p_n {
        for (k, v) in signal(&mut rng, k_n, cfg.period_range, counting)
            .into_iter()
            .enumerate()
        {
            da[[k, p]] = v;
        }
    }
    let mut db = Matrix::zeros((k_n, q_n));
    for q in 0..q_n {
        for (k, v) in signal(&mut rng, k_n, cfg.period_range, counting)
            .into_iter()
            .enumerate()
        {
            db[[k, q]] = v;
        }
    }
    let truth = Paratuck2Model::new(a, h, b, da, db)?;

    let source_ids: Vec<String> = (0..i_n)
        .map(|i| format!("{}{i:03}", cfg.id_prefixes.0))
        .collect();
    let target_ids: Vec<String> = (0..j_n)
        .map(|j| format!("{}{j:03}", cfg.id_prefixes.1))
        .collect();
    let mut members_of = vec![Vec::new(); q_n];
    for (j, &g) in receiver_group.iter().enumerate() {
        members_of[g].push(j);
    }

    let mut events = Vec::new();
    for k in 0..k_n {
        let lo = cfg.binning.bin_start(k);
        let hi = cfg.binning.bin_start(k + 1);
        for i in 0..i_n {
            let p = sender_group[i];
            for q in 0..q_n {
                let link = truth.h[[p, q]];
                if link == 0.0 {
                    continue;
                }
                for &j in &members_of[q] {
                    let lambda = truth.a[[i, p]]
                        * truth.da[[k, p]]
                        * link
                        * truth.db[[k, q]]
                        * truth.b[[j, q]];
                    if lambda <= 0.0 {
                        continue;
                    }
                    let mult = if cfg.noise > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (cfg.noise * z - 0.5 * cfg.noise * cfg.noise).exp()
                    } else {
                        1.0
                    };
                    let mut emit = |value: f64, rng: &mut ChaCha8Rng| {
                        events.push(EventRecord {
                            source: source_ids[i].clone(),
                            target: target_ids[j].clone(),
                            timestamp: rng.random_range(lo..hi),
                            value,
                        })
                    };
                    if counting {
                        let n = if cfg.noise > 0.0 {
                            Poisson::new(lambda * mult)
                                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                                .sample(&mut rng) as u64
                        } else {
                            lambda.round() as u64
                        };
                        for _ in 0..n {
                            emit(1.0, &mut rng);
                        }
                    } else {
                        emit(lambda * mult, &mut rng);
                    }
                }
            }
        }
    }
    events.sort_by(|x, y| {
        x.timestamp
            .cmp(&y.timestamp)
            .then_with(|| x.source.cmp(&y.source))
            .then_with(|| x.target.cmp(&y.target))
            .then_with(|| x.value.total_cmp(&y.value))
    });

    Ok(SynthData {
        events,
        truth,
        source_ids,
        target_ids,
        binning: cfg.binning.clone(),
        train_bins: cfg.train_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_roundtrip() {
        for s in [Scenario::Vod, Scenario::Contracts] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("movies".parse::<Scenario>().is_err());
    }

    #[test]
    fn presets_are_valid() {
        SynthConfig::preset(Scenario::Vod).validate().unwrap();
        SynthConfig::preset(Scenario::Contracts).validate().unwrap();
    }

    #[test]
    fn every_group_is_used() {
        let mut rng = SeedSplitter::new(3).rng(0);
        let m = memberships(&mut rng, 7, 3);
        for g in 0..3 {
            assert!(m.contains(&g));
        }
    }
}
