//! Channel-partition strategies for grouped multi-channel coding.
//!
//! The random sampler draws a group size from a clipped-ceil exponential
//! (rate 3, clipped to 1..=5), picks a pivot uniformly from the remaining
//! pool, then fills the group by sampling distinct neighbours without
//! replacement with probability proportional to exp(-d/tau), where d is the
//! chord distance between unit-sphere electrode positions. Channels without
//! positions are collected into trailing groups in recording order. Manual
//! layouts reproduce the fixed epilepsy / abnormal-task tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::data_io::ChannelMeta;
use crate::error::{Error, Result};

pub const MAX_GROUP_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Random { seed: u64 },
    Manual { task: String },
}

/// An ordered partition of channel names into groups of size 1..=5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub groups: Vec<Vec<String>>,
    pub provenance: Provenance,
}

impl GroupLayout {
    /// Disjointness, cover of `channels`, and the 1..=5 size bound.
    pub fn validate_partition(&self, channels: &[String]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for group in &self.groups {
            if group.is_empty() || group.len() > MAX_GROUP_SIZE {
                return Err(Error::Config(format!(
                    "group size {} outside 1..={MAX_GROUP_SIZE}",
                    group.len()
                )));
            }
            for name in group {
                if !seen.insert(name.clone()) {
                    return Err(Error::Config(format!("channel {name:?} appears twice")));
                }
            }
        }
        let want: std::collections::HashSet<_> = channels.iter().cloned().collect();
        if seen != want {
            return Err(Error::Config("layout does not cover the channel set".into()));
        }
        Ok(())
    }

    /// One group per line, comma-separated names.
    pub fn to_text(&self) -> String {
        self.groups
            .iter()
            .map(|g| g.join(","))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_text(text: &str, provenance: Provenance) -> Self {
        let groups = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect();
        GroupLayout { groups, provenance }
    }
}

#[derive(Debug, Clone)]
pub struct SamplerParams {
    /// Rate of the exponential group-size draw.
    pub lambda: f64,
    /// Softmax temperature on chord distances.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams { lambda: 3.0, tau: 1.0, seed: 0 }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "lambda and tau must be positive, got {} / {}",
                self.lambda, self.tau
            )));
        }
        Ok(())
    }
}

/// `min(5, max(1, ceil(X)))` with `X ~ Exp(lambda)`, then clamped to the
/// remaining pool size.
pub fn sample_group_size(params: &SamplerParams, remaining: usize, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(remaining >= 1);
    let exp = Exp::new(params.lambda).expect("lambda > 0");
    let x: f64 = exp.sample(rng);
    let s = (x.ceil() as usize).clamp(1, MAX_GROUP_SIZE);
    s.min(remaining)
}

pub fn chord_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Softmax over negative chord distance to the pivot: nearer channels get
/// higher probability; equal distances get equal probability.
pub fn neighbor_distribution(
    pivot: [f64; 3],
    candidates: &[(String, [f64; 3])],
    tau: f64,
) -> Vec<(String, f64)> {
    let weights: Vec<f64> = candidates
        .iter()
        .map(|(_, pos)| (-chord_distance(pivot, *pos) / tau).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    candidates
        .iter()
        .zip(&weights)
        .map(|((name, _), w)| (name.clone(), w / z))
        .collect()
}

/// Appendix-style random layout: positioned channels are grouped by the
/// pivot/neighbour procedure; positionless channels form trailing groups of
/// at most 5 in recording order.
pub fn sample_random_layout(channels: &[ChannelMeta], params: &SamplerParams) -> Result<GroupLayout> {
    params.validate()?;
    if channels.is_empty() {
        return Err(Error::Config("no channels to group".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    sample_random_layout_with(channels, params, &mut rng)
}

/// Same as [`sample_random_layout`] but drawing from a caller-owned stream
/// (training resamples layouts every step from one RNG).
pub fn sample_random_layout_with(
    channels: &[ChannelMeta],
    params: &SamplerParams,
    rng: &mut ChaCha8Rng,
) -> Result<GroupLayout> {
    params.validate()?;
    let mut pool: Vec<(String, [f64; 3])> = channels
        .iter()
        .filter_map(|c| c.position.map(|p| (c.name.clone(), p)))
        .collect();
    let mut groups: Vec<Vec<String>> = Vec::new();
    while !pool.is_empty() {
        let s = sample_group_size(params, pool.len(), rng);
        let pivot_idx = rng.gen_range(0..pool.len());
        let (pivot_name, pivot_pos) = pool.swap_remove(pivot_idx);
        let mut group = vec![pivot_name];
        // without-replacement sampling with sequential renormalization
        for _ in 1..s {
            let probs = neighbor_distribution(pivot_pos, &pool, params.tau);
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut pick = pool.len() - 1;
            for (i, (_, p)) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let (name, _) = pool.remove(pick);
            group.push(name);
        }
        groups.push(group);
    }
    // positionless channels in recording order, chunks of at most 5
    let orphans: Vec<String> = channels
        .iter()
        .filter(|c| c.position.is_none())
        .map(|c| c.name.clone())
        .collect();
    for chunk in orphans.chunks(MAX_GROUP_SIZE) {
        groups.push(chunk.to_vec());
    }
    let layout = GroupLayout {
        groups,
        provenance: Provenance::Random { seed: params.seed },
    };
    let names: Vec<String> = channels.iter().map(|c| c.name.clone()).collect();
    layout.validate_partition(&names)?;
    Ok(layout)
}

/// The fixed published layouts: 5 groups for the epilepsy task, 10 for the
/// abnormal (TUAB) task.
pub fn manual_layout(task: &str) -> Result<GroupLayout> {
    let groups: Vec<Vec<&str>> = match task {
        "epilepsy" => vec![
            vec!["F3", "F4", "F7", "F8"],
            vec!["FP1", "FP2", "P3", "P4"],
            vec!["T3", "T4", "T5", "T6"],
            vec!["C3", "C4", "CZ"],
            vec!["O1", "O2"],
        ],
        "tuab" | "abnormal" => vec![
            vec!["EEG 26-REF", "EEG 27-REF", "EEG 28-REF", "EEG 29-REF"],
            vec!["EEG 30-REF", "EEG 31-REF", "EEG 32-REF"],
            vec!["EEG C3-REF", "EEG C3P-REF", "EEG C4-REF", "EEG C4P-REF", "EEG CZ-REF"],
            vec!["EEG FP1-REF", "EEG F3-REF", "EEG F7-REF", "EEG FZ-REF"],
            vec!["EEG F4-REF", "EEG FP2-REF", "EEG F8-REF"],
            vec!["EEG T1-REF", "EEG T2-REF", "EEG T3-REF", "EEG T4-REF", "EEG T5-REF"],
            vec!["EEG O1-REF", "EEG O2-REF", "EEG OZ-REF", "EEG T6-REF"],
            vec!["EEG P3-REF", "EEG P4-REF", "EEG PG1-REF", "EEG PG2-REF", "EEG PZ-REF"],
            vec!["EEG EKG1-REF", "EEG LOC-REF", "EEG ROC-REF"],
            vec!["EEG A1-REF", "EEG A2-REF", "EEG SP1-REF", "EEG SP2-REF"],
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown manual-layout task {other:?} (expected epilepsy | tuab)"
            )))
        }
    };
    Ok(GroupLayout {
        groups: groups
            .into_iter()
            .map(|g| g.into_iter().map(String::from).collect())
            .collect(),
        provenance: Provenance::Manual { task: task.to_string() },
    })
}

/// Restrict a layout to the channels actually present in a recording,
/// dropping groups that become empty.
pub fn restrict_layout(layout: &GroupLayout, present: &[String]) -> GroupLayout {
    let set: std::collections::HashSet<&String> = present.iter().collect();
    let groups: Vec<Vec<String>> = layout
        .groups
        .iter()
        .map(|g| g.iter().filter(|n| set.contains(n)).cloned().collect())
        .filter(|g: &Vec<String>| !g.is_empty())
        .collect();
    GroupLayout {
        groups,
        provenance: layout.provenance.clone(),
    }
}
