use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Graph, GraphError};
use crate::seeded_rng;

/// Share of the shadow set used to train attack models.
pub const ATTACK_TRAIN_FRACTION: f64 = 0.7;

/// Target/shadow partition plus the attacker's train/test split of the shadow side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target: Vec<usize>,
    pub shadow: Vec<usize>,
    pub attack_train: Vec<usize>,
    pub attack_test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Membership mask over all nodes for the shadow set.
    pub fn shadow_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &v in &self.shadow {
            mask[v] = true;
        }
        mask
    }
}

/// Random target/shadow split with `floor(target_fraction * n)` target nodes,
/// at least `min_per_category` of each label among them.
pub fn split_target_shadow(
    g: &Graph,
    target_fraction: f64,
    min_per_category: usize,
    seed: u64,
) -> Result<SplitSpec, GraphError> {
    let n = g.num_nodes();
    if !(0.0..=1.0).contains(&target_fraction) {
        return Err(GraphError::InvalidSpec(format!("target fraction {target_fraction}")));
    }
    let target_size = (target_fraction * n as f64).floor() as usize;
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (v, &l) in g.labels().iter().enumerate() {
        by_class[l].push(v);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < min_per_category {
            return Err(GraphError::InfeasibleSplit(format!(
                "category {c} has {} nodes, need {min_per_category}",
                members.len()
            )));
        }
    }
    if min_per_category * g.num_classes() > target_size {
        return Err(GraphError::InfeasibleSplit(format!(
            "{} categories x {min_per_category} exceeds target size {target_size}",
            g.num_classes()
        )));
    }

    let mut rng = seeded_rng(seed, 0x511);
    let mut in_target = vec![false; n];
    let mut pool = Vec::with_capacity(n);
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &v in &members[..min_per_category] {
            in_target[v] = true;
        }
        pool.extend_from_slice(&members[min_per_category..]);
    }
    pool.sort_unstable();
    pool.shuffle(&mut rng);
    for &v in &pool[..target_size - min_per_category * g.num_classes()] {
        in_target[v] = true;
    }

    let target: Vec<usize> = (0..n).filter(|&v| in_target[v]).collect();
    let shadow: Vec<usize> = (0..n).filter(|&v| !in_target[v]).collect();
    let mut order = shadow.clone();
    order.shuffle(&mut rng);
    let n_train = (ATTACK_TRAIN_FRACTION * shadow.len() as f64).floor() as usize;
    let mut attack_train = order[..n_train].to_vec();
    let mut attack_test = order[n_train..].to_vec();
    attack_train.sort_unstable();
    attack_test.sort_unstable();
    Ok(SplitSpec {
        target,
        shadow,
        attack_train,
        attack_test,
        seed,
    })
}

/// Number of labeled nodes per category, or every target node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KSpec {
    Count(usize),
    Full,
}

impl fmt::Display for KSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KSpec::Count(k) => write!(f, "{k}"),
            KSpec::Full => f.write_str("full"),
        }
    }
}

impl Serialize for KSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KSpec::Count(k) => s.serialize_u64(*k as u64),
            KSpec::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for KSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("k must be at least 1")),
            Raw::Num(k) => Ok(KSpec::Count(k)),
            Raw::Text(t) if t.eq_ignore_ascii_case("full") => Ok(KSpec::Full),
            Raw::Text(t) => t
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .map(KSpec::Count)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid k {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KShot {
    pub k: KSpec,
    pub labeled: Vec<usize>,
}

/// Draws exactly `k` target nodes per category without replacement.
pub fn sample_k_shot(g: &Graph, split: &SplitSpec, k: KSpec, seed: u64) -> Result<KShot, GraphError> {
    let k_count = match k {
        KSpec::Full => {
            return Ok(KShot {
                k,
                labeled: split.target.clone(),
            })
        }
        KSpec::Count(0) => return Err(GraphError::InvalidSpec("k must be at least 1".into())),
        KSpec::Count(k) => k,
    };
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for &v in &split.target {
        by_class[g.labels()[v]].push(v);
    }
    let mut rng = seeded_rng(seed, 0x4b);
    let mut labeled = Vec::with_capacity(k_count * g.num_classes());
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < k_count {
            return Err(GraphError::InsufficientNodes {
                category: c,
                available: members.len(),
                needed: k_count,
            });
        }
        members.shuffle(&mut rng);
        labeled.extend_from_slice(&members[..k_count]);
    }
    labeled.sort_unstable();
    Ok(KShot { k, labeled })
}
