//! Training objective: identity and action cross-entropy, batch-hard triplet,
//! biometrics/non-biometrics orthogonality, their weighted sum, and the PK
//! batch sampler that makes in-batch triplet mining possible.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{log_sum_exp, Graph, Var};
use crate::disenq::Linear;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Training-only linear heads: identity logits from `F_b`, action logits from
/// `F_m`. Retrieval never uses them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub identity: Linear,
    pub action: Linear,
    pub num_identities: usize,
    pub num_actions: usize,
}

impl ClassifierHead {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, num_identities: usize, num_actions: usize, rng: &mut R) -> Self {
        Self {
            identity: Linear::new(store, "head.identity", dim, num_identities, rng),
            action: Linear::new(store, "head.action", dim, num_actions, rng),
            num_identities,
            num_actions,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthogonalityMode {
    /// Mean absolute cosine between paired rows.
    Cosine,
    /// Mean absolute raw inner product between paired rows.
    InnerProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub identity: f64,
    pub triplet: f64,
    pub orthogonality: f64,
    pub action: f64,
    pub margin: f64,
    pub orthogonality_mode: OrthogonalityMode,
    /// Weight of the pairwise verification loss that trains the similarity
    /// weigher; 0 disables it.
    pub verification: f64,
    pub verification_temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            identity: 0.01,
            triplet: 0.01,
            orthogonality: 0.01,
            action: 0.01,
            margin: 0.3,
            orthogonality_mode: OrthogonalityMode::Cosine,
            verification: 0.01,
            verification_temperature: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("identity", self.identity),
            ("triplet", self.triplet),
            ("orthogonality", self.orthogonality),
            ("action", self.action),
            ("margin", self.margin),
            ("verification", self.verification),
            ("verification_temperature", self.verification_temperature),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], num_classes: usize, what: &str) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::LabelOutOfRange(format!("{what} label {bad} with {num_classes} classes")));
    }
    Ok(())
}

/// Mean `-log softmax(logits_i)[y_i]` over the batch rows.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = g.shape(logits);
    if rows != labels.len() {
        return Err(Error::InvalidBatch(format!("{rows} logit rows for {} labels", labels.len())));
    }
    check_labels(labels, classes, "cross-entropy")?;
    Ok(g.cross_entropy(logits, labels.to_vec()))
}

/// Single-example cross-entropy on plain values.
pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    check_labels(&[label], logits.len(), "cross-entropy")?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// Numerical floor inside the distance square root; keeps the gradient finite
/// for coincident features.
pub const DISTANCE_EPS: f64 = 1e-12;

/// Anchor, hardest-positive and hardest-negative indices for batch-hard mining
/// on a distance matrix.
pub fn hardest_pairs(dist: &crate::tensor::Mat, labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let mut pos = None::<(usize, f64)>;
            let mut neg = None::<(usize, f64)>;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = dist.get(a, j);
                if labels[j] == labels[a] {
                    if pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((j, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((j, d));
                }
            }
            (a, pos.expect("checked").0, neg.expect("checked").0)
        })
        .collect()
}

fn check_triplet_batch(labels: &[usize]) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &y in labels {
        *counts.entry(y).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::InvalidBatch(format!("triplet loss needs >= 2 identities, batch has {}", counts.len())));
    }
    if let Some((y, c)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::InvalidBatch(format!("identity {y} has {c} sample(s) in the batch; triplet loss needs >= 2")));
    }
    Ok(())
}

/// Batch-hard triplet loss: for each anchor, the farthest same-label row and
/// the nearest other-label row (Euclidean), hinge with margin, averaged.
pub fn triplet_loss(g: &mut Graph, features: Var, labels: &[usize], margin: f64) -> Result<Var> {
    if g.shape(features).0 != labels.len() {
        return Err(Error::InvalidBatch("feature rows and labels differ in length".into()));
    }
    check_triplet_batch(labels)?;
    let sq = g.pair_sq_dist(features);
    let dist = g.sqrt_eps(sq, DISTANCE_EPS);
    let triples = hardest_pairs(g.value(dist), labels);
    let pos = g.gather(dist, triples.iter().map(|&(a, p, _)| (a, p)).collect());
    let neg = g.gather(dist, triples.iter().map(|&(a, _, n)| (a, n)).collect());
    let gap = g.sub(pos, neg);
    let gap = g.offset(gap, margin);
    let hinge = g.relu(gap);
    Ok(g.mean_all(hinge))
}

/// Mean over paired rows of `|cos|` (or `|⟨·,·⟩|` in inner-product mode).
pub fn orthogonality_loss(g: &mut Graph, biometrics: Var, non_biometrics: Var, mode: OrthogonalityMode) -> Result<Var> {
    if g.shape(biometrics) != g.shape(non_biometrics) {
        return Err(Error::InvalidBatch("orthogonality loss needs matching shapes".into()));
    }
    let per_row = match mode {
        OrthogonalityMode::Cosine => g.cosine_rows(biometrics, non_biometrics),
        OrthogonalityMode::InnerProduct => {
            let p = g.mul(biometrics, non_biometrics);
            g.row_sum(p)
        }
    };
    let a = g.abs(per_row);
    Ok(g.mean_all(a))
}

/// Handles of the four objective terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub identity: Var,
    pub triplet: Var,
    pub orthogonality: Var,
    pub action: Var,
}

/// Plain values of the four objective terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub identity: f64,
    pub triplet: f64,
    pub orthogonality: f64,
    pub action: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossComponents {
        LossComponents {
            identity: g.value(self.identity).item(),
            triplet: g.value(self.triplet).item(),
            orthogonality: g.value(self.orthogonality).item(),
            action: g.value(self.action).item(),
        }
    }
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [("identity", self.identity), ("triplet", self.triplet), ("orthogonality", self.orthogonality), ("action", self.action)]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.named().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(name.into())),
            None => Ok(()),
        }
    }

    pub fn weighted(&self, w: &LossWeights) -> Result<f64> {
        self.check_finite()?;
        Ok(w.identity * self.identity + w.triplet * self.triplet + w.orthogonality * self.orthogonality + w.action * self.action)
    }
}

/// `λ1·L_id + λ2·L_tri + λ3·L_orth + λ4·L_act`. A non-finite term is reported
/// by name.
pub fn total_loss(g: &mut Graph, terms: LossTerms, weights: &LossWeights) -> Result<Var> {
    terms.values(g).check_finite()?;
    let parts =
        [(terms.identity, weights.identity), (terms.triplet, weights.triplet), (terms.orthogonality, weights.orthogonality), (terms.action, weights.action)];
    let mut total = None;
    for (v, w) in parts {
        let s = g.scale(v, w);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s),
        });
    }
    Ok(total.expect("four terms"))
}

/// Draws `p` identities with at least `k` clips each and `k` clips of each.
/// `identities[i]` is the identity of candidate `i`; the returned indices point
/// into `identities`, grouped by identity.
pub fn pk_sample<R: Rng>(identities: &[usize], p: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p == 0 || k == 0 {
        return Err(Error::InvalidConfig("P and K must be >= 1".into()));
    }
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in identities.iter().enumerate() {
        by_id.entry(y).or_default().push(i);
    }
    let mut eligible: Vec<(usize, Vec<usize>)> = by_id.into_iter().filter(|(_, v)| v.len() >= k).collect();
    if eligible.len() < p {
        return Err(Error::InsufficientData(format!("PK sampling needs {p} identities with >= {k} clips, found {}", eligible.len())));
    }
    eligible.shuffle(rng);
    let mut batch = Vec::with_capacity(p * k);
    for (_, clips) in eligible.into_iter().take(p) {
        batch.extend(clips.choose_multiple(rng, k).copied());
    }
    Ok(batch)
}
