//! Retrieval: adaptive fusion of biometrics and motion cosine similarities,
//! gallery ranking and CMC/mAP scoring.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::disenq::{DisentangledFeatures, Linear, Stream};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{cosine, Mat};
use crate::world::{Dataset, Split};

pub const WEIGHER_HIDDEN: usize = 16;

/// `(sim_b, sim_m) → ReLU hidden layer → softmax → (α1, α2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeigher {
    pub hidden: Linear,
    pub out: Linear,
}

impl AdaptiveWeigher {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        Self { hidden: Linear::new(store, "weigher.hidden", 2, WEIGHER_HIDDEN, rng), out: Linear::new(store, "weigher.out", WEIGHER_HIDDEN, 2, rng) }
    }

    /// Graph forward over a `P × 2` matrix of similarity pairs; returns `P × 2`
    /// weights.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, sims: Var) -> Var {
        let h = self.hidden.forward(g, store, sims);
        let h = g.relu(h);
        let z = self.out.forward(g, store, h);
        g.softmax_rows(z)
    }

    /// Plain forward for one pair.
    pub fn alphas(&self, store: &ParamStore, sim_b: f64, sim_m: f64) -> [f64; 2] {
        let (w1, b1) = (store.value(self.hidden.w), store.value(self.hidden.b));
        let (w2, b2) = (store.value(self.out.w), store.value(self.out.b));
        let mut z = [b2.data[0], b2.data[1]];
        for j in 0..WEIGHER_HIDDEN {
            let h = (sim_b * w1.get(0, j) + sim_m * w1.get(1, j) + b1.data[j]).max(0.0);
            z[0] += h * w2.get(j, 0);
            z[1] += h * w2.get(j, 1);
        }
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }
}

/// How the two similarity terms are combined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Adaptive,
    Fixed { biometrics: f64, motion: f64 },
}

impl Fusion {
    pub const EQUAL: Fusion = Fusion::Fixed { biometrics: 0.5, motion: 0.5 };

    pub fn name(&self) -> String {
        match self {
            Fusion::Adaptive => "adaptive".into(),
            Fusion::Fixed { biometrics, motion } => format!("fixed({biometrics},{motion})"),
        }
    }
}

/// What a gallery ranking is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    Fused(Fusion),
    Single(Stream),
}

impl Scoring {
    pub fn name(&self) -> String {
        match self {
            Scoring::Fused(f) => format!("fused-{}", f.name()),
            Scoring::Single(s) => s.name().to_string(),
        }
    }
}

/// Adaptively fused biometrics/motion similarity, with its fusion weights.
pub fn fused_similarity(a: &DisentangledFeatures, b: &DisentangledFeatures, fusion: Fusion, store: &ParamStore, weigher: &AdaptiveWeigher) -> (f64, [f64; 2]) {
    let sb = cosine(&a.biometrics, &b.biometrics);
    let sm = cosine(&a.motion, &b.motion);
    let alpha = match fusion {
        Fusion::Adaptive => weigher.alphas(store, sb, sm),
        Fusion::Fixed { biometrics, motion } => [biometrics, motion],
    };
    (alpha[0] * sb + alpha[1] * sm, alpha)
}

pub fn pair_similarity(a: &DisentangledFeatures, b: &DisentangledFeatures, fusion: Fusion, store: &ParamStore, weigher: &AdaptiveWeigher) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("similarity input features".into()));
    }
    Ok(fused_similarity(a, b, fusion, store, weigher).0)
}

pub fn score(a: &DisentangledFeatures, b: &DisentangledFeatures, scoring: Scoring, store: &ParamStore, weigher: &AdaptiveWeigher) -> f64 {
    match scoring {
        Scoring::Fused(f) => fused_similarity(a, b, f, store, weigher).0,
        Scoring::Single(s) => cosine(a.get(s), b.get(s)),
    }
}

/// Candidate indices sorted by descending score, ties by ascending index.
pub fn rank_by_scores(scores: &[f64], candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.into_iter().collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Ranks `gallery` against `probe`. With `exclude_view`, gallery items sharing
/// the probe's view are dropped; `None` when nothing is left.
#[allow(clippy::too_many_arguments)]
pub fn rank_gallery(
    probe: &DisentangledFeatures,
    probe_view: usize,
    gallery: &[DisentangledFeatures],
    gallery_views: &[usize],
    scoring: Scoring,
    store: &ParamStore,
    weigher: &AdaptiveWeigher,
    exclude_view: bool,
) -> Option<Vec<usize>> {
    let scores: Vec<f64> = gallery.iter().map(|g| score(probe, g, scoring, store, weigher)).collect();
    let ranked = rank_by_scores(&scores, (0..gallery.len()).filter(|&j| !exclude_view || gallery_views[j] != probe_view));
    (!ranked.is_empty()).then_some(ranked)
}

pub const CMC_DEPTH: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe: usize,
    /// 1-based rank of the first correct gallery item.
    pub first_correct: usize,
    pub average_precision: f64,
    pub ranking: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcMap {
    /// `cmc[k-1]` is Rank-k accuracy, up to [`CMC_DEPTH`].
    pub cmc: Vec<f64>,
    pub map: f64,
    pub scored: Vec<ProbeOutcome>,
    /// Probes without any correct match in their ranking.
    pub num_unmatched: usize,
}

impl CmcMap {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k.clamp(1, CMC_DEPTH) - 1]
    }
}

/// Rank-k and mAP over ranked gallery lists. `rankings[p]` holds gallery
/// indices in rank order for probe `p`.
pub fn compute_cmc_map(rankings: &[Vec<usize>], probe_labels: &[usize], gallery_labels: &[usize]) -> Result<CmcMap> {
    if rankings.is_empty() {
        return Err(Error::Empty("no probes to score".into()));
    }
    if rankings.len() != probe_labels.len() {
        return Err(Error::InvalidBatch("one ranking per probe label required".into()));
    }
    let mut scored = Vec::new();
    let mut num_unmatched = 0;
    for (p, ranking) in rankings.iter().enumerate() {
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first = None;
        for (pos, &j) in ranking.iter().enumerate() {
            if gallery_labels[j] == probe_labels[p] {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
                first.get_or_insert(pos + 1);
            }
        }
        match first {
            None => num_unmatched += 1,
            Some(first_correct) => {
                scored.push(ProbeOutcome { probe: p, first_correct, average_precision: precision_sum / hits as f64, ranking: ranking.clone() })
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::InsufficientData("no probe has a correct gallery match".into()));
    }
    let n = scored.len() as f64;
    let cmc = (1..=CMC_DEPTH).map(|k| scored.iter().filter(|o| o.first_correct <= k).count() as f64 / n).collect();
    let map = scored.iter().map(|o| o.average_precision).sum::<f64>() / n;
    Ok(CmcMap { cmc, map, scored, num_unmatched })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerProbe {
    pub clip_id: String,
    pub identity: usize,
    pub first_correct: usize,
    pub average_precision: f64,
    /// Gallery clip ids in rank order.
    pub ranking: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

impl Summary {
    fn of(c: &CmcMap) -> Self {
        Self { rank1: c.rank(1), rank5: c.rank(5), rank10: c.rank(10), map: c.map }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub protocol: String,
    pub scoring: String,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub num_probes: usize,
    /// Probes dropped for an empty post-exclusion gallery or no correct match.
    pub num_skipped: usize,
    pub cmc: Vec<f64>,
    /// Scores of every stream alone and of the equal-weight fusion baseline.
    pub breakdown: Vec<(String, Summary)>,
    pub per_probe: Vec<PerProbe>,
}

/// Ranks every probe of `split` and scores the rankings. Also returns the
/// number of probes whose post-exclusion gallery was empty.
pub fn scores_for(
    split: &Split,
    dataset: &Dataset,
    features: &[DisentangledFeatures],
    scoring: Scoring,
    store: &ParamStore,
    weigher: &AdaptiveWeigher,
) -> Result<(CmcMap, usize)> {
    let gallery: Vec<DisentangledFeatures> = split.gallery.iter().map(|&i| features[i].clone()).collect();
    let gallery_views: Vec<usize> = split.gallery.iter().map(|&i| dataset.samples[i].view).collect();
    let gallery_labels: Vec<usize> = split.gallery.iter().map(|&i| dataset.samples[i].identity).collect();
    let exclude = split.protocol.excludes_same_view();
    let ranked: Vec<Option<Vec<usize>>> = split
        .probe
        .par_iter()
        .map(|&p| {
            let s = &dataset.samples[p];
            rank_gallery(&features[p], s.view, &gallery, &gallery_views, scoring, store, weigher, exclude)
        })
        .collect();
    let mut rankings = Vec::new();
    let mut labels = Vec::new();
    let mut probe_ids = Vec::new();
    let mut empty = 0;
    for (k, r) in ranked.into_iter().enumerate() {
        match r {
            Some(r) => {
                rankings.push(r);
                labels.push(dataset.samples[split.probe[k]].identity);
                probe_ids.push(k);
            }
            None => empty += 1,
        }
    }
    if rankings.is_empty() {
        return Err(Error::InsufficientData("every probe has an empty gallery after exclusion".into()));
    }
    let mut cmc = compute_cmc_map(&rankings, &labels, &gallery_labels)?;
    for o in &mut cmc.scored {
        o.probe = split.probe[probe_ids[o.probe]];
        o.ranking = o.ranking.iter().map(|&j| split.gallery[j]).collect();
    }
    Ok((cmc, empty))
}

/// Scores a split from precomputed features. The primary scoring fills the
/// headline fields; single-stream and equal-weight scorings fill `breakdown`.
pub fn report_from_features(
    split: &Split,
    dataset: &Dataset,
    features: &[DisentangledFeatures],
    fusion: Fusion,
    store: &ParamStore,
    weigher: &AdaptiveWeigher,
) -> Result<RetrievalReport> {
    if features.len() != dataset.samples.len() {
        return Err(Error::InvalidBatch("one feature triple per dataset sample required".into()));
    }
    let primary = Scoring::Fused(fusion);
    let (cmc, empty) = scores_for(split, dataset, features, primary, store, weigher)?;
    let mut breakdown = Vec::new();
    let mut extra = vec![Scoring::Fused(Fusion::EQUAL), Scoring::Fused(Fusion::Adaptive)];
    extra.extend(Stream::ALL.map(Scoring::Single));
    for s in extra.into_iter().filter(|&s| s != primary) {
        let (c, _) = scores_for(split, dataset, features, s, store, weigher)?;
        breakdown.push((s.name(), Summary::of(&c)));
    }
    let per_probe = cmc
        .scored
        .iter()
        .map(|o| PerProbe {
            clip_id: dataset.samples[o.probe].clip_id.clone(),
            identity: dataset.samples[o.probe].identity,
            first_correct: o.first_correct,
            average_precision: o.average_precision,
            ranking: o.ranking.iter().map(|&j| dataset.samples[j].clip_id.clone()).collect(),
        })
        .collect();
    let s = Summary::of(&cmc);
    Ok(RetrievalReport {
        protocol: split.protocol.name(),
        scoring: primary.name(),
        rank1: s.rank1,
        rank5: s.rank5,
        rank10: s.rank10,
        map: s.map,
        num_probes: split.probe.len(),
        num_skipped: empty + cmc.num_unmatched,
        cmc: cmc.cmc.clone(),
        breakdown,
        per_probe,
    })
}

/// Text-free evaluation of one protocol split.
pub fn evaluate_protocol(model: &crate::model::Model, dataset: &Dataset, split: &Split, fusion: Fusion) -> Result<RetrievalReport> {
    let features = model.infer_all(dataset)?;
    report_from_features(split, dataset, &features, fusion, &model.store, &model.weigher)
}

impl RetrievalReport {
    pub fn breakdown_rank1(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|(n, _)| n == name).map(|(_, s)| s.rank1)
    }
}

/// Pairwise verification loss that trains the weigher: binary cross-entropy
/// of `σ(τ·Sim)` against same-identity targets. `sims` are detached
/// `(sim_b, sim_m)` pairs, so the gradient reaches only the weigher.
///
/// Positive and negative pairs are averaged separately and the two means
/// weighted equally. A PK batch holds far more negatives than positives, and
/// an unweighted mean teaches the weigher to score every pair by its smaller
/// similarity, which discards biometric matches whenever motion disagrees.
pub fn verification_loss(g: &mut Graph, store: &ParamStore, weigher: &AdaptiveWeigher, sims: &[(f64, f64)], same: &[bool], temperature: f64) -> Result<Var> {
    if sims.is_empty() || sims.len() != same.len() {
        return Err(Error::InvalidBatch("verification loss needs one target per pair".into()));
    }
    let mut parts = Vec::new();
    for target in [true, false] {
        let rows: Vec<f64> = sims.iter().zip(same).filter(|(_, &s)| s == target).flat_map(|(&(b, m), _)| [b, m]).collect();
        if rows.is_empty() {
            continue;
        }
        let x = g.input(Mat::from_vec(rows.len() / 2, 2, rows));
        let alpha = weigher.forward(g, store, x);
        let weighted = g.mul(alpha, x);
        let fused = g.row_sum(weighted);
        let logits = g.scale(fused, temperature);
        let n = g.value(logits).rows;
        parts.push(g.bce_with_logits(logits, vec![if target { 1.0 } else { 0.0 }; n]));
    }
    let total = parts.iter().skip(1).fold(parts[0], |acc, &p| g.add(acc, p));
    Ok(g.scale(total, 1.0 / parts.len() as f64))
}

/// All unordered within-batch pairs with their detached similarities.
pub fn batch_pairs(features: &[DisentangledFeatures], labels: &[usize]) -> (Vec<(f64, f64)>, Vec<bool>) {
    let mut sims = Vec::new();
    let mut same = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            sims.push((cosine(&features[i].biometrics, &features[j].biometrics), cosine(&features[i].motion, &features[j].motion)));
            same.push(labels[i] == labels[j]);
        }
    }
    (sims, same)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_grad, relative_error};
    use crate::params::GradBuffer;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weigher(seed: u64) -> (ParamStore, AdaptiveWeigher) {
        let mut store = ParamStore::default();
        let w = AdaptiveWeigher::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        (store, w)
    }

    fn feats(b: Vec<f64>, m: Vec<f64>) -> DisentangledFeatures {
        let nb = vec![0.0; b.len()];
        DisentangledFeatures { biometrics: b, motion: m, non_biometrics: nb }
    }

    fn random_feats(rng: &mut ChaCha8Rng, d: usize) -> DisentangledFeatures {
        let v = |rng: &mut ChaCha8Rng| Mat::randn(1, d, 1.0, rng).data;
        DisentangledFeatures { biometrics: v(rng), motion: v(rng), non_biometrics: v(rng) }
    }

    #[test]
    fn pair_similarity_examples() {
        let (store, w) = weigher(0);
        let a = feats(vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!((pair_similarity(&a, &a, Fusion::Adaptive, &store, &w).unwrap() - 1.0).abs() < 1e-12);
        // cos_b = 0.8, cos_m = 0.6 with unit vectors
        let b = feats(vec![0.8, 0.6], vec![0.8, 0.6]);
        let got = pair_similarity(&a, &b, Fusion::EQUAL, &store, &w).unwrap();
        assert!((got - 0.7).abs() < 1e-12);
        // equal similarities: any convex weights give the same value
        let c = feats(vec![0.6, 0.8], vec![0.8, 0.6]);
        let d = feats(vec![0.0, 1.0], vec![1.0, 0.0]);
        let got = pair_similarity(&c, &d, Fusion::Adaptive, &store, &w).unwrap();
        assert!((got - 0.8).abs() < 1e-12);
        let zero = feats(vec![0.0, 0.0], vec![0.0, 1.0]);
        let got = pair_similarity(&zero, &a, Fusion::EQUAL, &store, &w).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
        let bad = feats(vec![f64::NAN, 0.0], vec![0.0, 1.0]);
        assert!(pair_similarity(&bad, &a, Fusion::EQUAL, &store, &w).is_err());
    }

    #[test]
    fn weigher_graph_matches_plain_forward() {
        let (store, w) = weigher(3);
        let pairs = [(0.3, -0.2), (0.9, 0.95), (-1.0, 1.0)];
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(3, 2, pairs.iter().flat_map(|&(a, b)| [a, b]).collect()));
        let alpha = w.forward(&mut g, &store, x);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let plain = w.alphas(&store, a, b);
            assert!((g.value(alpha).get(i, 0) - plain[0]).abs() < 1e-12);
            assert!((g.value(alpha).get(i, 1) - plain[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_gallery_examples() {
        let (store, w) = weigher(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gallery: Vec<_> = (0..6).map(|_| random_feats(&mut rng, 5)).collect();
        let views = [0, 1, 0, 1, 0, 1];
        let probe = gallery[3].clone();
        let r = rank_gallery(&probe, 1, &gallery, &views, Scoring::Fused(Fusion::Adaptive), &store, &w, false).unwrap();
        assert_eq!(r[0], 3);
        let r = rank_gallery(&probe, 1, &gallery, &views, Scoring::Fused(Fusion::Adaptive), &store, &w, true).unwrap();
        assert!(r.iter().all(|&j| views[j] != 1));
        assert_eq!(r.len(), 3);
        let same = vec![gallery[0].clone(), gallery[0].clone()];
        let r = rank_gallery(&probe, 0, &same, &[0, 0], Scoring::Single(Stream::Biometrics), &store, &w, false).unwrap();
        assert_eq!(r, vec![0, 1]);
        assert!(rank_gallery(&probe, 0, &same, &[0, 0], Scoring::Single(Stream::Biometrics), &store, &w, true).is_none());
    }

    #[test]
    fn cmc_map_examples() {
        let c = compute_cmc_map(&[vec![0, 1], vec![1, 0]], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(c.rank(1), 1.0);
        assert_eq!(c.map, 1.0);
        let c = compute_cmc_map(&[vec![0, 1, 2]], &[7], &[7, 3, 7]).unwrap();
        assert!((c.map - 5.0 / 6.0).abs() < 1e-15);
        let c = compute_cmc_map(&[vec![0, 1], vec![1]], &[0, 9], &[0, 1]).unwrap();
        assert_eq!(c.num_unmatched, 1);
        assert!(compute_cmc_map(&[], &[], &[0]).is_err());
    }

    /// Independent O(P·G) reference: explicit top-k membership and per
    /// position precision.
    fn brute_force(rankings: &[Vec<usize>], probe: &[usize], gallery: &[usize]) -> (Vec<f64>, f64) {
        let valid: Vec<usize> = (0..rankings.len()).filter(|&p| rankings[p].iter().any(|&j| gallery[j] == probe[p])).collect();
        let n = valid.len() as f64;
        let mut cmc = vec![0.0; CMC_DEPTH];
        let mut ap_sum = 0.0;
        for &p in &valid {
            let r = &rankings[p];
            for (k, slot) in cmc.iter_mut().enumerate() {
                if r.iter().take(k + 1).any(|&j| gallery[j] == probe[p]) {
                    *slot += 1.0 / n;
                }
            }
            let positions: Vec<usize> = (0..r.len()).filter(|&i| gallery[r[i]] == probe[p]).collect();
            let ap: f64 =
                positions.iter().map(|&i| (0..=i).filter(|&q| gallery[r[q]] == probe[p]).count() as f64 / (i + 1) as f64).sum::<f64>() / positions.len() as f64;
            ap_sum += ap;
        }
        (cmc, ap_sum / n)
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
        let p = rng.gen_range(1..=50);
        let g = rng.gen_range(1..=50);
        let classes = rng.gen_range(1..=8);
        let gallery: Vec<usize> = (0..g).map(|_| rng.gen_range(0..classes)).collect();
        let probe: Vec<usize> = (0..p).map(|_| rng.gen_range(0..classes)).collect();
        let rankings = (0..p)
            .map(|_| {
                let scores: Vec<f64> = (0..g).map(|_| rng.gen()).collect();
                rank_by_scores(&scores, 0..g)
            })
            .collect();
        (rankings, probe, gallery)
    }

    #[test]
    fn cmc_map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        while checked < 200 {
            let (rankings, probe, gallery) = random_instance(&mut rng);
            let Ok(c) = compute_cmc_map(&rankings, &probe, &gallery) else { continue };
            let (cmc, map) = brute_force(&rankings, &probe, &gallery);
            for k in 0..CMC_DEPTH {
                assert!((c.cmc[k] - cmc[k]).abs() <= 1e-9);
            }
            assert!((c.map - map).abs() <= 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn random_scores_give_expected_rank1() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gallery: Vec<usize> = (0..20).map(|j| usize::from(j < 5)).collect();
        let trials = 20_000;
        let rankings: Vec<Vec<usize>> = (0..trials)
            .map(|_| {
                let scores: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
                rank_by_scores(&scores, 0..20)
            })
            .collect();
        let c = compute_cmc_map(&rankings, &vec![1; trials], &gallery).unwrap();
        assert!((c.rank(1) - 0.25).abs() < 0.015, "{}", c.rank(1));
    }

    #[test]
    fn verification_loss_gradient() {
        let (store, w) = weigher(9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sims: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let same = [true, false, false, true, false, true];
        let objective = |s: &ParamStore| {
            let mut g = Graph::new();
            let l = verification_loss(&mut g, s, &w, &sims, &same, 5.0).unwrap();
            (g, l)
        };
        let (g, l) = objective(&store);
        let mut buf = GradBuffer::zeros_like(&store);
        g.accumulate_params(&g.backward_scalar(l), &mut buf);
        for (id, name, value) in store.iter() {
            let numeric = numeric_grad(value, 1e-5, |m| {
                let mut s2 = store.clone();
                *s2.value_mut(id) = m.clone();
                let (g, l) = objective(&s2);
                g.value(l).item()
            });
            assert!(relative_error(buf.get(id), &numeric) <= 1e-4, "{name}");
        }
    }

    #[test]
    fn verification_loss_balances_classes() {
        let (store, w) = weigher(4);
        let sims = [(0.9, 0.2), (0.1, -0.3), (0.4, 0.5), (-0.2, 0.0), (0.3, 0.3)];
        let same = [true, false, false, false, false];
        let bce = |&(b, m): &(f64, f64), y: f64| {
            let [a1, a2] = w.alphas(&store, b, m);
            let p = 1.0 / (1.0 + (-5.0 * (a1 * b + a2 * m)).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        let positive = bce(&sims[0], 1.0);
        let negative = sims[1..].iter().map(|s| bce(s, 0.0)).sum::<f64>() / 4.0;
        let mut g = Graph::new();
        let l = verification_loss(&mut g, &store, &w, &sims, &same, 5.0).unwrap();
        assert!((g.value(l).item() - (positive + negative) / 2.0).abs() < 1e-12);
        let mut g = Graph::new();
        let l = verification_loss(&mut g, &store, &w, &sims[1..], &same[1..], 5.0).unwrap();
        assert!((g.value(l).item() - negative).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn alphas_on_simplex(sb in -1.0f64..=1.0, sm in -1.0f64..=1.0, seed in 0u64..50) {
            let (store, w) = weigher(seed);
            let a = w.alphas(&store, sb, sm);
            prop_assert!(a[0] >= 0.0 && a[1] >= 0.0);
            prop_assert!((a[0] + a[1] - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn similarity_bounded_and_symmetric(seed in 0u64..500) {
            let (store, w) = weigher(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_feats(&mut rng, 4);
            let b = random_feats(&mut rng, 4);
            let ab = pair_similarity(&a, &b, Fusion::Adaptive, &store, &w).unwrap();
            let ba = pair_similarity(&b, &a, Fusion::Adaptive, &store, &w).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn ranking_invariant_to_positive_scaling(seed in 0u64..500, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            prop_assert_eq!(rank_by_scores(&scores, 0..30), rank_by_scores(&scaled, 0..30));
        }

        #[test]
        fn rank_k_monotone(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rankings, probe, gallery) = random_instance(&mut rng);
            if let Ok(c) = compute_cmc_map(&rankings, &probe, &gallery) {
                prop_assert!(c.rank(1) <= c.rank(5) && c.rank(5) <= c.rank(10));
                prop_assert!((0.0..=1.0).contains(&c.map));
            }
        }
    }
}
