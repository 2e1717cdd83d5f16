//! Hash-center training loop.
//!
//! Each iteration draws one triplet unit (the original and two distinct
//! fakes) from each of `batch_groups` groups, encodes the clips, takes an
//! Adam step on the Hash Triplet Loss, then re-votes the center of every
//! group in the batch from the binarized codes it just produced, with the
//! original's code as the tie-breaking anchor.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::code::{binarize, hamming, mean_pairwise_hamming, vote_center, Activation, HashCode, RelaxedCode};
use crate::dataset::{sample_clip, FeatureSequence, GroupSet, VideoFeatures, DESCRIPTOR_DIM};
use crate::encoder::{
    backward_batch, center_output_bias, fold_input_scaling, forward_batch, forward_cached, init_params, EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::loss::{hash_triplet_loss_with, CenterSet, LabeledCode, LossTerms};
use crate::seed;

/// Minimum number of groups per batch.
pub const MIN_BATCH_GROUPS: usize = 8;

const STREAM_PERM: u64 = 1;
const STREAM_FAKES: u64 = 2;
const STREAM_CLIP: u64 = 3;
const STREAM_INIT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_groups: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm cap.
    pub grad_clip: f64,
    pub seed: u64,
    pub k: usize,
    pub clip_len: usize,
    pub clip_stride: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub terms: LossTerms,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_groups: MIN_BATCH_GROUPS,
            iterations: 1000,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 10.0,
            seed: 0,
            k: 64,
            clip_len: 8,
            clip_stride: 1,
            embed_dim: 64,
            activation: Activation::Tanh,
            terms: LossTerms::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_groups < MIN_BATCH_GROUPS {
            return Err(Error::invalid(format!(
                "batch_groups must be at least {MIN_BATCH_GROUPS}, got {}",
                self.batch_groups
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.k == 0 || self.k % 8 != 0 {
            return Err(Error::InvalidBits(self.k));
        }
        if self.clip_len == 0 || self.clip_stride == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("clip length, stride and embed dim must be positive"));
        }
        Ok(())
    }

    pub fn encoder_config(&self, d: usize) -> EncoderConfig {
        EncoderConfig {
            d,
            e: self.embed_dim,
            k: self.k,
            t: self.clip_len,
            activation: self.activation,
            init_seed: self.seed as u32,
        }
    }
}

/// Per-frame descriptors for every video in a group set.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub groups: Vec<GroupFeatures>,
}

#[derive(Debug, Clone)]
pub struct GroupFeatures {
    pub group_id: u32,
    pub original: VideoFeatures,
    pub fakes: Vec<VideoFeatures>,
}

impl FeatureBank {
    pub fn load(gs: &GroupSet) -> Result<Self> {
        let groups = gs
            .groups
            .par_iter()
            .map(|g| {
                Ok(GroupFeatures {
                    group_id: g.group_id,
                    original: VideoFeatures::load(&g.original)?,
                    fakes: g.fakes.iter().map(VideoFeatures::load).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureBank { groups })
    }

    /// Per-dimension mean and standard deviation over every frame.
    pub fn input_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.descriptor_dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for g in &self.groups {
            for v in std::iter::once(&g.original).chain(&g.fakes) {
                for x in &v.descriptors {
                    for i in 0..d {
                        sum[i] += x[i];
                        sq[i] += x[i] * x[i];
                    }
                    n += 1.0;
                }
            }
        }
        let n: f64 = if n > 0.0 { n } else { 1.0 };
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
            .collect();
        (mean, std)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.groups
            .first()
            .and_then(|g| g.original.descriptors.first())
            .map_or(DESCRIPTOR_DIM, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletUnit {
    pub group_id: u32,
    pub original_clip: FeatureSequence,
    pub fake_clip_1: FeatureSequence,
    pub fake_clip_2: FeatureSequence,
    /// Indices of the two fakes within the group.
    pub fakes: (usize, usize),
}

/// Groups for batch `iter`: consecutive distinct entries of a stream of
/// seeded permutations, one permutation per epoch. When the data has fewer
/// groups than `batch_groups`, every batch holds all of them.
pub fn batch_groups(num_groups: usize, batch_groups: usize, seed: u64, iter: usize) -> Vec<u32> {
    let b = batch_groups.min(num_groups);
    let perm = |epoch: usize| {
        let mut p: Vec<u32> = (0..num_groups as u32).collect();
        p.shuffle(&mut seed::rng(seed, &[STREAM_PERM, epoch as u64]));
        p
    };
    let mut pos = iter * b;
    let mut epoch = pos / num_groups;
    let mut current = perm(epoch);
    let mut chosen = Vec::with_capacity(b);
    let mut used = HashSet::with_capacity(b);
    while chosen.len() < b {
        if pos / num_groups != epoch {
            epoch = pos / num_groups;
            current = perm(epoch);
        }
        let g = current[pos % num_groups];
        if used.insert(g) {
            chosen.push(g);
        }
        pos += 1;
    }
    chosen
}

fn clip_seed(cfg: &TrainConfig, iter: usize, group: u32, slot: u64) -> u64 {
    seed::derive(cfg.seed, &[STREAM_CLIP, iter as u64, u64::from(group), slot])
}

/// Triplet units for iteration `iter`; deterministic in `(cfg.seed, iter)`.
pub fn build_batch(bank: &FeatureBank, cfg: &TrainConfig, iter: usize) -> Result<Vec<TripletUnit>> {
    for g in &bank.groups {
        if g.fakes.len() < 2 {
            return Err(Error::invalid(format!(
                "group {}: triplet units need at least 2 fakes, found {}",
                g.group_id,
                g.fakes.len()
            )));
        }
    }
    if bank.groups.is_empty() {
        return Err(Error::Empty("build_batch: no groups"));
    }
    batch_groups(bank.groups.len(), cfg.batch_groups, cfg.seed, iter)
        .into_iter()
        .map(|gid| {
            let g = &bank.groups[gid as usize];
            let mut rng = seed::rng(cfg.seed, &[STREAM_FAKES, iter as u64, u64::from(gid)]);
            let pick = sample(&mut rng, g.fakes.len(), 2);
            let (a, b) = (pick.index(0), pick.index(1));
            let clip = |v: &VideoFeatures, slot| {
                sample_clip(v, cfg.clip_len, cfg.clip_stride, clip_seed(cfg, iter, gid, slot))
            };
            Ok(TripletUnit {
                group_id: g.group_id,
                original_clip: clip(&g.original, 0)?,
                fake_clip_1: clip(&g.fakes[a], 1)?,
                fake_clip_2: clip(&g.fakes[b], 2)?,
                fakes: (a, b),
            })
        })
        .collect()
}

/// A binarized code observed for a group, flagged when it is the original's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedCode {
    pub code: HashCode,
    pub anchor: bool,
}

/// Re-votes the center of every group present in `codes_by_group`; other
/// groups keep their previous center.
pub fn revote_centers(
    previous: &CenterSet,
    codes_by_group: &BTreeMap<u32, Vec<ObservedCode>>,
) -> Result<CenterSet> {
    let mut next = previous.clone();
    for (&gid, observed) in codes_by_group {
        let anchor = observed
            .iter()
            .find(|o| o.anchor)
            .ok_or_else(|| Error::invalid(format!("group {gid}: no anchor code to vote with")))?;
        let codes: Vec<HashCode> = observed.iter().map(|o| o.code.clone()).collect();
        next.insert(gid, vote_center(&codes, &anchor.code)?)?;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Mean pairwise Hamming distance between centers.
    pub inter_mean: f64,
    /// Mean Hamming distance from each code to its own center.
    pub intra_mean: f64,
    /// Mean bit value over all codes.
    pub mean_bit: f64,
}

pub fn train_metrics(
    centers: &CenterSet,
    codes_by_group: &BTreeMap<u32, Vec<ObservedCode>>,
) -> Result<MetricsRecord> {
    let inter_mean = if centers.len() >= 2 {
        mean_pairwise_hamming(&centers.codes())?
    } else {
        0.0
    };
    let mut intra_total = 0u64;
    let mut ones = 0u64;
    let mut codes = 0u64;
    let mut bits = 0u64;
    for (&gid, observed) in codes_by_group {
        let center = centers.get(gid).ok_or(Error::MissingCenter(gid))?;
        for o in observed {
            intra_total += u64::from(hamming(&o.code, center)?);
            ones += u64::from(o.code.count_ones());
            bits += o.code.len() as u64;
            codes += 1;
        }
    }
    if codes == 0 {
        return Err(Error::Empty("train_metrics: no codes"));
    }
    Ok(MetricsRecord {
        inter_mean,
        intra_mean: intra_total as f64 / codes as f64,
        mean_bit: ones as f64 / bits as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

pub const HISTORY_HEADER: &str = "iter,loss,inter_mean,intra_mean,mean_bit";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iter, r.loss, r.metrics.inter_mean, r.metrics.intra_mean, r.metrics.mean_bit
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: EncoderParams,
    v: EncoderParams,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(like: &EncoderParams, cfg: &TrainConfig) -> Self {
        Adam {
            m: EncoderParams::zeros(like.cfg),
            v: EncoderParams::zeros(like.cfg),
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grad: &EncoderParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub centers: CenterSet,
    pub history: TrainHistory,
}

fn encode(params: &EncoderParams, clip: &FeatureSequence) -> Result<HashCode> {
    let c = forward_cached(params, clip)?;
    binarize(&RelaxedCode::new(c.out.to_vec(), params.cfg.activation))
}

/// One seeded clip of each group's original, in bank order.
fn original_clips(bank: &FeatureBank, cfg: &TrainConfig) -> Result<Vec<FeatureSequence>> {
    bank.groups
        .iter()
        .map(|g| {
            let s = seed::derive(cfg.seed, &[STREAM_INIT, u64::from(g.group_id)]);
            sample_clip(&g.original, cfg.clip_len, cfg.clip_stride, s)
        })
        .collect()
}

/// Centers before any training: the binarized code of a clip of each original.
pub fn initial_centers(params: &EncoderParams, bank: &FeatureBank, cfg: &TrainConfig) -> Result<CenterSet> {
    let clips = original_clips(bank, cfg)?;
    let codes = bank
        .groups
        .par_iter()
        .zip(clips.par_iter())
        .map(|(g, clip)| Ok((g.group_id, encode(params, clip)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut centers = CenterSet::new();
    for (gid, code) in codes {
        centers.insert(gid, code)?;
    }
    Ok(centers)
}

/// Encoder initialization for `bank`: seeded Glorot weights with the bank's
/// input standardization folded into the embedding and the output bias set
/// so each bit splits the originals in half.
pub fn initial_params(bank: &FeatureBank, cfg: &TrainConfig) -> Result<EncoderParams> {
    let mut params = init_params(&cfg.encoder_config(bank.descriptor_dim()))?;
    let (mean, std) = bank.input_stats();
    fold_input_scaling(&mut params, &mean, &std)?;
    center_output_bias(&mut params, &original_clips(bank, cfg)?)?;
    Ok(params)
}

/// Trains an encoder and its hash centers.
pub fn fit(bank: &FeatureBank, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit_with_progress(bank, cfg, |_| {})
}

pub fn fit_with_progress(
    bank: &FeatureBank,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&HistoryRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let act = cfg.activation;
    let mut params = initial_params(bank, cfg)?;
    let mut adam = Adam::new(&params, cfg);
    let mut centers = initial_centers(&params, bank, cfg)?;
    let mut history = TrainHistory::default();

    for iter in 0..cfg.iterations {
        let units = build_batch(bank, cfg, iter)?;
        let clips: Vec<FeatureSequence> = units
            .iter()
            .flat_map(|u| [u.original_clip.clone(), u.fake_clip_1.clone(), u.fake_clip_2.clone()])
            .collect();
        let caches = forward_batch(&params, &clips)?;
        let labeled: Vec<LabeledCode> = caches
            .iter()
            .enumerate()
            .map(|(i, c)| LabeledCode {
                code: c.out.iter().map(|&y| act.to_unit(y)).collect(),
                group_id: units[i / 3].group_id,
            })
            .collect();
        let loss = hash_triplet_loss_with(&labeled, &centers, cfg.terms)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite { iter, loss: loss.loss });
        }
        let upstreams: Vec<Vec<f64>> = caches
            .iter()
            .zip(&loss.grads)
            .map(|(c, g)| {
                c.out
                    .iter()
                    .zip(g)
                    .map(|(&y, &gl)| gl * act.to_unit_derivative(y))
                    .collect()
            })
            .collect();
        let mut grad = backward_batch(&params, &caches, &upstreams)?;
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite { iter, loss: norm });
        }
        if norm > cfg.grad_clip {
            grad.scale(cfg.grad_clip / norm);
        }
        adam.step(&mut params, &grad);

        let mut observed: BTreeMap<u32, Vec<ObservedCode>> = BTreeMap::new();
        for (i, c) in caches.iter().enumerate() {
            let code = binarize(&RelaxedCode::new(c.out.to_vec(), act))?;
            observed.entry(units[i / 3].group_id).or_default().push(ObservedCode {
                code,
                anchor: i % 3 == 0,
            });
        }
        centers = revote_centers(&centers, &observed)?;
        let record = HistoryRecord {
            iter,
            loss: loss.loss,
            metrics: train_metrics(&centers, &observed)?,
        };
        progress(&record);
        history.records.push(record);
    }
    Ok(TrainOutcome {
        params,
        centers,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn every_group_once_per_batch_of_eight() {
        let g = batch_groups(8, 8, 3, 0);
        let mut sorted = g.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn two_batches_cover_sixteen_groups() {
        for seed in 0..5 {
            // Pairs starting at an even batch make up one whole epoch.
            for start in [0, 2, 6] {
                let mut all: Vec<u32> = batch_groups(16, 8, seed, start)
                    .into_iter()
                    .chain(batch_groups(16, 8, seed, start + 1))
                    .collect();
                all.sort();
                assert_eq!(all, (0..16).collect::<Vec<_>>(), "seed {seed} start {start}");
            }
        }
    }

    #[test]
    fn batches_are_distinct_and_deterministic() {
        for iter in 0..20 {
            let g = batch_groups(11, 8, 5, iter);
            assert_eq!(g, batch_groups(11, 8, 5, iter));
            let set: HashSet<_> = g.iter().collect();
            assert_eq!(set.len(), 8);
        }
        assert_ne!(batch_groups(16, 8, 1, 0), batch_groups(16, 8, 2, 0));
        // Fewer groups than the batch size: every batch is all groups.
        let mut small = batch_groups(2, 8, 0, 4);
        small.sort();
        assert_eq!(small, [0, 1]);
    }

    fn toy_bank(groups: usize, fakes: usize, frames: usize, seed: u64) -> FeatureBank {
        let video = |base: f64, rng: &mut rand_chacha::ChaCha8Rng| VideoFeatures {
            descriptors: (0..frames)
                .map(|_| (0..DESCRIPTOR_DIM).map(|i| (base + 0.3 * ((i as f64) * base).sin() + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0)).collect())
                .collect(),
        };
        let mut rng = seed::rng(seed, &[]);
        FeatureBank {
            groups: (0..groups)
                .map(|g| {
                    let base = (g as f64 + 0.5) / groups as f64;
                    GroupFeatures {
                        group_id: g as u32,
                        original: video(base, &mut rng),
                        fakes: (0..fakes).map(|_| video(base, &mut rng)).collect(),
                    }
                })
                .collect(),
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            k: 16,
            clip_len: 4,
            embed_dim: 16,
            learning_rate: 1e-3,
            iterations: 20,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_units_use_distinct_fakes() {
        let bank = toy_bank(8, 3, 6, 1);
        let cfg = small_cfg();
        let units = build_batch(&bank, &cfg, 0).unwrap();
        assert_eq!(units.len(), 8);
        for u in &units {
            assert_ne!(u.fakes.0, u.fakes.1);
            assert_eq!(u.original_clip.t(), 4);
        }
        assert_eq!(units, build_batch(&bank, &cfg, 0).unwrap());
        assert_ne!(units, build_batch(&bank, &cfg, 1).unwrap());
    }

    #[test]
    fn group_with_one_fake_rejected() {
        let bank = toy_bank(8, 1, 6, 1);
        assert!(build_batch(&bank, &small_cfg(), 0).is_err());
    }

    fn observed(codes: &[(&[u8], bool)]) -> Vec<ObservedCode> {
        codes
            .iter()
            .map(|(bits, anchor)| ObservedCode { code: HashCode::from_bit_values(bits).unwrap(), anchor: *anchor })
            .collect()
    }

    #[test]
    fn revote_examples() {
        let mut prev = CenterSet::new();
        prev.insert(0, HashCode::zeros(8).unwrap()).unwrap();
        prev.insert(1, HashCode::zeros(8).unwrap().complement()).unwrap();
        let same: &[u8] = &[1, 0, 1, 0, 1, 1, 0, 0];
        let mut by_group = BTreeMap::new();
        by_group.insert(0, observed(&[(same, true), (same, false), (same, false)]));
        let next = revote_centers(&prev, &by_group).unwrap();
        assert_eq!(next.get(0).unwrap(), &HashCode::from_bit_values(same).unwrap());
        assert_eq!(next.get(1), prev.get(1));

        let mut missing = BTreeMap::new();
        missing.insert(0, observed(&[(same, false)]));
        assert!(revote_centers(&prev, &missing).is_err());
    }

    #[test]
    fn revote_matches_vote_oracle() {
        let mut rng = seed::rng(4, &[]);
        for _ in 0..50 {
            let codes: Vec<HashCode> = (0..3)
                .map(|_| HashCode::from_bits(&(0..16).map(|_| rng.gen()).collect::<Vec<bool>>()).unwrap())
                .collect();
            let mut by_group = BTreeMap::new();
            by_group.insert(
                5,
                codes.iter().enumerate().map(|(i, c)| ObservedCode { code: c.clone(), anchor: i == 0 }).collect(),
            );
            let next = revote_centers(&CenterSet::new(), &by_group).unwrap();
            // Brute-force per-bit count.
            let expected: Vec<bool> = (0..16).map(|b| codes.iter().filter(|c| c.get(b)).count() >= 2).collect();
            assert_eq!(next.get(5).unwrap(), &HashCode::from_bits(&expected).unwrap());
        }
    }

    #[test]
    fn metrics_examples() {
        let a = HashCode::zeros(8).unwrap();
        let mut centers = CenterSet::new();
        centers.insert(0, a.clone()).unwrap();
        centers.insert(1, a.complement()).unwrap();
        let mut by_group = BTreeMap::new();
        by_group.insert(0, vec![ObservedCode { code: a.clone(), anchor: true }]);
        by_group.insert(1, vec![ObservedCode { code: a.complement(), anchor: true }]);
        let m = train_metrics(&centers, &by_group).unwrap();
        assert_eq!(m.inter_mean, 8.0);
        assert_eq!(m.intra_mean, 0.0);
        assert_eq!(m.mean_bit, 0.5);
    }

    #[test]
    fn mean_bit_of_random_codes_is_near_half() {
        for s in 0..5u64 {
            let mut rng = seed::rng(s, &[8]);
            let mut by_group = BTreeMap::new();
            let mut centers = CenterSet::new();
            for g in 0..8u32 {
                let codes: Vec<ObservedCode> = (0..4)
                    .map(|i| ObservedCode {
                        code: HashCode::from_bits(&(0..512).map(|_| rng.gen()).collect::<Vec<bool>>()).unwrap(),
                        anchor: i == 0,
                    })
                    .collect();
                centers.insert(g, codes[0].code.clone()).unwrap();
                by_group.insert(g, codes);
            }
            let m = train_metrics(&centers, &by_group).unwrap();
            assert!((m.mean_bit - 0.5).abs() <= 0.05, "{}", m.mean_bit);
        }
    }

    #[test]
    fn zero_iterations_keep_anchor_centers() {
        let bank = toy_bank(4, 2, 6, 2);
        let cfg = TrainConfig { iterations: 0, ..small_cfg() };
        let out = fit(&bank, &cfg).unwrap();
        assert!(out.history.records.is_empty());
        let params = initial_params(&bank, &cfg).unwrap();
        assert_eq!(out.centers, initial_centers(&params, &bank, &cfg).unwrap());
        assert_eq!(out.params, params);
    }

    #[test]
    fn fit_is_deterministic() {
        let bank = toy_bank(8, 3, 6, 3);
        let a = fit(&bank, &small_cfg()).unwrap();
        let b = fit(&bank, &small_cfg()).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.records.len(), 20);
    }

    #[test]
    fn loss_decreases_early() {
        let bank = toy_bank(8, 3, 6, 4);
        let cfg = TrainConfig { iterations: 50, ..small_cfg() };
        let out = fit(&bank, &cfg).unwrap();
        let first: f64 = out.history.records[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        let last: f64 = out.history.records[45..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn two_separable_groups_spread_apart() {
        let bank = toy_bank(2, 3, 6, 5);
        let cfg = TrainConfig { iterations: 500, ..small_cfg() };
        let out = fit(&bank, &cfg).unwrap();
        let c: Vec<HashCode> = out.centers.codes();
        let d = hamming(&c[0], &c[1]).unwrap();
        assert!(d >= 6, "inter-center distance {d}");
    }

    #[test]
    fn rejects_small_batches() {
        let cfg = TrainConfig { batch_groups: 7, ..small_cfg() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = TrainConfig { learning_rate: 0.01, ..small_cfg() };
        let ecfg = EncoderConfig { d: 2, e: 2, k: 8, t: 1, activation: Activation::Tanh, init_seed: 0 };
        let mut p = EncoderParams::zeros(ecfg);
        let mut g = EncoderParams::zeros(ecfg);
        g.head_b2 = ndarray::Array1::from_vec(vec![3.0, -0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        g.embed_w = Array2::from_elem((2, 2), -2.0);
        let mut adam = Adam::new(&p, &cfg);
        adam.step(&mut p, &g);
        assert!((p.head_b2[0] + 0.01).abs() < 1e-9);
        assert!((p.head_b2[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.head_b2[2], 0.0);
        assert!(p.embed_w.iter().all(|&v| (v - 0.01).abs() < 1e-9));
    }
}
