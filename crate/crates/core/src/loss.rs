//! Hash Triplet Loss.
//!
//! Every code in a batch is paired with every hash center. Pairs with the
//! same label contribute an intra term, the mean absolute difference to the
//! center; all other pairs contribute an inter term, one minus that
//! difference. The loss is
//!
//! ```text
//! L = (sum of intra terms) / m + (sum of inter terms) / n
//! ```
//!
//! with `m` and `n` the numbers of same-label and different-label pairs.
//! Codes are relaxed values on `[0, 1]`; centers are binary.

use std::collections::BTreeMap;

use crate::code::HashCode;
use crate::error::{Error, Result};

/// A relaxed code mapped onto `[0, 1]^k` with its group label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCode {
    pub code: Vec<f64>,
    pub group_id: u32,
}

/// One binary center per group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CenterSet {
    centers: BTreeMap<u32, HashCode>,
}

impl CenterSet {
    pub fn new() -> Self {
        CenterSet::default()
    }

    /// Number of bits, or `None` while empty.
    pub fn k(&self) -> Option<usize> {
        self.centers.values().next().map(HashCode::len)
    }

    pub fn insert(&mut self, group_id: u32, center: HashCode) -> Result<()> {
        if let Some(k) = self.k() {
            if center.len() != k {
                return Err(Error::LengthMismatch {
                    left: k,
                    right: center.len(),
                });
            }
        }
        self.centers.insert(group_id, center);
        Ok(())
    }

    pub fn get(&self, group_id: u32) -> Option<&HashCode> {
        self.centers.get(&group_id)
    }

    pub fn contains(&self, group_id: u32) -> bool {
        self.centers.contains_key(&group_id)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `(group_id, center)` in ascending group order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &HashCode)> {
        self.centers.iter().map(|(&g, c)| (g, c))
    }

    pub fn codes(&self) -> Vec<HashCode> {
        self.centers.values().cloned().collect()
    }
}

/// Which terms of the loss are active. The single-term variants exist for
/// ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTerms {
    Both,
    IntraOnly,
    InterOnly,
}

impl LossTerms {
    pub fn name(self) -> &'static str {
        match self {
            LossTerms::Both => "both",
            LossTerms::IntraOnly => "intra",
            LossTerms::InterOnly => "inter",
        }
    }
}

impl std::str::FromStr for LossTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(LossTerms::Both),
            "intra" | "intra_only" => Ok(LossTerms::IntraOnly),
            "inter" | "inter_only" => Ok(LossTerms::InterOnly),
            other => Err(Error::invalid(format!(
                "unknown loss mode {other:?} (expected both, intra or inter)"
            ))),
        }
    }
}

fn check_len(h: &[f64], c: &HashCode) -> Result<()> {
    if h.len() != c.len() {
        return Err(Error::LengthMismatch {
            left: h.len(),
            right: c.len(),
        });
    }
    Ok(())
}

fn mean_abs_diff(h: &[f64], c: &HashCode) -> f64 {
    let sum: f64 = h
        .iter()
        .zip(c.iter())
        .map(|(&x, b)| (x - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    sum / h.len() as f64
}

/// `mean |h - c|`.
pub fn intra_loss(h: &[f64], c: &HashCode) -> Result<f64> {
    check_len(h, c)?;
    Ok(mean_abs_diff(h, c))
}

/// `1 - mean |h - c|`.
pub fn inter_loss(h: &[f64], c: &HashCode) -> Result<f64> {
    check_len(h, c)?;
    Ok(1.0 - mean_abs_diff(h, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `d loss / d code`, one vector per batch entry.
    pub grads: Vec<Vec<f64>>,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

pub fn hash_triplet_loss(batch: &[LabeledCode], centers: &CenterSet) -> Result<LossOutput> {
    hash_triplet_loss_with(batch, centers, LossTerms::Both)
}

/// Loss and subgradients with the chosen terms. The derivative of `|x|` at
/// 0 is taken as 0.
pub fn hash_triplet_loss_with(
    batch: &[LabeledCode],
    centers: &CenterSet,
    terms: LossTerms,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("hash_triplet_loss: empty batch"));
    }
    for item in batch {
        let c = centers
            .get(item.group_id)
            .ok_or(Error::MissingCenter(item.group_id))?;
        check_len(&item.code, c)?;
    }
    let m = batch.len();
    let n = batch.len() * (centers.len() - 1);
    let use_intra = terms != LossTerms::InterOnly;
    let use_inter = terms != LossTerms::IntraOnly;
    if use_intra && m == 0 {
        return Err(Error::DegenerateBatch("no same-label pairs"));
    }
    if use_inter && n == 0 {
        return Err(Error::DegenerateBatch("no different-label pairs"));
    }

    let mut intra_sum = 0.0;
    let mut inter_sum = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for item in batch {
        let k = item.code.len() as f64;
        let mut g = vec![0.0; item.code.len()];
        for (gid, c) in centers.iter() {
            let same = gid == item.group_id;
            if (same && !use_intra) || (!same && !use_inter) {
                continue;
            }
            let d = mean_abs_diff(&item.code, c);
            // Intra pulls toward c, inter pushes away from it.
            let (weight, direction) = if same {
                intra_sum += d;
                (1.0 / m as f64, 1.0)
            } else {
                inter_sum += 1.0 - d;
                (1.0 / n as f64, -1.0)
            };
            for ((gi, &x), b) in g.iter_mut().zip(&item.code).zip(c.iter()) {
                let diff = x - if b { 1.0 } else { 0.0 };
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gi += direction * weight * s / k;
            }
        }
        grads.push(g);
    }
    let mut loss = 0.0;
    if use_intra {
        loss += intra_sum / m as f64;
    }
    if use_inter {
        loss += inter_sum / n as f64;
    }
    Ok(LossOutput {
        loss,
        grads,
        intra_pairs: m,
        inter_pairs: n,
    })
}
