//! Hash-center index and Top-1 tracing.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "VTHX"               magic
//! u8                   version (1)
//! u16                  k
//! u32                  n
//! n x {
//!   u32                group_id
//!   k/8 bytes          center, bit 0 = MSB of byte 0
//!   u16 + UTF-8        label
//!   u16 + UTF-8        original ref
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;

use crate::code::{binarize, HashCode};
use crate::dataset::{FeatureSequence, GroupSet, VideoFeatures};
use crate::encoder::{forward, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::CenterSet;

pub const MAGIC: &[u8; 4] = b"VTHX";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMeta {
    pub group_id: u32,
    pub label: String,
    pub original_ref: String,
}

/// Metadata for every group of a dataset: the label and reference are the
/// original's manifest label and relative path.
pub fn group_meta(gs: &GroupSet) -> Vec<GroupMeta> {
    gs.groups
        .iter()
        .map(|g| GroupMeta {
            group_id: g.group_id,
            label: g.original.label.clone(),
            original_ref: g.original.rel_path.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub group_id: u32,
    pub center: HashCode,
    pub label: String,
    pub original_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceIndex {
    k: usize,
    entries: Vec<IndexEntry>,
    /// Centers packed back to back as zero-padded u64 words, in entry order.
    words: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceResult {
    pub group_id: u32,
    pub label: String,
    pub original_ref: String,
    pub distance: u32,
    /// Distance to the second-nearest center, or `k` for a one-entry index.
    pub runner_up_distance: u32,
}

pub fn build_index(centers: &CenterSet, meta: &[GroupMeta]) -> Result<TraceIndex> {
    let k = centers.k().ok_or(Error::Empty("build_index: no centers"))?;
    let mut by_id: BTreeMap<u32, &GroupMeta> = BTreeMap::new();
    for m in meta {
        if by_id.insert(m.group_id, m).is_some() {
            return Err(Error::invalid(format!("duplicate metadata for group {}", m.group_id)));
        }
    }
    let entries = centers
        .iter()
        .map(|(gid, center)| {
            let m = by_id
                .get(&gid)
                .ok_or_else(|| Error::invalid(format!("no metadata for group {gid}")))?;
            Ok(IndexEntry {
                group_id: gid,
                center: center.clone(),
                label: m.label.clone(),
                original_ref: m.original_ref.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TraceIndex::from_entries(k, entries)
}

impl TraceIndex {
    /// Sorts entries by group id and checks ids are unique and codes `k` bits.
    pub fn from_entries(k: usize, mut entries: Vec<IndexEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("index has no entries"));
        }
        if k == 0 || k % 8 != 0 || k > usize::from(u16::MAX) {
            return Err(Error::InvalidBits(k));
        }
        entries.sort_by_key(|e| e.group_id);
        for w in entries.windows(2) {
            if w[0].group_id == w[1].group_id {
                return Err(Error::invalid(format!("duplicate group {} in index", w[0].group_id)));
            }
        }
        for e in &entries {
            if e.center.len() != k {
                return Err(Error::LengthMismatch { left: k, right: e.center.len() });
            }
            for s in [&e.label, &e.original_ref] {
                if s.len() > usize::from(u16::MAX) {
                    return Err(Error::invalid(format!("group {}: string too long", e.group_id)));
                }
            }
        }
        let mut words = Vec::with_capacity(entries.len() * k.div_ceil(64));
        for e in &entries {
            words.extend(pack_words(e.center.as_bytes()));
        }
        Ok(TraceIndex { k, entries, words })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, group_id: u32) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by_key(&group_id, |e| e.group_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Bytes taken by group ids and centers: `n * (32 + k) / 8`.
    pub fn payload_bytes(&self) -> usize {
        self.entries.len() * (32 + self.k) / 8
    }
}

/// Nearest center by Hamming distance; ties go to the smallest group id.
pub fn trace(idx: &TraceIndex, code: &HashCode) -> Result<TraceResult> {
    if code.len() != idx.k {
        return Err(Error::LengthMismatch { left: idx.k, right: code.len() });
    }
    let q = pack_words(code.as_bytes());
    let (best, second) = scan(&idx.words, &q);
    let e = &idx.entries[best.1];
    Ok(TraceResult {
        group_id: e.group_id,
        label: e.label.clone(),
        original_ref: e.original_ref.clone(),
        distance: best.0,
        runner_up_distance: if idx.entries.len() == 1 { idx.k as u32 } else { second },
    })
}

fn pack_words(bytes: &[u8]) -> Vec<u64> {
    bytes
        .chunks(8)
        .map(|c| {
            let mut w = [0u8; 8];
            w[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(w)
        })
        .collect()
}

/// Nearest and second-nearest distance over packed centers. Entries are
/// sorted by group id, so strict comparison keeps the smallest id on ties.
fn scan(words: &[u64], q: &[u64]) -> ((u32, usize), u32) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { scan_popcnt(words, q) };
        }
    }
    scan_words(words, q)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn scan_popcnt(words: &[u64], q: &[u64]) -> ((u32, usize), u32) {
    scan_words(words, q)
}

#[inline(always)]
fn scan_words(words: &[u64], q: &[u64]) -> ((u32, usize), u32) {
    let mut best = (u32::MAX, 0usize);
    let mut second = u32::MAX;
    for (i, c) in words.chunks_exact(q.len()).enumerate() {
        let d: u32 = c.iter().zip(q).map(|(a, b)| (a ^ b).count_ones()).sum();
        if d < best.0 {
            second = best.0;
            best = (d, i);
        } else if d < second {
            second = d;
        }
    }
    (best, second)
}

pub fn encode_index(idx: &TraceIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + idx.payload_bytes() + idx.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(idx.k as u16).to_le_bytes());
    out.extend_from_slice(&(idx.entries.len() as u32).to_le_bytes());
    for e in &idx.entries {
        out.extend_from_slice(&e.group_id.to_le_bytes());
        out.extend_from_slice(e.center.as_bytes());
        for s in [&e.label, &e.original_ref] {
            out.extend_from_slice(&(s.len() as u16).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.at as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(self.fail(format!("truncated {what}")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)?;
        let start = self.at;
        let raw = self.take(usize::from(len), what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: start as u64,
            msg: format!("{what} is not UTF-8"),
        })
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<TraceIndex> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic").ok() != Some(&MAGIC[..]) {
        return Err(Error::Format { offset: 0, msg: "bad magic, expected \"VTHX\"".into() });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let k = usize::from(r.u16("k")?);
    if k == 0 || k % 8 != 0 {
        return Err(Error::Format { offset: 5, msg: format!("k = {k} is not a positive multiple of 8") });
    }
    let n = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..n {
        let group_id = r.u32("group id")?;
        let center = HashCode::from_bytes(r.take(k / 8, "center")?.to_vec())?;
        let label = r.string("label")?;
        let original_ref = r.string("original ref")?;
        entries.push(IndexEntry { group_id, center, label, original_ref });
    }
    if r.at != bytes.len() {
        return Err(r.fail("trailing bytes after last entry"));
    }
    let sorted = entries.windows(2).all(|w| w[0].group_id < w[1].group_id);
    if !sorted {
        return Err(Error::Format { offset: HEADER_LEN as u64, msg: "entries not sorted by unique group id".into() });
    }
    TraceIndex::from_entries(k, entries)
}

pub fn save_index(idx: &TraceIndex, path: &Path) -> Result<()> {
    fs::write(path, encode_index(idx)).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<TraceIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}

/// Binarized code of one clip of raw frames: descriptors, then the encoder.
pub fn encode_frames(params: &EncoderParams, frames: &[RgbImage]) -> Result<HashCode> {
    let feats = VideoFeatures::from_frames(frames)?;
    let clip = feats.clip_at(0, frames.len(), 1)?;
    encode_clip(params, &clip)
}

pub fn encode_clip(params: &EncoderParams, clip: &FeatureSequence) -> Result<HashCode> {
    binarize(&forward(params, clip)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkReport {
    /// Mean seconds to turn a clip of frames into a code.
    pub encode_time_mean: f64,
    /// Mean seconds for one index lookup.
    pub lookup_time_mean: f64,
    pub n: usize,
    pub k: usize,
}

impl BenchmarkReport {
    pub fn lookup_fraction(&self) -> f64 {
        self.lookup_time_mean / self.encode_time_mean
    }

    /// Whether lookup cost is below 5% of encoding cost.
    pub fn lookup_negligible(&self) -> bool {
        self.lookup_fraction() < 0.05
    }
}

pub const MIN_BENCH_QUERIES: usize = 100;

/// Times encoding and lookup separately over `queries`, each a clip of frames.
pub fn benchmark_trace(
    idx: &TraceIndex,
    params: &EncoderParams,
    queries: &[Vec<RgbImage>],
) -> Result<BenchmarkReport> {
    if queries.len() < MIN_BENCH_QUERIES {
        return Err(Error::invalid(format!(
            "benchmark needs at least {MIN_BENCH_QUERIES} queries, got {}",
            queries.len()
        )));
    }
    if params.cfg.k != idx.k {
        return Err(Error::LengthMismatch { left: idx.k, right: params.cfg.k });
    }
    let start = Instant::now();
    let codes = queries
        .iter()
        .map(|q| encode_frames(params, q))
        .collect::<Result<Vec<_>>>()?;
    let encode = start.elapsed().as_secs_f64() / queries.len() as f64;

    // Lookups are fast enough that a single pass is dominated by timer
    // resolution; repeat until the measurement spans a few milliseconds.
    let mut rounds = 0usize;
    let mut sink = 0u64;
    let start = Instant::now();
    while rounds == 0 || start.elapsed().as_secs_f64() < 0.005 {
        for c in &codes {
            sink = sink.wrapping_add(u64::from(trace(idx, c)?.distance));
        }
        rounds += 1;
    }
    std::hint::black_box(sink);
    let lookup = start.elapsed().as_secs_f64() / (rounds * codes.len()) as f64;
    Ok(BenchmarkReport {
        encode_time_mean: encode,
        lookup_time_mean: lookup,
        n: idx.len(),
        k: idx.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(bits: &[u8]) -> HashCode {
        HashCode::from_bit_values(bits).unwrap()
    }

    fn meta(ids: &[u32]) -> Vec<GroupMeta> {
        ids.iter()
            .map(|&g| GroupMeta { group_id: g, label: format!("g{g}"), original_ref: format!("g{g}/original") })
            .collect()
    }

    fn two_index() -> TraceIndex {
        let mut c = CenterSet::new();
        c.insert(1, code(&[1; 8])).unwrap();
        c.insert(0, code(&[0; 8])).unwrap();
        build_index(&c, &meta(&[0, 1])).unwrap()
    }

    #[test]
    fn build_sorts_and_validates() {
        let mut c = CenterSet::new();
        for g in [5, 2, 9] {
            c.insert(g, HashCode::zeros(16).unwrap()).unwrap();
        }
        let idx = build_index(&c, &meta(&[9, 2, 5])).unwrap();
        let ids: Vec<u32> = idx.entries().iter().map(|e| e.group_id).collect();
        assert_eq!(ids, [2, 5, 9]);
        assert!(build_index(&c, &meta(&[9, 2, 5, 2])).is_err());
        assert!(build_index(&c, &meta(&[9, 2])).is_err());
        assert!(build_index(&CenterSet::new(), &[]).is_err());
    }

    #[test]
    fn trace_examples() {
        let idx = two_index();
        let r = trace(&idx, &code(&[1; 8])).unwrap();
        assert_eq!((r.group_id, r.distance, r.runner_up_distance), (1, 0, 8));
        let r = trace(&idx, &code(&[1, 1, 1, 0, 0, 0, 0, 0])).unwrap();
        assert_eq!((r.group_id, r.distance), (0, 3));
        let r = trace(&idx, &code(&[1, 1, 1, 1, 0, 0, 0, 0])).unwrap();
        assert_eq!((r.group_id, r.distance, r.runner_up_distance), (0, 4, 4));
        assert!(trace(&idx, &HashCode::zeros(16).unwrap()).is_err());
    }

    #[test]
    fn single_entry_runner_up_is_k() {
        let mut c = CenterSet::new();
        c.insert(3, code(&[0; 8])).unwrap();
        let idx = build_index(&c, &meta(&[3])).unwrap();
        let r = trace(&idx, &code(&[1, 0, 0, 0, 0, 0, 0, 0])).unwrap();
        assert_eq!((r.distance, r.runner_up_distance), (1, 8));
    }

    #[test]
    fn payload_formula() {
        let mut c = CenterSet::new();
        for g in 0..10 {
            c.insert(g, HashCode::zeros(512).unwrap()).unwrap();
        }
        let idx = build_index(&c, &meta(&(0..10).collect::<Vec<_>>())).unwrap();
        assert_eq!(idx.payload_bytes(), 680);
        let strings: usize = idx.entries().iter().map(|e| 4 + e.label.len() + e.original_ref.len()).sum();
        assert_eq!(encode_index(&idx).len(), HEADER_LEN + 680 + strings);
    }

    #[test]
    fn byte_layout() {
        let bytes = encode_index(&two_index());
        assert_eq!(&bytes[..4], b"VTHX");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..7], &8u16.to_le_bytes());
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &0u32.to_le_bytes());
        assert_eq!(bytes[15], 0x00);
        assert_eq!(&bytes[16..18], &2u16.to_le_bytes());
        assert_eq!(&bytes[18..20], b"g0");
    }

    #[test]
    fn corruption_names_offset() {
        let mut bytes = encode_index(&two_index());
        let err = decode_index(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        bytes[1] ^= 0xFF;
        let err = decode_index(&bytes).unwrap_err().to_string();
        assert!(err.contains("offset 0"), "{err}");
        let mut bytes = encode_index(&two_index());
        bytes[4] = 9;
        assert!(decode_index(&bytes).unwrap_err().to_string().contains("offset 4"));
    }

    fn arb_index() -> impl Strategy<Value = TraceIndex> {
        (1usize..=4, 1usize..12).prop_flat_map(|(bytes, n)| {
            proptest::collection::vec(
                (any::<u32>(), proptest::collection::vec(any::<u8>(), bytes), "[a-z0-9_/é]{0,12}", "[a-z/]{0,12}"),
                n,
            )
            .prop_filter_map("unique ids", move |raw| {
                let entries = raw
                    .into_iter()
                    .map(|(g, c, l, r)| IndexEntry {
                        group_id: g,
                        center: HashCode::from_bytes(c).unwrap(),
                        label: l,
                        original_ref: r,
                    })
                    .collect();
                TraceIndex::from_entries(bytes * 8, entries).ok()
            })
        })
    }

    fn brute(idx: &TraceIndex, q: &HashCode) -> (u32, u32) {
        let mut best = (u32::MAX, u32::MAX);
        for e in idx.entries() {
            let d = q.iter().zip(e.center.iter()).filter(|(a, b)| a != b).count() as u32;
            if (d, e.group_id) < best {
                best = (d, e.group_id);
            }
        }
        (best.1, best.0)
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(idx in arb_index()) {
            let bytes = encode_index(&idx);
            let back = decode_index(&bytes).unwrap();
            prop_assert_eq!(&back, &idx);
            prop_assert_eq!(encode_index(&back), bytes);
        }

        #[test]
        fn trace_matches_brute_force(idx in arb_index(), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed, &[]);
            for _ in 0..20 {
                let q = HashCode::from_bits(&(0..idx.k()).map(|_| rng.gen()).collect::<Vec<bool>>()).unwrap();
                let r = trace(&idx, &q).unwrap();
                prop_assert_eq!((r.group_id, r.distance), brute(&idx, &q));
                prop_assert!(r.distance <= r.runner_up_distance);
            }
        }
    }
}
