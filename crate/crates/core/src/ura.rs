//! Unsourced random access: outer tree code plus inner activity-detection
//! codec.
//!
//! Every user shares one codebook. A `B`-bit payload is split across `S`
//! slots of `J` bits each: slot `s` carries `b_s = J - p_s` fresh payload
//! bits followed by `p_s` parity bits, each parity bit a seeded pseudo-random
//! GF(2) inner product over the payload bits of the *earlier* slots. Within a
//! slot the user transmits the codebook column indexed by its `J`-bit block,
//! so the receiver-side problem per slot is activity detection over `2^J`
//! virtual users; the modified power of index `r` is the sum of the channel
//! strengths of every user that picked `r` (signals add in power; the slot
//! support behaves like an OR channel). The outer decoder stitches per-slot
//! index lists back into payloads by extending only parity-consistent paths.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::detectors::{run_detector, Algorithm, DetectorOptions, Estimate};
use crate::error::{CoreError, Result};
use crate::linalg::CVec;
use crate::system_model::{
    complex_gaussian, rng_from_seed, sample_covariance, split_seed, PilotMatrix, ReceivedBlock,
};
use rand::prelude::*;

/// Hard cap on surviving paths per slot; beyond this the decoder returns a
/// flagged partial result instead of an unbounded search.
pub const MAX_SURVIVING_PATHS: usize = 100_000;

/// Outer tree code definition shared by all users.
#[derive(Debug, Clone)]
pub struct TreeCodeSpec {
    pub s_slots: usize,
    pub j_bits: u32,
    /// Parity bits per slot (`p[0] = 0`).
    pub parity_profile: Vec<u32>,
    /// Total payload bits `B = sum_s (J - p_s)`.
    pub payload_bits: u32,
    pub parity_seed: u64,
    /// Fresh payload bits per slot.
    payload_per_slot: Vec<u32>,
    /// First payload-bit offset per slot.
    payload_offset: Vec<u32>,
    /// Per slot, one GF(2) mask per parity bit over the payload prefix.
    parity_masks: Vec<Vec<u128>>,
}

impl TreeCodeSpec {
    pub fn new(
        s_slots: usize,
        j_bits: u32,
        parity_profile: Vec<u32>,
        parity_seed: u64,
    ) -> Result<Self> {
        if s_slots == 0 || j_bits == 0 || j_bits > 30 {
            return Err(CoreError::InvalidArgument(
                "need 1 <= J <= 30 and at least one slot".into(),
            ));
        }
        if parity_profile.len() != s_slots {
            return Err(CoreError::InvalidArgument(format!(
                "parity profile has {} entries for {} slots",
                parity_profile.len(),
                s_slots
            )));
        }
        if parity_profile[0] != 0 {
            return Err(CoreError::InvalidArgument(
                "the first slot cannot carry parity (p_1 = 0)".into(),
            ));
        }
        if parity_profile.iter().any(|&p| p > j_bits) {
            return Err(CoreError::InvalidArgument(
                "parity bits per slot cannot exceed J".into(),
            ));
        }
        let payload_per_slot: Vec<u32> = parity_profile.iter().map(|&p| j_bits - p).collect();
        let payload_bits: u32 = payload_per_slot.iter().sum();
        if payload_bits == 0 || payload_bits > 128 {
            return Err(CoreError::InvalidArgument(format!(
                "payload of {payload_bits} bits outside the supported 1..=128 range"
            )));
        }
        let mut payload_offset = Vec::with_capacity(s_slots);
        let mut acc = 0u32;
        for &b in &payload_per_slot {
            payload_offset.push(acc);
            acc += b;
        }
        // Parity masks are drawn in one canonical order from the seed: per
        // slot, per parity row, two u64 words masked to the prefix width.
        let mut rng = rng_from_seed(parity_seed);
        let mut parity_masks = Vec::with_capacity(s_slots);
        for s in 0..s_slots {
            let prefix_bits = payload_offset[s];
            let rows = parity_profile[s];
            let mut masks = Vec::with_capacity(rows as usize);
            for _ in 0..rows {
                let lo = rng.gen::<u64>() as u128;
                let hi = rng.gen::<u64>() as u128;
                let raw = (hi << 64) | lo;
                masks.push(raw & low_bits(prefix_bits));
            }
            parity_masks.push(masks);
        }
        Ok(TreeCodeSpec {
            s_slots,
            j_bits,
            parity_profile,
            payload_bits,
            parity_seed,
            payload_per_slot,
            payload_offset,
            parity_masks,
        })
    }

    /// `B = 96, S = 32, J = 12`, profile `[0, 9 x 28, 12, 12, 12]`
    /// (outer rate 1/4); the reference configuration for `L = 100` slots.
    pub fn rate_quarter_b96(parity_seed: u64) -> Self {
        let mut p = vec![9u32; 32];
        p[0] = 0;
        p[29] = 12;
        p[30] = 12;
        p[31] = 12;
        TreeCodeSpec::new(32, 12, p, parity_seed).expect("static profile is valid")
    }

    /// `B = 100, S = 16, J = 15`, profile `[0,7,8,8,9 x 10,13,14]`.
    pub fn b100_s16_j15(parity_seed: u64) -> Self {
        let mut p = vec![9u32; 16];
        p[0] = 0;
        p[1] = 7;
        p[2] = 8;
        p[3] = 8;
        p[14] = 13;
        p[15] = 14;
        TreeCodeSpec::new(16, 15, p, parity_seed).expect("static profile is valid")
    }

    /// `B = 99, S = 10, J = 19`, profile `[0, 9 x 8, 19]`.
    pub fn b99_s10_j19(parity_seed: u64) -> Self {
        let mut p = vec![9u32; 10];
        p[0] = 0;
        p[9] = 19;
        TreeCodeSpec::new(10, 19, p, parity_seed).expect("static profile is valid")
    }

    pub fn outer_rate(&self) -> f64 {
        self.payload_bits as f64 / (self.s_slots as f64 * self.j_bits as f64)
    }

    pub fn payload_per_slot(&self) -> &[u32] {
        &self.payload_per_slot
    }

    /// Parity field of the slot-`s` block for a given payload prefix.
    fn parity_value(&self, s: usize, payload: u128) -> u32 {
        let mut value = 0u32;
        for (row, &mask) in self.parity_masks[s].iter().enumerate() {
            let bit = (mask & payload).count_ones() & 1;
            value |= bit << row;
        }
        value
    }
}

#[inline]
fn low_bits(n: u32) -> u128 {
    if n == 0 {
        0
    } else if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// A payload together with its encoded slot blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    /// Payload, bit `i` at position `i` (LSB first), `i < B`.
    pub bits: u128,
    /// One `J`-bit integer per slot.
    pub blocks: Vec<u32>,
}

/// Per-slot candidate index lists handed to the outer decoder.
#[derive(Debug, Clone)]
pub struct SlotLists {
    pub lists: Vec<Vec<u32>>,
}

/// Outer-decoder output.
#[derive(Debug, Clone)]
pub struct DecodedList {
    /// Recovered payloads, deduplicated and sorted.
    pub messages: Vec<u128>,
    /// Surviving path count after each slot.
    pub surviving_paths_trace: Vec<usize>,
    /// True when the path cap forced a partial search.
    pub truncated: bool,
}

/// Encode a payload: slot `s` is `payload_chunk << p_s | parity`, with the
/// parity rows keyed to the payload bits of earlier slots.
pub fn tree_encode(payload: u128, spec: &TreeCodeSpec) -> Result<FrameMessage> {
    if payload & !low_bits(spec.payload_bits) != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "payload exceeds {} bits",
            spec.payload_bits
        )));
    }
    let mut blocks = Vec::with_capacity(spec.s_slots);
    for s in 0..spec.s_slots {
        let b_s = spec.payload_per_slot[s];
        let p_s = spec.parity_profile[s];
        let chunk = ((payload >> spec.payload_offset[s]) & low_bits(b_s)) as u32;
        let parity = spec.parity_value(s, payload & low_bits(spec.payload_offset[s]));
        blocks.push((chunk << p_s) | parity);
    }
    Ok(FrameMessage {
        bits: payload,
        blocks,
    })
}

/// Breadth-first stitching decoder: a path survives slot `s` iff the parity
/// field of its chosen block matches the checks recomputed from the path's
/// accumulated payload. Returns every complete surviving payload.
pub fn tree_decode(slot_lists: &SlotLists, spec: &TreeCodeSpec) -> Result<DecodedList> {
    if slot_lists.lists.len() != spec.s_slots {
        return Err(CoreError::DimensionMismatch(format!(
            "{} slot lists for {} slots",
            slot_lists.lists.len(),
            spec.s_slots
        )));
    }
    let block_cap = 1u32 << spec.j_bits;
    for (s, list) in slot_lists.lists.iter().enumerate() {
        if let Some(&bad) = list.iter().find(|&&v| v >= block_cap) {
            return Err(CoreError::InvalidArgument(format!(
                "slot {s} index {bad} out of range (< {block_cap})"
            )));
        }
    }

    let mut truncated = false;
    let mut trace = Vec::with_capacity(spec.s_slots);

    // slot 0 carries payload only
    let mut paths: Vec<u128> = slot_lists.lists[0].iter().map(|&v| v as u128).collect();
    paths.sort_unstable();
    paths.dedup();
    trace.push(paths.len());

    for s in 1..spec.s_slots {
        let p_s = spec.parity_profile[s];
        let parity_mask = low_bits(p_s) as u32;
        // bucket the slot's blocks by parity field
        let mut buckets: HashMap<u32, Vec<u32>> = HashMap::new();
        let mut dedup: Vec<u32> = slot_lists.lists[s].clone();
        dedup.sort_unstable();
        dedup.dedup();
        for &v in &dedup {
            buckets.entry(v & parity_mask).or_default().push(v >> p_s);
        }
        let mut next: Vec<u128> = Vec::new();
        'outer: for &path in &paths {
            let want = spec.parity_value(s, path);
            if let Some(chunks) = buckets.get(&want) {
                for &chunk in chunks {
                    next.push(path | ((chunk as u128) << spec.payload_offset[s]));
                    if next.len() >= MAX_SURVIVING_PATHS {
                        truncated = true;
                        break 'outer;
                    }
                }
            }
        }
        paths = next;
        trace.push(paths.len());
        if paths.is_empty() {
            break;
        }
    }
    while trace.len() < spec.s_slots {
        trace.push(0);
    }

    let messages: BTreeSet<u128> = paths.into_iter().collect();
    Ok(DecodedList {
        messages: messages.into_iter().collect(),
        surviving_paths_trace: trace,
        truncated,
    })
}

/// Codeword for one block index: the matching codebook column.
pub fn inner_encode(block_index: u32, codebook: &PilotMatrix) -> Result<CVec> {
    if (block_index as usize) >= codebook.dim_ktot {
        return Err(CoreError::InvalidArgument(format!(
            "block index {block_index} out of range (codebook has {} columns)",
            codebook.dim_ktot
        )));
    }
    Ok(codebook.column_vec(block_index as usize))
}

/// Received block for slot `s`: superposition of the active users' codewords
/// through independent per-slot fading, plus noise.
pub fn ura_transmit_slot(
    messages: &[FrameMessage],
    s: usize,
    codebook: &PilotMatrix,
    lsfc: &[f64],
    m: usize,
    sigma2: f64,
    seed: u64,
) -> Result<ReceivedBlock> {
    if lsfc.len() != messages.len() {
        return Err(CoreError::DimensionMismatch(
            "one fading coefficient per transmitting user required".into(),
        ));
    }
    if m == 0 || !(sigma2 > 0.0) {
        return Err(CoreError::InvalidArgument(
            "need m >= 1 and sigma2 > 0".into(),
        ));
    }
    let l = codebook.dim_l;
    let mut rng = rng_from_seed(seed);
    let mut y = crate::linalg::CMat::zeros(l, m);
    for (user, msg) in messages.iter().enumerate() {
        let idx = *msg.blocks.get(s).ok_or_else(|| {
            CoreError::InvalidArgument(format!("message lacks a block for slot {s}"))
        })? as usize;
        if idx >= codebook.dim_ktot {
            return Err(CoreError::InvalidArgument(format!(
                "slot {s}: block index {idx} outside the codebook"
            )));
        }
        let amp = lsfc[user].sqrt();
        let (ar, ai) = codebook.column(idx);
        for j in 0..m {
            let h = complex_gaussian(&mut rng, 1.0);
            let w = amp * h;
            let lo = j * l;
            let (yr, yi) = y.col_planes_mut(lo, l);
            for i in 0..l {
                yr[i] += ar[i] * w.re - ai[i] * w.im;
                yi[i] += ar[i] * w.im + ai[i] * w.re;
            }
        }
    }
    for j in 0..m {
        for i in 0..l {
            let z = complex_gaussian(&mut rng, sigma2);
            let old = y.get(i, j);
            y.set(i, j, old + z);
        }
    }
    Ok(ReceivedBlock {
        y,
        sigma2,
        m_antennas: m,
    })
}

/// How per-slot activity estimates are hardened into an index list.
#[derive(Debug, Clone)]
pub enum SlotSelection {
    /// Absolute thresholds on the estimated powers, `{r : gamma_r >= nu_s}`;
    /// a single entry is used for every slot.
    Threshold(Vec<f64>),
    /// Keep the `ka + delta` largest entries per slot (requires known `Ka`).
    LargestKaPlus { ka: usize, delta: usize },
}

impl SlotSelection {
    fn nu_for_slot(&self, s: usize) -> Option<f64> {
        match self {
            SlotSelection::Threshold(nus) => {
                Some(if nus.len() == 1 { nus[0] } else { nus[s] })
            }
            SlotSelection::LargestKaPlus { .. } => None,
        }
    }

    fn select(&self, gamma_hat: &[f64], s: usize) -> Vec<u32> {
        match self {
            SlotSelection::Threshold(_) => {
                let nu = self.nu_for_slot(s).unwrap();
                gamma_hat
                    .iter()
                    .enumerate()
                    .filter(|(_, &g)| g >= nu)
                    .map(|(r, _)| r as u32)
                    .collect()
            }
            SlotSelection::LargestKaPlus { ka, delta } => {
                let keep = (ka + delta).min(gamma_hat.len());
                let mut idx: Vec<u32> = (0..gamma_hat.len() as u32).collect();
                idx.sort_unstable_by(|&a, &b| {
                    gamma_hat[b as usize]
                        .partial_cmp(&gamma_hat[a as usize])
                        .unwrap()
                });
                let mut out: Vec<u32> = idx[..keep]
                    .iter()
                    .copied()
                    .filter(|&r| gamma_hat[r as usize] > 0.0)
                    .collect();
                out.sort_unstable();
                out
            }
        }
    }
}

/// Detect the active block indices of one slot: sample covariance, ML
/// coordinate descent (no box constraint; collided powers are unknown sums),
/// then thresholding at `nu_s`.
pub fn ura_decode_slot(
    block: &ReceivedBlock,
    codebook: &PilotMatrix,
    sigma2: f64,
    nu_s: f64,
    detector_options: &DetectorOptions,
) -> Result<Vec<u32>> {
    let est = ura_slot_estimate(block, codebook, sigma2, detector_options)?;
    Ok(SlotSelection::Threshold(vec![nu_s]).select(&est.gamma_hat, 0))
}

/// ML power estimate for one slot (shared by decode paths).
pub fn ura_slot_estimate(
    block: &ReceivedBlock,
    codebook: &PilotMatrix,
    sigma2: f64,
    detector_options: &DetectorOptions,
) -> Result<Estimate> {
    let cov = sample_covariance(block);
    run_detector(codebook, &cov, sigma2, detector_options, Algorithm::Ml)
}

/// Noise variance from the per-bit energy budget: the codebook is normalized
/// to unit received symbol energy, so `sigma2 = 1 / (R * Eb/N0)` with the
/// per-user rate `R = B / (S L)`.
pub fn ebn0_to_sigma2(spec: &TreeCodeSpec, l: usize, ebn0_db: f64) -> f64 {
    let rate = spec.payload_bits as f64 / (spec.s_slots * l) as f64;
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    1.0 / (rate * ebn0)
}

/// Outcome of one simulated frame.
#[derive(Debug, Clone)]
pub struct UraFrameOutcome {
    /// Fraction of transmitted payloads missing from the decoded list.
    pub p_md: f64,
    /// Fraction of decoded payloads that were never sent (0 for an empty list).
    pub p_fa: f64,
    pub decoded_count: usize,
    pub max_surviving_paths: usize,
    pub truncated: bool,
}

/// Simulate one frame end to end: sample `ka` uniform payloads, tree-encode,
/// transmit each slot through independent fading (all strengths fixed to 1),
/// run the inner ML detector per slot, stitch with the outer decoder, and
/// score message-level misdetections and false alarms.
///
/// Slots are independent and decoded in parallel.
pub fn ura_end_to_end(
    spec: &TreeCodeSpec,
    codebook: &PilotMatrix,
    ka: usize,
    m: usize,
    ebn0_db: f64,
    selection: &SlotSelection,
    detector_options: &DetectorOptions,
    seed: u64,
) -> Result<UraFrameOutcome> {
    if codebook.dim_ktot != 1usize << spec.j_bits {
        return Err(CoreError::DimensionMismatch(format!(
            "codebook has {} columns, spec wants 2^{} = {}",
            codebook.dim_ktot,
            spec.j_bits,
            1usize << spec.j_bits
        )));
    }
    if ka == 0 {
        return Err(CoreError::InvalidArgument("need at least one user".into()));
    }
    let sigma2 = ebn0_to_sigma2(spec, codebook.dim_l, ebn0_db);
    let mut rng = rng_from_seed(seed);
    let payload_mask = low_bits(spec.payload_bits);
    let payloads: Vec<u128> = (0..ka)
        .map(|_| {
            let lo = rng.gen::<u64>() as u128;
            let hi = rng.gen::<u64>() as u128;
            ((hi << 64) | lo) & payload_mask
        })
        .collect();
    let messages: Vec<FrameMessage> = payloads
        .iter()
        .map(|&p| tree_encode(p, spec))
        .collect::<Result<_>>()?;
    let lsfc = vec![1.0f64; ka];

    let lists: Vec<Vec<u32>> = (0..spec.s_slots)
        .into_par_iter()
        .map(|s| -> Result<Vec<u32>> {
            let slot_seed = split_seed(seed, 0x5107 + s as u64);
            let block =
                ura_transmit_slot(&messages, s, codebook, &lsfc, m, sigma2, slot_seed)?;
            let est = ura_slot_estimate(&block, codebook, sigma2, detector_options)?;
            Ok(selection.select(&est.gamma_hat, s))
        })
        .collect::<Result<_>>()?;

    let decoded = tree_decode(&SlotLists { lists }, spec)?;
    let decoded_set: BTreeSet<u128> = decoded.messages.iter().copied().collect();
    let sent: BTreeSet<u128> = payloads.iter().copied().collect();
    let missed = payloads
        .iter()
        .filter(|p| !decoded_set.contains(p))
        .count();
    let false_alarms = decoded_set.iter().filter(|p| !sent.contains(p)).count();
    let p_md = missed as f64 / ka as f64;
    let p_fa = if decoded_set.is_empty() {
        0.0
    } else {
        false_alarms as f64 / decoded_set.len() as f64
    };
    Ok(UraFrameOutcome {
        p_md,
        p_fa,
        decoded_count: decoded_set.len(),
        max_surviving_paths: decoded
            .surviving_paths_trace
            .iter()
            .copied()
            .max()
            .unwrap_or(0),
        truncated: decoded.truncated,
    })
}

/// Pick a single global slot threshold by equalizing slot-level misdetection
/// and false-alarm rates over a few calibration frames.
pub fn calibrate_threshold(
    spec: &TreeCodeSpec,
    codebook: &PilotMatrix,
    ka: usize,
    m: usize,
    ebn0_db: f64,
    detector_options: &DetectorOptions,
    seed: u64,
    frames: usize,
) -> Result<f64> {
    let sigma2 = ebn0_to_sigma2(spec, codebook.dim_l, ebn0_db);
    let mut rng = rng_from_seed(seed);
    let payload_mask = low_bits(spec.payload_bits);
    let mut estimates: Vec<(Vec<f64>, BTreeSet<u32>)> = Vec::new();
    for frame in 0..frames {
        let payloads: Vec<u128> = (0..ka)
            .map(|_| {
                let lo = rng.gen::<u64>() as u128;
                let hi = rng.gen::<u64>() as u128;
                ((hi << 64) | lo) & payload_mask
            })
            .collect();
        let messages: Vec<FrameMessage> = payloads
            .iter()
            .map(|&p| tree_encode(p, spec))
            .collect::<Result<_>>()?;
        let lsfc = vec![1.0f64; ka];
        let per_slot: Vec<(Vec<f64>, BTreeSet<u32>)> = (0..spec.s_slots)
            .into_par_iter()
            .map(|s| -> Result<(Vec<f64>, BTreeSet<u32>)> {
                let slot_seed = split_seed(seed, 0xCA11 + (frame * spec.s_slots + s) as u64);
                let block =
                    ura_transmit_slot(&messages, s, codebook, &lsfc, m, sigma2, slot_seed)?;
                let est = ura_slot_estimate(&block, codebook, sigma2, detector_options)?;
                let truth: BTreeSet<u32> = messages.iter().map(|msg| msg.blocks[s]).collect();
                Ok((est.gamma_hat, truth))
            })
            .collect::<Result<_>>()?;
        estimates.extend(per_slot);
    }

    // sweep candidate thresholds, equalize pooled md/fa rates
    let total = codebook.dim_ktot;
    let mut best = (f64::INFINITY, 0.5);
    for step in 1..200 {
        let nu = step as f64 * 0.01; // 0.01 .. 1.99 in units of the unit LSFC
        let mut md = 0usize;
        let mut md_den = 0usize;
        let mut fa = 0usize;
        let mut fa_den = 0usize;
        for (gamma, truth) in &estimates {
            for (r, &g) in gamma.iter().enumerate() {
                let active = truth.contains(&(r as u32));
                if active {
                    md_den += 1;
                    if g < nu {
                        md += 1;
                    }
                } else if g >= nu {
                    fa += 1;
                }
            }
            fa_den += total - truth.len();
        }
        let md_rate = md as f64 / md_den.max(1) as f64;
        let fa_rate = fa as f64 / fa_den.max(1) as f64;
        let gap = (md_rate - fa_rate).abs();
        if gap < best.0 {
            best = (gap, nu);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::generate_pilots;

    fn toy_spec() -> TreeCodeSpec {
        // S = 4, J = 4, profile [0, 2, 2, 4] -> B = 4 + 2 + 2 + 0 = 8
        TreeCodeSpec::new(4, 4, vec![0, 2, 2, 4], 7).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(TreeCodeSpec::new(4, 4, vec![1, 2, 2, 4], 7).is_err()); // p1 != 0
        assert!(TreeCodeSpec::new(4, 4, vec![0, 5, 2, 4], 7).is_err()); // p > J
        assert!(TreeCodeSpec::new(3, 4, vec![0, 2], 7).is_err()); // length
        let reference = TreeCodeSpec::rate_quarter_b96(1);
        assert_eq!(reference.payload_bits, 96);
        assert_eq!(reference.s_slots, 32);
        assert!((reference.outer_rate() - 0.25).abs() < 1e-15);
        // payload split: 12 fresh bits, then 28 slots of 3, then none
        assert_eq!(reference.payload_per_slot()[0], 12);
        assert_eq!(reference.payload_per_slot()[1..29], [3; 28]);
        assert_eq!(reference.payload_per_slot()[29..], [0, 0, 0]);
        assert_eq!(TreeCodeSpec::b100_s16_j15(1).payload_bits, 100);
        assert!((TreeCodeSpec::b100_s16_j15(1).outer_rate() - 100.0 / 240.0).abs() < 1e-15);
        assert_eq!(TreeCodeSpec::b99_s10_j19(1).payload_bits, 99);
    }

    #[test]
    fn encode_without_parity_is_raw_chunking() {
        let spec = TreeCodeSpec::new(2, 4, vec![0, 0], 3).unwrap();
        let msg = tree_encode(0b1010_0110, &spec).unwrap();
        assert_eq!(msg.blocks, vec![0b0110, 0b1010]);
    }

    #[test]
    fn bit_flip_changes_owning_block() {
        let spec = toy_spec();
        for bit in 0..spec.payload_bits {
            let a = tree_encode(0, &spec).unwrap();
            let b = tree_encode(1u128 << bit, &spec).unwrap();
            // locate the slot owning this payload bit
            let owner = (0..spec.s_slots)
                .rev()
                .find(|&s| spec.payload_offset[s] <= bit)
                .unwrap();
            assert_ne!(a.blocks[owner], b.blocks[owner], "bit {bit}");
        }
    }

    #[test]
    fn encode_is_deterministic_in_seed() {
        let s1 = TreeCodeSpec::rate_quarter_b96(11);
        let s2 = TreeCodeSpec::rate_quarter_b96(11);
        let s3 = TreeCodeSpec::rate_quarter_b96(12);
        let payload = 0x0123_4567_89AB_CDEFu128 & ((1 << 96) - 1);
        assert_eq!(
            tree_encode(payload, &s1).unwrap().blocks,
            tree_encode(payload, &s2).unwrap().blocks
        );
        assert_ne!(
            tree_encode(payload, &s1).unwrap().blocks,
            tree_encode(payload, &s3).unwrap().blocks
        );
    }

    #[test]
    fn single_message_round_trip() {
        let spec = toy_spec();
        let msg = tree_encode(0xA5, &spec).unwrap();
        let lists = SlotLists {
            lists: msg.blocks.iter().map(|&b| vec![b]).collect(),
        };
        let out = tree_decode(&lists, &spec).unwrap();
        assert_eq!(out.messages, vec![0xA5]);
        assert!(!out.truncated);
    }

    #[test]
    fn batch_round_trip_recovers_all_messages() {
        let spec = TreeCodeSpec::rate_quarter_b96(21);
        let mut rng = rng_from_seed(22);
        let payloads: Vec<u128> = (0..50)
            .map(|_| {
                let lo = rng.gen::<u64>() as u128;
                let hi = rng.gen::<u64>() as u128;
                ((hi << 64) | lo) & ((1u128 << 96) - 1)
            })
            .collect();
        let mut lists = vec![BTreeSet::new(); spec.s_slots];
        for &p in &payloads {
            let msg = tree_encode(p, &spec).unwrap();
            for (s, &b) in msg.blocks.iter().enumerate() {
                lists[s].insert(b);
            }
        }
        let lists = SlotLists {
            lists: lists
                .into_iter()
                .map(|set| set.into_iter().collect())
                .collect(),
        };
        let out = tree_decode(&lists, &spec).unwrap();
        for p in payloads {
            assert!(out.messages.contains(&p));
        }
    }

    #[test]
    fn spurious_block_rejected_by_parity() {
        let spec = toy_spec();
        let msg = tree_encode(0x5C, &spec).unwrap();
        let mut lists: Vec<Vec<u32>> = msg.blocks.iter().map(|&b| vec![b]).collect();
        // inject a block into slot 1 whose parity field is wrong for every path
        let intruder = msg.blocks[1] ^ 0b01; // flip a parity bit
        lists[1].push(intruder);
        let out = tree_decode(&SlotLists { lists }, &spec).unwrap();
        assert_eq!(out.messages, vec![0x5C]);
    }

    #[test]
    fn decoded_messages_satisfy_parity_soundness() {
        // every decoded payload re-encodes into blocks contained in the lists
        let spec = toy_spec();
        let mut rng = rng_from_seed(31);
        for _ in 0..50 {
            let lists: Vec<Vec<u32>> = (0..spec.s_slots)
                .map(|_| {
                    let n = rng.gen_range(1..6);
                    (0..n).map(|_| rng.gen_range(0..16u32)).collect()
                })
                .collect();
            let out = tree_decode(
                &SlotLists {
                    lists: lists.clone(),
                },
                &spec,
            )
            .unwrap();
            for &payload in &out.messages {
                let re = tree_encode(payload, &spec).unwrap();
                for (s, &b) in re.blocks.iter().enumerate() {
                    assert!(lists[s].contains(&b), "slot {s} lacks block {b}");
                }
            }
        }
    }

    #[test]
    fn inner_encode_bounds() {
        let codebook = generate_pilots(8, 16, 41).unwrap();
        assert!(inner_encode(0, &codebook).is_ok());
        assert!(inner_encode(15, &codebook).is_ok());
        assert!(inner_encode(16, &codebook).is_err());
        let col = inner_encode(3, &codebook).unwrap();
        assert_eq!(col.len(), 8);
        assert!((col.norm_sqr() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn empty_slot_is_pure_noise() {
        let codebook = generate_pilots(8, 16, 51).unwrap();
        let block = ura_transmit_slot(&[], 0, &codebook, &[], 4, 0.5, 52).unwrap();
        // noise-only: average symbol power near sigma2
        let p = block.y.frob_norm_sqr() / (8.0 * 4.0);
        assert!((p - 0.5).abs() < 0.25, "noise power {p}");
    }

    #[test]
    fn colliding_users_add_in_power() {
        // two users on the same block index: per-antenna power ~ g1 + g2
        let spec = TreeCodeSpec::new(1, 4, vec![0], 1).unwrap();
        let m1 = tree_encode(0x9, &spec).unwrap();
        let m2 = tree_encode(0x9, &spec).unwrap();
        let codebook = generate_pilots(16, 16, 61).unwrap();
        let m = 4000;
        let block = ura_transmit_slot(
            &[m1, m2],
            0,
            &codebook,
            &[1.0, 2.0],
            m,
            1e-9,
            62,
        )
        .unwrap();
        // project onto the transmitted column: per-antenna coefficient power
        // should match g1 + g2 = 3
        let a = codebook.column_vec(9);
        let mut acc = 0.0;
        for j in 0..m {
            let y = block.y.col_vec(j);
            let c = a.dot_conj(&y) / 16.0;
            acc += c.norm_sqr();
        }
        let mean = acc / m as f64;
        assert!((mean - 3.0).abs() < 0.25, "collided power {mean}");
    }

    #[test]
    fn slot_decode_noiseless_single_user() {
        let spec = TreeCodeSpec::new(1, 6, vec![0], 1).unwrap();
        let msg = tree_encode(0x2B, &spec).unwrap();
        let codebook = generate_pilots(32, 64, 71).unwrap();
        let block =
            ura_transmit_slot(&[msg.clone()], 0, &codebook, &[1.0], 64, 1e-6, 72).unwrap();
        let opts = DetectorOptions::defaults_large(1e-6);
        let got = ura_decode_slot(&block, &codebook, 1e-6, 0.5, &opts).unwrap();
        assert_eq!(got, vec![msg.blocks[0]]);
    }

    #[test]
    fn ebn0_conversion_reference_point() {
        let spec = TreeCodeSpec::rate_quarter_b96(1);
        // R = 96 / 3200 = 0.03; at 0 dB sigma2 = 1/R
        let s2 = ebn0_to_sigma2(&spec, 100, 0.0);
        assert!((s2 - 3200.0 / 96.0).abs() < 1e-9);
    }

    #[test]
    fn end_to_end_single_user_high_snr() {
        let spec = TreeCodeSpec::new(4, 6, vec![0, 3, 3, 6], 81).unwrap();
        assert_eq!(spec.payload_bits, 12);
        let codebook = generate_pilots(24, 64, 82).unwrap();
        let opts = DetectorOptions::defaults_large(1.0);
        let out = ura_end_to_end(
            &spec,
            &codebook,
            1,
            32,
            20.0,
            &SlotSelection::Threshold(vec![0.5]),
            &opts,
            83,
        )
        .unwrap();
        assert_eq!(out.p_md, 0.0);
        assert_eq!(out.p_fa, 0.0);
        assert_eq!(out.decoded_count, 1);
    }
}
