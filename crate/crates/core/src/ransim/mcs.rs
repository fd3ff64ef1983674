//! Link adaptation: an eight-entry rate table with Shannon-gap SINR
//! thresholds and a logistic transport-block error model.
//!
//! The error curve stands in for link-level BLER tables: the midpoint sits at
//! the rate's threshold for a reference-size block and shifts right as blocks
//! grow, so error probability is monotone decreasing in SINR and monotone
//! nondecreasing in block size.

/// Resource elements per resource block per TTI (12 subcarriers x 14 symbols).
pub const RES_ELEMENTS_PER_RB: u32 = 168;
/// Block size at which the logistic midpoint sits exactly on the threshold.
pub const REFERENCE_BLOCK_BYTES: u64 = 32;
/// Logistic slope, per dB.
const PER_SLOPE: f64 = 1.5;
/// Threshold shift per decade of block size, dB.
const SIZE_SHIFT_DB_PER_DECADE: f64 = 1.0;
/// Shannon gap to capacity, dB.
const SHANNON_GAP_DB: f64 = 3.0;

/// Index into the rate table.
pub type McsIndex = usize;

/// One modulation-and-coding option.
#[derive(Debug, Clone, Copy)]
pub struct McsEntry {
    /// Spectral efficiency, information bits per resource element.
    pub bits_per_re: f64,
    /// SINR threshold of the logistic error curve at reference block size, dB.
    pub threshold_db: f64,
}

impl McsEntry {
    pub fn bits_per_rb(&self) -> u32 {
        (self.bits_per_re * RES_ELEMENTS_PER_RB as f64).round() as u32
    }
}

/// The documented eight-entry rate table.
#[derive(Debug, Clone)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        let efficiencies = [0.25, 0.5, 1.0, 1.5, 2.25, 3.0, 4.0, 5.5];
        let entries = efficiencies
            .iter()
            .map(|&eff| McsEntry { bits_per_re: eff, threshold_db: shannon_gap_threshold_db(eff) })
            .collect();
        McsTable { entries }
    }
}

/// SINR needed to support `bits_per_re` at a fixed gap to capacity.
pub fn shannon_gap_threshold_db(bits_per_re: f64) -> f64 {
    let gap = 10f64.powf(SHANNON_GAP_DB / 10.0);
    10.0 * (gap * (2f64.powf(bits_per_re) - 1.0)).log10()
}

impl McsTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: McsIndex) -> &McsEntry {
        &self.entries[index]
    }

    /// Highest-rate entry whose predicted error probability at the SINR
    /// estimate stays within the target BLER; the lowest entry otherwise.
    pub fn select_mcs(&self, sinr_estimate_db: f64, target_bler: f64) -> McsIndex {
        let mut chosen = 0;
        for (i, _) in self.entries.iter().enumerate() {
            if per_from_sinr(sinr_estimate_db, self, i, REFERENCE_BLOCK_BYTES) <= target_bler {
                chosen = i;
            }
        }
        chosen
    }
}

/// Transport-block error probability from SINR, rate, and block size.
pub fn per_from_sinr(
    sinr_db: f64,
    table: &McsTable,
    mcs: McsIndex,
    block_bytes: u64,
) -> f64 {
    debug_assert!(block_bytes > 0);
    let size_shift = SIZE_SHIFT_DB_PER_DECADE
        * (block_bytes.max(1) as f64 / REFERENCE_BLOCK_BYTES as f64).log10();
    let threshold = table.entry(mcs).threshold_db + size_shift;
    if sinr_db == f64::NEG_INFINITY {
        return 1.0;
    }
    1.0 / (1.0 + (PER_SLOPE * (sinr_db - threshold)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn midpoint_sits_on_threshold_at_reference_size() {
        let table = McsTable::default();
        for i in 0..table.len() {
            let theta = table.entry(i).threshold_db;
            assert_abs_diff_eq!(
                per_from_sinr(theta, &table, i, REFERENCE_BLOCK_BYTES),
                0.5,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn per_asymptotes() {
        let table = McsTable::default();
        assert!(per_from_sinr(200.0, &table, 3, 64) < 1e-12);
        assert!(per_from_sinr(-200.0, &table, 3, 64) > 1.0 - 1e-12);
        assert_eq!(per_from_sinr(f64::NEG_INFINITY, &table, 0, 64), 1.0);
    }

    #[test]
    fn low_sinr_falls_back_to_lowest_rate() {
        let table = McsTable::default();
        assert_eq!(table.select_mcs(-10.0, 0.1), 0);
    }

    #[test]
    fn high_sinr_saturates_at_highest_rate() {
        let table = McsTable::default();
        assert_eq!(table.select_mcs(40.0, 0.1), table.len() - 1);
    }

    #[test]
    fn selected_rate_is_nondecreasing_in_sinr() {
        // Sweep oracle across the whole estimate range.
        let table = McsTable::default();
        let mut last = 0;
        let mut sinr = -15.0;
        while sinr <= 45.0 {
            let mcs = table.select_mcs(sinr, 0.1);
            assert!(mcs >= last, "rate dropped at {sinr} dB");
            last = mcs;
            sinr += 0.1;
        }
        assert_eq!(last, table.len() - 1);
    }

    proptest! {
        /// Doubling block size never decreases the error probability.
        #[test]
        fn per_monotone_in_block_size(
            sinr in -30.0f64..50.0,
            mcs in 0usize..8,
            bytes in 1u64..1_000_000,
        ) {
            let table = McsTable::default();
            let small = per_from_sinr(sinr, &table, mcs, bytes);
            let large = per_from_sinr(sinr, &table, mcs, bytes * 2);
            prop_assert!(large >= small);
        }

        /// Error probability is monotone decreasing in SINR.
        #[test]
        fn per_monotone_in_sinr(
            sinr in -30.0f64..50.0,
            delta in 0.01f64..20.0,
            mcs in 0usize..8,
        ) {
            let table = McsTable::default();
            prop_assert!(per_from_sinr(sinr + delta, &table, mcs, 64) <= per_from_sinr(sinr, &table, mcs, 64));
        }
    }
}
