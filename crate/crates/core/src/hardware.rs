use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-access and per-operation energy costs in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTable {
    pub dram_pj_per_byte: f64,
    pub l1_pj_per_byte: f64,
    pub l0_pj_per_byte: f64,
    pub mac_pj_per_op: f64,
    pub vec_pj_per_op: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        EnergyTable {
            dram_pj_per_byte: 160.0,
            l1_pj_per_byte: 8.0,
            l0_pj_per_byte: 1.0,
            mac_pj_per_op: 0.5,
            vec_pj_per_op: 0.5,
        }
    }
}

/// The modeled accelerator: per core one systolic MAC array and one SIMD
/// vector unit, a shared L1 scratchpad, small per-engine L0 buffers that are
/// tracked for energy only, and a single DRAM link with one inbound and one
/// outbound channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareSpec {
    pub cores: usize,
    pub mac_rows: usize,
    pub mac_cols: usize,
    pub vec_lanes: usize,
    pub softmax_exp_cost: u64,
    pub l1_bytes: u64,
    pub l0_bytes: u64,
    pub dram_bytes: u64,
    pub clock_hz: u64,
    pub dram_bw_bytes_per_s: u64,
    pub energy: EnergyTable,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec {
            cores: 2,
            mac_rows: 16,
            mac_cols: 16,
            vec_lanes: 256,
            softmax_exp_cost: 4,
            l1_bytes: 5 * 1024 * 1024,
            l0_bytes: 64 * 1024,
            dram_bytes: 6_000_000_000,
            clock_hz: 3_750_000_000,
            dram_bw_bytes_per_s: 30_000_000_000,
            energy: EnergyTable::default(),
        }
    }
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cores", self.cores),
            ("mac_rows", self.mac_rows),
            ("mac_cols", self.mac_cols),
            ("vec_lanes", self.vec_lanes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("hardware {name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("l1_bytes", self.l1_bytes),
            ("l0_bytes", self.l0_bytes),
            ("dram_bytes", self.dram_bytes),
            ("clock_hz", self.clock_hz),
            ("dram_bw_bytes_per_s", self.dram_bw_bytes_per_s),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("hardware {name} must be positive")));
            }
        }
        if !(self.l0_bytes < self.l1_bytes && self.l1_bytes < self.dram_bytes) {
            return Err(Error::Config(
                "memory sizes must increase up the hierarchy: l0 < l1 < dram".into(),
            ));
        }
        let e = &self.energy;
        for (name, v) in [
            ("dram_pj_per_byte", e.dram_pj_per_byte),
            ("l1_pj_per_byte", e.l1_pj_per_byte),
            ("l0_pj_per_byte", e.l0_pj_per_byte),
            ("mac_pj_per_op", e.mac_pj_per_op),
            ("vec_pj_per_op", e.vec_pj_per_op),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("energy {name} must be positive")));
            }
        }
        if !(e.dram_pj_per_byte > e.l1_pj_per_byte && e.l1_pj_per_byte > e.l0_pj_per_byte) {
            return Err(Error::Config(
                "energy per byte must decrease down the hierarchy: dram > l1 > l0".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: HardwareSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("hardware config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Cycles for one (m x kk) @ (kk x n) tile on the systolic array: the
    /// array processes a mac_rows x mac_cols output patch per pass, each pass
    /// streaming the kk-deep reduction.
    pub fn mac_tile_cycles(&self, m: usize, kk: usize, n: usize) -> u64 {
        m.div_ceil(self.mac_rows) as u64 * n.div_ceil(self.mac_cols) as u64 * kk as u64
    }

    /// Cycles for a row-wise softmax over `n_rows` rows of `row_len`
    /// elements: four single-cycle passes (max, subtract, sum, divide) plus
    /// the exponential, each striped across vec_lanes lanes.
    pub fn vec_softmax_cycles(&self, row_len: usize, n_rows: usize) -> u64 {
        n_rows as u64 * (4 + self.softmax_exp_cost) * row_len.div_ceil(self.vec_lanes) as u64
    }

    /// Cycles to move `bytes` over the DRAM link, rounded up. The product is
    /// widened to u128 so large transfers cannot overflow.
    pub fn dram_transfer_cycles(&self, bytes: u64) -> u64 {
        let num = bytes as u128 * self.clock_hz as u128;
        let den = self.dram_bw_bytes_per_s as u128;
        num.div_ceil(den) as u64
    }
}

/// Multiply-accumulate count for one matmul tile.
pub fn matmul_ops(m: usize, kk: usize, n: usize) -> u64 {
    m as u64 * kk as u64 * n as u64
}

/// Elementwise-operation count for a softmax: five passes over every element.
pub fn softmax_ops(row_len: usize, n_rows: usize) -> u64 {
    5 * n_rows as u64 * row_len as u64
}

/// Running totals of operation counts and bytes moved at each level.
/// `mac_ops` includes re-executed work; `redo_mac_ops` isolates that share.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounters {
    pub mac_ops: u64,
    pub redo_mac_ops: u64,
    pub vec_ops: u64,
    pub l0_read_bytes: u64,
    pub l0_write_bytes: u64,
    pub l1_read_bytes: u64,
    pub l1_write_bytes: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
}

impl AccessCounters {
    pub fn merge(&mut self, other: &AccessCounters) {
        self.mac_ops += other.mac_ops;
        self.redo_mac_ops += other.redo_mac_ops;
        self.vec_ops += other.vec_ops;
        self.l0_read_bytes += other.l0_read_bytes;
        self.l0_write_bytes += other.l0_write_bytes;
        self.l1_read_bytes += other.l1_read_bytes;
        self.l1_write_bytes += other.l1_write_bytes;
        self.dram_read_bytes += other.dram_read_bytes;
        self.dram_write_bytes += other.dram_write_bytes;
    }

    pub fn energy(&self, table: &EnergyTable) -> EnergyBreakdown {
        let dram_pj =
            (self.dram_read_bytes + self.dram_write_bytes) as f64 * table.dram_pj_per_byte;
        let l1_pj = (self.l1_read_bytes + self.l1_write_bytes) as f64 * table.l1_pj_per_byte;
        let l0_pj = (self.l0_read_bytes + self.l0_write_bytes) as f64 * table.l0_pj_per_byte;
        let mac_pj = self.mac_ops as f64 * table.mac_pj_per_op;
        let vec_pj = self.vec_ops as f64 * table.vec_pj_per_op;
        EnergyBreakdown {
            dram_pj,
            l1_pj,
            l0_pj,
            mac_pj,
            vec_pj,
            total_pj: dram_pj + l1_pj + l0_pj + mac_pj + vec_pj,
        }
    }
}

/// Energy split by source, all in picojoules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram_pj: f64,
    pub l1_pj: f64,
    pub l0_pj: f64,
    pub mac_pj: f64,
    pub vec_pj: f64,
    pub total_pj: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_tile_cycle_counts() {
        let hw = HardwareSpec::default();
        assert_eq!(hw.mac_tile_cycles(16, 64, 16), 64);
        assert_eq!(hw.mac_tile_cycles(32, 64, 32), 256);
        assert_eq!(hw.mac_tile_cycles(1, 1, 1), 1);
        assert_eq!(hw.mac_tile_cycles(17, 1, 16), 2);
    }

    #[test]
    fn vec_softmax_cycle_counts() {
        let hw = HardwareSpec::default();
        assert_eq!(hw.vec_softmax_cycles(512, 1), 16);
        assert_eq!(hw.vec_softmax_cycles(512, 64), 1024);
        let cheap = HardwareSpec { softmax_exp_cost: 1, ..HardwareSpec::default() };
        assert_eq!(cheap.vec_softmax_cycles(256, 1), 5);
    }

    #[test]
    fn dram_cycles_round_up() {
        let hw = HardwareSpec::default();
        assert_eq!(hw.dram_transfer_cycles(1 << 20), 131072);
        assert_eq!(hw.dram_transfer_cycles(30), 4);
        assert_eq!(hw.dram_transfer_cycles(0), 0);
    }

    #[test]
    fn hierarchy_order_enforced() {
        let mut hw = HardwareSpec::default();
        assert!(hw.validate().is_ok());
        hw.energy.l1_pj_per_byte = 200.0;
        assert!(hw.validate().is_err());
        hw.energy.l1_pj_per_byte = 8.0;
        hw.energy.l0_pj_per_byte = 0.0;
        assert!(hw.validate().is_err());
    }

    #[test]
    fn toml_round_trip_with_partial_fields() {
        let hw = HardwareSpec::from_toml_str("cores = 4\n[energy]\ndram_pj_per_byte = 200.0\n")
            .unwrap();
        assert_eq!(hw.cores, 4);
        assert_eq!(hw.l1_bytes, 5 * 1024 * 1024);
        assert_eq!(hw.energy.dram_pj_per_byte, 200.0);
        assert_eq!(hw.energy.l1_pj_per_byte, 8.0);

        let bad = HardwareSpec::from_toml_str("cores = 0\n");
        assert!(bad.is_err());
    }

    #[test]
    fn energy_combines_all_sources() {
        let counters = AccessCounters {
            mac_ops: 10,
            redo_mac_ops: 2,
            vec_ops: 4,
            l0_read_bytes: 8,
            l0_write_bytes: 2,
            l1_read_bytes: 5,
            l1_write_bytes: 5,
            dram_read_bytes: 3,
            dram_write_bytes: 1,
        };
        let e = counters.energy(&EnergyTable::default());
        assert_eq!(e.dram_pj, 640.0);
        assert_eq!(e.l1_pj, 80.0);
        assert_eq!(e.l0_pj, 10.0);
        assert_eq!(e.mac_pj, 5.0);
        assert_eq!(e.vec_pj, 2.0);
        assert_eq!(e.total_pj, 737.0);
    }
}
