//! Scenario configuration: chain, relayer, workload and sweep definitions.
//!
//! Calibrated defaults live here and in `scenarios/defaults.toml`; values
//! marked "calibrated" were fitted once with `ibcsim calibrate` against the
//! reference measurements and are not first-principles constants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into `Scenario::chains`; chain 0 is the transfer source.
pub type ChainId = usize;

pub const SOURCE: ChainId = 0;
pub const DEST: ChainId = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

/// Per-message gas figures. The defaults are the reported per-100-message
/// transaction totals divided by 100 and rounded to integers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GasConfig {
    pub transfer: u64,
    pub recv: u64,
    pub ack: u64,
    pub timeout: u64,
    /// Milli-tokens charged per unit of gas (10 = 0.01 token/gas).
    pub price_milli_per_gas: u64,
}

impl Default for GasConfig {
    fn default() -> Self {
        GasConfig {
            transfer: 36_692,
            recv: 72_387,
            ack: 31_075,
            timeout: 40_000, // unreported upstream; declared assumption
            price_milli_per_gas: 10,
        }
    }
}

/// Service-time model of the chain's single-threaded RPC server.
///
/// Every query occupies the server for its full service time; the server
/// handles exactly one query at a time, so overload shows up as queueing
/// latency rather than errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RpcConfig {
    /// broadcast_tx: base + per-message cost. The per-message term is what
    /// makes very large submission rounds outlast their block window.
    pub broadcast_base_us: u64,
    pub broadcast_per_msg_us: u64,
    /// confirm_tx (tx-hash status lookup).
    pub confirm_base_us: u64,
    /// Per page-query base for packet-data pulls.
    pub pull_base_us: u64,
    /// Per-message scan rate for transfer-data pulls (calibrated: 2.9s per
    /// 2,000-message block content query).
    pub pull_per_transfer_msg_us: u64,
    /// Per-message scan rate for recv/ack-data pulls (calibrated: 5.7s per
    /// 2,000-message block content query).
    pub pull_per_recv_msg_us: u64,
    /// Block content queries above this many same-kind messages no longer
    /// resolve with an indexed lookup; each chunk query rescans a slice of
    /// the block (pagination).
    pub pull_page_threshold_msgs: u64,
    /// Fraction (percent) of the block's same-kind messages scanned by each
    /// chunk query once past the pagination threshold.
    pub pull_scan_percent: u64,
    /// Upper bound on messages scanned per chunk query.
    pub pull_scan_cap_msgs: u64,
    /// Targeted commitment/receipt proof queries (used by packet clearing):
    /// base + per-packet, no block scan.
    pub proof_base_us: u64,
    pub proof_per_packet_us: u64,
}

impl Default for RpcConfig {
    fn default() -> Self {
        RpcConfig {
            broadcast_base_us: 3_000,
            broadcast_per_msg_us: 270,
            confirm_base_us: 3_000,
            pull_base_us: 50_000,
            pull_per_transfer_msg_us: 1_450,
            pull_per_recv_msg_us: 2_850,
            pull_page_threshold_msgs: 750,
            pull_scan_percent: 40,
            pull_scan_cap_msgs: 1_500,
            proof_base_us: 30_000,
            proof_per_packet_us: 1_000,
        }
    }
}

/// Bytes emitted on the block event stream per committed message, by kind.
/// A block whose total event payload exceeds the stream cap delivers nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EventBytesConfig {
    pub transfer: u64,
    pub recv: u64,
    pub ack: u64,
    pub timeout: u64,
    pub error: u64,
}

impl Default for EventBytesConfig {
    fn default() -> Self {
        EventBytesConfig { transfer: 200, recv: 250, ack: 150, timeout: 150, error: 80 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub min_block_interval_ms: u64,
    /// Fixed processing/propagation overhead of a non-empty block
    /// (calibrated).
    pub block_base_overhead_ms: u64,
    /// Per-message commit processing overhead (calibrated).
    pub block_per_msg_overhead_us: u64,
    /// Hard cap on messages drained into one block.
    pub block_max_msgs: u64,
    /// Mempool admission cap in messages; beyond it submissions tail-drop.
    /// Default is a calibration output.
    pub mempool_max_msgs: u64,
    pub max_msgs_per_tx: u64,
    pub gas: GasConfig,
    pub rpc: RpcConfig,
    /// WebSocket-style event stream cap (16 MiB).
    pub event_stream_cap_bytes: u64,
    pub event_bytes: EventBytesConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            min_block_interval_ms: 5_000,
            block_base_overhead_ms: 2_200,
            block_per_msg_overhead_us: 550,
            block_max_msgs: 30_000,
            mempool_max_msgs: 60_000,
            max_msgs_per_tx: 100,
            gas: GasConfig::default(),
            rpc: RpcConfig::default(),
            event_stream_cap_bytes: 16 * 1024 * 1024,
            event_bytes: EventBytesConfig::default(),
        }
    }
}

/// When the relayer worker picks up a ready batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchDispatch {
    /// Start the next pipeline stage as soon as the previous one finishes.
    Immediate,
    /// Defer dispatch until the next block event from the batch's chain;
    /// matches a worker that wakes on subscription notifications.
    OnBlockEvent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RelayerConfig {
    pub max_msgs_per_tx: u64,
    /// 0 disables periodic packet clearing.
    pub clear_interval_blocks: u64,
    /// Upper bound on packets examined per clear pass.
    pub clear_batch_max_msgs: u64,
    /// Relay accounts funded on each chain. One in-flight unconfirmed
    /// transaction is allowed per account, so this bounds submission
    /// parallelism toward a chain.
    pub accounts_per_chain: u32,
    /// Per-message packet assembly cost.
    pub build_per_msg_us: u64,
    /// Per-transaction preparation (gas simulation + signing) before
    /// broadcast (calibrated).
    pub tx_prep_ms: u64,
    /// Block event decode cost.
    pub extract_base_us: u64,
    pub extract_per_msg_us: u64,
    pub batch_dispatch: BatchDispatch,
    /// Give up on an in-flight transaction after this long without a
    /// confirmation ("failed tx: no confirmation").
    pub confirmation_timeout_ms: u64,
    /// Startup offset separating uncoordinated relayer instances.
    pub stagger_ms: u64,
    /// Optional +/- percent jitter on worker task durations, drawn from the
    /// seeded RNG. Zero keeps timings analytic.
    pub task_jitter_percent: u64,
}

impl Default for RelayerConfig {
    fn default() -> Self {
        RelayerConfig {
            max_msgs_per_tx: 100,
            clear_interval_blocks: 0,
            clear_batch_max_msgs: 20_000,
            accounts_per_chain: 64,
            build_per_msg_us: 1_000,
            tx_prep_ms: 800,
            extract_base_us: 2_000,
            extract_per_msg_us: 100,
            batch_dispatch: BatchDispatch::OnBlockEvent,
            confirmation_timeout_ms: 30_000,
            stagger_ms: 25,
            task_jitter_percent: 0,
        }
    }
}

/// How the workload spreads transfers across block windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadShape {
    /// `input_rate_rps * min_block_interval` transfers per window for
    /// `duration_blocks` windows.
    Rate { input_rate_rps: u64 },
    /// `total_transfers` split evenly over the first `spread_blocks`
    /// windows; earlier windows take the remainder.
    Spread { total_transfers: u64, spread_blocks: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub shape: WorkloadShape,
    pub msgs_per_tx: u64,
    /// 0 = derive as ceil(max transfers per window / msgs_per_tx).
    pub num_accounts: u32,
    /// Submission stops after this many windows (measurement window).
    pub duration_blocks: u64,
    pub amount_milli: u64,
    pub denom: String,
    /// Confirmation poll period per submitting account.
    pub poll_period_ms: u64,
    /// Give up polling after this long; the transfer is recorded as
    /// unconfirmed.
    pub confirm_timeout_ms: u64,
    /// Extra single-transfer submissions issued this many windows after the
    /// main shape completes (used by the event-overflow scenario).
    pub trailing_singles: u64,
    pub trailing_gap_blocks: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            shape: WorkloadShape::Rate { input_rate_rps: 140 },
            msgs_per_tx: 100,
            num_accounts: 0,
            duration_blocks: 50,
            amount_milli: 1_000,
            denom: "atom".to_string(),
            poll_period_ms: 1_000,
            confirm_timeout_ms: 60_000,
            trailing_singles: 0,
            trailing_gap_blocks: 2,
        }
    }
}

impl WorkloadSpec {
    /// Largest per-window transfer count this spec produces.
    pub fn peak_window_transfers(&self, min_block_interval_ms: u64) -> u64 {
        match self.shape {
            WorkloadShape::Rate { input_rate_rps } => {
                input_rate_rps * min_block_interval_ms / 1_000
            }
            WorkloadShape::Spread { total_transfers, spread_blocks } => {
                total_transfers.div_ceil(spread_blocks.max(1))
            }
        }
    }

    pub fn effective_accounts(&self, min_block_interval_ms: u64) -> u32 {
        if self.num_accounts > 0 {
            return self.num_accounts;
        }
        let per_window = self.peak_window_transfers(min_block_interval_ms);
        per_window.div_ceil(self.msgs_per_tx).max(1) as u32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Packet timeout expressed in destination-chain blocks past the send
    /// height. 200 blocks is a declared assumption.
    pub timeout_offset_blocks: u64,
    /// Optional absolute timestamp bound in ms past send time (0 = unset).
    pub timeout_offset_ms: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { timeout_offset_blocks: 200, timeout_offset_ms: 0 }
    }
}

/// Round-trip latencies between a process and each chain's RPC endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// RTT between any relayer/workload process and the source chain.
    pub source_rtt_ms: u64,
    /// RTT toward the destination chain.
    pub dest_rtt_ms: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { source_rtt_ms: 0, dest_rtt_ms: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Run until the source chain commits this many post-genesis blocks.
    pub horizon_blocks: u64,
    /// Keep simulating past the horizon until in-flight work quiesces, up to
    /// this many extra source blocks (0 = stop exactly at the horizon).
    pub drain_blocks: u64,
    pub source_chain: ChainConfig,
    pub dest_chain: ChainConfig,
    pub channel: ChannelConfig,
    pub network: NetworkConfig,
    pub relayer: RelayerConfig,
    pub relayer_count: u32,
    pub workload: WorkloadSpec,
    /// Capture the engine trace (needed for determinism checks; off by
    /// default to keep large sweeps lean).
    pub capture_trace: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".to_string(),
            seed: 42,
            horizon_blocks: 50,
            drain_blocks: 0,
            source_chain: ChainConfig::default(),
            dest_chain: ChainConfig::default(),
            channel: ChannelConfig::default(),
            network: NetworkConfig::default(),
            relayer: RelayerConfig::default(),
            relayer_count: 1,
            workload: WorkloadSpec::default(),
            capture_trace: false,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Stable digest of the full configuration, embedded in reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let out = hasher.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon_blocks == 0 {
            return Err(invalid("horizon_blocks", "must be at least 1"));
        }
        if self.relayer_count > 8 {
            return Err(invalid("relayer_count", "at most 8 relayers supported"));
        }
        for (field, chain) in
            [("source_chain", &self.source_chain), ("dest_chain", &self.dest_chain)]
        {
            if chain.min_block_interval_ms == 0 {
                return Err(invalid(field, "min_block_interval_ms must be positive"));
            }
            if chain.max_msgs_per_tx == 0 {
                return Err(invalid(field, "max_msgs_per_tx must be positive"));
            }
            if chain.block_max_msgs == 0 {
                return Err(invalid(field, "block_max_msgs must be positive"));
            }
        }
        if self.relayer_count > 0 && self.relayer.accounts_per_chain == 0 {
            return Err(invalid("relayer.accounts_per_chain", "must be positive"));
        }
        if self.relayer.max_msgs_per_tx != self.dest_chain.max_msgs_per_tx {
            return Err(invalid(
                "relayer.max_msgs_per_tx",
                "must match the chain's max_msgs_per_tx",
            ));
        }
        let w = &self.workload;
        if w.msgs_per_tx == 0 {
            return Err(invalid("workload.msgs_per_tx", "must be positive"));
        }
        if w.msgs_per_tx > self.source_chain.max_msgs_per_tx {
            return Err(invalid("workload.msgs_per_tx", "exceeds chain max_msgs_per_tx"));
        }
        match w.shape {
            WorkloadShape::Rate { input_rate_rps } => {
                if input_rate_rps == 0 {
                    return Err(invalid("workload.shape.input_rate_rps", "must be positive"));
                }
            }
            WorkloadShape::Spread { total_transfers, spread_blocks } => {
                if total_transfers == 0 {
                    return Err(invalid("workload.shape.total_transfers", "must be positive"));
                }
                if spread_blocks == 0 {
                    return Err(invalid("workload.shape.spread_blocks", "must be at least 1"));
                }
            }
        }
        let accounts = w.effective_accounts(self.source_chain.min_block_interval_ms);
        if accounts == 0 {
            return Err(invalid("workload.num_accounts", "must be positive"));
        }
        let per_window = w.peak_window_transfers(self.source_chain.min_block_interval_ms);
        if per_window > accounts as u64 * w.msgs_per_tx {
            return Err(invalid(
                "workload.num_accounts",
                format!(
                    "infeasible: window of {per_window} transfers needs more than \
                     {accounts} accounts x {} msgs/tx",
                    w.msgs_per_tx
                ),
            ));
        }
        Ok(())
    }
}

/// Axis swept by [`SweepSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    InputRate,
    RelayerCount,
    SpreadBlocks,
    RttMs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
}

fn default_repetitions() -> u32 {
    20
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let spec: SweepSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            return Err(invalid("values", "must be non-empty"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        self.base.validate()?;
        for &v in &self.values {
            self.scenario_for(v, 0).validate()?;
        }
        Ok(())
    }

    /// Materialize the scenario for one (axis value, repetition) cell.
    pub fn scenario_for(&self, value: u64, repetition: u32) -> Scenario {
        let mut sc = self.base.clone();
        sc.seed = sc.seed.wrapping_add(repetition as u64);
        match self.axis {
            SweepAxis::InputRate => {
                sc.workload.shape = WorkloadShape::Rate { input_rate_rps: value };
                sc.name = format!("{}-rate{}-r{}", self.base.name, value, repetition);
            }
            SweepAxis::RelayerCount => {
                sc.relayer_count = value as u32;
                sc.name = format!("{}-relayers{}-r{}", self.base.name, value, repetition);
            }
            SweepAxis::SpreadBlocks => {
                let total = match self.base.workload.shape {
                    WorkloadShape::Spread { total_transfers, .. } => total_transfers,
                    WorkloadShape::Rate { input_rate_rps } => {
                        input_rate_rps * self.base.source_chain.min_block_interval_ms / 1_000
                    }
                };
                sc.workload.shape =
                    WorkloadShape::Spread { total_transfers: total, spread_blocks: value };
                sc.workload.num_accounts = 0;
                sc.name = format!("{}-spread{}-r{}", self.base.name, value, repetition);
            }
            SweepAxis::RttMs => {
                sc.network.dest_rtt_ms = value;
                sc.name = format!("{}-rtt{}-r{}", self.base.name, value, repetition);
            }
        }
        sc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_validates() {
        Scenario::default().validate().unwrap();
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut sc = Scenario::default();
        sc.workload.num_accounts = 1;
        sc.workload.shape = WorkloadShape::Rate { input_rate_rps: 1_000 };
        let err = sc.validate().unwrap_err();
        assert!(err.to_string().contains("workload.num_accounts"), "{err}");
    }

    #[test]
    fn toml_round_trip_preserves_digest() {
        let sc = Scenario::default();
        let text = sc.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc.digest(), back.digest());
    }

    #[test]
    fn derived_account_count_covers_peak_window() {
        let mut w = WorkloadSpec::default();
        w.shape = WorkloadShape::Rate { input_rate_rps: 1_000 };
        // 1,000 rps * 5 s = 5,000 transfers/window -> 50 accounts of 100.
        assert_eq!(w.effective_accounts(5_000), 50);
    }

    #[test]
    fn spread_scenarios_split_evenly() {
        let spec = SweepSpec {
            base: Scenario::default(),
            axis: SweepAxis::SpreadBlocks,
            values: vec![16],
            repetitions: 1,
        };
        let sc = spec.scenario_for(16, 0);
        match sc.workload.shape {
            WorkloadShape::Spread { total_transfers, spread_blocks } => {
                assert_eq!(total_transfers, 700);
                assert_eq!(spread_blocks, 16);
            }
            _ => panic!("expected spread shape"),
        }
    }
}
