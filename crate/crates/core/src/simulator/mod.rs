//! Packet-level discrete-event simulation of a topology schedule.
//!
//! Sources emit Poisson packet streams, every directed link serialises
//! packets first-in first-out from a bounded buffer, and each delivered
//! packet is echoed back to its source to measure round-trip time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{snapshot, ShellConfig};
use crate::geometry::Vec3;
use crate::topology::{Epoch, Topology};

mod engine;
mod metrics;

pub use engine::{run, Counts, DropReason, FlowSimStats, LinkUsage, SimOptions, SimReport, TraceEvent, TraceKind};
pub use metrics::{replay_metrics, MetricBundle};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid epoch schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Isl,
    Gsl,
}

/// Link and traffic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub isl_bandwidth_bps: f64,
    pub gsl_bandwidth_bps: f64,
    pub isl_noise: f64,
    pub gsl_noise: f64,
    /// Packets a link buffer holds besides the one being transmitted.
    pub buffer_packets: usize,
    pub packet_bytes: usize,
    /// Distance at which an ISL runs at its nominal bandwidth.
    pub isl_ref_distance_m: f64,
    pub gsl_ref_distance_m: f64,
    pub min_elevation_deg: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams::for_shell(&ShellConfig::phase1())
    }
}

impl NetParams {
    /// Defaults with the ISL reference distance set to the shell's
    /// intra-orbit spacing.
    pub fn for_shell(cfg: &ShellConfig) -> Self {
        let spacing = 2.0 * cfg.shell_radius() * (std::f64::consts::PI / cfg.sats_per_orbit as f64).sin();
        NetParams {
            isl_bandwidth_bps: 1e12,
            gsl_bandwidth_bps: 100e9,
            isl_noise: 0.1,
            gsl_noise: 0.001,
            buffer_packets: 1000,
            packet_bytes: 12_000,
            isl_ref_distance_m: spacing,
            gsl_ref_distance_m: 550e3,
            min_elevation_deg: crate::routing::MIN_ELEVATION_DEG,
        }
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_bytes as f64 * 8.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("isl_bandwidth_bps", self.isl_bandwidth_bps),
            ("gsl_bandwidth_bps", self.gsl_bandwidth_bps),
            ("isl_noise", self.isl_noise),
            ("gsl_noise", self.gsl_noise),
            ("isl_ref_distance_m", self.isl_ref_distance_m),
            ("gsl_ref_distance_m", self.gsl_ref_distance_m),
            ("packet_bytes", self.packet_bytes as f64),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Shannon–Hartley rate of a link of length `d` metres, in bits/s.
///
/// SNR(d) = (2^(1/ν) − 1)·(d_ref/d)² and the rate is B·ν·log2(1 + SNR), so a
/// link at the reference distance runs at exactly the nominal bandwidth B.
pub fn link_capacity(d: f64, kind: LinkKind, params: &NetParams) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(SimError::InvalidParams(format!("link length must be positive, got {d}")));
    }
    let (bw, nu, d_ref) = match kind {
        LinkKind::Isl => (params.isl_bandwidth_bps, params.isl_noise, params.isl_ref_distance_m),
        LinkKind::Gsl => (params.gsl_bandwidth_bps, params.gsl_noise, params.gsl_ref_distance_m),
    };
    // 2^(1/ν) overflows for small ν, so work with ln SNR.
    let a = 1.0 / nu;
    let ln_snr = a * std::f64::consts::LN_2 + (-(-a * std::f64::consts::LN_2).exp()).ln_1p() + 2.0 * (d_ref / d).ln();
    let softplus = ln_snr.max(0.0) + (-ln_snr.abs()).exp().ln_1p();
    Ok(bw * nu * softplus / std::f64::consts::LN_2)
}

/// One topology held fixed over `[start, end)` together with the satellite
/// positions used for routing and link geometry during that window.
#[derive(Debug, Clone)]
pub struct NetworkEpoch {
    pub start: f64,
    pub end: f64,
    pub topology: Topology,
    pub sat_positions: Vec<Vec3>,
}

/// Freezes each epoch's geometry at its midpoint.
pub fn network_epochs(schedule: &[Epoch], cfg: &ShellConfig) -> Vec<NetworkEpoch> {
    schedule
        .iter()
        .map(|e| NetworkEpoch {
            start: e.start,
            end: e.end,
            topology: e.topology.clone(),
            sat_positions: snapshot(cfg, 0.5 * (e.start + e.end)),
        })
        .collect()
}
