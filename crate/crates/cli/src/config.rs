//! Run configuration. Every key is optional; omitted keys take the Phase-1
//! defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use leo_topo::constellation::ShellConfig;
use leo_topo::demand::{CrownParams, DemandPattern, FieldParams, RegionCombine, RegionOptions};
use leo_topo::flat::FlatTrialConfig;
use leo_topo::simulator::NetParams;
use leo_topo::topology::{DistanceMode, StarfieldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds demand constants, demand noise, random topologies, the packet
    /// simulation and flat instances.
    pub seed: u64,
    pub out: PathBuf,
    pub duration_s: f64,
    pub shell: ShellSpec,
    pub window: WindowSpec,
    pub network: NetworkSpec,
    pub demand: DemandSpec,
    pub topology: TopologySpec,
    pub regions: RegionSpec,
    pub flat: FlatSpec,
    pub viz: VizSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: PathBuf::from("out"),
            duration_s: 10.0,
            shell: ShellSpec::default(),
            window: WindowSpec::default(),
            network: NetworkSpec::default(),
            demand: DemandSpec::default(),
            topology: TopologySpec::default(),
            regions: RegionSpec::default(),
            flat: FlatSpec::default(),
            viz: VizSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellSpec {
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub num_orbits: usize,
    pub sats_per_orbit: usize,
    pub phase_offset: f64,
    pub mean_motion_rad_per_hour: f64,
    /// Explicit laser range; otherwise the longest link clearing the
    /// atmosphere by `min_altitude_clearance_km`.
    pub isl_max_range_km: Option<f64>,
    pub min_altitude_clearance_km: f64,
}

impl Default for ShellSpec {
    fn default() -> Self {
        ShellSpec {
            altitude_km: 550.0,
            inclination_deg: 53.0,
            num_orbits: 72,
            sats_per_orbit: 22,
            phase_offset: 0.5,
            mean_motion_rad_per_hour: 3.98,
            isl_max_range_km: None,
            min_altitude_clearance_km: 80.0,
        }
    }
}

impl ShellSpec {
    pub fn to_config(&self) -> Result<ShellConfig> {
        let cfg = ShellConfig {
            altitude_m: self.altitude_km * 1e3,
            inclination_rad: self.inclination_deg.to_radians(),
            num_orbits: self.num_orbits,
            sats_per_orbit: self.sats_per_orbit,
            phase_offset: self.phase_offset,
            mean_motion_rad_s: self.mean_motion_rad_per_hour / 3600.0,
            isl_max_range_m: self.isl_max_range_km.map(|r| r * 1e3),
            min_altitude_clearance_m: self.min_altitude_clearance_km * 1e3,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ephemeris sampling window, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub step_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { start_s: 0.0, end_s: 100.0, step_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub isl_bandwidth_gbps: f64,
    pub gsl_bandwidth_gbps: f64,
    pub isl_noise: f64,
    pub gsl_noise: f64,
    pub buffer_packets: usize,
    pub packet_bytes: usize,
    /// Defaults to the shell's intra-orbit neighbour spacing.
    pub isl_ref_distance_km: Option<f64>,
    pub gsl_ref_distance_km: f64,
    pub min_elevation_deg: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            isl_bandwidth_gbps: 1000.0,
            gsl_bandwidth_gbps: 100.0,
            isl_noise: 0.1,
            gsl_noise: 0.001,
            buffer_packets: 1000,
            packet_bytes: 12_000,
            isl_ref_distance_km: None,
            gsl_ref_distance_km: 550.0,
            min_elevation_deg: 25.0,
        }
    }
}

impl NetworkSpec {
    pub fn to_params(&self, shell: &ShellConfig) -> Result<NetParams> {
        let base = NetParams::for_shell(shell);
        let p = NetParams {
            isl_bandwidth_bps: self.isl_bandwidth_gbps * 1e9,
            gsl_bandwidth_bps: self.gsl_bandwidth_gbps * 1e9,
            isl_noise: self.isl_noise,
            gsl_noise: self.gsl_noise,
            buffer_packets: self.buffer_packets,
            packet_bytes: self.packet_bytes,
            isl_ref_distance_m: self.isl_ref_distance_km.map_or(base.isl_ref_distance_m, |d| d * 1e3),
            gsl_ref_distance_m: self.gsl_ref_distance_km * 1e3,
            min_elevation_deg: self.min_elevation_deg,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSpec {
    pub pattern: DemandPattern,
    pub base_intensity: f64,
    /// Station CSV (`name,lat_deg,lon_deg,population`); the bundled 100 cities
    /// when absent.
    pub stations: Option<PathBuf>,
    pub noise_mu: f64,
    pub noise_sigma: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            pattern: DemandPattern::Distance,
            base_intensity: 1.0,
            stations: None,
            noise_mu: 0.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    PlusGrid,
    Starfield,
    StaticStarfield,
    Random,
    /// Starfield recomputed every `epoch_s` seconds.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySpec {
    pub generator: Generator,
    pub kappa: usize,
    pub k: f64,
    /// Weight of the plain link length, per metre.
    pub epsilon: f64,
    pub eta: f64,
    pub omega: f64,
    /// Disables the crown reorientation when false.
    pub crown: bool,
    pub mode: DistanceMode,
    pub length_unit_m: f64,
    /// Field distances are clamped to at least this; defaults to the
    /// intra-orbit spacing.
    pub distance_floor_km: Option<f64>,
    pub epoch_s: f64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec {
            generator: Generator::PlusGrid,
            kappa: 4,
            k: 1e7,
            epsilon: 1e-12,
            eta: 1.0,
            omega: 10.0,
            crown: true,
            mode: DistanceMode::Plain,
            length_unit_m: 1000.0,
            distance_floor_km: None,
            epoch_s: 10.0,
        }
    }
}

impl TopologySpec {
    pub fn starfield_params(&self, shell: &ShellConfig) -> StarfieldParams {
        let base = StarfieldParams::for_shell(shell);
        StarfieldParams {
            kappa: self.kappa,
            field: FieldParams {
                k: self.k,
                length_unit_m: self.length_unit_m,
                distance_floor_m: self.distance_floor_km.map_or(base.field.distance_floor_m, |d| d * 1e3),
                crown: self.crown.then_some(CrownParams {
                    inclination_rad: shell.inclination_rad,
                    eta: self.eta,
                    omega: self.omega,
                }),
            },
            epsilon: self.epsilon,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub l_theta_deg: f64,
    pub l_phi_deg: f64,
    pub options: RegionOptions,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec { l_theta_deg: 20.0, l_phi_deg: 30.0, options: RegionOptions::default() }
    }
}

impl RegionSpec {
    pub fn combine_name(&self) -> &'static str {
        match self.options.combine {
            RegionCombine::RegionMean => "region_mean",
            RegionCombine::TrafficWeighted => "traffic_weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlatSpec {
    pub instances: u64,
    pub trial: FlatTrialConfig,
    /// Also write every instance as JSON.
    pub dump_instances: bool,
}

impl Default for FlatSpec {
    fn default() -> Self {
        FlatSpec { instances: 100, trial: FlatTrialConfig::default(), dump_instances: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VizSpec {
    /// Add one geodesic per demand flow.
    pub demand_lines: bool,
    /// Add the routed paths of this many highest-intensity flows.
    pub selected_paths: usize,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            bail!("duration_s must be a non-negative number");
        }
        let w = &self.window;
        if !(w.step_s > 0.0 && w.end_s >= w.start_s) {
            bail!("window needs step_s > 0 and end_s ≥ start_s");
        }
        if !(self.demand.noise_sigma >= 0.0) {
            bail!("demand.noise_sigma must be non-negative");
        }
        if !(self.topology.epoch_s > 0.0) {
            bail!("topology.epoch_s must be positive");
        }
        let shell = self.shell.to_config()?;
        self.network.to_params(&shell)?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering without `out`, so equal
    /// configurations hash equally regardless of formatting or destination.
    pub fn hash(&self) -> Result<String> {
        let canonical = toml::to_string(&RunConfig { out: PathBuf::new(), ..self.clone() })?;
        Ok(Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}
