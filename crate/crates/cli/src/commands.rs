use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use leo_topo::constellation::{generate_shell, range_graph, sample_times, Ephemeris, RangeGraph, ShellConfig};
use leo_topo::demand::{
    build_demand, bundled_cities, load_stations, perturb_demand, regional_flow_stats_with, DemandMatrix, GroundStation,
};
use leo_topo::flat::{motivating_example, run_flat_trial, write_bounds_csv};
use leo_topo::routing::{stretch_report, write_cdf_csv, StretchReport};
use leo_topo::simulator::{network_epochs, replay_metrics, run, SimOptions};
use leo_topo::topology::{dynamic_schedule, plus_grid, random_topology, starfield, static_starfield, Epoch, Topology};
use serde_json::json;

use crate::config::{Generator, RunConfig};
use crate::viz;

/// Shell, stations and (possibly perturbed) demand shared by all commands.
pub struct Setup {
    pub cfg: RunConfig,
    pub shell: ShellConfig,
    pub stations: Vec<GroundStation>,
    pub demand: DemandMatrix,
}

impl Setup {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let shell = cfg.shell.to_config()?;
        let radius = shell.shell_radius();
        let stations = match &cfg.demand.stations {
            Some(path) => load_stations(path, radius).with_context(|| format!("loading {}", path.display()))?,
            None => bundled_cities(radius),
        };
        let d = &cfg.demand;
        let mut demand = build_demand(&stations, d.pattern, d.base_intensity, cfg.seed)?;
        if d.noise_mu != 0.0 || d.noise_sigma != 0.0 {
            demand = perturb_demand(&demand, d.noise_mu, d.noise_sigma, cfg.seed);
        }
        Ok(Setup { cfg, shell, stations, demand })
    }

    fn ephemeris(&self, start: f64, end: f64) -> Result<(Ephemeris, RangeGraph)> {
        let times = sample_times(start, end, self.cfg.window.step_s);
        let eph = generate_shell(&self.shell, &times)?;
        let range = range_graph(&eph, self.shell.isl_range());
        Ok((eph, range))
    }

    /// A single topology over the ephemeris window.
    fn topology(&self, eph: &Ephemeris, range: &RangeGraph) -> Result<Topology> {
        let t = &self.cfg.topology;
        let params = t.starfield_params(&self.shell);
        let (n_o, n_s) = (self.shell.num_orbits, self.shell.sats_per_orbit);
        Ok(match t.generator {
            Generator::PlusGrid => plus_grid(n_o, n_s, self.shell.seam_slot_shift()),
            Generator::Starfield => starfield(range, eph, &self.demand, &self.stations, &params)?,
            Generator::StaticStarfield => static_starfield(range, eph, &self.demand, &self.stations, &params)?,
            Generator::Random => random_topology(range, n_o, n_s, t.kappa, self.cfg.seed)?,
            Generator::Dynamic => bail!("the dynamic generator yields a schedule, not a single topology"),
        })
    }

    /// Epochs covering `[start, end]`: one per `epoch_s` for the dynamic
    /// generator, a single one otherwise.
    fn schedule(&self, start: f64, end: f64) -> Result<Vec<Epoch>> {
        let t = &self.cfg.topology;
        if t.generator == Generator::Dynamic {
            let mut windows = Vec::new();
            let mut a = start;
            while a < end - 1e-9 {
                let b = (a + t.epoch_s).min(end);
                windows.push((a, b));
                a = b;
            }
            let params = t.starfield_params(&self.shell);
            return Ok(dynamic_schedule(
                &self.shell,
                &windows,
                self.cfg.window.step_s,
                &self.demand,
                &self.stations,
                &params,
            )?);
        }
        let (eph, range) = self.ephemeris(start, end)?;
        Ok(vec![Epoch { start, end, topology: self.topology(&eph, &range)? }])
    }

    fn min_elevation(&self) -> f64 {
        self.cfg.network.min_elevation_deg
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Creates the output directory and records the resolved configuration with
/// its hash.
pub fn prepare_out(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let hash = cfg.hash()?;
    fs::write(cfg.out.join("config.toml"), format!("# config_sha256 = \"{hash}\"\n{}", toml::to_string(cfg)?))?;
    write_json(
        &cfg.out,
        "provenance.json",
        &json!({
            "command": command,
            "config_sha256": hash,
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

pub fn constellation(setup: &Setup) -> Result<()> {
    let w = &setup.cfg.window;
    let times = sample_times(w.start_s, w.end_s, w.step_s);
    if times.is_empty() {
        bail!("the time window contains no samples");
    }
    let eph = generate_shell(&setup.shell, &times)?;
    let range = range_graph(&eph, setup.shell.isl_range());
    let out = &setup.cfg.out;
    eph.write_csv(create(out, "ephemeris.csv")?)?;
    write_json(
        out,
        "summary.json",
        &json!({
            "satellites": eph.num_satellites(),
            "samples": times.len(),
            "shell_radius_m": setup.shell.shell_radius(),
            "isl_range_m": setup.shell.isl_range(),
            "range_graph_edges": range.num_edges(),
        }),
    )?;
    println!("{} satellites × {} samples, {} in-range pairs", eph.num_satellites(), times.len(), range.num_edges());
    Ok(())
}

fn write_stretch_outputs(out: &Path, report: &StretchReport) -> Result<()> {
    report.write_flows_csv(create(out, "flows.csv")?)?;
    write_cdf_csv(create(out, "cdf_stretch.csv")?, &report.sorted_stretch())?;
    write_cdf_csv(create(out, "cdf_hops.csv")?, &report.sorted_hops())?;
    Ok(())
}

pub fn topology(setup: &Setup) -> Result<()> {
    let w = &setup.cfg.window;
    let schedule = setup.schedule(w.start_s, w.end_s)?;
    let out = &setup.cfg.out;
    let mut reports = Vec::with_capacity(schedule.len());
    let mut epochs = Vec::with_capacity(schedule.len());
    if schedule.len() > 1 {
        fs::create_dir_all(out.join("epochs"))?;
    }
    for (k, e) in schedule.iter().enumerate() {
        let positions = leo_topo::constellation::snapshot(&setup.shell, 0.5 * (e.start + e.end));
        let name = if schedule.len() > 1 { format!("epochs/topology_{k:03}.csv") } else { "topology.csv".into() };
        e.topology.write_csv(create(out, &name)?)?;
        let report = stretch_report(&e.topology, &positions, &setup.stations, &setup.demand, setup.min_elevation());
        let (_, range) = setup.ephemeris(e.start, e.end)?;
        let valid = e.topology.validate(&range).is_ok();
        epochs.push(json!({
            "start_s": e.start,
            "end_s": e.end,
            "edges": e.topology.num_edges(),
            "max_degree": e.topology.max_degree(),
            "valid": valid,
            "p90_stretch": report.stretch.p90,
        }));
        reports.push(report);
    }
    let pooled = StretchReport::pooled(&reports);
    write_stretch_outputs(out, &pooled)?;
    write_json(
        out,
        "summary.json",
        &json!({
            "generator": setup.cfg.topology.generator,
            "pattern": setup.cfg.demand.pattern,
            "epochs": epochs,
            "stretch": pooled.stretch,
            "hops": pooled.hops,
            "hop_histogram": pooled.hop_histogram,
            "unreachable": pooled.unreachable.len(),
            "markers": { "stretch_p90": pooled.stretch.p90, "hops_p90": pooled.hops.p90 },
        }),
    )?;
    println!(
        "{} epoch(s); stretch mean {:.4} p90 {:.4}; hops mean {:.2}",
        schedule.len(),
        pooled.stretch.mean,
        pooled.stretch.p90,
        pooled.hops.mean
    );
    Ok(())
}

pub fn simulate(setup: &Setup) -> Result<()> {
    let cfg = &setup.cfg;
    let start = cfg.window.start_s;
    // Epochs must be non-empty even for a zero-length run.
    let end = start + cfg.duration_s.max(cfg.window.step_s);
    let schedule = setup.schedule(start, end)?;
    let epochs = network_epochs(&schedule, &setup.shell);
    let params = cfg.network.to_params(&setup.shell)?;
    let opts = SimOptions { duration_s: cfg.duration_s, seed: cfg.seed, trace: false };
    let report = run(&epochs, &setup.stations, &setup.demand, &params, &opts)?;
    report.write_dir(&cfg.out)?;
    let metrics = replay_metrics(&report);
    metrics.write_dir(&cfg.out)?;
    println!(
        "{} data packets: {} delivered, {} dropped; {} routed in total",
        report.data.generated,
        report.data.delivered,
        report.data.dropped,
        report.routed_packets()
    );
    Ok(())
}

pub fn flat(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out;
    write_json(out, "motivating.json", &motivating_example())?;
    let spec = &cfg.flat;
    let mut trials = Vec::with_capacity(spec.instances as usize);
    if spec.dump_instances {
        fs::create_dir_all(out.join("instances"))?;
    }
    for k in 0..spec.instances {
        let seed = cfg.seed.wrapping_add(k);
        let t = run_flat_trial(&spec.trial, seed)?;
        if spec.dump_instances {
            fs::write(out.join(format!("instances/seed_{seed}.json")), t.instance.to_json()?)?;
        }
        trials.push(t);
    }
    write_bounds_csv(&trials, create(out, "bounds.csv")?)?;
    let lower: usize = trials.iter().map(|t| t.lower_bound_violations()).sum();
    let upper: usize = trials.iter().map(|t| t.upper_bound_violations()).sum();
    let tightest = trials.iter().flat_map(|t| &t.paths).map(|p| p.measured / p.bound).fold(0.0, f64::max);
    write_json(
        out,
        "summary.json",
        &json!({
            "instances": spec.instances,
            "lower_bound_violations": lower,
            "upper_bound_violations": upper,
            "max_measured_over_upper_bound": tightest,
        }),
    )?;
    println!("{} instances: {lower} lower-bound and {upper} upper-bound violations", spec.instances);
    if lower + upper > 0 {
        bail!("bound violations found");
    }
    Ok(())
}

/// Exports the configured topology, or the one in `topology_csv` when given,
/// at the window midpoint.
pub fn export_viz(setup: &Setup, topology_csv: Option<&Path>) -> Result<()> {
    let w = &setup.cfg.window;
    let (eph, range) = setup.ephemeris(w.start_s, w.end_s)?;
    let topo = match topology_csv {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let t = Topology::read_csv(std::io::BufReader::new(file))?;
            if t.num_satellites() != setup.shell.num_satellites() {
                bail!(
                    "{} has {} satellites, the shell has {}",
                    path.display(),
                    t.num_satellites(),
                    setup.shell.num_satellites()
                );
            }
            t
        }
        None if setup.cfg.topology.generator == Generator::Dynamic => {
            setup.schedule(w.start_s, w.end_s)?.swap_remove(0).topology
        }
        None => setup.topology(&eph, &range)?,
    };
    let positions = eph.positions_at(eph.midpoint());
    let viz_cfg = &setup.cfg.viz;
    let mut paths = Vec::new();
    if viz_cfg.selected_paths > 0 {
        let report = stretch_report(&topo, &positions, &setup.stations, &setup.demand, setup.min_elevation());
        let intensity = |f: &leo_topo::routing::FlowPathStats| setup.demand.get(f.src, f.dst);
        paths = report.flows;
        paths.sort_by(|a, b| intensity(b).total_cmp(&intensity(a)).then((a.src, a.dst).cmp(&(b.src, b.dst))));
        paths.truncate(viz_cfg.selected_paths);
    }
    let scene = viz::Scene {
        shell: &setup.shell,
        topology: &topo,
        positions: &positions,
        stations: &setup.stations,
        demand: viz_cfg.demand_lines.then_some(&setup.demand),
        paths: &paths,
    };
    let out = &setup.cfg.out;
    let geojson = viz::geojson(&scene);
    write_json(out, "viz.geojson", &geojson)?;
    write_json(out, "viz.czml", &viz::czml(&scene, &eph))?;
    let lines = geojson["features"]
        .as_array()
        .map_or(0, |f| f.iter().filter(|f| f["geometry"]["type"] == "LineString").count());
    println!("{lines} line features, {} satellites", positions.len());
    Ok(())
}

pub fn analyze_demand(setup: &Setup) -> Result<()> {
    let r = &setup.cfg.regions;
    let (grid, global) =
        regional_flow_stats_with(&setup.demand, &setup.stations, r.l_theta_deg, r.l_phi_deg, r.options)?;
    let out = &setup.cfg.out;
    grid.write_csv(create(out, "regions.csv")?)?;
    setup.demand.write_csv(create(out, "demand.csv")?)?;
    write_json(
        out,
        "summary.json",
        &json!({
            "pattern": setup.cfg.demand.pattern,
            "l_theta_deg": r.l_theta_deg,
            "l_phi_deg": r.l_phi_deg,
            "orientation": r.options.orientation,
            "combine": r.combine_name(),
            "mean_resultant_length": global,
            "flows": setup.demand.num_flows(),
        }),
    )?;
    println!("mean resultant length {global:.4}");
    Ok(())
}
