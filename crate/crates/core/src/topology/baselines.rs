//! Non-demand-aware reference topologies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Provenance, Result, Topology, TopologyError};
use crate::constellation::RangeGraph;

/// Each satellite links to its two orbit neighbours and to the same slot in
/// the two adjacent orbits.
///
/// With cumulative phasing the last orbit lines up with orbit 0 shifted by
/// `seam_shift` slots (see `ShellConfig::seam_slot_shift`), so the wrap-around
/// link goes to `(0, j + seam_shift)`.
pub fn plus_grid(num_orbits: usize, sats_per_orbit: usize, seam_shift: usize) -> Topology {
    let mut prov = Provenance::new("plus_grid");
    prov.params = serde_json::json!({ "seam_shift": seam_shift });
    let mut topo = Topology::empty(num_orbits, sats_per_orbit, 4, prov);
    let idx = |o: usize, s: usize| o * sats_per_orbit + s;
    for o in 0..num_orbits {
        let shift = if o + 1 == num_orbits { seam_shift } else { 0 };
        for s in 0..sats_per_orbit {
            topo.add_edge(idx(o, s), idx(o, (s + 1) % sats_per_orbit));
            topo.add_edge(idx(o, s), idx((o + 1) % num_orbits, (s + shift) % sats_per_orbit));
        }
    }
    topo.record_isolated();
    topo
}

/// Offsets `p` for which every link `(o, j) – (o′, j+p)` stays in range.
pub(crate) fn feasible_offsets(range: &RangeGraph, sats_per_orbit: usize, o: usize, o2: usize) -> Vec<usize> {
    let idx = |o: usize, s: usize| o * sats_per_orbit + s;
    (0..sats_per_orbit)
        .filter(|&p| (0..sats_per_orbit).all(|j| range.contains(idx(o, j), idx(o2, (j + p) % sats_per_orbit))))
        .collect()
}

/// Seeded random split of the κ/2 link "units" into intra- and inter-orbit
/// shares, then random feasible offsets.
///
/// An intra unit links every satellite of an orbit to the one `d` slots
/// ahead; an inter unit links orbit `o` slot `j` to orbit `o+1` slot `j+p`.
/// Each unit adds two links per satellite, so the degree is exactly κ when
/// enough distinct feasible offsets exist. At least one unit is inter-orbit
/// so orbits never end up disconnected.
pub fn random_topology(
    range: &RangeGraph,
    num_orbits: usize,
    sats_per_orbit: usize,
    kappa: usize,
    seed: u64,
) -> Result<Topology> {
    if kappa < 2 || !kappa.is_multiple_of(2) {
        return Err(TopologyError::InvalidParams(format!("κ must be even and at least 2, got {kappa}")));
    }
    let units = kappa / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intra_units = rng.random_range(0..units);
    let inter_units = units - intra_units;

    let mut prov = Provenance::new("random");
    prov.seed = Some(seed);
    prov.params = serde_json::json!({ "kappa": kappa, "intra_units": intra_units, "inter_units": inter_units });
    let mut topo = Topology::empty(num_orbits, sats_per_orbit, kappa, prov);
    let idx = |o: usize, s: usize| o * sats_per_orbit + s;

    for o in 0..num_orbits {
        // Offsets d and N_S − d give the same links; d = N_S/2 gives only one
        // link per satellite, so it is excluded.
        let mut offsets: Vec<usize> = (1..sats_per_orbit.div_ceil(2))
            .filter(|&d| (0..sats_per_orbit).all(|j| range.contains(idx(o, j), idx(o, (j + d) % sats_per_orbit))))
            .collect();
        offsets.shuffle(&mut rng);
        for &d in offsets.iter().take(intra_units) {
            for j in 0..sats_per_orbit {
                topo.add_edge(idx(o, j), idx(o, (j + d) % sats_per_orbit));
            }
        }
    }
    let pairs = if num_orbits > 2 { num_orbits } else { num_orbits.saturating_sub(1) };
    for o in 0..pairs {
        let o2 = (o + 1) % num_orbits;
        let mut offsets = feasible_offsets(range, sats_per_orbit, o, o2);
        if offsets.is_empty() {
            return Err(TopologyError::NoFeasibleOffset(o, o2));
        }
        offsets.shuffle(&mut rng);
        for &p in offsets.iter().take(inter_units) {
            for j in 0..sats_per_orbit {
                topo.add_edge(idx(o, j), idx(o2, (j + p) % sats_per_orbit));
            }
        }
    }
    topo.record_isolated();
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{generate_shell, range_graph, sample_times, ShellConfig};

    #[test]
    fn plus_grid_counts() {
        let t = plus_grid(72, 22, 14);
        assert_eq!(t.num_edges(), 3168);
        assert!((0..t.num_satellites()).all(|s| t.degree(s) == 4));
        let small = plus_grid(3, 3, 0);
        assert_eq!(small.num_edges(), 18);
        assert!((0..9).all(|s| small.degree(s) == 4));
    }

    #[test]
    fn plus_grid_in_phase1_range() {
        let cfg = ShellConfig::phase1();
        let eph = generate_shell(&cfg, &sample_times(0.0, 100.0, 50.0)).unwrap();
        let range = range_graph(&eph, cfg.isl_range());
        assert_eq!(cfg.seam_slot_shift(), 14);
        plus_grid(72, 22, cfg.seam_slot_shift()).validate(&range).unwrap();
        assert!(plus_grid(72, 22, 0).validate(&range).is_err());
    }

    fn toy_range() -> (RangeGraph, usize, usize) {
        let cfg = ShellConfig { num_orbits: 12, sats_per_orbit: 10, ..ShellConfig::phase1() };
        let eph = generate_shell(&cfg, &sample_times(0.0, 100.0, 50.0)).unwrap();
        (range_graph(&eph, cfg.isl_range()), 12, 10)
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        let (range, n_o, n_s) = toy_range();
        for seed in 0..10 {
            let a = random_topology(&range, n_o, n_s, 4, seed).unwrap();
            let b = random_topology(&range, n_o, n_s, 4, seed).unwrap();
            assert_eq!(a, b);
            a.validate(&range).unwrap();
            assert!(a.max_degree() <= 4);
            if a.provenance.params["intra_units"] == 1 {
                assert!((0..n_o * n_s).all(|s| a.degree(s) == 4), "seed {seed}");
            }
        }
        assert!(random_topology(&range, n_o, n_s, 3, 0).is_err());
    }

    #[test]
    fn random_inter_offsets_are_feasible() {
        let (range, n_o, n_s) = toy_range();
        let t = random_topology(&range, n_o, n_s, 4, 3).unwrap();
        for (a, b) in t.edges().filter(|&(a, b)| !t.is_intra(a, b)) {
            let (o, o2) = (a / n_s, b / n_s);
            let p = (b % n_s + n_s - a % n_s) % n_s;
            let (from, to, p) = if (o + 1) % n_o == o2 { (o, o2, p) } else { (o2, o, (n_s - p) % n_s) };
            assert!(feasible_offsets(&range, n_s, from, to).contains(&p));
        }
    }
}
