//! Degree-bounded inter-satellite link topologies and their generators.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{RangeGraph, SatelliteId};

mod baselines;
mod starfield;

pub use baselines::{plus_grid, random_topology};
pub use starfield::{
    dynamic_schedule, link_distance, starfield, static_starfield, DistanceMode, Epoch, StarfieldParams,
};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("no offset keeps all links between orbits {0} and {1} in range for the whole window")]
    NoFeasibleOffset(usize, usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("edge ({0}, {1}) is not in the range graph")]
    OutOfRange(usize, usize),
    #[error("satellite {0} exceeds the degree bound")]
    DegreeExceeded(usize),
    #[error("malformed topology file: {0}")]
    Parse(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Constellation(#[from] crate::constellation::ConstellationError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

/// Which generator produced a topology and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
}

impl Provenance {
    pub fn new(generator: &str) -> Self {
        Provenance { generator: generator.to_string(), seed: None, params: serde_json::Value::Null, window: None }
    }
}

/// Undirected ISL edge set over the flat satellite index `orbit·N_S + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub num_orbits: usize,
    pub sats_per_orbit: usize,
    pub kappa: usize,
    pub provenance: Provenance,
    /// Satellites that ended with no link at all.
    pub isolated: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    pub fn empty(num_orbits: usize, sats_per_orbit: usize, kappa: usize, provenance: Provenance) -> Self {
        Topology {
            num_orbits,
            sats_per_orbit,
            kappa,
            provenance,
            isolated: Vec::new(),
            adjacency: vec![Vec::new(); num_orbits * sats_per_orbit],
        }
    }

    pub fn num_satellites(&self) -> usize {
        self.adjacency.len()
    }

    pub fn degree(&self, s: usize) -> usize {
        self.adjacency[s].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Sorted neighbours of `s`.
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.adjacency[s]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// True when `a–b` could be added without breaking the degree bound.
    pub fn can_add(&self, a: usize, b: usize) -> bool {
        a != b && !self.has_edge(a, b) && self.degree(a) < self.kappa && self.degree(b) < self.kappa
    }

    /// Adds `a–b` if it is new, not a loop and both ends have spare degree.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if !self.can_add(a, b) {
            return false;
        }
        for (x, y) in [(a, b), (b, a)] {
            let list = &mut self.adjacency[x];
            let at = list.binary_search(&y).unwrap_err();
            list.insert(at, y);
        }
        true
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(a, b)` with `a < b` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, l)| l.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn satellite(&self, flat: usize) -> SatelliteId {
        SatelliteId { orbit: flat / self.sats_per_orbit, slot: flat % self.sats_per_orbit }
    }

    /// Same orbit: an intra-orbit link.
    pub fn is_intra(&self, a: usize, b: usize) -> bool {
        a / self.sats_per_orbit == b / self.sats_per_orbit
    }

    pub(crate) fn record_isolated(&mut self) {
        self.isolated = (0..self.num_satellites()).filter(|&s| self.degree(s) == 0).collect();
    }

    /// Checks the degree bound and that every edge is in `range`.
    pub fn validate(&self, range: &RangeGraph) -> Result<()> {
        if let Some(s) = (0..self.num_satellites()).find(|&s| self.degree(s) > self.kappa) {
            return Err(TopologyError::DegreeExceeded(s));
        }
        match self.edges().find(|&(a, b)| !range.contains(a, b)) {
            Some((a, b)) => Err(TopologyError::OutOfRange(a, b)),
            None => Ok(()),
        }
    }

    /// `# {provenance json}` followed by `orbit_a,slot_a,orbit_b,slot_b` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "num_orbits": self.num_orbits,
            "sats_per_orbit": self.sats_per_orbit,
            "kappa": self.kappa,
            "provenance": self.provenance,
        });
        writeln!(w, "# {}", serde_json::to_string(&header)?)?;
        writeln!(w, "orbit_a,slot_a,orbit_b,slot_b")?;
        for (a, b) in self.edges() {
            let (sa, sb) = (self.satellite(a), self.satellite(b));
            writeln!(w, "{},{},{},{}", sa.orbit, sa.slot, sb.orbit, sb.slot)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            num_orbits: usize,
            sats_per_orbit: usize,
            kappa: usize,
            provenance: Provenance,
        }
        let mut reader = BufReader::new(reader);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let json = first.trim().strip_prefix('#').ok_or_else(|| TopologyError::Parse("missing header".into()))?;
        let h: Header = serde_json::from_str(json.trim())?;
        let mut topo = Topology::empty(h.num_orbits, h.sats_per_orbit, h.kappa, h.provenance);
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize::<(usize, usize, usize, usize)>() {
            let (oa, sa, ob, sb) = row?;
            if oa >= h.num_orbits || ob >= h.num_orbits || sa >= h.sats_per_orbit || sb >= h.sats_per_orbit {
                return Err(TopologyError::Parse(format!("satellite out of range in row {oa},{sa},{ob},{sb}")));
            }
            let (a, b) = (oa * h.sats_per_orbit + sa, ob * h.sats_per_orbit + sb);
            if !topo.add_edge(a, b) {
                return Err(TopologyError::Parse(format!(
                    "edge {a}-{b} is a duplicate, loop or exceeds the degree bound"
                )));
            }
        }
        topo.record_isolated();
        Ok(topo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_edge_enforces_invariants() {
        let mut t = Topology::empty(1, 4, 2, Provenance::new("test"));
        assert!(t.add_edge(0, 1));
        assert!(!t.add_edge(1, 0));
        assert!(!t.add_edge(2, 2));
        assert!(t.add_edge(0, 2));
        assert!(!t.add_edge(0, 3));
        assert_eq!(t.degree(0), 2);
        assert_eq!(t.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = plus_grid(3, 4, 0);
        t.provenance.seed = Some(9);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Topology::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn validate_catches_out_of_range() {
        let t = plus_grid(3, 3, 0);
        let empty = RangeGraph::from_adjacency(vec![Vec::new(); 9]);
        assert!(matches!(t.validate(&empty), Err(TopologyError::OutOfRange(..))));
    }
}
