use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use super::{link_capacity, LinkKind, NetParams, NetworkEpoch, Result, SimError};
use crate::constellation::{EARTH_RADIUS_M, SPEED_OF_LIGHT};
use crate::demand::{DemandMatrix, GroundStation};
use crate::geometry::arc_length;
use crate::routing::{attach_stations, hop_bucket, Parent, StationTree, WeightedNet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOptions {
    pub duration_s: f64,
    pub seed: u64,
    /// Record every enqueue, transmission, arrival and drop.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BufferFull,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Enqueue,
    TxStart,
    Arrive,
    Drop,
}

/// Node ids are satellites `0..N` followed by stations `N..N+m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub packet: usize,
    pub echo: bool,
    pub kind: TraceKind,
    pub node: usize,
    /// Far end of the link for enqueue and transmit events.
    pub next: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSimStats {
    pub src: usize,
    pub dst: usize,
    /// Offered rate, packets/s.
    pub rate: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Over delivered packets; NaN when none arrived.
    pub mean_stretch: f64,
    pub mean_hops: f64,
    pub rtt_s: Vec<f64>,
    pub mean_rtt_s: f64,
    /// Population standard deviation of the RTT samples.
    pub jitter_s: f64,
}

/// Traffic over one link, summed over both directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkUsage {
    pub a: usize,
    pub b: usize,
    pub kind: LinkKind,
    pub forwarded: u64,
    /// `forwarded` over all packets routed in the run (data and echoes).
    pub usage: f64,
}

/// Packet counters. Data and echo packets are counted separately; each set
/// satisfies `generated = delivered + dropped + in_flight`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counts {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub duration_s: f64,
    pub seed: u64,
    pub num_sats: usize,
    pub data: Counts,
    pub echo: Counts,
    pub drops_by_reason: Vec<(DropReason, u64)>,
    /// Delivered data packets per hop bucket (short, midsize, long, very long).
    pub hop_histogram: [u64; 4],
    pub flows: Vec<FlowSimStats>,
    pub links: Vec<LinkUsage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

impl SimReport {
    pub fn routed_packets(&self) -> u64 {
        self.data.generated + self.echo.generated
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    InFlight,
    Delivered,
    Dropped,
}

#[derive(Debug, Clone)]
struct Packet {
    flow: usize,
    echo: bool,
    /// Creation time of the data packet this belongs to.
    origin: f64,
    dst_station: usize,
    hops: u32,
    length_m: f64,
    state: State,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Generate(usize),
    Arrive { packet: usize, node: usize },
    TxDone { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // Earliest first, then insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct LinkState {
    queue: VecDeque<usize>,
    busy: bool,
    forwarded: u64,
}

struct EpochRouting {
    start: f64,
    net: WeightedNet,
    trees: Vec<Option<StationTree>>,
}

struct Sim<'a> {
    params: &'a NetParams,
    epochs: Vec<EpochRouting>,
    num_sats: usize,
    flows: Vec<(usize, usize, f64)>,
    geodesic: Vec<f64>,
    packets: Vec<Packet>,
    links: HashMap<(usize, usize), LinkState>,
    heap: BinaryHeap<Event>,
    seq: u64,
    data: Counts,
    echo: Counts,
    drops: HashMap<DropReason, u64>,
    hop_histogram: [u64; 4],
    flow_stats: Vec<FlowAcc>,
    trace: Option<Vec<TraceEvent>>,
}

#[derive(Debug, Clone, Default)]
struct FlowAcc {
    generated: u64,
    delivered: u64,
    dropped: u64,
    stretch_sum: f64,
    hops_sum: u64,
    rtt: Vec<f64>,
}

impl Sim<'_> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn record(&mut self, time: f64, packet: usize, kind: TraceKind, node: usize, next: Option<usize>) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent { time, packet, echo: self.packets[packet].echo, kind, node, next });
        }
    }

    fn epoch_at(&self, t: f64) -> &EpochRouting {
        let i = self.epochs.partition_point(|e| e.start <= t).saturating_sub(1);
        &self.epochs[i]
    }

    fn next_hop(&self, t: f64, node: usize, dst_station: usize) -> Option<usize> {
        let epoch = self.epoch_at(t);
        let tree = epoch.trees[dst_station].as_ref()?;
        if node >= self.num_sats {
            return tree.entry(&epoch.net, node - self.num_sats).map(|(s, _)| s);
        }
        match tree.parent[node] {
            Parent::None => None,
            Parent::Root => Some(self.num_sats + dst_station),
            Parent::Sat(next) => Some(next),
        }
    }

    fn link_length(&self, t: f64, a: usize, b: usize) -> (f64, LinkKind) {
        let net = &self.epoch_at(t).net;
        let pos = |n: usize| {
            if n < self.num_sats {
                net.sat_positions[n]
            } else {
                net.station_positions[n - self.num_sats]
            }
        };
        let kind = if a < self.num_sats && b < self.num_sats { LinkKind::Isl } else { LinkKind::Gsl };
        ((pos(a) - pos(b)).norm(), kind)
    }

    fn counts(&mut self, echo: bool) -> &mut Counts {
        if echo {
            &mut self.echo
        } else {
            &mut self.data
        }
    }

    fn drop_packet(&mut self, t: f64, packet: usize, node: usize, reason: DropReason) {
        let p = &mut self.packets[packet];
        p.state = State::Dropped;
        let (echo, flow) = (p.echo, p.flow);
        self.counts(echo).dropped += 1;
        if !echo {
            self.flow_stats[flow].dropped += 1;
        }
        *self.drops.entry(reason).or_default() += 1;
        self.record(t, packet, TraceKind::Drop, node, None);
    }

    fn create(&mut self, flow: usize, echo: bool, origin: f64) -> usize {
        let (src, dst, _) = self.flows[flow];
        let id = self.packets.len();
        self.packets.push(Packet {
            flow,
            echo,
            origin,
            dst_station: if echo { src } else { dst },
            hops: 0,
            length_m: 0.0,
            state: State::InFlight,
        });
        self.counts(echo).generated += 1;
        if !echo {
            self.flow_stats[flow].generated += 1;
        }
        id
    }

    fn at_node(&mut self, t: f64, packet: usize, node: usize) {
        let dst = self.packets[packet].dst_station;
        if node == self.num_sats + dst {
            self.deliver(t, packet);
            return;
        }
        let Some(next) = self.next_hop(t, node, dst) else {
            self.drop_packet(t, packet, node, DropReason::NoRoute);
            return;
        };
        self.record(t, packet, TraceKind::Enqueue, node, Some(next));
        let cap = self.params.buffer_packets;
        let link = self.links.entry((node, next)).or_default();
        if !link.busy {
            link.busy = true;
            self.transmit(t, packet, node, next);
        } else if link.queue.len() < cap {
            link.queue.push_back(packet);
        } else {
            self.drop_packet(t, packet, node, DropReason::BufferFull);
        }
    }

    fn transmit(&mut self, t: f64, packet: usize, from: usize, to: usize) {
        let (length, kind) = self.link_length(t, from, to);
        // Lengths are positive for distinct nodes, so this cannot fail.
        let capacity = link_capacity(length, kind, self.params).expect("positive link length");
        let tx = self.params.packet_bits() / capacity;
        let p = &mut self.packets[packet];
        p.hops += 1;
        p.length_m += length;
        self.links.get_mut(&(from, to)).expect("link exists").forwarded += 1;
        self.record(t, packet, TraceKind::TxStart, from, Some(to));
        self.push(t + tx, EventKind::TxDone { from, to });
        self.push(t + tx + length / SPEED_OF_LIGHT, EventKind::Arrive { packet, node: to });
    }

    fn deliver(&mut self, t: f64, packet: usize) {
        let p = &mut self.packets[packet];
        p.state = State::Delivered;
        let (echo, flow, origin, hops, length) = (p.echo, p.flow, p.origin, p.hops, p.length_m);
        self.counts(echo).delivered += 1;
        if echo {
            self.flow_stats[flow].rtt.push(t - origin);
            return;
        }
        let geodesic = self.geodesic[flow];
        let acc = &mut self.flow_stats[flow];
        acc.delivered += 1;
        acc.hops_sum += hops as u64;
        if let Some(b) = hop_bucket(hops as usize) {
            self.hop_histogram[b] += 1;
        }
        acc.stretch_sum += if geodesic > 0.0 { length / geodesic } else { 1.0 };
        let reply = self.create(flow, true, origin);
        let node = self.num_sats + self.flows[flow].1;
        self.at_node(t, reply, node);
    }
}

/// Runs the packet simulation over `[epochs[0].start, epochs[0].start + duration)`.
///
/// Routing tables and link geometry come from the epoch in force when a packet
/// reaches a node; packets already queued on a link are sent over it even if
/// the next epoch drops that link.
pub fn run(
    epochs: &[NetworkEpoch],
    stations: &[GroundStation],
    demand: &DemandMatrix,
    params: &NetParams,
    opts: &SimOptions,
) -> Result<SimReport> {
    params.validate()?;
    if !(opts.duration_s.is_finite() && opts.duration_s >= 0.0) {
        return Err(SimError::InvalidParams(format!("duration must be non-negative, got {}", opts.duration_s)));
    }
    let first = epochs.first().ok_or_else(|| SimError::Schedule("no epochs".into()))?;
    let start = first.start;
    let horizon = start + opts.duration_s;
    for pair in epochs.windows(2) {
        if (pair[0].end - pair[1].start).abs() > 1e-9 {
            return Err(SimError::Schedule(format!("gap or overlap at {}..{}", pair[0].end, pair[1].start)));
        }
    }
    if epochs.last().is_some_and(|e| e.end < horizon - 1e-9) {
        return Err(SimError::Schedule(format!("epochs end before the horizon {horizon}")));
    }
    let num_sats = first.topology.num_satellites();
    if epochs.iter().any(|e| e.topology.num_satellites() != num_sats || e.sat_positions.len() != num_sats) {
        return Err(SimError::Schedule("epochs disagree on the number of satellites".into()));
    }
    if demand.size() != stations.len() {
        return Err(SimError::InvalidParams(format!(
            "demand is {0}×{0} but there are {1} stations",
            demand.size(),
            stations.len()
        )));
    }

    let flows: Vec<(usize, usize, f64)> = demand.flows().filter(|&(_, _, r)| r > 0.0).collect();
    let mut endpoint = vec![false; stations.len()];
    for &(i, j, _) in &flows {
        endpoint[i] = true;
        endpoint[j] = true;
    }
    let routing = epochs
        .iter()
        .map(|e| {
            let net = attach_stations(&e.topology, &e.sat_positions, stations, params.min_elevation_deg);
            let trees = (0..stations.len()).map(|g| endpoint[g].then(|| net.station_tree(g))).collect();
            EpochRouting { start: e.start, net, trees }
        })
        .collect();
    let geodesic =
        flows.iter().map(|&(i, j, _)| arc_length(stations[i].position, stations[j].position, EARTH_RADIUS_M)).collect();

    let mut sim = Sim {
        params,
        epochs: routing,
        num_sats,
        geodesic,
        packets: Vec::new(),
        links: HashMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        data: Counts::default(),
        echo: Counts::default(),
        drops: HashMap::new(),
        hop_histogram: [0; 4],
        flow_stats: vec![FlowAcc::default(); flows.len()],
        trace: opts.trace.then(Vec::new),
        flows,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let gaps: Vec<Exp<f64>> = sim
        .flows
        .iter()
        .map(|&(_, _, r)| Exp::new(r).map_err(|e| SimError::InvalidParams(format!("rate {r}: {e}"))))
        .collect::<Result<_>>()?;
    for (f, gap) in gaps.iter().enumerate() {
        let t = start + gap.sample(&mut rng);
        if t < horizon {
            sim.push(t, EventKind::Generate(f));
        }
    }

    while let Some(ev) = sim.heap.pop() {
        if ev.time >= horizon {
            break;
        }
        match ev.kind {
            EventKind::Generate(f) => {
                let id = sim.create(f, false, ev.time);
                let node = num_sats + sim.flows[f].0;
                sim.at_node(ev.time, id, node);
                let next = ev.time + gaps[f].sample(&mut rng);
                if next < horizon {
                    sim.push(next, EventKind::Generate(f));
                }
            }
            EventKind::Arrive { packet, node } => {
                sim.record(ev.time, packet, TraceKind::Arrive, node, None);
                sim.at_node(ev.time, packet, node);
            }
            EventKind::TxDone { from, to } => {
                let link = sim.links.get_mut(&(from, to)).expect("link exists");
                match link.queue.pop_front() {
                    Some(p) => sim.transmit(ev.time, p, from, to),
                    None => link.busy = false,
                }
            }
        }
    }

    for p in &sim.packets {
        if p.state == State::InFlight {
            if p.echo {
                sim.echo.in_flight += 1;
            } else {
                sim.data.in_flight += 1;
            }
        }
    }
    let routed = (sim.data.generated + sim.echo.generated).max(1) as f64;
    let mut merged: HashMap<(usize, usize), u64> = HashMap::new();
    for (&(a, b), l) in &sim.links {
        *merged.entry((a.min(b), a.max(b))).or_default() += l.forwarded;
    }
    let mut links: Vec<LinkUsage> = merged
        .into_iter()
        .map(|((a, b), forwarded)| LinkUsage {
            a,
            b,
            kind: if b < num_sats { LinkKind::Isl } else { LinkKind::Gsl },
            forwarded,
            usage: forwarded as f64 / routed,
        })
        .collect();
    links.sort_by_key(|l| (l.a, l.b));
    let flows = sim
        .flows
        .iter()
        .zip(&sim.flow_stats)
        .map(|(&(src, dst, rate), acc)| {
            let n = acc.rtt.len() as f64;
            let mean_rtt = acc.rtt.iter().sum::<f64>() / n;
            let var = acc.rtt.iter().map(|r| (r - mean_rtt).powi(2)).sum::<f64>() / n;
            FlowSimStats {
                src,
                dst,
                rate,
                generated: acc.generated,
                delivered: acc.delivered,
                dropped: acc.dropped,
                mean_stretch: acc.stretch_sum / acc.delivered as f64,
                mean_hops: acc.hops_sum as f64 / acc.delivered as f64,
                mean_rtt_s: mean_rtt,
                jitter_s: var.sqrt(),
                rtt_s: acc.rtt.clone(),
            }
        })
        .collect();
    let mut drops_by_reason: Vec<(DropReason, u64)> = sim.drops.into_iter().collect();
    drops_by_reason.sort_by_key(|&(r, _)| r as u8);
    Ok(SimReport {
        duration_s: opts.duration_s,
        seed: opts.seed,
        num_sats,
        data: sim.data,
        echo: sim.echo,
        drops_by_reason,
        hop_histogram: sim.hop_histogram,
        flows,
        links,
        trace: sim.trace,
    })
}
