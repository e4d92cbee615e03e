//! Slot-synchronous packet engine.
//!
//! Each slot: sources inject, every scheduled cell sends the head of its
//! queue from its relay to the next relay, all SINRs are computed against the
//! full transmitter set of the slot, and only then are the outcomes applied.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::surface_distance;
use crate::link::{sinr_from_powers, LinkModel, RadioParams};
use crate::rng::{stream, Domain, SimRng};
use crate::routing::Route;
use crate::schedule::Schedule;
use crate::tessellation::{min_cell_occupancy, CellId, Deployment, NodeId, Tessellation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    #[default]
    #[serde(alias = "bernoulli")]
    PoissonBernoulli,
    /// Scheduled cells with no real packet send a dummy on a passing route.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    #[default]
    Bernoulli,
    /// One packet every `⌈1/λ⌉` slots, phase-shifted by connection id.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueDiscipline {
    #[default]
    SharedFifo,
    FairPerConnection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Injection probability per source per slot.
    pub lambda: f64,
    /// Attempts per hop `R`.
    pub attempts: u32,
    /// `None` means ten schedule rotations.
    pub warmup_slots: Option<u64>,
    pub measure_slots: u64,
    pub traffic: Traffic,
    pub injection: Injection,
    pub seed: u64,
    /// Connections that inject; `None` means all of them.
    pub sources: Option<Vec<usize>>,
    pub queue: QueueDiscipline,
    pub queue_cap: Option<usize>,
    pub trace: bool,
    /// Interferers farther than this from a receiver are ignored.
    pub interference_radius: Option<f64>,
    /// SINR reservoir size.
    pub reservoir: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            attempts: 1,
            warmup_slots: None,
            measure_slots: 10_000,
            traffic: Traffic::default(),
            injection: Injection::default(),
            seed: 0,
            sources: None,
            queue: QueueDiscipline::default(),
            queue_cap: None,
            trace: false,
            interference_radius: None,
            reservoir: 10_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "lambda = {} must lie in (0, 1]",
                self.lambda
            )));
        }
        if self.attempts < 1 {
            return Err(Error::Config("attempts R must be at least 1".into()));
        }
        if self.measure_slots < 1 {
            return Err(Error::Config("measure_slots must be at least 1".into()));
        }
        if let Some(r) = self.interference_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!(
                    "interference radius {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn warmup(&self, k: usize) -> u64 {
        self.warmup_slots.unwrap_or(10 * k as u64)
    }
}

/// Same configuration with saturated traffic.
pub fn saturated_mode(cfg: &EngineConfig) -> EngineConfig {
    EngineConfig {
        traffic: Traffic::Saturated,
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub connection: usize,
    pub seq: u64,
    pub hop: usize,
    /// Attempts already spent on the current hop.
    pub attempts: u32,
    pub injected_at: u64,
    /// Injected after warmup, hence counted.
    pub measured: bool,
}

#[derive(Debug, Default)]
struct CellQueue {
    fifo: VecDeque<Packet>,
    flows: BTreeMap<usize, VecDeque<Packet>>,
    order: VecDeque<usize>,
    len: usize,
}

impl CellQueue {
    fn push(&mut self, p: Packet, fair: bool) {
        self.len += 1;
        if !fair {
            self.fifo.push_back(p);
            return;
        }
        let flow = self.flows.entry(p.connection).or_default();
        if flow.is_empty() {
            self.order.push_back(p.connection);
        }
        flow.push_back(p);
    }

    fn take_head(&mut self, fair: bool) -> Option<Packet> {
        let p = if fair {
            let conn = *self.order.front()?;
            self.flows.get_mut(&conn)?.pop_front()
        } else {
            self.fifo.pop_front()
        };
        if p.is_some() {
            self.len -= 1;
        }
        p
    }

    /// Puts a packet that will be retried back at the head.
    fn return_head(&mut self, p: Packet, fair: bool) {
        self.len += 1;
        if fair {
            self.flows.entry(p.connection).or_default().push_front(p);
        } else {
            self.fifo.push_front(p);
        }
    }

    /// Called once the head packet has left for good; rotates fair queues.
    fn finish_head(&mut self, fair: bool) {
        if !fair {
            return;
        }
        if let Some(conn) = self.order.pop_front() {
            if self.flows.get(&conn).is_some_and(|f| !f.is_empty()) {
                self.order.push_back(conn);
            }
        }
    }

    fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.fifo.iter().chain(self.flows.values().flatten())
    }
}

/// Dummy traffic of one cell in saturated mode: round-robin over the
/// interior hops transmitted from the cell, else a fixed fallback link.
#[derive(Debug, Default)]
struct DummySource {
    pairs: Vec<(usize, usize)>,
    cursor: usize,
    attempts: u32,
    fallback: Option<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    Real(Packet),
    Dummy(Option<(usize, usize)>),
}

#[derive(Debug, Clone, Copy)]
struct Transmission {
    cell: CellId,
    tx: NodeId,
    rx: NodeId,
    attempt: u32,
    payload: Payload,
}

impl Transmission {
    fn pair(&self) -> Option<(usize, usize)> {
        match self.payload {
            Payload::Real(p) => Some((p.connection, p.hop)),
            Payload::Dummy(pair) => pair,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    /// Lost to a stronger transmission aimed at the same receiver.
    Collision,
}

/// One transmission attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: u64,
    pub cell: CellId,
    pub tx: NodeId,
    pub rx: NodeId,
    pub connection: Option<usize>,
    pub hop: Option<usize>,
    pub seq: Option<u64>,
    pub dummy: bool,
    pub attempt: u32,
    pub sinr: f64,
    /// Distance from the receiver to the nearest other transmitter of the slot.
    pub nearest_interferer: f64,
    pub outcome: Outcome,
    /// Success or last permitted attempt.
    pub resolved: bool,
}

pub const TRACE_SCHEMA: &str = "spherenet-trace/1";

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    std::io::Write::write_all(&mut file, format!("# schema: {TRACE_SCHEMA}\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-connection packet accounting (measured packets only).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConnectionStats {
    pub connection: usize,
    pub hops: usize,
    pub length: f64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl ConnectionStats {
    /// Delivered over resolved; in-flight packets are censored.
    pub fn delivery_probability(&self) -> Option<f64> {
        let resolved = self.delivered + self.dropped;
        (resolved > 0).then(|| self.delivered as f64 / resolved as f64)
    }
}

/// What was seen on one `(connection, hop)` after warmup, counting real and
/// dummy transmissions alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopObservation {
    pub attempts: u64,
    pub successes: u64,
    pub resolutions: u64,
    pub max_sinr: f64,
    pub min_sinr: f64,
    pub phi_sum: f64,
    /// Nearest concurrent transmitter to the receiver in the slot of the
    /// first resolved attempt.
    pub first_resolution_clearance: Option<f64>,
}

impl Default for HopObservation {
    fn default() -> Self {
        Self {
            attempts: 0,
            successes: 0,
            resolutions: 0,
            max_sinr: f64::NEG_INFINITY,
            min_sinr: f64::INFINITY,
            phi_sum: 0.0,
            first_resolution_clearance: None,
        }
    }
}

impl HopObservation {
    pub fn observed(&self) -> bool {
        self.attempts > 0
    }

    pub fn mean_phi(&self) -> Option<f64> {
        self.observed().then(|| self.phi_sum / self.attempts as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n: usize,
    pub k: usize,
    pub rho_n: f64,
    pub warmup_slots: u64,
    pub measure_slots: u64,
    pub active_sources: usize,
    pub lambda_target: f64,
    pub saturated: bool,
    pub min_occupancy: usize,
    pub connections: Vec<ConnectionStats>,
    pub hops: Vec<Vec<HopObservation>>,
    pub sinr_samples: Vec<f64>,
    pub cell_transmissions: Vec<u64>,
    pub cell_opportunities: Vec<u64>,
    pub trace: Vec<TraceRecord>,
}

impl RunMetrics {
    pub fn injected(&self) -> u64 {
        self.connections.iter().map(|c| c.injected).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.connections.iter().map(|c| c.delivered).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.connections.iter().map(|c| c.dropped).sum()
    }

    pub fn in_flight(&self) -> u64 {
        self.connections.iter().map(|c| c.in_flight).sum()
    }

    fn per_source_slot(&self, count: u64) -> f64 {
        if self.active_sources == 0 {
            return 0.0;
        }
        count as f64 / (self.active_sources as f64 * self.measure_slots as f64)
    }

    /// Realized injection rate `λₙ` per source (packets/slot).
    pub fn lambda_n(&self) -> f64 {
        self.per_source_slot(self.injected())
    }

    /// Delivered end-to-end rate `Λₙ` per source (packets/slot).
    pub fn big_lambda_n(&self) -> f64 {
        self.per_source_slot(self.delivered())
    }

    /// Fraction of a cell's scheduled slots in which it transmitted.
    pub fn utilization(&self, cell: CellId) -> Option<f64> {
        let o = self.cell_opportunities[cell];
        (o > 0).then(|| self.cell_transmissions[cell] as f64 / o as f64)
    }

    pub fn conservation_holds(&self) -> bool {
        self.connections
            .iter()
            .all(|c| c.injected == c.delivered + c.dropped + c.in_flight)
    }
}

fn nearest_to_center(dep: &Deployment, t: &Tessellation, c: CellId) -> Option<NodeId> {
    t.nodes_in_cell[c].iter().copied().min_by(|&a, &b| {
        surface_distance(dep.position(a), t.center(c))
            .total_cmp(&surface_distance(dep.position(b), t.center(c)))
            .then(a.cmp(&b))
    })
}

fn dummy_sources(dep: &Deployment, t: &Tessellation, routes: &[Route]) -> Vec<DummySource> {
    let mut out: Vec<DummySource> = (0..t.num_cells()).map(|_| DummySource::default()).collect();
    for r in routes {
        for j in r.interior_hops() {
            out[r.hop_cell(j)].pairs.push((r.connection, j));
        }
    }
    for (c, d) in out.iter_mut().enumerate() {
        if !d.pairs.is_empty() {
            continue;
        }
        let tx = nearest_to_center(dep, t, c);
        let rx = t.adjacency[c]
            .iter()
            .find(|&&nb| !t.is_empty_cell(nb))
            .and_then(|&nb| nearest_to_center(dep, t, nb));
        d.fallback = tx.zip(rx);
    }
    out
}

struct Reservoir {
    cap: usize,
    seen: u64,
    samples: Vec<f64>,
    rng: SimRng,
}

impl Reservoir {
    fn offer(&mut self, x: f64) {
        self.seen += 1;
        if self.samples.len() < self.cap {
            self.samples.push(x);
        } else {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.samples[j as usize] = x;
            }
        }
    }
}

fn check_inputs(t: &Tessellation, schedule: &Schedule, routes: &[Route]) -> Result<()> {
    if schedule.color_of_cell.len() != t.num_cells() {
        return Err(Error::Argument(format!(
            "schedule covers {} cells, tessellation has {}",
            schedule.color_of_cell.len(),
            t.num_cells()
        )));
    }
    for (i, r) in routes.iter().enumerate() {
        if r.connection != i {
            return Err(Error::Argument(format!(
                "route at index {i} belongs to connection {}",
                r.connection
            )));
        }
        if r.cells.len() > 2 {
            if let Some(&c) = r.cells[1..r.cells.len() - 1]
                .iter()
                .find(|&&c| t.is_empty_cell(c))
            {
                return Err(Error::EmptyCell {
                    connection: i,
                    cell: c,
                });
            }
        }
    }
    Ok(())
}

/// Runs the engine for `warmup + measure_slots` slots.
pub fn run(
    dep: &Deployment,
    t: &Tessellation,
    schedule: &Schedule,
    routes: &[Route],
    model: &LinkModel,
    radio: &RadioParams,
    cfg: &EngineConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    model.validate()?;
    radio.validate()?;
    check_inputs(t, schedule, routes)?;
    let sources: Vec<usize> = match &cfg.sources {
        Some(s) => s.clone(),
        None => (0..routes.len()).collect(),
    };
    if let Some(&bad) = sources.iter().find(|&&s| s >= routes.len()) {
        return Err(Error::Config(format!("source {bad} has no route")));
    }

    let fair = cfg.queue == QueueDiscipline::FairPerConnection;
    let saturated = cfg.traffic == Traffic::Saturated;
    let k = schedule.len();
    let warmup = cfg.warmup(k);
    let total = warmup + cfg.measure_slots;
    let period = (1.0 / cfg.lambda).ceil() as u64;
    let r_max = cfg.attempts;

    let mut inject_rng = stream(cfg.seed, Domain::Inject, 0);
    let mut link_rng = stream(cfg.seed, Domain::Link, 0);
    let mut reservoir = Reservoir {
        cap: cfg.reservoir,
        seen: 0,
        samples: Vec::new(),
        rng: stream(cfg.seed, Domain::Reservoir, 0),
    };

    let mut queues: Vec<CellQueue> = (0..t.num_cells()).map(|_| CellQueue::default()).collect();
    let mut dummies = if saturated {
        dummy_sources(dep, t, routes)
    } else {
        Vec::new()
    };
    let mut conns: Vec<ConnectionStats> = routes
        .iter()
        .map(|r| ConnectionStats {
            connection: r.connection,
            hops: r.hops(),
            length: r.geodesic_length,
            ..Default::default()
        })
        .collect();
    let mut hops: Vec<Vec<HopObservation>> = routes
        .iter()
        .map(|r| vec![HopObservation::default(); r.hops()])
        .collect();
    let mut cell_tx = vec![0u64; t.num_cells()];
    let mut cell_opp = vec![0u64; t.num_cells()];
    let mut trace = Vec::new();
    let mut seq = 0u64;

    let push = |queues: &mut Vec<CellQueue>, cell: CellId, p: Packet| -> Result<()> {
        if let Some(cap) = cfg.queue_cap {
            if queues[cell].len >= cap {
                return Err(Error::QueueOverflow { cell, cap });
            }
        }
        queues[cell].push(p, fair);
        Ok(())
    };

    let mut txs: Vec<Transmission> = Vec::new();
    let mut forward: Vec<(CellId, Packet)> = Vec::new();
    for slot in 0..total {
        let measuring = slot >= warmup;

        for &src in &sources {
            let fire = match cfg.injection {
                Injection::Bernoulli => inject_rng.random::<f64>() < cfg.lambda,
                Injection::Periodic => (slot + src as u64).is_multiple_of(period),
            };
            if !fire {
                continue;
            }
            let p = Packet {
                connection: src,
                seq,
                hop: 0,
                attempts: 0,
                injected_at: slot,
                measured: measuring,
            };
            seq += 1;
            if measuring {
                conns[src].injected += 1;
            }
            push(&mut queues, routes[src].hop_cell(0), p)?;
        }

        txs.clear();
        for &c in schedule.active_cells(slot) {
            if measuring {
                cell_opp[c] += 1;
            }
            if let Some(p) = queues[c].take_head(fair) {
                let r = &routes[p.connection];
                txs.push(Transmission {
                    cell: c,
                    tx: r.transmitter(p.hop),
                    rx: r.receiver(p.hop),
                    attempt: p.attempts + 1,
                    payload: Payload::Real(p),
                });
            } else if saturated {
                let d = &dummies[c];
                if let Some(&(conn, j)) = d.pairs.get(d.cursor) {
                    txs.push(Transmission {
                        cell: c,
                        tx: routes[conn].transmitter(j),
                        rx: routes[conn].receiver(j),
                        attempt: d.attempts + 1,
                        payload: Payload::Dummy(Some((conn, j))),
                    });
                } else if let Some((tx, rx)) = d.fallback {
                    txs.push(Transmission {
                        cell: c,
                        tx,
                        rx,
                        attempt: 1,
                        payload: Payload::Dummy(None),
                    });
                }
            }
        }

        // Slot barrier: every SINR sees the complete transmitter set.
        let m = txs.len();
        let mut signal = vec![0.0; m];
        let mut gamma = vec![0.0; m];
        let mut clearance = vec![f64::INFINITY; m];
        for i in 0..m {
            let rx = dep.position(txs[i].rx);
            signal[i] = radio.received(surface_distance(dep.position(txs[i].tx), rx));
            let mut interference = 0.0;
            for (j, other) in txs.iter().enumerate() {
                if j == i {
                    continue;
                }
                debug_assert_ne!(other.tx, txs[i].rx, "receiver transmits in the same slot");
                let d = surface_distance(dep.position(other.tx), rx);
                clearance[i] = clearance[i].min(d);
                if cfg.interference_radius.is_none_or(|r| d <= r) {
                    interference += radio.received(d);
                }
            }
            gamma[i] = if interference.is_infinite() {
                0.0
            } else {
                sinr_from_powers(signal[i], interference, radio.noise)
            };
        }

        forward.clear();
        for i in 0..m {
            let collided = (0..m).any(|j| {
                j != i
                    && txs[j].rx == txs[i].rx
                    && (signal[j] > signal[i] || (signal[j] == signal[i] && j < i))
            });
            let u: f64 = link_rng.random();
            let phi = model.success_probability(gamma[i]);
            let success = !collided && u < phi;
            let outcome = if collided {
                Outcome::Collision
            } else if success {
                Outcome::Success
            } else {
                Outcome::Failure
            };
            let x = txs[i];
            let resolved = success || x.attempt >= r_max;

            if measuring {
                cell_tx[x.cell] += 1;
                reservoir.offer(gamma[i]);
                if let Some((conn, j)) = x.pair() {
                    let h = &mut hops[conn][j];
                    h.attempts += 1;
                    h.successes += success as u64;
                    h.max_sinr = h.max_sinr.max(gamma[i]);
                    h.min_sinr = h.min_sinr.min(gamma[i]);
                    h.phi_sum += phi;
                    if resolved {
                        h.resolutions += 1;
                        if h.first_resolution_clearance.is_none() {
                            h.first_resolution_clearance = Some(clearance[i]);
                        }
                    }
                }
                if cfg.trace {
                    let (connection, hop, seq) = match x.payload {
                        Payload::Real(p) => (Some(p.connection), Some(p.hop), Some(p.seq)),
                        Payload::Dummy(pair) => (pair.map(|p| p.0), pair.map(|p| p.1), None),
                    };
                    trace.push(TraceRecord {
                        slot,
                        cell: x.cell,
                        tx: x.tx,
                        rx: x.rx,
                        connection,
                        hop,
                        seq,
                        dummy: matches!(x.payload, Payload::Dummy(_)),
                        attempt: x.attempt,
                        sinr: gamma[i],
                        nearest_interferer: clearance[i],
                        outcome,
                        resolved,
                    });
                }
            }

            match x.payload {
                Payload::Real(mut p) => {
                    p.attempts = x.attempt;
                    if success {
                        p.hop += 1;
                        p.attempts = 0;
                        queues[x.cell].finish_head(fair);
                        if p.hop == routes[p.connection].hops() {
                            if p.measured {
                                conns[p.connection].delivered += 1;
                            }
                        } else {
                            forward.push((routes[p.connection].hop_cell(p.hop), p));
                        }
                    } else if resolved {
                        queues[x.cell].finish_head(fair);
                        if p.measured {
                            conns[p.connection].dropped += 1;
                        }
                    } else {
                        queues[x.cell].return_head(p, fair);
                    }
                }
                Payload::Dummy(Some(_)) => {
                    let d = &mut dummies[x.cell];
                    if resolved {
                        d.cursor = (d.cursor + 1) % d.pairs.len();
                        d.attempts = 0;
                    } else {
                        d.attempts += 1;
                    }
                }
                Payload::Dummy(None) => {}
            }
        }
        for &(cell, p) in &forward {
            push(&mut queues, cell, p)?;
        }
    }

    for q in &queues {
        for p in q.packets().filter(|p| p.measured) {
            conns[p.connection].in_flight += 1;
        }
    }
    let metrics = RunMetrics {
        n: dep.n,
        k,
        rho_n: t.rho_n,
        warmup_slots: warmup,
        measure_slots: cfg.measure_slots,
        active_sources: sources.len(),
        lambda_target: cfg.lambda,
        saturated,
        min_occupancy: min_cell_occupancy(t, dep).min_occupancy,
        connections: conns,
        hops,
        sinr_samples: reservoir.samples,
        cell_transmissions: cell_tx,
        cell_opportunities: cell_opp,
        trace,
    };
    if !metrics.conservation_holds() {
        return Err(Error::Invariant("packet conservation violated".into()));
    }
    Ok(metrics)
}

/// Slots a saturated run needs so that every interior hop is resolved at
/// least once: `K · R` times the largest number of hops sharing a cell.
pub fn saturation_slots(
    schedule: &Schedule,
    t: &Tessellation,
    routes: &[Route],
    attempts: u32,
) -> u64 {
    let mut per_cell = vec![0u64; t.num_cells()];
    for r in routes {
        for j in r.interior_hops() {
            per_cell[r.hop_cell(j)] += 1;
        }
    }
    let busiest = per_cell.into_iter().max().unwrap_or(0).max(1);
    busiest * schedule.len() as u64 * attempts as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSummary {
    pub lambda_n: f64,
    pub big_lambda_n: f64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    /// Connections per delivery-probability decile; the last bin holds 1.0.
    pub delivery_histogram: [usize; 10],
    /// `1/(Q·K)` with `Q` the least cell occupancy.
    pub injection_ceiling: f64,
}

pub fn throughput_summary(m: &RunMetrics) -> ThroughputSummary {
    let mut delivery_histogram = [0usize; 10];
    for p in m
        .connections
        .iter()
        .filter_map(|c| c.delivery_probability())
    {
        delivery_histogram[((p * 10.0) as usize).min(9)] += 1;
    }
    let q = m.min_occupancy.max(1);
    ThroughputSummary {
        lambda_n: m.lambda_n(),
        big_lambda_n: m.big_lambda_n(),
        injected: m.injected(),
        delivered: m.delivered(),
        dropped: m.dropped(),
        in_flight: m.in_flight(),
        delivery_histogram,
        injection_ceiling: 1.0 / (q as f64 * m.k as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{
        pick_connections, straight_line_route, Connection, RelayRule, RelayTable,
    };
    use crate::schedule::build_schedule;
    use crate::tessellation::{deploy_and_tessellate, rho_for_n, EmptyCellPolicy};

    struct World {
        dep: Deployment,
        t: Tessellation,
        s: Schedule,
        routes: Vec<Route>,
    }

    fn world(n: usize, seed: u64) -> World {
        let rho = rho_for_n(n, 1.0).unwrap();
        let (dep, t, _) =
            deploy_and_tessellate(n, rho, seed, EmptyCellPolicy::RejectDeployment).unwrap();
        let s = build_schedule(&t, 12.0).unwrap();
        let relays = RelayTable::new(&dep, &t, RelayRule::NearestToCenter);
        let routes = pick_connections(&dep, seed)
            .iter()
            .map(|c| straight_line_route(c, &dep, &t, &relays).unwrap())
            .collect();
        World { dep, t, s, routes }
    }

    fn run_w(w: &World, model: LinkModel, cfg: &EngineConfig) -> RunMetrics {
        run(
            &w.dep,
            &w.t,
            &w.s,
            &w.routes,
            &model,
            &RadioParams::default(),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn conservation_and_determinism() {
        let w = world(600, 1);
        let cfg = EngineConfig {
            lambda: 0.002,
            measure_slots: 3000,
            seed: 5,
            ..Default::default()
        };
        let a = run_w(&w, LinkModel::default(), &cfg);
        let b = run_w(&w, LinkModel::default(), &cfg);
        assert_eq!(a, b);
        assert!(a.conservation_holds());
        assert!(a.injected() > 0);
        assert!(a.big_lambda_n() <= a.lambda_n());
    }

    #[test]
    fn single_hop_retry_law() {
        let w = world(600, 2);
        let conn = w.routes.iter().position(|r| r.hops() == 1).unwrap();
        for (r, expect) in [(1u32, 0.5), (2, 0.75)] {
            let cfg = EngineConfig {
                lambda: 1.0,
                attempts: r,
                warmup_slots: Some(0),
                measure_slots: 200_000,
                sources: Some(vec![conn]),
                queue_cap: None,
                seed: 9,
                ..Default::default()
            };
            // with λ = 1 the queue grows; what matters is the per-hop outcome
            let m = run_w(&w, LinkModel::ConstantP { p: 0.5 }, &cfg);
            let c = m.connections[conn];
            let p = c.delivery_probability().unwrap();
            let resolved = (c.delivered + c.dropped) as f64;
            let sigma = (expect * (1.0 - expect) / resolved).sqrt();
            assert!(
                (p - expect).abs() < 4.0 * sigma,
                "R={r}: {p} over {resolved}"
            );
        }
    }

    #[test]
    fn threshold_model_lossless_without_interference() {
        let w = world(600, 3);
        let conn = w.routes.iter().position(|r| r.hops() >= 4).unwrap();
        let cfg = EngineConfig {
            lambda: 0.01,
            measure_slots: 50_000,
            sources: Some(vec![conn]),
            seed: 3,
            ..Default::default()
        };
        let m = run_w(&w, LinkModel::Threshold { beta: 10.0 }, &cfg);
        let c = m.connections[conn];
        assert!(c.delivered > 0);
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn saturated_cells_always_transmit() {
        let w = world(600, 4);
        let cfg = saturated_mode(&EngineConfig {
            lambda: 0.001,
            measure_slots: 2000,
            ..Default::default()
        });
        let m = run_w(&w, LinkModel::default(), &cfg);
        for c in 0..w.t.num_cells() {
            if let Some(u) = m.utilization(c) {
                assert_eq!(u, 1.0, "cell {c}");
            }
        }
        assert!(!m.sinr_samples.is_empty());
    }

    #[test]
    fn saturation_slots_observe_every_interior_hop() {
        let w = world(600, 5);
        let slots = saturation_slots(&w.s, &w.t, &w.routes, 1);
        let cfg = saturated_mode(&EngineConfig {
            lambda: 1e-6,
            measure_slots: slots,
            sources: Some(vec![]),
            ..Default::default()
        });
        let m = run_w(&w, LinkModel::default(), &cfg);
        for r in &w.routes {
            for j in r.interior_hops() {
                assert!(m.hops[r.connection][j].first_resolution_clearance.is_some());
            }
        }
    }

    #[test]
    fn fair_queueing_conserves_packets() {
        let w = world(600, 6);
        let cfg = EngineConfig {
            lambda: 0.01,
            measure_slots: 3000,
            queue: QueueDiscipline::FairPerConnection,
            attempts: 2,
            ..Default::default()
        };
        let m = run_w(&w, LinkModel::default(), &cfg);
        assert!(m.conservation_holds());
        assert!(m.delivered() > 0);
    }

    #[test]
    fn queue_cap_overflow_is_reported() {
        let w = world(600, 7);
        let cfg = EngineConfig {
            lambda: 1.0,
            measure_slots: 1000,
            queue_cap: Some(3),
            ..Default::default()
        };
        let err = run(
            &w.dep,
            &w.t,
            &w.s,
            &w.routes,
            &LinkModel::default(),
            &RadioParams::default(),
            &cfg,
        );
        assert!(matches!(err, Err(Error::QueueOverflow { cap: 3, .. })));
    }

    #[test]
    fn zero_injection_gives_zero_throughput() {
        let w = world(600, 8);
        let cfg = EngineConfig {
            sources: Some(vec![]),
            measure_slots: 100,
            ..Default::default()
        };
        let m = run_w(&w, LinkModel::default(), &cfg);
        let s = throughput_summary(&m);
        assert_eq!(s.big_lambda_n, 0.0);
        assert_eq!(s.injected, 0);
    }

    #[test]
    fn strongest_signal_wins_at_shared_receiver() {
        // Δ = 4 lets two neighbours of a cell share a colour; find such a pair
        // with single-hop routes into one node of the middle cell.
        let rho = rho_for_n(600, 1.0).unwrap();
        let (dep, t, _) =
            deploy_and_tessellate(600, rho, 4, EmptyCellPolicy::RejectDeployment).unwrap();
        let s = build_schedule(&t, 4.0).unwrap();
        let relays = RelayTable::new(&dep, &t, RelayRule::NearestToCenter);
        let one_hop = |id: usize, src: usize, dst: usize| {
            let c = Connection {
                id,
                source: src,
                destination: dst,
                length: surface_distance(dep.position(src), dep.position(dst)),
            };
            straight_line_route(&c, &dep, &t, &relays)
                .ok()
                .filter(|r| r.hops() == 1)
        };
        let mut found = None;
        'search: for x in 0..t.num_cells() {
            let dst = relays.get(x).unwrap();
            for &a in &t.adjacency[x] {
                for &b in &t.adjacency[x] {
                    if a < b && s.color_of_cell[a] == s.color_of_cell[b] {
                        let (sa, sb) = (relays.get(a).unwrap(), relays.get(b).unwrap());
                        if let (Some(ra), Some(rb)) = (one_hop(0, sa, dst), one_hop(1, sb, dst)) {
                            found = Some(vec![ra, rb]);
                            break 'search;
                        }
                    }
                }
            }
        }
        let routes = found.expect("no colliding pair in this deployment");
        let cfg = EngineConfig {
            lambda: 0.5,
            warmup_slots: Some(0),
            measure_slots: 4000,
            trace: true,
            ..Default::default()
        };
        let m = run(
            &dep,
            &t,
            &s,
            &routes,
            &LinkModel::Threshold { beta: 0.0 },
            &RadioParams::default(),
            &cfg,
        )
        .unwrap();
        let power = |r: &TraceRecord| {
            RadioParams::default()
                .received(surface_distance(dep.position(r.tx), dep.position(r.rx)))
        };
        let mut clashes = 0;
        for pair in m
            .trace
            .chunk_by(|a, b| a.slot == b.slot)
            .filter(|g| g.len() == 2)
        {
            clashes += 1;
            let (strong, weak) = if power(&pair[0]) > power(&pair[1]) {
                (&pair[0], &pair[1])
            } else {
                (&pair[1], &pair[0])
            };
            assert_eq!(strong.outcome, Outcome::Success);
            assert_eq!(weak.outcome, Outcome::Collision);
        }
        assert!(clashes > 100);
        assert!(
            m.trace
                .iter()
                .filter(|r| r.outcome == Outcome::Collision)
                .count()
                == clashes
        );
    }

    #[test]
    fn trace_csv_has_schema_header() {
        let w = world(600, 10);
        let cfg = EngineConfig {
            lambda: 0.01,
            measure_slots: 200,
            trace: true,
            ..Default::default()
        };
        let m = run_w(&w, LinkModel::default(), &cfg);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace_csv(&p, &m.trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# schema: spherenet-trace/1\nslot,cell,tx,rx,"));
    }
}
