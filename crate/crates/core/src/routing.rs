//! Connections and cell routes.
//!
//! A route is an ordered list of distinct cells, consecutive cells adjacent,
//! with one relay node per cell. The first relay is the source and the last
//! is the destination; a connection whose endpoints share a cell is a single
//! direct hop.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_point, surface_distance};
use crate::rng::{stream, Domain};
use crate::tessellation::{CellId, Deployment, NodeId, Tessellation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: usize,
    pub source: NodeId,
    pub destination: NodeId,
    /// Geodesic source-destination distance `L_i`.
    pub length: f64,
}

/// One connection per node, destination uniform over the other nodes.
pub fn pick_connections(dep: &Deployment, seed: u64) -> Vec<Connection> {
    let n = dep.n;
    let mut rng = stream(seed, Domain::Connections, 0);
    (0..n)
        .map(|src| {
            let mut dst = rng.random_range(0..n - 1);
            if dst >= src {
                dst += 1;
            }
            Connection {
                id: src,
                source: src,
                destination: dst,
                length: surface_distance(dep.position(src), dep.position(dst)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub connection: usize,
    pub cells: Vec<CellId>,
    pub relays: Vec<NodeId>,
    pub hop_lengths: Vec<f64>,
    /// `L_i` of the underlying connection.
    pub geodesic_length: f64,
}

impl Route {
    /// Hop count `H_i`.
    pub fn hops(&self) -> usize {
        self.hop_lengths.len()
    }

    /// Path length `L̂_i`.
    pub fn path_length(&self) -> f64 {
        self.hop_lengths.iter().sum()
    }

    /// Cell that holds (and transmits) the packet before hop `j`.
    pub fn hop_cell(&self, j: usize) -> CellId {
        self.cells[j.min(self.cells.len() - 1)]
    }

    pub fn transmitter(&self, j: usize) -> NodeId {
        self.relays[j]
    }

    pub fn receiver(&self, j: usize) -> NodeId {
        self.relays[j + 1]
    }

    /// Interior hops: every hop except the one leaving the source and the
    /// one reaching the destination.
    pub fn interior_hops(&self) -> std::ops::Range<usize> {
        let h = self.hops();
        if h <= 2 {
            0..0
        } else {
            1..h - 1
        }
    }

    /// Checks R1 (consecutive cells adjacent), R2 (no repeated cell) and the
    /// `8ρ` hop-length ceiling.
    pub fn validate(&self, t: &Tessellation) -> Result<()> {
        let err = |reason: String| Error::Routing {
            connection: self.connection,
            reason,
        };
        for w in self.cells.windows(2) {
            if !t.are_adjacent(w[0], w[1]) {
                return Err(err(format!("cells {} and {} are not adjacent", w[0], w[1])));
            }
        }
        let mut seen = self.cells.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(err("route revisits a cell".into()));
        }
        let limit = 8.0 * t.rho_n;
        if let Some(h) = self
            .hop_lengths
            .iter()
            .find(|&&h| h > limit * (1.0 + 1e-12))
        {
            return Err(err(format!("hop of length {h} exceeds 8*rho = {limit}")));
        }
        if self.relays.len() != self.hops() + 1 {
            return Err(err("relay list does not match hop count".into()));
        }
        Ok(())
    }
}

/// How the relay of an intermediate cell is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelayRule {
    #[default]
    NearestToCenter,
    RandomInCell {
        seed: u64,
    },
}

/// Relay node per cell (`None` for empty cells).
#[derive(Debug, Clone)]
pub struct RelayTable {
    relay: Vec<Option<NodeId>>,
}

impl RelayTable {
    pub fn new(dep: &Deployment, t: &Tessellation, rule: RelayRule) -> Self {
        let relay = (0..t.num_cells())
            .map(|c| {
                let members = &t.nodes_in_cell[c];
                if members.is_empty() {
                    return None;
                }
                match rule {
                    RelayRule::NearestToCenter => members.iter().copied().min_by(|&a, &b| {
                        let da = surface_distance(dep.position(a), t.center(c));
                        let db = surface_distance(dep.position(b), t.center(c));
                        da.total_cmp(&db).then(a.cmp(&b))
                    }),
                    RelayRule::RandomInCell { seed } => {
                        let mut rng = stream(seed, Domain::Relay, c as u64);
                        Some(members[rng.random_range(0..members.len())])
                    }
                }
            })
            .collect();
        Self { relay }
    }

    pub fn get(&self, cell: CellId) -> Option<NodeId> {
        self.relay[cell]
    }
}

/// Turns a cell sequence into a route with relays and hop lengths.
pub fn route_from_cells(
    conn: &Connection,
    cells: Vec<CellId>,
    dep: &Deployment,
    relays: &RelayTable,
) -> Result<Route> {
    let mut nodes = Vec::with_capacity(cells.len() + 1);
    nodes.push(conn.source);
    if cells.len() > 1 {
        for &c in &cells[1..cells.len() - 1] {
            let r = relays.get(c).ok_or(Error::EmptyCell {
                connection: conn.id,
                cell: c,
            })?;
            nodes.push(r);
        }
    }
    nodes.push(conn.destination);
    let hop_lengths = nodes
        .windows(2)
        .map(|w| surface_distance(dep.position(w[0]), dep.position(w[1])))
        .collect();
    Ok(Route {
        connection: conn.id,
        cells,
        relays: nodes,
        hop_lengths,
        geodesic_length: conn.length,
    })
}

/// Cells whose regions the source-destination geodesic passes through.
///
/// The geodesic is sampled every `ρ/10`; nearest-center changes are
/// recorded. If two recorded cells are not adjacent the sampling skipped a
/// cell, so the walk is repeated at half the step.
pub fn geodesic_cells(
    conn: &Connection,
    dep: &Deployment,
    t: &Tessellation,
) -> Result<Vec<CellId>> {
    let src_cell = t.cell_of_node[conn.source];
    let dst_cell = t.cell_of_node[conn.destination];
    if src_cell == dst_cell {
        return Ok(vec![src_cell]);
    }
    let a = dep.position(conn.source);
    let b = dep.position(conn.destination);
    let d = conn.length;
    let mut step = t.rho_n / 10.0;
    for _ in 0..24 {
        let steps = (d / step).ceil().max(1.0) as usize;
        let mut cells = vec![src_cell];
        let mut current = src_cell;
        for k in 1..steps {
            let p = geodesic_point(a, b, d * k as f64 / steps as f64)?;
            let c = t.nearest_center_from(current, &p);
            if c != current {
                cells.push(c);
                current = c;
            }
        }
        if current != dst_cell {
            cells.push(dst_cell);
        }
        if cells.windows(2).all(|w| t.are_adjacent(w[0], w[1])) {
            let mut sorted = cells.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Routing {
                    connection: conn.id,
                    reason: format!("geodesic re-entered a cell: {cells:?}"),
                });
            }
            return Ok(cells);
        }
        step /= 2.0;
    }
    Err(Error::Routing {
        connection: conn.id,
        reason: "geodesic walk kept skipping cells".into(),
    })
}

/// Straight-line (geodesic) route.
pub fn straight_line_route(
    conn: &Connection,
    dep: &Deployment,
    t: &Tessellation,
    relays: &RelayTable,
) -> Result<Route> {
    let cells = geodesic_cells(conn, dep, t)?;
    route_from_cells(conn, cells, dep, relays)
}

/// Routing strategies beyond straight lines, all satisfying R1/R2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Straight,
    ShortestCellPath,
    RandomWalkLoopErased,
    Detour { kappa: f64 },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Straight => "straight".into(),
            Strategy::ShortestCellPath => "shortest_cell_path".into(),
            Strategy::RandomWalkLoopErased => "random_walk_loop_erased".into(),
            Strategy::Detour { kappa } => format!("detour({kappa})"),
        }
    }
}

/// BFS over adjacency that avoids empty intermediate cells; ties by cell id.
fn bfs_path(t: &Tessellation, from: CellId, to: CellId) -> Option<Vec<CellId>> {
    if from == to {
        return Some(vec![from]);
    }
    let k = t.num_cells();
    let mut prev = vec![usize::MAX; k];
    let mut queue = VecDeque::new();
    prev[from] = from;
    queue.push_back(from);
    while let Some(c) = queue.pop_front() {
        for &nb in &t.adjacency[c] {
            if prev[nb] != usize::MAX {
                continue;
            }
            if nb != to && t.is_empty_cell(nb) {
                continue;
            }
            prev[nb] = c;
            if nb == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(nb);
        }
    }
    None
}

/// Chronological loop erasure.
pub fn loop_erase(walk: &[CellId]) -> Vec<CellId> {
    let mut out: Vec<CellId> = Vec::with_capacity(walk.len());
    for &c in walk {
        if let Some(pos) = out.iter().position(|&x| x == c) {
            out.truncate(pos + 1);
        } else {
            out.push(c);
        }
    }
    out
}

fn random_walk(
    t: &Tessellation,
    from: CellId,
    to: CellId,
    rng: &mut impl Rng,
) -> Option<Vec<CellId>> {
    const MAX_STEPS: usize = 5_000_000;
    let mut walk = vec![from];
    let mut cur = from;
    for _ in 0..MAX_STEPS {
        if cur == to {
            return Some(loop_erase(&walk));
        }
        let options: Vec<CellId> = t.adjacency[cur]
            .iter()
            .copied()
            .filter(|&nb| nb == to || !t.is_empty_cell(nb))
            .collect();
        if options.is_empty() {
            return None;
        }
        cur = options[rng.random_range(0..options.len())];
        walk.push(cur);
    }
    None
}

/// Route under an arbitrary strategy.
pub fn arbitrary_route(
    conn: &Connection,
    dep: &Deployment,
    t: &Tessellation,
    relays: &RelayTable,
    strategy: Strategy,
    seed: u64,
) -> Result<Route> {
    let src_cell = t.cell_of_node[conn.source];
    let dst_cell = t.cell_of_node[conn.destination];
    let no_path = || Error::Routing {
        connection: conn.id,
        reason: "no path satisfying R1/R2".into(),
    };
    let route = match strategy {
        Strategy::Straight => straight_line_route(conn, dep, t, relays)?,
        Strategy::ShortestCellPath => {
            let cells = bfs_path(t, src_cell, dst_cell).ok_or_else(no_path)?;
            route_from_cells(conn, cells, dep, relays)?
        }
        Strategy::RandomWalkLoopErased => {
            let mut rng = stream(seed, Domain::Route, conn.id as u64);
            let cells = random_walk(t, src_cell, dst_cell, &mut rng).ok_or_else(no_path)?;
            route_from_cells(conn, cells, dep, relays)?
        }
        Strategy::Detour { kappa } => {
            if !(kappa >= 1.0) {
                return Err(Error::Config(format!("detour factor {kappa} must be >= 1")));
            }
            let base_cells = bfs_path(t, src_cell, dst_cell).ok_or_else(no_path)?;
            let base = route_from_cells(conn, base_cells.clone(), dep, relays)?;
            let budget = kappa * base.path_length();
            let mut rng = stream(seed, Domain::Route, conn.id as u64);
            let mut chosen = None;
            for _ in 0..16 {
                let w = rng.random_range(0..t.num_cells());
                if t.is_empty_cell(w) || w == src_cell || w == dst_cell {
                    continue;
                }
                let (Some(p1), Some(p2)) = (bfs_path(t, src_cell, w), bfs_path(t, w, dst_cell))
                else {
                    continue;
                };
                let mut walk = p1;
                walk.extend_from_slice(&p2[1..]);
                let cells = loop_erase(&walk);
                if cells == base_cells {
                    continue;
                }
                let r = route_from_cells(conn, cells, dep, relays)?;
                if r.path_length() <= budget {
                    chosen = Some(r);
                    break;
                }
            }
            chosen.unwrap_or(base)
        }
    };
    route.validate(t)?;
    Ok(route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpherePoint;
    use crate::tessellation::{build_tessellation, deploy, rho_for_n};

    fn setup(n: usize, seed: u64) -> (Deployment, Tessellation, RelayTable) {
        let dep = deploy(n, seed).unwrap();
        let t = build_tessellation(&dep, rho_for_n(n, 1.0).unwrap(), seed).unwrap();
        let relays = RelayTable::new(&dep, &t, RelayRule::NearestToCenter);
        (dep, t, relays)
    }

    #[test]
    fn connections_cover_every_node() {
        let dep = deploy(500, 1).unwrap();
        let conns = pick_connections(&dep, 1);
        assert_eq!(conns.len(), 500);
        assert!(conns.iter().all(|c| c.source != c.destination));
        assert_eq!(conns, pick_connections(&dep, 1));
    }

    #[test]
    fn same_cell_connection_is_one_hop() {
        let (dep, t, relays) = setup(1000, 2);
        let members = t.nodes_in_cell.iter().find(|m| m.len() >= 2).unwrap();
        let conn = Connection {
            id: 0,
            source: members[0],
            destination: members[1],
            length: surface_distance(dep.position(members[0]), dep.position(members[1])),
        };
        let r = straight_line_route(&conn, &dep, &t, &relays).unwrap();
        assert_eq!(r.hops(), 1);
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.relays, vec![members[0], members[1]]);
        assert!(r.interior_hops().is_empty());
    }

    #[test]
    fn straight_routes_satisfy_r1_r2_and_hop_ceiling() {
        let (dep, t, relays) = setup(1500, 3);
        for conn in pick_connections(&dep, 3) {
            let r = straight_line_route(&conn, &dep, &t, &relays).unwrap();
            r.validate(&t).unwrap();
            assert!(r.path_length() >= conn.length * (1.0 - 1e-12));
            assert_eq!(r.relays[0], conn.source);
            assert_eq!(*r.relays.last().unwrap(), conn.destination);
        }
    }

    #[test]
    fn geodesic_cells_match_dense_exhaustive_walk() {
        // oracle: exhaustive nearest-center scan at a much finer step
        let (dep, t, _) = setup(1000, 4);
        for conn in pick_connections(&dep, 4).iter().take(60) {
            let cells = geodesic_cells(conn, &dep, &t).unwrap();
            let a = dep.position(conn.source);
            let b = dep.position(conn.destination);
            let steps = (conn.length / (t.rho_n / 200.0)).ceil() as usize;
            let mut oracle: Vec<CellId> = vec![t.cell_of_node[conn.source]];
            for k in 1..steps {
                let p = geodesic_point(a, b, conn.length * k as f64 / steps as f64).unwrap();
                let c = t.nearest_center_exhaustive(&p);
                if *oracle.last().unwrap() != c {
                    oracle.push(c);
                }
            }
            let dst = t.cell_of_node[conn.destination];
            if *oracle.last().unwrap() != dst {
                oracle.push(dst);
            }
            // the coarse walk may only miss cells grazed for less than its step
            let mut it = oracle.iter();
            assert!(
                cells.iter().all(|c| it.any(|o| o == c)),
                "{cells:?} vs {oracle:?}"
            );
        }
    }

    #[test]
    fn adjacent_cells_give_one_inter_cell_hop() {
        let (dep, t, relays) = setup(1000, 5);
        let a = 0;
        let b = t.adjacency[a][0];
        let conn = Connection {
            id: 0,
            source: t.nodes_in_cell[a][0],
            destination: t.nodes_in_cell[b][0],
            length: surface_distance(
                dep.position(t.nodes_in_cell[a][0]),
                dep.position(t.nodes_in_cell[b][0]),
            ),
        };
        let r = arbitrary_route(&conn, &dep, &t, &relays, Strategy::ShortestCellPath, 0).unwrap();
        assert_eq!(r.cells, vec![a, b]);
        assert_eq!(r.hops(), 1);
    }

    #[test]
    fn loop_erasure_removes_cycles() {
        assert_eq!(loop_erase(&[1, 2, 3, 2, 4, 1, 5]), vec![1, 5]);
        assert_eq!(loop_erase(&[1, 2, 3]), vec![1, 2, 3]);
    }

    #[test]
    fn arbitrary_strategies_hold_r1_r2() {
        let (dep, t, relays) = setup(1000, 6);
        for conn in pick_connections(&dep, 6).iter().take(200) {
            for s in [
                Strategy::ShortestCellPath,
                Strategy::RandomWalkLoopErased,
                Strategy::Detour { kappa: 2.0 },
            ] {
                let r = arbitrary_route(conn, &dep, &t, &relays, s, 6).unwrap();
                r.validate(&t).unwrap();
            }
        }
    }

    #[test]
    fn detour_stays_within_budget_of_bfs() {
        let (dep, t, relays) = setup(1000, 7);
        for conn in pick_connections(&dep, 7).iter().take(200) {
            let bfs =
                arbitrary_route(conn, &dep, &t, &relays, Strategy::ShortestCellPath, 7).unwrap();
            let det = arbitrary_route(conn, &dep, &t, &relays, Strategy::Detour { kappa: 2.0 }, 7)
                .unwrap();
            assert!(det.path_length() <= 2.0 * bfs.path_length() + 1e-12);
        }
    }

    #[test]
    fn antipodal_endpoints_fail_as_geometry_error() {
        let (mut dep, t, relays) = setup(1000, 8);
        let p = SpherePoint::from_angles(0.4, 0.1);
        dep.nodes[0] = p;
        dep.nodes[1] = p.antipode();
        let mut t = t;
        t.cell_of_node[0] = t.nearest_center_exhaustive(&p);
        t.cell_of_node[1] = t.nearest_center_exhaustive(&p.antipode());
        let conn = Connection {
            id: 0,
            source: 0,
            destination: 1,
            length: surface_distance(&p, &p.antipode()),
        };
        assert!(matches!(
            straight_line_route(&conn, &dep, &t, &relays),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn empty_intermediate_cell_is_reported() {
        let (dep, mut t, _) = setup(1000, 9);
        let conn = pick_connections(&dep, 9)
            .into_iter()
            .find(|c| geodesic_cells(c, &dep, &t).unwrap().len() >= 3)
            .unwrap();
        let cells = geodesic_cells(&conn, &dep, &t).unwrap();
        t.nodes_in_cell[cells[1]].clear();
        let relays = RelayTable::new(&dep, &t, RelayRule::NearestToCenter);
        match straight_line_route(&conn, &dep, &t, &relays) {
            Err(Error::EmptyCell { cell, .. }) => assert_eq!(cell, cells[1]),
            other => panic!("expected empty-cell error, got {other:?}"),
        }
    }
}
