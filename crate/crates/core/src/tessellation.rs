//! Node deployment and the cell tessellation.
//!
//! Cells are the Voronoi cells of a maximal `2ρ`-packing of the sphere.
//! Packing keeps every center at least `2ρ` from the others, so each cell
//! contains the disk of radius `ρ` around its center; maximality leaves no
//! point farther than `2ρ` from a center, so each cell fits inside the disk
//! of radius `2ρ`.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cap_area, length_to_angle, random_point, rho_for_area, surface_distance, SpherePoint,
    MAX_DISTANCE,
};
use crate::rng::{stream, Domain};
use parry3d_f64::na::Point3;
use parry3d_f64::transformation::try_convex_hull;

pub type NodeId = usize;
pub type CellId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub n: usize,
    pub seed: u64,
    pub nodes: Vec<SpherePoint>,
}

impl Deployment {
    #[inline]
    pub fn position(&self, node: NodeId) -> &SpherePoint {
        &self.nodes[node]
    }
}

/// `n` i.i.d. uniform nodes.
pub fn deploy(n: usize, seed: u64) -> Result<Deployment> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 nodes, got {n}")));
    }
    let mut rng = stream(seed, Domain::Deploy, 0);
    let nodes = (0..n).map(|_| random_point(&mut rng)).collect();
    Ok(Deployment { n, seed, nodes })
}

/// Cap radius whose area is `area_constant · ln(n) / n`, for real-valued `n`.
pub fn rho_for_density(n: f64, area_constant: f64) -> Result<f64> {
    if !(n > 1.0) || !(area_constant > 0.0) {
        return Err(Error::Config(format!(
            "need n > 1 and a positive area constant (n = {n}, area_constant = {area_constant})"
        )));
    }
    let area = area_constant * n.ln() / n;
    if area > 0.5 {
        return Err(Error::Config(format!(
            "area_constant * ln(n) / n = {area:.4} exceeds 0.5 (rho would exceed sqrt(pi)/4); \
             with area_constant = {area_constant} the smallest valid n is {}",
            min_valid_n(area_constant)
        )));
    }
    rho_for_area(area)
}

/// Tessellation scale `ρₙ` for `n` nodes.
pub fn rho_for_n(n: usize, area_constant: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
    }
    rho_for_density(n as f64, area_constant)
}

/// Smallest integer `n ≥ 2` with `c·ln(n)/n ≤ 0.5` (the ratio decreases past `e`).
pub fn min_valid_n(area_constant: f64) -> usize {
    let ok = |n: usize| area_constant * (n as f64).ln() / n as f64 <= 0.5;
    if ok(2) && ok(3) {
        return 2;
    }
    let (mut lo, mut hi) = (3usize, 4usize);
    while !ok(hi) {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCellPolicy {
    /// Redraw the deployment until every cell holds a node.
    #[default]
    RejectDeployment,
    /// Keep the deployment; routes that need an empty cell fail.
    ErrorOnRoute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tessellation {
    pub rho_n: f64,
    pub centers: Vec<SpherePoint>,
    pub cell_of_node: Vec<CellId>,
    pub adjacency: Vec<Vec<CellId>>,
    pub nodes_in_cell: Vec<Vec<NodeId>>,
    /// Candidate density (multiples of `1/cap_area(ρ)`) that produced the packing.
    pub candidate_density: f64,
}

/// Outcome of the A1 certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub min_center_distance: f64,
    pub max_node_distance: f64,
    /// Largest Voronoi-vertex distance to the nearest center, when the hull
    /// is well defined. This is the exact covering radius of the centers.
    pub max_vertex_distance: Option<f64>,
    pub uncovered_probes: usize,
    pub probes: usize,
    pub packing_ok: bool,
    pub covering_ok: bool,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.packing_ok && self.covering_ok && self.uncovered_probes == 0
    }
}

const BASE_CANDIDATE_DENSITY: f64 = 50.0;
const MAXIMALITY_PROBES: usize = 10_000;
const MAX_DENSITY_DOUBLINGS: u32 = 6;

impl Tessellation {
    pub fn num_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, cell: CellId) -> &SpherePoint {
        &self.centers[cell]
    }

    pub fn are_adjacent(&self, a: CellId, b: CellId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn is_empty_cell(&self, cell: CellId) -> bool {
        self.nodes_in_cell[cell].is_empty()
    }

    pub fn empty_cells(&self) -> Vec<CellId> {
        (0..self.num_cells())
            .filter(|&c| self.is_empty_cell(c))
            .collect()
    }

    /// Nearest center by exhaustive scan; ties go to the lower cell id.
    pub fn nearest_center_exhaustive(&self, p: &SpherePoint) -> CellId {
        nearest_in(&self.centers, p)
    }

    /// Nearest center by greedy descent over the adjacency graph.
    ///
    /// Adjacency contains every Voronoi neighbor pair (neighbors share a
    /// boundary point within `2ρ` of both centers), so a local minimum of the
    /// walk is the global nearest center.
    pub fn nearest_center_from(&self, start: CellId, p: &SpherePoint) -> CellId {
        let mut best = start;
        let mut best_dot = self.centers[start].dot(p);
        loop {
            let mut moved = false;
            for &nb in &self.adjacency[best] {
                let d = self.centers[nb].dot(p);
                if d > best_dot || (d == best_dot && nb < best) {
                    best = nb;
                    best_dot = d;
                    moved = true;
                }
            }
            if !moved {
                return best;
            }
        }
    }

    /// Distance from `p` to its nearest center.
    pub fn covering_distance(&self, p: &SpherePoint) -> f64 {
        let c = self.nearest_center_exhaustive(p);
        surface_distance(&self.centers[c], p)
    }

    /// Checks packing, covering of every node and of every Voronoi vertex, and
    /// maximality by random probes.
    pub fn certify(&self, dep: &Deployment, probes: usize, seed: u64) -> Certificate {
        let two_rho = 2.0 * self.rho_n;
        let mut min_center = f64::INFINITY;
        for i in 0..self.centers.len() {
            for j in (i + 1)..self.centers.len() {
                min_center = min_center.min(surface_distance(&self.centers[i], &self.centers[j]));
            }
        }
        let max_node = dep
            .nodes
            .iter()
            .zip(&self.cell_of_node)
            .map(|(p, &c)| surface_distance(p, &self.centers[c]))
            .fold(0.0, f64::max);
        let max_vertex =
            voronoi_vertices(&self.centers).map(|v| v.iter().map(|(_, d)| *d).fold(0.0, f64::max));
        let mut rng = stream(seed, Domain::Probe, u64::MAX >> 16);
        let uncovered = (0..probes)
            .filter(|_| self.covering_distance(&random_point(&mut rng)) > two_rho)
            .count();
        Certificate {
            min_center_distance: min_center,
            max_node_distance: max_node,
            max_vertex_distance: max_vertex,
            uncovered_probes: uncovered,
            probes,
            packing_ok: min_center >= two_rho,
            covering_ok: max_node <= two_rho && max_vertex.is_none_or(|d| d <= two_rho),
        }
    }

    /// Counting bounds on the number of cells: covering by caps of radius
    /// `2ρ` and disjointness of caps of radius `ρ`.
    pub fn cell_count_bounds(rho_n: f64) -> Result<(f64, f64)> {
        Ok((1.0 / cap_area(2.0 * rho_n)?, 1.0 / cap_area(rho_n)?))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

fn nearest_in(centers: &[SpherePoint], p: &SpherePoint) -> CellId {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = c.dot(p);
        if d > best_dot {
            best = i;
            best_dot = d;
        }
    }
    best
}

/// Accepts `p` when it is at least `min_dist` from every accepted center.
struct Packer {
    min_dist: f64,
    cos_gate: f64,
    centers: Vec<SpherePoint>,
}

impl Packer {
    fn new(min_dist: f64) -> Self {
        Self {
            min_dist,
            // dot products above this are certainly too close; the band
            // around it is resolved with the exact metric
            cos_gate: length_to_angle(min_dist).cos(),
            centers: Vec::new(),
        }
    }

    fn fits(&self, p: &SpherePoint) -> bool {
        self.centers.iter().all(|c| {
            let d = c.dot(p);
            if d > self.cos_gate + 1e-9 {
                false
            } else if d < self.cos_gate - 1e-9 {
                true
            } else {
                surface_distance(c, p) >= self.min_dist
            }
        })
    }

    fn offer(&mut self, p: SpherePoint) -> bool {
        if self.fits(&p) {
            self.centers.push(p);
            true
        } else {
            false
        }
    }
}

/// Voronoi vertices of `centers`, each with its distance to the nearest
/// center.
///
/// They are the circumcenters of the spherical Delaunay triangles, i.e. the
/// outward normals of the convex hull of the centers. `None` when the hull
/// does not enclose the origin (fewer than four or clustered centers).
pub fn voronoi_vertices(centers: &[SpherePoint]) -> Option<Vec<(SpherePoint, f64)>> {
    if centers.len() < 4 {
        return None;
    }
    let pts: Vec<Point3<f64>> = centers
        .iter()
        .map(|c| {
            let [x, y, z] = c.direction();
            Point3::new(x, y, z)
        })
        .collect();
    let (verts, faces) = try_convex_hull(&pts).ok()?;
    let mut sign = 0.0;
    let mut out = Vec::with_capacity(faces.len());
    for [a, b, c] in faces {
        let (pa, pb, pc) = (verts[a as usize], verts[b as usize], verts[c as usize]);
        let normal = (pb - pa).cross(&(pc - pa));
        let side = normal.dot(&pa.coords).signum();
        if side == 0.0 || (sign != 0.0 && side != sign) {
            return None;
        }
        sign = side;
        let v = SpherePoint::from_vector(side * normal.x, side * normal.y, side * normal.z).ok()?;
        let corner = SpherePoint::from_vector(pa.x, pa.y, pa.z).ok()?;
        out.push((v, surface_distance(&v, &corner)));
    }
    Some(out)
}

/// Inserts Voronoi vertices lying farther than the packing distance from
/// every center until none is left. Returns false if the hull is degenerate.
fn fill_gaps(packer: &mut Packer) -> bool {
    for _ in 0..1000 {
        let Some(mut verts) = voronoi_vertices(&packer.centers) else {
            return false;
        };
        verts.retain(|(_, d)| *d > packer.min_dist);
        if verts.is_empty() {
            return true;
        }
        verts.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut added = false;
        for (p, _) in verts {
            added |= packer.offer(p);
        }
        if !added {
            return true;
        }
    }
    true
}

/// Builds the tessellation for `dep` at scale `rho_n`.
///
/// Greedy insertion runs over `50/cap_area(ρ)` shuffled uniform candidates,
/// then over the node positions themselves, so every node is covered exactly.
/// Gaps the candidates missed are closed exactly: any Voronoi vertex farther
/// than `2ρ` from its centers becomes a center itself. Maximality is then
/// probed with 10⁴ random points; a probe that lands farther than `2ρ` from
/// every center triggers a rebuild at twice the candidate density.
pub fn build_tessellation(dep: &Deployment, rho_n: f64, seed: u64) -> Result<Tessellation> {
    if !(rho_n > 0.0) || !(2.0 * rho_n < MAX_DISTANCE) {
        return Err(Error::Config(format!(
            "rho_n = {rho_n} must satisfy 0 < 2*rho_n < sqrt(pi)/2"
        )));
    }
    let in_cap = cap_area(rho_n)?;
    let mut density = BASE_CANDIDATE_DENSITY;
    for attempt in 0..=MAX_DENSITY_DOUBLINGS {
        let count = (density / in_cap).ceil() as usize;
        let mut rng = stream(seed, Domain::Candidates, attempt as u64);
        let mut candidates: Vec<SpherePoint> = (0..count).map(|_| random_point(&mut rng)).collect();
        candidates.shuffle(&mut rng);

        let mut packer = Packer::new(2.0 * rho_n);
        for p in candidates {
            packer.offer(p);
        }
        for p in &dep.nodes {
            packer.offer(*p);
        }
        fill_gaps(&mut packer);
        let centers = packer.centers;

        let mut probe_rng = stream(seed, Domain::Probe, attempt as u64);
        let maximal = (0..MAXIMALITY_PROBES).all(|_| {
            let p = random_point(&mut probe_rng);
            let c = nearest_in(&centers, &p);
            surface_distance(&centers[c], &p) <= 2.0 * rho_n
        });
        if !maximal {
            density *= 2.0;
            continue;
        }
        let tess = assemble(dep, rho_n, centers, density);
        let cert = tess.certify(dep, 0, seed);
        if !(cert.packing_ok && cert.covering_ok) {
            return Err(Error::Invariant(format!(
                "A1 certificate failed: min center distance {} vs {}, max node distance {} vs {}",
                cert.min_center_distance,
                2.0 * rho_n,
                cert.max_node_distance,
                2.0 * rho_n
            )));
        }
        return Ok(tess);
    }
    Err(Error::Invariant(format!(
        "no maximal packing found after {MAX_DENSITY_DOUBLINGS} density doublings (rho_n = {rho_n})"
    )))
}

fn assemble(dep: &Deployment, rho_n: f64, centers: Vec<SpherePoint>, density: f64) -> Tessellation {
    let k = centers.len();
    let cell_of_node: Vec<CellId> = dep.nodes.iter().map(|p| nearest_in(&centers, p)).collect();
    let mut nodes_in_cell = vec![Vec::new(); k];
    for (node, &c) in cell_of_node.iter().enumerate() {
        nodes_in_cell[c].push(node);
    }
    let mut adjacency = vec![Vec::new(); k];
    for i in 0..k {
        for j in (i + 1)..k {
            if surface_distance(&centers[i], &centers[j]) <= 4.0 * rho_n {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    Tessellation {
        rho_n,
        centers,
        cell_of_node,
        adjacency,
        nodes_in_cell,
        candidate_density: density,
    }
}

/// Per-cell occupancy against the high-probability floors.
#[derive(Debug, Clone, Serialize)]
pub struct OccupancyReport {
    pub min_occupancy: usize,
    pub empty_cells: usize,
    /// `π·n·ρₙ²/4`
    pub floor_general: f64,
    /// `50·ln n`, meaningful for the default area constant of 100.
    pub floor_log: f64,
    pub meets_general_floor: bool,
}

pub fn min_cell_occupancy(t: &Tessellation, dep: &Deployment) -> OccupancyReport {
    let min = t.nodes_in_cell.iter().map(Vec::len).min().unwrap_or(0);
    let floor_general = std::f64::consts::PI * dep.n as f64 * t.rho_n * t.rho_n / 4.0;
    OccupancyReport {
        min_occupancy: min,
        empty_cells: t.empty_cells().len(),
        floor_general,
        floor_log: 50.0 * (dep.n as f64).ln(),
        meets_general_floor: min as f64 >= floor_general,
    }
}

/// Deploys and tessellates, honoring the empty-cell policy.
///
/// Under [`EmptyCellPolicy::RejectDeployment`] the deployment is redrawn
/// from derived seeds until every cell is occupied. Returns the deployment,
/// the tessellation and the number of redraws.
pub fn deploy_and_tessellate(
    n: usize,
    rho_n: f64,
    seed: u64,
    policy: EmptyCellPolicy,
) -> Result<(Deployment, Tessellation, u32)> {
    const MAX_REDRAWS: u32 = 200;
    for redraw in 0..=MAX_REDRAWS {
        let dep_seed = if redraw == 0 {
            seed
        } else {
            use rand::Rng;
            stream(seed, Domain::Resample, redraw as u64).random()
        };
        let dep = deploy(n, dep_seed)?;
        let tess = build_tessellation(&dep, rho_n, seed)?;
        if policy == EmptyCellPolicy::ErrorOnRoute || tess.empty_cells().is_empty() {
            return Ok((dep, tess, redraw));
        }
    }
    Err(Error::Config(format!(
        "every one of {MAX_REDRAWS} redrawn deployments left an empty cell (n = {n}, rho_n = {rho_n}); \
         increase the area constant"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn octahedron_voronoi_vertices_are_cube_corners() {
        let axes = [
            (1.0, 0.0, 0.0),
            (-1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, -1.0, 0.0),
            (0.0, 0.0, 1.0),
            (0.0, 0.0, -1.0),
        ];
        let centers: Vec<SpherePoint> = axes
            .iter()
            .map(|&(x, y, z)| SpherePoint::from_vector(x, y, z).unwrap())
            .collect();
        let verts = voronoi_vertices(&centers).unwrap();
        // two triangles per face of the cube-aligned hull are possible only for
        // coplanar input, which the octahedron does not have
        assert_eq!(verts.len(), 8);
        let expect = (1.0f64 / 3f64.sqrt()).acos() * crate::geometry::RADIUS;
        for (v, d) in verts {
            let [x, y, z] = v.direction();
            assert!((x.abs() - y.abs()).abs() < 1e-12 && (y.abs() - z.abs()).abs() < 1e-12);
            assert!((d - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn voronoi_vertices_are_empty_circumcenters() {
        let dep = deploy(800, 21).unwrap();
        let t = build_tessellation(&dep, rho_for_n(800, 1.0).unwrap(), 21).unwrap();
        let verts = voronoi_vertices(&t.centers).unwrap();
        // Euler: a spherical triangulation of K points has 2K - 4 faces
        assert_eq!(verts.len(), 2 * t.num_cells() - 4);
        for (v, d) in verts {
            assert!((t.covering_distance(&v) - d).abs() < 1e-12);
            assert!(d <= 2.0 * t.rho_n);
        }
    }

    #[test]
    fn voronoi_neighbors_are_adjacent() {
        for seed in 0..5 {
            let dep = deploy(600, seed).unwrap();
            let t = build_tessellation(&dep, rho_for_n(600, 1.0).unwrap(), seed).unwrap();
            let cert = t.certify(&dep, 0, seed);
            assert!(cert.max_vertex_distance.unwrap() <= 2.0 * t.rho_n);
            // every Delaunay edge (cells meeting at a Voronoi vertex) is in the adjacency
            for (v, d) in voronoi_vertices(&t.centers).unwrap() {
                let near: Vec<usize> = (0..t.num_cells())
                    .filter(|&c| (surface_distance(t.center(c), &v) - d).abs() < 1e-9)
                    .collect();
                assert!(near.len() >= 3);
                for a in &near {
                    for b in &near {
                        assert!(a == b || t.are_adjacent(*a, *b));
                    }
                }
            }
        }
    }

    #[test]
    fn deploy_is_deterministic() {
        assert_eq!(deploy(100, 7).unwrap(), deploy(100, 7).unwrap());
        assert_ne!(deploy(100, 7).unwrap().nodes, deploy(100, 8).unwrap().nodes);
        let two = deploy(2, 3).unwrap();
        assert!(surface_distance(&two.nodes[0], &two.nodes[1]) > 0.0);
        assert!(deploy(1, 0).is_err());
    }

    #[test]
    fn deploy_hemisphere_fraction() {
        let dep = deploy(100_000, 11).unwrap();
        let north = dep.nodes.iter().filter(|p| p.direction()[2] > 0.0).count();
        // binomial 3 sigma = 3 * sqrt(0.25 / 1e5) = 0.0047
        assert!((north as f64 / 1e5 - 0.5).abs() <= 0.005);
    }

    #[test]
    fn min_valid_n_for_paper_constant() {
        // root of 100 ln n / n = 0.5 by bisection on the reals
        let (mut lo, mut hi) = (100.0f64, 10_000.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 100.0 * mid.ln() / mid > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // the root is 1456.799...
        assert!(hi > 1456.0 && hi < 1457.0);
        assert_eq!(min_valid_n(100.0), 1457);
        assert!(rho_for_n(1275, 100.0).is_err());
        assert!(rho_for_n(1456, 100.0).is_err());
        let msg = rho_for_n(1275, 100.0).unwrap_err().to_string();
        assert!(msg.contains("1457"), "{msg}");
        assert!(rho_for_n(1457, 100.0).is_ok());
    }

    #[test]
    fn rho_for_density_at_e() {
        let e = std::f64::consts::E;
        let rho = rho_for_density(e, 1.0).unwrap();
        let expect = (1.0 / e).sqrt().asin() / PI.sqrt();
        assert!((rho - expect).abs() < 1e-14);
    }

    #[test]
    fn rho_for_n_inverse_property() {
        for &(n, c) in &[(500usize, 1.0), (2000, 1.0), (5000, 100.0), (300, 0.3)] {
            let rho = rho_for_n(n, c).unwrap();
            let back = cap_area(rho).unwrap() * n as f64 / (n as f64).ln();
            assert!((back - c).abs() < 1e-9);
        }
    }

    #[test]
    fn tessellation_is_certified() {
        let dep = deploy(600, 3).unwrap();
        let rho = rho_for_n(600, 1.0).unwrap();
        let t = build_tessellation(&dep, rho, 3).unwrap();
        let cert = t.certify(&dep, 10_000, 3);
        assert!(cert.holds(), "{cert:?}");
        let (lo, hi) = Tessellation::cell_count_bounds(rho).unwrap();
        let k = t.num_cells() as f64;
        assert!(lo <= k && k <= hi, "{lo} <= {k} <= {hi}");
        for (a, nbrs) in t.adjacency.iter().enumerate() {
            for &b in nbrs {
                assert_ne!(a, b);
                assert!(t.are_adjacent(b, a));
                assert!(surface_distance(t.center(a), t.center(b)) <= 4.0 * rho);
            }
        }
    }

    #[test]
    fn greedy_walk_agrees_with_exhaustive_scan() {
        let dep = deploy(800, 9).unwrap();
        let t = build_tessellation(&dep, rho_for_n(800, 1.0).unwrap(), 9).unwrap();
        let mut rng = stream(99, Domain::Probe, 0);
        for i in 0..2000 {
            let p = random_point(&mut rng);
            let start = i % t.num_cells();
            assert_eq!(
                t.nearest_center_from(start, &p),
                t.nearest_center_exhaustive(&p)
            );
        }
    }

    #[test]
    fn near_hemisphere_scale_gives_two_cells() {
        // rho = 0.95 * sqrt(pi)/4: counting bounds [1.006, 2.18]
        let rho = 0.95 * MAX_DISTANCE / 2.0;
        let dep = deploy(50, 1).unwrap();
        let t = build_tessellation(&dep, rho, 1).unwrap();
        let (lo, hi) = Tessellation::cell_count_bounds(rho).unwrap();
        assert!(lo > 1.0 && hi < 3.0);
        assert_eq!(t.num_cells(), 2);
        assert!(t.certify(&dep, 10_000, 1).holds());
    }

    #[test]
    fn oversized_rho_is_rejected() {
        let dep = deploy(10, 1).unwrap();
        assert!(matches!(
            build_tessellation(&dep, MAX_DISTANCE / 2.0, 1),
            Err(Error::Config(_))
        ));
        assert!(build_tessellation(&dep, 0.0, 1).is_err());
    }

    #[test]
    fn occupancy_single_cell_and_empty() {
        // 2*rho just under sqrt(pi)/2: one or two centers, all nodes covered
        let dep = deploy(40, 2).unwrap();
        let t = build_tessellation(&dep, 0.4, 2).unwrap();
        let rep = min_cell_occupancy(&t, &dep);
        if t.num_cells() == 1 {
            assert_eq!(rep.min_occupancy, 40);
        }
        // tiny n with many cells leaves some empty
        let dep = deploy(3, 2).unwrap();
        let t = build_tessellation(&dep, 0.05, 2).unwrap();
        let rep = min_cell_occupancy(&t, &dep);
        assert_eq!(rep.min_occupancy, 0);
        assert!(rep.empty_cells > 0);
    }

    #[test]
    fn json_round_trip() {
        let dep = deploy(300, 4).unwrap();
        let t = build_tessellation(&dep, rho_for_n(300, 1.0).unwrap(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tess.json");
        t.save_json(&path).unwrap();
        let back = Tessellation::load_json(&path).unwrap();
        assert_eq!(back.centers, t.centers);
        assert_eq!(back.cell_of_node, t.cell_of_node);
        assert_eq!(back.rho_n, t.rho_n);
    }

    #[test]
    fn reject_policy_yields_occupied_cells() {
        let rho = rho_for_n(300, 1.0).unwrap();
        let (dep, t, _) =
            deploy_and_tessellate(300, rho, 5, EmptyCellPolicy::RejectDeployment).unwrap();
        assert!(t.empty_cells().is_empty());
        assert_eq!(dep.n, 300);
    }
}
