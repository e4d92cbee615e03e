//! Experiment specs, sweeps and CSV output.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineConfig, RunMetrics, Traffic};
use crate::error::{Error, Result};
use crate::geometry::{
    cap_area, distance_cdf, expected_delta_pow_l, random_point, surface_distance, SQRT_PI,
};
use crate::link::{LinkModel, RadioParams};
use crate::rng::{stream, Domain};
use crate::routing::{
    arbitrary_route, pick_connections, straight_line_route, RelayRule, RelayTable, Route, Strategy,
};
use crate::schedule::{
    build_schedule_with, conservative_multiplier, ColoringOptions, Growth, Regime, Schedule,
};
use crate::stats::{ks_statistic, mean_stderr, quantile};
use crate::tessellation::{
    deploy_and_tessellate, min_cell_occupancy, rho_for_n, Certificate, Deployment, EmptyCellPolicy,
    Tessellation,
};
use crate::verify::{
    compute_bounds, verify_run, BoundSet, RouteKind, VerificationReport, VerifyOptions,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    /// `fixed` or `conservative`.
    pub regime: String,
    /// Conflict multiplier of the fixed regime.
    pub delta: f64,
    /// Growth law of the conservative regime: `sqrt_log`, `log` or `pow(x)`.
    pub growth: String,
    pub spread_singletons: bool,
    pub pad_to_k: Option<usize>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            regime: "fixed".into(),
            delta: crate::schedule::DEFAULT_DELTA,
            growth: "log".into(),
            spread_singletons: true,
            pad_to_k: None,
        }
    }
}

impl ScheduleSpec {
    pub fn regime(&self) -> Result<Regime> {
        match self.regime.as_str() {
            "fixed" => Ok(Regime::Fixed),
            "conservative" => Ok(Regime::Conservative {
                growth: Growth::parse(&self.growth)?,
            }),
            other => Err(Error::Config(format!("unknown schedule regime '{other}'"))),
        }
    }

    pub fn build(&self, t: &Tessellation, n: usize) -> Result<Schedule> {
        let regime = self.regime()?;
        let delta = match regime {
            Regime::Fixed => self.delta,
            Regime::Conservative { growth } => conservative_multiplier(n as f64, &growth),
        };
        let opts = ColoringOptions {
            spread_singletons: self.spread_singletons,
            pad_to_k: self.pad_to_k,
        };
        build_schedule_with(t, delta, regime, opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSpec {
    /// `straight`, `shortest_cell_path`, `random_walk_loop_erased` or `detour(κ)`.
    pub strategy: String,
    /// `nearest_to_center` or `random_in_cell`.
    pub relay: String,
}

impl Default for RoutingSpec {
    fn default() -> Self {
        Self {
            strategy: "straight".into(),
            relay: "nearest_to_center".into(),
        }
    }
}

impl RoutingSpec {
    pub fn strategy(&self) -> Result<Strategy> {
        let s = self.strategy.trim();
        Ok(match s {
            "straight" => Strategy::Straight,
            "shortest_cell_path" => Strategy::ShortestCellPath,
            "random_walk_loop_erased" => Strategy::RandomWalkLoopErased,
            _ => {
                let kappa = s
                    .strip_prefix("detour(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown routing strategy '{s}'")))?;
                if !(kappa >= 1.0) {
                    return Err(Error::Config(format!("detour factor {kappa} must be >= 1")));
                }
                Strategy::Detour { kappa }
            }
        })
    }

    pub fn relay(&self, seed: u64) -> Result<RelayRule> {
        match self.relay.as_str() {
            "nearest_to_center" => Ok(RelayRule::NearestToCenter),
            "random_in_cell" => Ok(RelayRule::RandomInCell { seed }),
            other => Err(Error::Config(format!("unknown relay rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub enabled: bool,
    pub eps1: f64,
    pub eps2: f64,
    /// Stretch saturated runs until every interior hop has been resolved.
    pub cover_interior_hops: bool,
    pub certificate_probes: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            enabled: true,
            eps1: crate::verify::DEFAULT_EPS,
            eps2: crate::verify::DEFAULT_EPS,
            cover_interior_hops: true,
            certificate_probes: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub n: Vec<usize>,
    /// Seeds `base_seed .. base_seed + seeds` are run at every `n`.
    pub seeds: u64,
    pub base_seed: u64,
    /// `c` in the cell area `c·ln n / n`.
    pub area_constant: f64,
    pub empty_cell_policy: EmptyCellPolicy,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub radio: RadioParams,
    pub link: LinkModel,
    pub schedule: ScheduleSpec,
    pub routing: RoutingSpec,
    pub engine: EngineConfig,
    pub verify: VerifySpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "default".into(),
            n: vec![250, 500, 1000, 2000, 4000],
            seeds: 10,
            base_seed: 0,
            area_constant: 1.0,
            empty_cell_policy: EmptyCellPolicy::default(),
            workers: 0,
            out: PathBuf::from("out"),
            radio: RadioParams::default(),
            link: LinkModel::default(),
            schedule: ScheduleSpec::default(),
            routing: RoutingSpec::default(),
            engine: EngineConfig::default(),
            verify: VerifySpec::default(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies a `section.key=value` override to a parsed spec table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{k}' in '{path}' is not a section")))?;
    }
    cur.insert(
        keys[keys.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let spec: ExperimentSpec = table.try_into()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads a spec file (or the defaults when `path` is `None`) and applies
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() {
            return Err(Error::Config("the n grid is empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        for &n in &self.n {
            if n < 2 {
                return Err(Error::Config(format!("n = {n} is below 2")));
            }
            rho_for_n(n, self.area_constant)?;
        }
        self.radio.validate()?;
        self.link.validate()?;
        self.engine.validate()?;
        self.schedule.regime()?;
        self.routing.strategy()?;
        self.routing.relay(0)?;
        if let Some(s) = &self.engine.sources {
            if let Some(&bad) = s.iter().find(|&&s| s >= *self.n.iter().min().unwrap()) {
                return Err(Error::Config(format!(
                    "source {bad} exceeds the smallest n"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize spec: {e}")))
    }

    /// `(n, seed)` grid points in sweep order.
    pub fn points(&self) -> Vec<(usize, u64)> {
        self.n
            .iter()
            .flat_map(|&n| (0..self.seeds).map(move |s| (n, self.base_seed + s)))
            .collect()
    }
}

/// Everything produced for one `(n, seed)` point.
#[derive(Debug, Clone)]
pub struct PointRun {
    pub n: usize,
    pub seed: u64,
    pub redraws: u32,
    pub deployment: Deployment,
    pub tessellation: Tessellation,
    pub certificate: Certificate,
    pub schedule: Schedule,
    pub routes: Vec<Route>,
    pub metrics: RunMetrics,
    pub bounds: BoundSet,
    pub report: Option<VerificationReport>,
}

pub fn build_routes(
    spec: &ExperimentSpec,
    dep: &Deployment,
    t: &Tessellation,
    seed: u64,
) -> Result<Vec<Route>> {
    let strategy = spec.routing.strategy()?;
    let relays = RelayTable::new(dep, t, spec.routing.relay(seed)?);
    pick_connections(dep, seed)
        .iter()
        .map(|c| match strategy {
            Strategy::Straight => {
                let r = straight_line_route(c, dep, t, &relays)?;
                r.validate(t)?;
                Ok(r)
            }
            s => arbitrary_route(c, dep, t, &relays, s, seed),
        })
        .collect()
}

const MAX_COVER_DOUBLINGS: u32 = 8;

pub fn unobserved_interior_hops(m: &RunMetrics, routes: &[Route]) -> usize {
    routes
        .iter()
        .map(|r| {
            r.interior_hops()
                .filter(|&j| !m.hops[r.connection][j].observed())
                .count()
        })
        .sum()
}

/// Deploy, tessellate, schedule, route, run and verify one grid point.
pub fn run_point(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<PointRun> {
    let rho = rho_for_n(n, spec.area_constant)?;
    let (deployment, tessellation, redraws) =
        deploy_and_tessellate(n, rho, seed, spec.empty_cell_policy)?;
    let certificate = tessellation.certify(&deployment, spec.verify.certificate_probes, seed);
    let schedule = spec.schedule.build(&tessellation, n)?;
    let routes = build_routes(spec, &deployment, &tessellation, seed)?;

    let mut cfg = spec.engine.clone();
    cfg.seed = seed;
    let cover = cfg.traffic == Traffic::Saturated && spec.verify.cover_interior_hops;
    if cover {
        let need = engine::saturation_slots(&schedule, &tessellation, &routes, cfg.attempts);
        cfg.measure_slots = cfg.measure_slots.max(need);
    }
    let mut metrics = engine::run(
        &deployment,
        &tessellation,
        &schedule,
        &routes,
        &spec.link,
        &spec.radio,
        &cfg,
    )?;
    // Real packets take turns from the dummy round-robin in busy cells, so
    // keep doubling the window until every interior hop has been resolved.
    let mut doublings = 0;
    while cover
        && doublings < MAX_COVER_DOUBLINGS
        && unobserved_interior_hops(&metrics, &routes) > 0
    {
        cfg.measure_slots *= 2;
        doublings += 1;
        metrics = engine::run(
            &deployment,
            &tessellation,
            &schedule,
            &routes,
            &spec.link,
            &spec.radio,
            &cfg,
        )?;
    }

    let bounds = compute_bounds(
        spec.verify.eps1,
        spec.verify.eps2,
        spec.radio.alpha,
        schedule.c1(),
        &spec.link,
    )?;
    let report = if spec.verify.enabled {
        let kind = match spec.routing.strategy()? {
            Strategy::Straight => RouteKind::Straight,
            _ => RouteKind::Arbitrary,
        };
        let opts = VerifyOptions {
            kind,
            ..Default::default()
        };
        Some(verify_run(&routes, rho, Some(&metrics), &bounds, opts)?)
    } else {
        None
    };
    Ok(PointRun {
        n,
        seed,
        redraws,
        deployment,
        tessellation,
        certificate,
        schedule,
        routes,
        metrics,
        bounds,
        report,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub n: usize,
    pub seed: u64,
    pub rho_n: f64,
    pub cells: usize,
    pub k: usize,
    pub singleton_classes: usize,
    pub min_occupancy: usize,
    pub empty_cells: usize,
    pub redraws: u32,
    pub min_center_distance: f64,
    pub max_node_distance: f64,
    pub max_vertex_distance: Option<f64>,
    pub uncovered_probes: usize,
    pub certificate_ok: bool,
    pub lambda_target: f64,
    pub lambda_n: f64,
    pub big_lambda_n: f64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub mean_hops: f64,
    pub mean_delivery: Option<f64>,
    pub sinr_p05: Option<f64>,
    pub sinr_median: Option<f64>,
    pub beta0: f64,
    pub hop_count_pass_rate: Option<f64>,
    pub short_hop_pass_rate: Option<f64>,
    pub max_short_run: usize,
    pub interferer_pass_rate: Option<f64>,
    pub sinr_pass_rate: Option<f64>,
    pub coloring_ok: bool,
    pub conservation_ok: bool,
    pub hard_invariants_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRow {
    pub n: usize,
    pub seed: u64,
    pub connection: usize,
    pub rho_n: f64,
    pub k: usize,
    pub lambda_n: f64,
    pub hops: usize,
    pub length: f64,
    pub path_length: f64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delivery: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub n: usize,
    pub seed: u64,
    pub check: String,
    pub connection: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub n: usize,
    pub seed: u64,
    pub exit_code: i32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub runs: usize,
    pub mean_k: f64,
    pub mean_hops: f64,
    pub mean_lambda_n: f64,
    pub mean_big_lambda_n: f64,
    pub mean_delivery: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryByHopsRow {
    pub n: usize,
    pub hops: usize,
    pub connections: usize,
    pub delivered: u64,
    pub resolved: u64,
    pub pooled_delivery: Option<f64>,
}

impl PointRun {
    pub fn run_row(&self) -> RunRow {
        let m = &self.metrics;
        let occ = min_cell_occupancy(&self.tessellation, &self.deployment);
        let deliveries: Vec<f64> = m
            .connections
            .iter()
            .filter_map(|c| c.delivery_probability())
            .collect();
        let mean_hops =
            self.routes.iter().map(|r| r.hops() as f64).sum::<f64>() / self.routes.len() as f64;
        let rate = |check: &str| self.report.as_ref().and_then(|r| r.pass_rate(check));
        let max_short_run = self
            .routes
            .iter()
            .map(|r| {
                crate::verify::max_short_run(r, self.tessellation.rho_n, crate::verify::SHORT_RUN_T)
            })
            .max()
            .unwrap_or(0);
        let coloring_ok = self.schedule.verify_proper(&self.tessellation).is_ok();
        let hard_checks_ok = self
            .report
            .as_ref()
            .is_none_or(|r| r.hard_invariants_hold());
        let (sinr_p05, sinr_median) = if m.sinr_samples.is_empty() {
            (None, None)
        } else {
            (
                Some(quantile(&m.sinr_samples, 0.05)),
                Some(quantile(&m.sinr_samples, 0.5)),
            )
        };
        RunRow {
            n: self.n,
            seed: self.seed,
            rho_n: self.tessellation.rho_n,
            cells: self.tessellation.num_cells(),
            k: self.schedule.len(),
            singleton_classes: self.schedule.singleton_classes(),
            min_occupancy: occ.min_occupancy,
            empty_cells: occ.empty_cells,
            redraws: self.redraws,
            min_center_distance: self.certificate.min_center_distance,
            max_node_distance: self.certificate.max_node_distance,
            max_vertex_distance: self.certificate.max_vertex_distance,
            uncovered_probes: self.certificate.uncovered_probes,
            certificate_ok: self.certificate.holds(),
            lambda_target: m.lambda_target,
            lambda_n: m.lambda_n(),
            big_lambda_n: m.big_lambda_n(),
            injected: m.injected(),
            delivered: m.delivered(),
            dropped: m.dropped(),
            in_flight: m.in_flight(),
            mean_hops,
            mean_delivery: (!deliveries.is_empty()).then(|| mean_stderr(&deliveries).0),
            sinr_p05,
            sinr_median,
            beta0: self.bounds.beta0,
            hop_count_pass_rate: match (rate("hop_count_lower"), rate("hop_count_upper")) {
                (Some(a), Some(b)) => Some(a.min(b)),
                _ => None,
            },
            short_hop_pass_rate: rate("short_hops"),
            max_short_run,
            interferer_pass_rate: rate("interferer_proximity"),
            sinr_pass_rate: self.report.as_ref().and_then(|r| r.sinr_pass_rate),
            coloring_ok,
            conservation_ok: m.conservation_holds(),
            hard_invariants_ok: self.certificate.holds()
                && coloring_ok
                && m.conservation_holds()
                && hard_checks_ok,
        }
    }

    pub fn connection_rows(&self) -> Vec<ConnectionRow> {
        let m = &self.metrics;
        let lambda_n = m.lambda_n();
        self.routes
            .iter()
            .zip(&m.connections)
            .map(|(r, c)| ConnectionRow {
                n: self.n,
                seed: self.seed,
                connection: c.connection,
                rho_n: self.tessellation.rho_n,
                k: m.k,
                lambda_n,
                hops: r.hops(),
                length: r.geodesic_length,
                path_length: r.path_length(),
                injected: c.injected,
                delivered: c.delivered,
                dropped: c.dropped,
                in_flight: c.in_flight,
                delivery: c.delivery_probability(),
            })
            .collect()
    }

    pub fn verification_rows(&self) -> Vec<VerificationRow> {
        self.report
            .iter()
            .flat_map(|r| &r.rows)
            .map(|r| VerificationRow {
                n: self.n,
                seed: self.seed,
                check: r.check.clone(),
                connection: r.connection,
                lhs: r.lhs,
                rhs: r.rhs,
                pass: r.pass,
            })
            .collect()
    }
}

/// Merged, deterministically ordered sweep output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub runs: Vec<RunRow>,
    pub connections: Vec<ConnectionRow>,
    pub verification: Vec<VerificationRow>,
    pub failures: Vec<FailureRow>,
}

impl From<&PointRun> for SweepResult {
    fn from(p: &PointRun) -> Self {
        Self {
            runs: vec![p.run_row()],
            connections: p.connection_rows(),
            verification: p.verification_rows(),
            failures: Vec::new(),
        }
    }
}

impl SweepResult {
    /// No point failed and every hard invariant held.
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.runs.iter().all(|r| r.hard_invariants_ok)
    }

    /// Exit status: 0 ok, 2 when every failure is a configuration error,
    /// otherwise 1.
    pub fn exit_code(&self) -> i32 {
        if self.ok() {
            0
        } else if !self.failures.is_empty() && self.failures.iter().all(|f| f.exit_code == 2) {
            2
        } else {
            1
        }
    }

    pub fn scaling(&self) -> Vec<ScalingRow> {
        let mut ns: Vec<usize> = self.runs.iter().map(|r| r.n).collect();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let rs: Vec<&RunRow> = self.runs.iter().filter(|r| r.n == n).collect();
                let avg = |f: &dyn Fn(&RunRow) -> f64| {
                    rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
                };
                let deliveries: Vec<f64> = rs.iter().filter_map(|r| r.mean_delivery).collect();
                ScalingRow {
                    n,
                    runs: rs.len(),
                    mean_k: avg(&|r| r.k as f64),
                    mean_hops: avg(&|r| r.mean_hops),
                    mean_lambda_n: avg(&|r| r.lambda_n),
                    mean_big_lambda_n: avg(&|r| r.big_lambda_n),
                    mean_delivery: (!deliveries.is_empty())
                        .then(|| deliveries.iter().sum::<f64>() / deliveries.len() as f64),
                }
            })
            .collect()
    }

    pub fn delivery_by_hops(&self) -> Vec<DeliveryByHopsRow> {
        let mut acc: std::collections::BTreeMap<(usize, usize), DeliveryByHopsRow> =
            Default::default();
        for c in &self.connections {
            let row = acc.entry((c.n, c.hops)).or_insert(DeliveryByHopsRow {
                n: c.n,
                hops: c.hops,
                connections: 0,
                delivered: 0,
                resolved: 0,
                pooled_delivery: None,
            });
            row.connections += 1;
            row.delivered += c.delivered;
            row.resolved += c.delivered + c.dropped;
        }
        acc.into_values()
            .map(|mut r| {
                r.pooled_delivery =
                    (r.resolved > 0).then(|| r.delivered as f64 / r.resolved as f64);
                r
            })
            .collect()
    }

    /// Writes every CSV plus the resolved spec into `dir`.
    pub fn write(&self, dir: &Path, spec: &ExperimentSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.toml"), spec.to_toml()?)?;
        write_csv(&dir.join("runs.csv"), "runs", &self.runs)?;
        write_csv(
            &dir.join("connections.csv"),
            "connections",
            &self.connections,
        )?;
        write_csv(
            &dir.join("verification.csv"),
            "verification",
            &self.verification,
        )?;
        write_csv(&dir.join("failures.csv"), "failures", &self.failures)?;
        write_csv(&dir.join("scaling.csv"), "scaling", &self.scaling())?;
        write_csv(
            &dir.join("delivery_by_hops.csv"),
            "delivery_by_hops",
            &self.delivery_by_hops(),
        )?;
        Ok(())
    }
}

/// Writes rows under a `# schema: spherenet-<kind>/<version>` comment line.
/// Empty tables still get their header row.
pub fn write_csv<T: Serialize + Default>(path: &Path, kind: &str, rows: &[T]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    std::io::Write::write_all(
        &mut file,
        format!("# schema: spherenet-{kind}/{SCHEMA_VERSION}\n").as_bytes(),
    )?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let header = header_of(&T::default())?;
    w.write_record(&header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn header_of<T: Serialize>(row: &T) -> Result<Vec<String>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(row)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let text = String::from_utf8_lossy(&bytes);
    let first = text.lines().next().unwrap_or_default();
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(first.as_bytes())
        .records()
        .next()
        .transpose()?
        .map(|r| r.iter().map(str::to_string).collect())
        .unwrap_or_default())
}

type PointRows = (RunRow, Vec<ConnectionRow>, Vec<VerificationRow>);

/// Runs every grid point on up to `spec.workers` threads and merges the
/// results in grid order.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let points = spec.points();
    let outcomes: Vec<Result<PointRows>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(n, seed)| {
                let p = run_point(spec, n, seed)?;
                Ok((p.run_row(), p.connection_rows(), p.verification_rows()))
            })
            .collect()
    });
    let mut out = SweepResult::default();
    for (&(n, seed), o) in points.iter().zip(outcomes) {
        match o {
            Ok((run, conns, ver)) => {
                out.runs.push(run);
                out.connections.extend(conns);
                out.verification.extend(ver);
            }
            Err(e) => out.failures.push(FailureRow {
                n,
                seed,
                exit_code: e.exit_code(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppendixRow {
    pub check: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub pairs: usize,
    pub rows: Vec<AppendixRow>,
}

impl AppendixReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Monte Carlo checks of the distance law and `E[δ^L]`, and the cap-area
/// sandwich over a 1000-point grid.
pub fn verify_appendix(seed: u64, pairs: usize) -> Result<AppendixReport> {
    if pairs < 2 {
        return Err(Error::Argument("need at least two point pairs".into()));
    }
    let mut rng = stream(seed, Domain::Appendix, 0);
    let lengths: Vec<f64> = (0..pairs)
        .map(|_| {
            let a = random_point(&mut rng);
            let b = random_point(&mut rng);
            surface_distance(&a, &b)
        })
        .collect();
    let mut rows = Vec::new();
    for delta in [0.1, 0.5, 0.9, (-2.0 * SQRT_PI).exp()] {
        let samples: Vec<f64> = lengths.iter().map(|&l| delta.powf(l)).collect();
        let (mean, se) = mean_stderr(&samples);
        let reference = expected_delta_pow_l(delta)?;
        rows.push(AppendixRow {
            check: format!("expected_delta_pow_l({delta})"),
            value: mean,
            reference,
            tolerance: 3.0 * se,
            pass: (mean - reference).abs() <= 3.0 * se,
        });
    }
    let ks = ks_statistic(&lengths, |l| {
        distance_cdf(l).unwrap_or(if l <= 0.0 { 0.0 } else { 1.0 })
    });
    rows.push(AppendixRow {
        check: "distance_law_ks".into(),
        value: ks,
        reference: 0.0,
        tolerance: 0.002,
        pass: ks < 0.002,
    });
    let mut violations = 0;
    for k in 1..=1000 {
        let rho = k as f64 / 1000.0 * SQRT_PI / 4.0;
        let area = cap_area(rho)?;
        let disk = std::f64::consts::PI * rho * rho;
        if !(disk / 2.0 <= area && area <= disk) {
            violations += 1;
        }
    }
    rows.push(AppendixRow {
        check: "cap_sandwich_violations".into(),
        value: violations as f64,
        reference: 0.0,
        tolerance: 0.0,
        pass: violations == 0,
    });
    Ok(AppendixReport { pairs, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            n: vec![300],
            seeds: 2,
            engine: EngineConfig {
                lambda: 0.002,
                measure_slots: 1000,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn default_spec_round_trips_through_toml() {
        let spec = ExperimentSpec::default();
        let text = spec.to_toml().unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text, &[]).unwrap(), spec);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let spec = ExperimentSpec::from_toml_str(
            "",
            &[
                "engine.lambda=0.05".into(),
                "n=[500, 1000]".into(),
                "link.model=constant_p".into(),
                "link.p=0.9".into(),
            ],
        )
        .unwrap();
        assert_eq!(spec.engine.lambda, 0.05);
        assert_eq!(spec.n, vec![500, 1000]);
        assert_eq!(spec.link, LinkModel::ConstantP { p: 0.9 });
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let e = ExperimentSpec::from_toml_str("bogus = 1", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentSpec::from_toml_str("[engine]\nlambda = 2.0", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentSpec::from_toml_str("[routing]\nstrategy = \"zigzag\"", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e =
            ExperimentSpec::from_toml_str("area_constant = 100.0\nn = [1000]", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn sweep_is_deterministic_across_worker_counts() {
        let mut spec = small_spec();
        let a = run_sweep(&spec).unwrap();
        spec.workers = 1;
        let b = run_sweep(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 2);
        assert!(a.failures.is_empty());
    }

    #[test]
    fn written_csvs_carry_schema_and_headers() {
        let spec = small_spec();
        let res = run_sweep(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path(), &spec).unwrap();
        let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert!(runs.starts_with("# schema: spherenet-runs/1\nn,seed,rho_n,cells,k,"));
        let failures = std::fs::read_to_string(dir.path().join("failures.csv")).unwrap();
        assert_eq!(
            failures,
            "# schema: spherenet-failures/1\nn,seed,exit_code,error\n"
        );
        let resolved = std::fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&resolved, &[]).unwrap(), spec);
    }

    #[test]
    fn point_failures_are_isolated() {
        let mut spec = small_spec();
        spec.empty_cell_policy = EmptyCellPolicy::ErrorOnRoute;
        spec.n = vec![60, 300];
        spec.seeds = 3;
        let res = run_sweep(&spec).unwrap();
        assert_eq!(res.runs.len() + res.failures.len(), 6);
        assert!(res.runs.iter().any(|r| r.n == 300));
    }

    #[test]
    fn appendix_passes_at_modest_size() {
        let r = verify_appendix(1, 200_000).unwrap();
        for row in &r.rows {
            if row.check != "distance_law_ks" {
                assert!(row.pass, "{row:?}");
            }
        }
        assert_eq!(r.rows.last().unwrap().value, 0.0);
    }
}
