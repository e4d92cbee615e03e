//! Cyclic TDMA schedules from a coloring of the cell conflict graph.
//!
//! Two cells conflict when their centers are within `Δ·ρₙ`. With `Δ ≥ 4`
//! adjacent cells always conflict, so a receiving cell is silent while it
//! receives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::surface_distance;
use crate::tessellation::{CellId, Tessellation};

/// Conflict multiplier of the fixed regime.
pub const DEFAULT_DELTA: f64 = 12.0;

/// Diverging growth laws for the conservative regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Growth {
    SqrtLog,
    Log,
    Pow { exponent: f64 },
}

impl Growth {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            Growth::SqrtLog => n.ln().sqrt(),
            Growth::Log => n.ln(),
            Growth::Pow { exponent } => n.powf(exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Growth::Pow { exponent } if !(exponent > 0.0) => Err(Error::Config(format!(
                "growth pow({exponent}) does not diverge; the conservative regime needs K_n -> infinity"
            ))),
            _ => Ok(()),
        }
    }

    /// Parses `sqrt_log`, `log` or `pow(<eps>)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let g = match s {
            "sqrt_log" => Growth::SqrtLog,
            "log" => Growth::Log,
            _ => {
                let inner = s
                    .strip_prefix("pow(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown growth function '{s}'")))?;
                let exponent = inner
                    .parse()
                    .map_err(|_| Error::Config(format!("bad exponent in '{s}'")))?;
                Growth::Pow { exponent }
            }
        };
        g.validate()?;
        Ok(g)
    }

    pub fn label(&self) -> String {
        match *self {
            Growth::SqrtLog => "sqrt_log".into(),
            Growth::Log => "log".into(),
            Growth::Pow { exponent } => format!("pow({exponent})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Fixed,
    Conservative { growth: Growth },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub color_of_cell: Vec<usize>,
    pub num_colors: usize,
    pub conflict_multiplier: f64,
    pub regime: Regime,
    /// Idle colors appended after the coloring (ablation only).
    pub idle_colors: usize,
    classes: Vec<Vec<CellId>>,
}

/// Options for [`build_schedule_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColoringOptions {
    /// Rebalance color classes so none holds a single cell when the conflict
    /// graph allows it.
    pub spread_singletons: bool,
    /// Pad the schedule with idle colors up to this length.
    pub pad_to_k: Option<usize>,
}

impl Default for ColoringOptions {
    fn default() -> Self {
        Self {
            spread_singletons: true,
            pad_to_k: None,
        }
    }
}

impl Schedule {
    /// Schedule length `K` including idle colors.
    pub fn len(&self) -> usize {
        self.num_colors + self.idle_colors
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells allowed to transmit in `slot`.
    pub fn active_cells(&self, slot: u64) -> &[CellId] {
        let c = (slot % self.len() as u64) as usize;
        if c < self.num_colors {
            &self.classes[c]
        } else {
            &[]
        }
    }

    pub fn class(&self, color: usize) -> &[CellId] {
        &self.classes[color]
    }

    /// `c₁ := K − 1`, as read off the built schedule.
    pub fn c1(&self) -> f64 {
        self.len() as f64 - 1.0
    }

    /// Number of color classes that contain exactly one cell.
    pub fn singleton_classes(&self) -> usize {
        self.classes.iter().filter(|c| c.len() == 1).count()
    }

    /// Verifies the coloring is proper for the given tessellation.
    pub fn verify_proper(&self, t: &Tessellation) -> Result<()> {
        let limit = self.conflict_multiplier * t.rho_n;
        for a in 0..t.num_cells() {
            if self.color_of_cell[a] >= self.num_colors {
                return Err(Error::Invariant(format!("cell {a} has no valid color")));
            }
            for b in (a + 1)..t.num_cells() {
                if self.color_of_cell[a] == self.color_of_cell[b]
                    && surface_distance(t.center(a), t.center(b)) <= limit
                {
                    return Err(Error::Invariant(format!(
                        "conflicting cells {a} and {b} share color {}",
                        self.color_of_cell[a]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Conflict multiplier of the conservative regime: `12·growth(n)`.
pub fn conservative_multiplier(n: f64, growth: &Growth) -> f64 {
    DEFAULT_DELTA * growth.eval(n)
}

fn conflict_graph(t: &Tessellation, delta: f64) -> Vec<Vec<CellId>> {
    let k = t.num_cells();
    let limit = delta * t.rho_n;
    let mut g = vec![Vec::new(); k];
    for a in 0..k {
        for b in (a + 1)..k {
            if surface_distance(t.center(a), t.center(b)) <= limit {
                g[a].push(b);
                g[b].push(a);
            }
        }
    }
    g
}

/// Greedy coloring, largest degree first, ties broken by cell id.
fn greedy_coloring(graph: &[Vec<CellId>]) -> Vec<usize> {
    let k = graph.len();
    let mut order: Vec<CellId> = (0..k).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(graph[c].len()), c));
    let mut color = vec![usize::MAX; k];
    let mut used = Vec::new();
    for &c in &order {
        used.clear();
        used.extend(
            graph[c]
                .iter()
                .map(|&nb| color[nb])
                .filter(|&x| x != usize::MAX),
        );
        used.sort_unstable();
        used.dedup();
        let mut pick = 0;
        for &u in &used {
            if u == pick {
                pick += 1;
            } else if u > pick {
                break;
            }
        }
        color[c] = pick;
    }
    color
}

fn classes_of(color: &[usize], num_colors: usize) -> Vec<Vec<CellId>> {
    let mut classes = vec![Vec::new(); num_colors];
    for (cell, &c) in color.iter().enumerate() {
        classes[c].push(cell);
    }
    classes
}

/// Removes singleton color classes where the conflict graph allows: first
/// by moving the lone cell into another class it does not conflict with,
/// otherwise by pulling a non-conflicting cell out of a class of three or
/// more. Every move keeps the coloring proper. Colors are renumbered densely
/// in order of first appearance afterwards.
fn spread_singletons(graph: &[Vec<CellId>], color: &mut [usize]) {
    let k = graph.len();
    let conflicts = |a: CellId, b: CellId| graph[a].binary_search(&b).is_ok();
    loop {
        let num_colors = color.iter().copied().max().map_or(0, |m| m + 1);
        let classes = classes_of(color, num_colors);
        let mut changed = false;
        for (c, members) in classes.iter().enumerate() {
            if members.len() != 1 {
                continue;
            }
            let lone = members[0];
            // move the lone cell into a compatible class
            let target = (0..num_colors).find(|&d| {
                d != c && !classes[d].is_empty() && classes[d].iter().all(|&m| !conflicts(lone, m))
            });
            if let Some(d) = target {
                color[lone] = d;
                changed = true;
                break;
            }
            // or recruit a partner from a large class
            let partner =
                (0..k).find(|&u| u != lone && classes[color[u]].len() >= 3 && !conflicts(lone, u));
            if let Some(u) = partner {
                color[u] = c;
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    // dense renumbering
    let mut map = vec![usize::MAX; k.max(1)];
    let mut next = 0;
    for c in color.iter_mut() {
        if map[*c] == usize::MAX {
            map[*c] = next;
            next += 1;
        }
        *c = map[*c];
    }
}

/// Fixed-regime schedule with conflict multiplier `delta`.
pub fn build_schedule(t: &Tessellation, delta: f64) -> Result<Schedule> {
    build_schedule_with(t, delta, Regime::Fixed, ColoringOptions::default())
}

/// Conservative schedule with `Δₙ = 12·growth(n)`.
pub fn build_conservative_schedule(t: &Tessellation, n: usize, growth: Growth) -> Result<Schedule> {
    growth.validate()?;
    let delta = conservative_multiplier(n as f64, &growth);
    build_schedule_with(
        t,
        delta,
        Regime::Conservative { growth },
        ColoringOptions::default(),
    )
}

pub fn build_schedule_with(
    t: &Tessellation,
    delta: f64,
    regime: Regime,
    opts: ColoringOptions,
) -> Result<Schedule> {
    if !(delta >= 4.0) {
        return Err(Error::Config(format!(
            "conflict multiplier {delta} < 4 would let a receiving cell transmit"
        )));
    }
    if t.num_cells() == 0 {
        return Err(Error::Argument("tessellation has no cells".into()));
    }
    let mut graph = conflict_graph(t, delta);
    for adj in &mut graph {
        adj.sort_unstable();
    }
    let mut color = greedy_coloring(&graph);
    if opts.spread_singletons {
        spread_singletons(&graph, &mut color);
    }
    let num_colors = color.iter().copied().max().unwrap() + 1;
    let idle_colors = match opts.pad_to_k {
        Some(target) => target.saturating_sub(num_colors),
        None => 0,
    };
    let schedule = Schedule {
        classes: classes_of(&color, num_colors),
        color_of_cell: color,
        num_colors,
        conflict_multiplier: delta,
        regime,
        idle_colors,
    };
    schedule.verify_proper(t)?;
    Ok(schedule)
}

/// Upper bound on the number of colors from disjoint in-disks:
/// `⌈cap_area((Δ+4)ρ) / cap_area(ρ)⌉`, capped at the cell count.
pub fn packing_color_bound(t: &Tessellation, delta: f64) -> Result<usize> {
    use crate::geometry::{cap_area, MAX_DISTANCE};
    let outer = cap_area(((delta + 4.0) * t.rho_n).min(MAX_DISTANCE))?;
    let inner = cap_area(t.rho_n)?;
    Ok(((outer / inner).ceil() as usize).min(t.num_cells()))
}
