//! MAP-Elites over policy parameters, with cells defined by the market
//! regime of the orders a policy is evaluated on.
//!
//! The archive is a `grid x grid` table indexed by the liquidity and
//! volatility ranks of a symbol on a date. A child policy is routed to a
//! cell before evaluation (round-robin over occupied cells and their
//! neighbours), evaluated on that cell's order pool, and kept only if it
//! strictly beats the incumbent.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_episode, RewardWeights};
use crate::marketdata::MarketUniverse;
use crate::orders::Order;
use crate::ppo::{ActorCritic, Checkpoint, PpoError, PpoPolicy};
use crate::seeding::derive_indexed;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QdError {
    #[error("no market data for {symbol} on {date}")]
    Lookup { symbol: String, date: u32 },
    #[error("cell ({0}, {1}) has no orders to evaluate on")]
    EmptyPool(usize, usize),
    #[error("no cell could be seeded; every order pool is empty")]
    NoOccupiedCells,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode failed: {0}")]
    Episode(String),
    #[error(transparent)]
    Policy(#[from] PpoError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Liquidity and volatility ranks, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub liq: f64,
    pub vol: f64,
}

impl Descriptor {
    /// Uniform bins on each axis; a rank of exactly 1 lands in the top bin.
    pub fn cell(&self, grid: usize) -> Cell {
        let bin = |x: f64| ((x * grid as f64).floor() as usize).min(grid - 1);
        Cell(bin(self.liq), bin(self.vol))
    }
}

/// `(liquidity bin, volatility bin)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(pub usize, pub usize);

/// Fraction of `values` that are `<= x`.
pub fn rank_fraction(values: &[f64], x: f64) -> f64 {
    values.iter().filter(|v| **v <= x).count() as f64 / values.len() as f64
}

/// Ranks a symbol's 21-day ADV and one-day volatility against every symbol
/// trading on the same date.
pub fn compute_descriptor(universe: &MarketUniverse, symbol: &str, date: u32) -> Result<Descriptor, QdError> {
    let day = universe.day(symbol, date).ok_or_else(|| QdError::Lookup { symbol: symbol.into(), date })?;
    let peers: Vec<_> = universe.symbols().filter_map(|s| universe.day(s, date)).collect();
    let advs: Vec<f64> = peers.iter().map(|d| d.stats.adv_21).collect();
    let sigmas: Vec<f64> = peers.iter().map(|d| d.stats.sigma_1).collect();
    if peers.len() > 1 && (advs.iter().all(|a| *a == advs[0]) || sigmas.iter().all(|s| *s == sigmas[0])) {
        log::warn!("degenerate descriptor on {date}: all {} symbols tie on ADV or volatility", peers.len());
    }
    Ok(Descriptor { liq: rank_fraction(&advs, day.stats.adv_21), vol: rank_fraction(&sigmas, day.stats.sigma_1) })
}

/// Groups orders by the cell of their symbol-day.
pub fn orders_by_cell(orders: &[Order], universe: &MarketUniverse, grid: usize) -> Result<BTreeMap<Cell, Vec<Order>>, QdError> {
    let mut cache: BTreeMap<(String, u32), Cell> = BTreeMap::new();
    let mut out: BTreeMap<Cell, Vec<Order>> = BTreeMap::new();
    for o in orders {
        let key = (o.symbol.clone(), o.date);
        let cell = match cache.get(&key) {
            Some(c) => *c,
            None => {
                let c = compute_descriptor(universe, &o.symbol, o.date)?.cell(grid);
                cache.insert(key, c);
                c
            }
        };
        out.entry(cell).or_default().push(o.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationScope {
    /// Only the shared feature extractor is perturbed.
    Extractor,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdConfig {
    pub iterations: usize,
    pub children: usize,
    pub sigma: f64,
    /// Episodes per candidate evaluation.
    pub eval_episodes: usize,
    pub grid: usize,
    pub mutation_scope: MutationScope,
    /// Sample actions instead of taking the most likely one.
    pub stochastic: bool,
    /// Draw a fresh evaluation set per iteration instead of keeping one
    /// per cell for the whole run. Fresh sets make incumbents' scores
    /// incomparable with their challengers'; off by default.
    pub resample_each_iteration: bool,
    pub workers: usize,
    pub seed: u64,
}

impl Default for QdConfig {
    fn default() -> Self {
        QdConfig {
            iterations: 500,
            children: 256,
            sigma: 0.01,
            eval_episodes: 16,
            grid: 3,
            mutation_scope: MutationScope::Extractor,
            stochastic: false,
            resample_each_iteration: false,
            workers: 1,
            seed: 0,
        }
    }
}

impl QdConfig {
    pub fn validate(&self) -> Result<(), QdError> {
        if self.iterations == 0 || self.children == 0 || self.eval_episodes == 0 || self.grid == 0 {
            return Err(QdError::Config("iterations, children, eval_episodes and grid must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(QdError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub params: Vec<f64>,
    pub quality: f64,
    /// Iteration that produced it; 0 is the seed policy.
    pub iteration: usize,
    pub parent: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    grid: usize,
    cells: Vec<Option<Elite>>,
    /// Per-cell quality after initialisation (row 0) and each iteration.
    pub history: Vec<Vec<Option<f64>>>,
    /// Children evaluated in each cell.
    pub evals: Vec<usize>,
}

impl Archive {
    pub fn new(grid: usize) -> Self {
        Archive { grid, cells: vec![None; grid * grid], history: Vec::new(), evals: vec![0; grid * grid] }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn idx(&self, c: Cell) -> usize {
        c.0 * self.grid + c.1
    }

    pub fn get(&self, c: Cell) -> Option<&Elite> {
        self.cells[self.idx(c)].as_ref()
    }

    pub fn quality(&self, c: Cell) -> Option<f64> {
        self.get(c).map(|e| e.quality)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.grid).flat_map(move |i| (0..self.grid).map(move |j| Cell(i, j)))
    }

    pub fn occupied(&self) -> Vec<Cell> {
        self.cells().filter(|c| self.get(*c).is_some()).collect()
    }

    pub fn coverage(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Inserts into an empty cell or replaces an incumbent of strictly
    /// lower quality. Returns whether the archive changed.
    pub fn update(&mut self, cell: Cell, elite: Elite) -> bool {
        debug_assert!(elite.quality.is_finite());
        let i = self.idx(cell);
        let better = self.cells[i].as_ref().is_none_or(|inc| elite.quality > inc.quality);
        if better {
            self.cells[i] = Some(elite);
        }
        better
    }

    fn snapshot(&mut self) {
        let row = self.cells.iter().map(|c| c.as_ref().map(|e| e.quality)).collect();
        self.history.push(row);
    }

    /// Occupied cells plus their edge neighbours, in cell order.
    pub fn frontier(&self) -> Vec<Cell> {
        let g = self.grid as isize;
        let mut out: Vec<Cell> = self
            .occupied()
            .into_iter()
            .flat_map(|c| {
                let (i, j) = (c.0 as isize, c.1 as isize);
                [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
                    .into_iter()
                    .map(move |(di, dj)| (i + di, j + dj))
                    .filter(move |(a, b)| (0..g).contains(a) && (0..g).contains(b))
                    .map(|(a, b)| Cell(a as usize, b as usize))
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// `parent + N(0, sigma^2)` on the indices in `range`; the rest is copied.
pub fn mutate_params(parent: &[f64], sigma: f64, range: std::ops::Range<usize>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).expect("sigma checked positive");
    let mut child = parent.to_vec();
    for p in &mut child[range] {
        *p += noise.sample(rng);
    }
    child
}

/// What a candidate is evaluated with: the network shape and the frozen
/// observation normaliser of the seed policy.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub seed: &'a Checkpoint,
    pub universe: &'a MarketUniverse,
    pub weights: RewardWeights,
    pub stochastic: bool,
}

impl Evaluator<'_> {
    pub fn policy(&self, params: &[f64]) -> Result<PpoPolicy, QdError> {
        let net = ActorCritic::from_params(self.seed.net.clone(), params.to_vec())?;
        Ok(PpoPolicy::new(net, self.seed.norm.clone(), self.stochastic))
    }

    /// `Q = -mean(total cost in bps)`. Episode `k` draws from
    /// `derive_indexed(episode_seed, "qd-episode", k)`, so candidates scored
    /// with the same seed face identical randomness.
    pub fn quality(&self, params: &[f64], orders: &[Order], episode_seed: u64) -> Result<f64, QdError> {
        let policy = self.policy(params)?;
        self.quality_of(&policy, orders, episode_seed)
    }

    pub fn quality_of(&self, policy: &PpoPolicy, orders: &[Order], episode_seed: u64) -> Result<f64, QdError> {
        if orders.is_empty() {
            return Err(QdError::Config("no orders to evaluate on".into()));
        }
        let mut total = 0.0;
        for (k, o) in orders.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(episode_seed, "qd-episode", k as u64));
            let r = run_episode(policy, o, self.universe, self.weights, &mut rng)
                .map_err(|e| QdError::Episode(format!("order {}: {e}", o.id)))?;
            total += r.summary.total_cost_bps;
        }
        Ok(-total / orders.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdOutcome {
    pub archive: Archive,
    /// Seed policy quality per evaluable cell, on the same evaluation sets.
    pub baseline: BTreeMap<Cell, f64>,
    /// Child evaluations performed (seed evaluations excluded).
    pub evaluations: usize,
}

fn eval_set(pool: &[Order], n: usize, rng: &mut ChaCha8Rng) -> Vec<Order> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n.min(pool.len()));
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Runs the search from `seed`, whose parameters also score every cell's
/// baseline.
pub fn run_map_elites(
    seed: &Checkpoint,
    train_orders: &[Order],
    universe: &MarketUniverse,
    weights: RewardWeights,
    cfg: &QdConfig,
) -> Result<QdOutcome, QdError> {
    cfg.validate()?;
    let pools = orders_by_cell(train_orders, universe, cfg.grid)?;
    for c in Archive::new(cfg.grid).cells().filter(|c| !pools.contains_key(c)) {
        log::info!("cell ({}, {}) has no training orders and stays empty", c.0, c.1);
    }
    let ev = Evaluator { seed, universe, weights, stochastic: cfg.stochastic };
    let scope = match cfg.mutation_scope {
        MutationScope::Extractor => ev.policy(&seed.params)?.network().extractor_range(),
        MutationScope::All => 0..seed.params.len(),
    };
    if scope.is_empty() {
        return Err(QdError::Config("the network has no parameters in the mutation scope".into()));
    }

    let n_cells = cfg.grid * cfg.grid;
    let cell_key = |iter: usize, c: Cell| (iter * n_cells + c.0 * cfg.grid + c.1) as u64;
    // Evaluation set and episode seed for a cell at an iteration.
    let fixture = |iter: usize, c: Cell| {
        let it = if cfg.resample_each_iteration { iter } else { 0 };
        let k = cell_key(it, c);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "qd-orders", k));
        (eval_set(&pools[&c], cfg.eval_episodes, &mut rng), derive_indexed(cfg.seed, "qd-episodes", k))
    };
    let pool = if cfg.workers > 1 {
        Some(rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| QdError::Config(e.to_string()))?)
    } else {
        None
    };

    let mut archive = Archive::new(cfg.grid);
    let mut baseline = BTreeMap::new();
    for &c in pools.keys() {
        let (orders, es) = fixture(0, c);
        if orders.len() < cfg.eval_episodes {
            log::warn!("cell ({}, {}) has {} orders, fewer than eval_episodes = {}", c.0, c.1, orders.len(), cfg.eval_episodes);
        }
        let q = ev.quality(&seed.params, &orders, es)?;
        baseline.insert(c, q);
        archive.update(c, Elite { params: seed.params.clone(), quality: q, iteration: 0, parent: None });
    }
    if archive.coverage() == 0 {
        return Err(QdError::NoOccupiedCells);
    }
    archive.snapshot();

    let mut evaluations = 0;
    for iter in 1..=cfg.iterations {
        let targets: Vec<Cell> = archive.frontier().into_iter().filter(|c| pools.contains_key(c)).collect();
        let occupied = archive.occupied();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "qd-generation", iter as u64));
        let children: Vec<(usize, Cell, Cell, Vec<f64>)> = (0..cfg.children)
            .map(|k| {
                let target = targets[k % targets.len()];
                let parent = occupied[rng.random_range(0..occupied.len())];
                let params = &archive.get(parent).expect("occupied").params;
                (k, target, parent, mutate_params(params, cfg.sigma, scope.clone(), &mut rng))
            })
            .collect();
        let fixtures: BTreeMap<Cell, (Vec<Order>, u64)> = targets.iter().map(|&c| (c, fixture(iter, c))).collect();

        let score = |(k, target, parent, params): &(usize, Cell, Cell, Vec<f64>)| {
            let (orders, es) = &fixtures[target];
            ev.quality(params, orders, *es).map(|q| (*k, *target, *parent, q))
        };
        let scored: Vec<Result<(usize, Cell, Cell, f64), QdError>> = match &pool {
            Some(p) => p.install(|| children.par_iter().map(score).collect()),
            None => children.iter().map(score).collect(),
        };
        let mut scored = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
        evaluations += scored.len();
        scored.sort_by_key(|s| (s.1, s.0));
        let mut params_of: Vec<Option<Vec<f64>>> = children.into_iter().map(|c| Some(c.3)).collect();
        for (k, cell, parent, q) in scored {
            let i = archive.idx(cell);
            archive.evals[i] += 1;
            if !q.is_finite() {
                log::warn!("child {k} of iteration {iter} scored {q}; discarded");
                continue;
            }
            let params = params_of[k].take().expect("each child scored once");
            archive.update(cell, Elite { params, quality: q, iteration: iter, parent: Some(parent) });
        }
        archive.snapshot();
        if iter % 10 == 0 || iter == cfg.iterations {
            log::info!("map-elites iteration {iter}: coverage {}/{}", archive.coverage(), n_cells);
        }
    }
    Ok(QdOutcome { archive, baseline, evaluations })
}

/// One line of the specialist table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell_i: usize,
    pub cell_j: usize,
    pub quality: Option<f64>,
    pub baseline_quality: Option<f64>,
    pub vs_baseline_pct: Option<f64>,
    pub n_evals: usize,
    /// Number of orders behind `quality` when scored on held-out orders.
    pub n_orders: usize,
}

/// `(q - q_base) / |q_base|`, in percent.
pub fn vs_baseline_pct(q: f64, q_base: f64) -> Option<f64> {
    (q_base != 0.0).then(|| 100.0 * (q - q_base) / q_base.abs())
}

/// The archive's own scores against the seed's, per cell.
pub fn training_report(outcome: &QdOutcome) -> Vec<CellReport> {
    let a = &outcome.archive;
    a.cells()
        .map(|c| {
            let q = a.quality(c);
            let b = outcome.baseline.get(&c).copied();
            CellReport {
                cell_i: c.0,
                cell_j: c.1,
                quality: q,
                baseline_quality: b,
                vs_baseline_pct: q.zip(b).and_then(|(q, b)| vs_baseline_pct(q, b)),
                n_evals: a.evals[a.idx(c)],
                n_orders: 0,
            }
        })
        .collect()
}

/// Scores each cell's elite and the seed on held-out orders from that cell
/// only, with shared episode randomness.
pub fn held_out_report(
    archive: &Archive,
    ev: &Evaluator<'_>,
    test_orders: &[Order],
    episode_seed: u64,
) -> Result<Vec<CellReport>, QdError> {
    let elites: BTreeMap<Cell, Vec<f64>> =
        archive.occupied().into_iter().map(|c| (c, archive.get(c).expect("occupied").params.clone())).collect();
    let mut rows = held_out_scores(archive.grid(), &elites, ev, test_orders, episode_seed)?;
    for r in &mut rows {
        r.n_evals = archive.evals[archive.idx(Cell(r.cell_i, r.cell_j))];
    }
    Ok(rows)
}

/// [`held_out_report`] for elites held outside an archive, such as
/// checkpoints read back from disk. `n_evals` is left at zero.
pub fn held_out_scores(
    grid: usize,
    elites: &BTreeMap<Cell, Vec<f64>>,
    ev: &Evaluator<'_>,
    test_orders: &[Order],
    episode_seed: u64,
) -> Result<Vec<CellReport>, QdError> {
    let pools = orders_by_cell(test_orders, ev.universe, grid)?;
    Archive::new(grid)
        .cells()
        .map(|c| {
            let mut row = CellReport {
                cell_i: c.0,
                cell_j: c.1,
                quality: None,
                baseline_quality: None,
                vs_baseline_pct: None,
                n_evals: 0,
                n_orders: 0,
            };
            if let (Some(params), Some(orders)) = (elites.get(&c), pools.get(&c)) {
                let q = ev.quality(params, orders, episode_seed)?;
                let b = ev.quality(&ev.seed.params, orders, episode_seed)?;
                row.quality = Some(q);
                row.baseline_quality = Some(b);
                row.vs_baseline_pct = vs_baseline_pct(q, b);
                row.n_orders = orders.len();
            }
            Ok(row)
        })
        .collect()
}

pub fn write_manifest(rows: &[CellReport], w: impl Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// `iteration,cell_i,cell_j,fitness`; empty fitness for empty cells.
pub fn write_surface(archive: &Archive, w: impl Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "cell_i", "cell_j", "fitness"])?;
    for (it, row) in archive.history.iter().enumerate() {
        for c in archive.cells() {
            let f = row[archive.idx(c)].map(|q| q.to_string()).unwrap_or_default();
            out.write_record([it.to_string(), c.0.to_string(), c.1.to_string(), f])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One checkpoint per occupied cell, named `cell_<i>_<j>.json`.
pub fn write_elites(archive: &Archive, seed: &Checkpoint, dir: &Path) -> Result<(), QdError> {
    std::fs::create_dir_all(dir).map_err(|e| QdError::Io { path: dir.display().to_string(), msg: e.to_string() })?;
    for c in archive.occupied() {
        let e = archive.get(c).expect("occupied");
        let ck = Checkpoint { params: e.params.clone(), ..seed.clone() };
        ck.save(&dir.join(format!("cell_{}_{}.json", c.0, c.1)))?;
    }
    Ok(())
}

/// Parses `"i,j"` or `"i_j"` into a cell.
pub fn parse_cell(s: &str) -> Option<Cell> {
    let (a, b) = s.split_once([',', '_'])?;
    Some(Cell(a.trim().parse().ok()?, b.trim().parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elite(q: f64) -> Elite {
        Elite { params: vec![q], quality: q, iteration: 1, parent: None }
    }

    #[test]
    fn rank_examples() {
        assert!((rank_fraction(&[10.0, 20.0, 30.0], 20.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rank_fraction(&[10.0, 20.0, 30.0], 30.0), 1.0);
        assert_eq!(rank_fraction(&[5.0, 5.0, 5.0], 5.0), 1.0);
    }

    #[test]
    fn cell_bins() {
        let d = |liq, vol| Descriptor { liq, vol }.cell(3);
        assert_eq!(d(1.0, 1.0), Cell(2, 2));
        assert_eq!(d(0.0, 0.34), Cell(0, 1));
        assert_eq!(d(1.0 / 3.0, 2.0 / 3.0), Cell(1, 2));
        assert_eq!(d(0.33, 0.66), Cell(0, 1));
    }

    #[test]
    fn archive_replacement_rules() {
        let mut a = Archive::new(3);
        assert!(a.update(Cell(0, 0), elite(0.5)));
        assert!(!a.update(Cell(0, 0), Elite { params: vec![9.0], ..elite(0.5) }));
        assert_eq!(a.get(Cell(0, 0)).unwrap().params, vec![0.5]);
        assert!(a.update(Cell(0, 0), elite(0.6)));
        assert!(!a.update(Cell(0, 0), elite(0.1)));
        assert_eq!(a.quality(Cell(0, 0)), Some(0.6));
        assert_eq!(a.coverage(), 1);
    }

    #[test]
    fn frontier_adds_neighbours() {
        let mut a = Archive::new(3);
        a.update(Cell(0, 0), elite(0.0));
        assert_eq!(a.frontier(), vec![Cell(0, 0), Cell(0, 1), Cell(1, 0)]);
        a.update(Cell(1, 1), elite(0.0));
        assert_eq!(a.frontier().len(), 6);
    }

    #[test]
    fn mutation_moments_and_replay() {
        let parent = vec![0.25; 100_000];
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let child = mutate_params(&parent, 0.01, 0..parent.len(), &mut r1);
        let d: Vec<f64> = child.iter().zip(&parent).map(|(c, p)| c - p).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd / 0.01 - 1.0).abs() < 0.02);
        assert!(parent.iter().all(|p| *p == 0.25));
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(mutate_params(&parent, 0.01, 0..parent.len(), &mut r2), child);

        let mut r3 = ChaCha8Rng::seed_from_u64(6);
        let tiny = mutate_params(&parent[..100], 1e-12, 0..100, &mut r3);
        assert!(tiny.iter().zip(&parent).all(|(c, p)| (c - p).abs() < 1e-10));
        let partial = mutate_params(&parent[..10], 0.1, 2..5, &mut r3);
        assert_eq!(partial[..2], parent[..2]);
        assert_eq!(partial[5..], parent[5..10]);
    }

    #[test]
    fn baseline_percentage() {
        assert_eq!(vs_baseline_pct(-1.0, -2.0), Some(50.0));
        assert_eq!(vs_baseline_pct(-3.0, -2.0), Some(-50.0));
        assert_eq!(vs_baseline_pct(1.0, 0.0), None);
    }

    #[test]
    fn cell_parsing() {
        assert_eq!(parse_cell("1,2"), Some(Cell(1, 2)));
        assert_eq!(parse_cell("0_2"), Some(Cell(0, 2)));
        assert_eq!(parse_cell("x"), None);
    }
}
