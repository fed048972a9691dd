//! One function per subcommand. Each reads its inputs from the stage
//! directories of earlier commands (or explicit flags) and writes its own
//! stage directory together with the resolved configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use geo_exec::engine::{run_episodes, EpisodeResult, RunOutput};
use geo_exec::evalreport::{write_report, WinsorLimits};
use geo_exec::impact::{
    compare_impact_forms, read_calibration_store, segments_from_universe, write_calibration_store, write_lag_study,
    CalibrationStore,
};
use geo_exec::mapelites::{
    held_out_scores, orders_by_cell, parse_cell, run_map_elites, training_report, write_elites, write_manifest,
    write_surface, Cell, Evaluator, QdError,
};
use geo_exec::marketdata::{load_minute_bars, synth_generate, write_bar_tree, MarketUniverse};
use geo_exec::orders::{generate_orders, read_orders, write_orders, Order, OrderError};
use geo_exec::ppo::{train_ppo as fit_ppo, write_train_log, Checkpoint, PpoError, PpoPolicy};
use geo_exec::strategies::{Baseline, BaselineKind, Policy, RandomPolicy};

use crate::config::RunConfig;
use crate::CliError;

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn order_err(e: OrderError) -> CliError {
    match e {
        OrderError::CalendarOverlap(_) | OrderError::Config(_) => CliError::Config(e.to_string()),
        other => fail(other),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, format!("{what} not found")))
    }
}

/// Removes a stage output directory we own before rewriting it, so stale
/// files from an earlier run never mix with fresh ones.
fn reset_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_universe(cfg: &RunConfig) -> Result<MarketUniverse, CliError> {
    let root = cfg.bars_dir();
    require(&root, "bar directory")?;
    let out = load_minute_bars(&root, cfg.data.symbols.as_deref()).map_err(fail)?;
    if !out.rejected.is_empty() {
        log::warn!("{} bar rows rejected while loading {}", out.rejected.len(), root.display());
    }
    let uni = MarketUniverse::from_bars(&out.bars);
    if uni.is_empty() {
        return Err(fail(format!("no usable bars under {}", root.display())));
    }
    Ok(uni)
}

fn load_orders(path: &Path) -> Result<Vec<Order>, CliError> {
    require(path, "orders file")?;
    let orders = read_orders(path).map_err(fail)?;
    if orders.is_empty() {
        return Err(fail(format!("{}: no orders", path.display())));
    }
    Ok(orders)
}

fn date_span(orders: &[Order]) -> (u32, u32) {
    let lo = orders.iter().map(|o| o.date).min().unwrap_or(0);
    let hi = orders.iter().map(|o| o.date).max().unwrap_or(0);
    (lo, hi)
}

/// Refuses orders dated outside `window`.
fn check_window(orders: &[Order], window: [u32; 2], what: &str) -> Result<(), CliError> {
    let (lo, hi) = date_span(orders);
    if lo < window[0] || hi > window[1] {
        return Err(CliError::Config(format!(
            "calendar separation: {what} orders span {lo}..={hi}, outside the permitted window {}..={}",
            window[0], window[1]
        )));
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require(path, "checkpoint")?;
    Checkpoint::load(path).map_err(fail)
}

fn train_orders_path(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("orders").join("train.csv")
}

fn test_orders_path(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("orders").join("test.csv")
}

fn ppo_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("ppo").join("checkpoint.json")
}

fn elites_dir(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("mapelites").join("elites")
}

fn limits(cfg: &RunConfig) -> WinsorLimits {
    WinsorLimits { lo: cfg.report.winsor_lo, hi: cfg.report.winsor_hi }
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let data = synth_generate(&cfg.synth).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = cfg.stage_dir("synth");
    let root = cfg.bars_dir();
    // Only a tree under our own output directory is cleared first.
    if cfg.data.bars.is_none() {
        reset_dir(&root)?;
    }
    write_bar_tree(&root, &data).map_err(fail)?;
    cfg.write_provenance(&dir)?;
    let days: usize = data.values().map(|d| d.len()).sum();
    log::info!("wrote {} symbols, {days} symbol-days to {}", data.len(), root.display());
    Ok(())
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let uni = load_universe(cfg)?;
    let [a, b] = cfg.split.train;
    let dataset: BTreeMap<String, _> = uni
        .symbols()
        .map(|s| (s.to_string(), segments_from_universe(&uni, s, Some((a, b)))))
        .filter(|(_, segs)| !segs.is_empty())
        .collect();
    let c = &cfg.calibration;
    let report = compare_impact_forms(&dataset, &c.lags, c.folds).map_err(fail)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let dir = cfg.stage_dir("calibration");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_calibration_store(&dir.join("store.csv"), &report.store).map_err(fail)?;
    write_lag_study(&dir.join("lag_study.csv"), &report.summary).map_err(fail)?;
    cfg.write_provenance(&dir)?;
    log::info!(
        "winning form {:?}; {} of {} symbols retained",
        report.winning_form,
        report.retained.len(),
        dataset.len()
    );
    if report.retained.is_empty() {
        return Err(fail("calibration retained no symbol"));
    }
    Ok(())
}

fn load_store(cfg: &RunConfig) -> Result<CalibrationStore, CliError> {
    let path = cfg.stage_dir("calibration").join("store.csv");
    require(&path, "calibration store")?;
    read_calibration_store(&path).map_err(fail)
}

pub fn gen_orders(cfg: &RunConfig) -> Result<(), CliError> {
    let uni = load_universe(cfg)?;
    let store = load_store(cfg)?;
    let o = &cfg.orders;
    let train = generate_orders(&cfg.order_gen(o.n_train, cfg.split.train, "orders-train"), &uni, &store).map_err(order_err)?;
    let test = generate_orders(&cfg.order_gen(o.n_test, cfg.split.test, "orders-test"), &uni, &store).map_err(order_err)?;
    let dir = cfg.stage_dir("orders");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_orders(&dir.join("train.csv"), &train).map_err(fail)?;
    write_orders(&dir.join("test.csv"), &test).map_err(fail)?;
    cfg.write_provenance(&dir)?;
    log::info!("{} training and {} test orders", train.len(), test.len());
    Ok(())
}

/// Builds the policy named by `--strategy`.
fn strategy_policy(cfg: &RunConfig, name: &str, checkpoint: Option<&Path>) -> Result<Box<dyn Policy>, CliError> {
    let stochastic = cfg.report.stochastic_policy;
    if let Ok(kind) = name.parse::<BaselineKind>() {
        return Ok(Box::new(Baseline(kind)));
    }
    match name {
        "random" => Ok(Box::new(RandomPolicy)),
        "ppo" => {
            let path = checkpoint.map_or_else(|| ppo_checkpoint_path(cfg), Path::to_path_buf);
            let ck = load_checkpoint(&path)?;
            Ok(Box::new(PpoPolicy::from_checkpoint(&ck, stochastic).map_err(fail)?))
        }
        _ => {
            let cell = name
                .strip_prefix("elite:")
                .and_then(parse_cell)
                .ok_or_else(|| CliError::Usage(format!("unknown strategy {name:?}; expected twap, vwap, pov, random, ppo or elite:<i>_<j>")))?;
            let path = checkpoint
                .map_or_else(|| elites_dir(cfg).join(format!("cell_{}_{}.json", cell.0, cell.1)), Path::to_path_buf);
            let ck = load_checkpoint(&path)?;
            let p = PpoPolicy::from_checkpoint(&ck, stochastic).map_err(fail)?;
            Ok(Box::new(p.with_label(format!("elite_{}_{}", cell.0, cell.1))))
        }
    }
}

fn write_results(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    let path = dir.join("results.jsonl");
    let mut w = create(&path)?;
    out.write_jsonl(&mut w).and_then(|()| w.flush()).map_err(|e| CliError::io(&path, e))?;
    let path = dir.join("failures.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["order_id", "error"]).map_err(|e| CliError::io(&path, e))?;
    for (id, e) in &out.failures {
        w.write_record([id.to_string(), e.to_string()]).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

fn report_into(cfg: &RunConfig, dir: &Path, results: &[EpisodeResult]) -> Result<(), CliError> {
    write_report(dir, results, &cfg.reward, limits(cfg), cfg.report.anatomy_order).map_err(fail)?;
    Ok(())
}

pub fn run(cfg: &RunConfig, strategy: &str, orders: Option<&Path>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let policy = strategy_policy(cfg, strategy, checkpoint)?;
    let path = orders.map_or_else(|| test_orders_path(cfg), Path::to_path_buf);
    let orders = load_orders(&path)?;
    let uni = load_universe(cfg)?;
    let out = run_episodes(policy.as_ref(), &orders, &uni, cfg.reward, cfg.episode_seed(), cfg.workers);
    if out.results.is_empty() {
        return Err(fail(format!("every one of {} episodes failed", orders.len())));
    }
    let dir = cfg.stage_dir("run").join(strategy.replace([':', ',', '/'], "_"));
    reset_dir(&dir)?;
    write_results(&dir, &out)?;
    report_into(cfg, &dir, &out.results)?;
    cfg.write_provenance(&dir)?;
    log::info!("{strategy}: {} episodes, {} failed, written to {}", out.results.len(), out.failures.len(), dir.display());
    Ok(())
}

pub fn train_ppo(cfg: &RunConfig, orders: Option<&Path>) -> Result<(), CliError> {
    let path = orders.map_or_else(|| train_orders_path(cfg), Path::to_path_buf);
    let orders = load_orders(&path)?;
    check_window(&orders, cfg.split.train, "training")?;
    let uni = load_universe(cfg)?;
    let dir = cfg.stage_dir("ppo");
    reset_dir(&dir)?;
    cfg.write_provenance(&dir)?;
    let outcome = match fit_ppo(&uni, &orders, cfg.reward, &cfg.ppo) {
        Ok(o) => o,
        Err(PpoError::Diverged { iteration, reason, last_good }) => {
            let p = dir.join("checkpoint_last_good.json");
            last_good.save(&p).map_err(fail)?;
            return Err(fail(format!(
                "training diverged at iteration {iteration} ({reason}); last good checkpoint saved to {}",
                p.display()
            )));
        }
        Err(e @ (PpoError::Usage(_) | PpoError::Env(_))) => return Err(CliError::Config(e.to_string())),
        Err(e) => return Err(fail(e)),
    };
    outcome.checkpoint.save(&dir.join("checkpoint.json")).map_err(fail)?;
    let p = dir.join("train_log.csv");
    write_train_log(&outcome.log, create(&p)?).map_err(|e| CliError::io(&p, e))?;
    if let Some(last) = outcome.log.last() {
        log::info!("trained {} iterations; final mean step reward {:.4}", outcome.log.len(), last.mean_step_reward);
    }
    Ok(())
}

pub fn map_elites(cfg: &RunConfig, orders: Option<&Path>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let ck_path = checkpoint.map_or_else(|| ppo_checkpoint_path(cfg), Path::to_path_buf);
    let seed = load_checkpoint(&ck_path)?;
    let path = orders.map_or_else(|| train_orders_path(cfg), Path::to_path_buf);
    let orders = load_orders(&path)?;
    check_window(&orders, cfg.split.train, "training")?;
    let uni = load_universe(cfg)?;
    let outcome = run_map_elites(&seed, &orders, &uni, cfg.reward, &cfg.qd).map_err(|e| match e {
        QdError::Config(_) => CliError::Config(e.to_string()),
        other => fail(other),
    })?;
    let dir = cfg.stage_dir("mapelites");
    reset_dir(&dir)?;
    let p = dir.join("manifest.csv");
    write_manifest(&training_report(&outcome), create(&p)?).map_err(|e| CliError::io(&p, e))?;
    let p = dir.join("surface.csv");
    write_surface(&outcome.archive, create(&p)?).map_err(|e| CliError::io(&p, e))?;
    write_elites(&outcome.archive, &seed, &dir.join("elites")).map_err(fail)?;
    cfg.write_provenance(&dir)?;
    log::info!(
        "archive coverage {}/{} after {} child evaluations",
        outcome.archive.coverage(),
        cfg.qd.grid * cfg.qd.grid,
        outcome.evaluations
    );
    Ok(())
}

/// Loads every `cell_<i>_<j>.json` in `dir`.
fn load_elites(dir: &Path) -> Result<BTreeMap<Cell, Checkpoint>, CliError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let cell = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("cell_"))
            .and_then(parse_cell);
        if let Some(c) = cell {
            out.insert(c, load_checkpoint(&path)?);
        }
    }
    Ok(out)
}

/// Routes each test order to the elite of its regime cell, falling back to
/// the seed policy for cells the archive never filled.
fn run_portfolio(
    cfg: &RunConfig,
    seed: &Checkpoint,
    elites: &BTreeMap<Cell, Checkpoint>,
    orders: &[Order],
    uni: &MarketUniverse,
) -> Result<RunOutput, CliError> {
    let grid = seed_grid(cfg);
    let by_cell = orders_by_cell(orders, uni, grid).map_err(fail)?;
    let mut out = RunOutput::default();
    for (cell, group) in &by_cell {
        let ck = elites.get(cell).unwrap_or(seed);
        let p = PpoPolicy::from_checkpoint(ck, cfg.report.stochastic_policy).map_err(fail)?.with_label("map_elites");
        let part = run_episodes(&p, group, uni, cfg.reward, cfg.episode_seed(), cfg.workers);
        out.results.extend(part.results);
        out.failures.extend(part.failures);
    }
    out.results.sort_by_key(|r| r.order_id);
    out.failures.sort_by_key(|f| f.0);
    Ok(out)
}

fn seed_grid(cfg: &RunConfig) -> usize {
    cfg.qd.grid
}

pub fn evaluate(cfg: &RunConfig, orders: Option<&Path>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let path = orders.map_or_else(|| test_orders_path(cfg), Path::to_path_buf);
    let test = load_orders(&path)?;
    check_window(&test, cfg.split.test, "test")?;
    let train_path = train_orders_path(cfg);
    if train_path.exists() {
        let train = load_orders(&train_path)?;
        let (_, train_hi) = date_span(&train);
        let (test_lo, _) = date_span(&test);
        if train_hi >= test_lo {
            return Err(CliError::Config(format!(
                "calendar separation: training orders run to {train_hi} but test orders start on {test_lo}"
            )));
        }
    }
    let uni = load_universe(cfg)?;

    let mut policies: Vec<Box<dyn Policy>> =
        vec![Box::new(Baseline(BaselineKind::Twap)), Box::new(Baseline(BaselineKind::Vwap)), Box::new(Baseline(BaselineKind::Pov)), Box::new(RandomPolicy)];
    let ck_path = checkpoint.map_or_else(|| ppo_checkpoint_path(cfg), Path::to_path_buf);
    let seed = if ck_path.exists() { Some(load_checkpoint(&ck_path)?) } else { None };
    match &seed {
        Some(ck) => policies.push(Box::new(PpoPolicy::from_checkpoint(ck, cfg.report.stochastic_policy).map_err(fail)?)),
        None => log::warn!("no PPO checkpoint at {}; skipping ppo and map_elites", ck_path.display()),
    }

    let mut all = RunOutput::default();
    for p in &policies {
        let out = run_episodes(p.as_ref(), &test, &uni, cfg.reward, cfg.episode_seed(), cfg.workers);
        log::info!("{}: {} episodes, {} failed", p.name(), out.results.len(), out.failures.len());
        all.results.extend(out.results);
        all.failures.extend(out.failures);
    }

    let dir = cfg.stage_dir("evaluate");
    reset_dir(&dir)?;
    let edir = elites_dir(cfg);
    if let (Some(seed), true) = (&seed, edir.exists()) {
        let elites = load_elites(&edir)?;
        let out = run_portfolio(cfg, seed, &elites, &test, &uni)?;
        all.results.extend(out.results);
        all.failures.extend(out.failures);

        let ev = Evaluator { seed, universe: &uni, weights: cfg.reward, stochastic: cfg.report.stochastic_policy };
        let params: BTreeMap<Cell, Vec<f64>> = elites.iter().map(|(c, ck)| (*c, ck.params.clone())).collect();
        let rows = held_out_scores(seed_grid(cfg), &params, &ev, &test, cfg.episode_seed()).map_err(fail)?;
        let p = dir.join("heldout.csv");
        write_manifest(&rows, create(&p)?).map_err(|e| CliError::io(&p, e))?;
    }
    if all.results.is_empty() {
        return Err(fail("no episode completed"));
    }
    write_results(&dir, &all)?;
    report_into(cfg, &dir, &all.results)?;
    cfg.write_provenance(&dir)?;
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<EpisodeResult>, CliError> {
    let f = File::open(path).map_err(|e| CliError::missing(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| fail(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// Summarises `evaluate/results.jsonl` when present, otherwise every
/// `run/<strategy>/results.jsonl`.
pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let eval = cfg.stage_dir("evaluate").join("results.jsonl");
    let mut sources = Vec::new();
    if eval.exists() {
        sources.push(eval.clone());
    } else {
        let runs = cfg.stage_dir("run");
        if runs.exists() {
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)
                .map_err(|e| CliError::io(&runs, e))?
                .filter_map(|e| e.ok().map(|e| e.path().join("results.jsonl")))
                .filter(|p| p.exists())
                .collect();
            dirs.sort();
            sources = dirs;
        }
    }
    if sources.is_empty() {
        return Err(CliError::missing(&eval, "no evaluate or run results to report on"));
    }
    let mut results = Vec::new();
    for s in &sources {
        results.extend(read_results(s)?);
    }
    let dir = cfg.stage_dir("report");
    reset_dir(&dir)?;
    report_into(cfg, &dir, &results)?;
    cfg.write_provenance(&dir)?;
    log::info!("reported {} episodes from {} file(s)", results.len(), sources.len());
    Ok(())
}
