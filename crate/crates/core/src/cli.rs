//! Command-line front end. Each command writes into one flat run directory,
//! starting with the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::allocation::{settle_rewards, write_trace_csv, TraceRow};
use crate::battery::BatteryPackState;
use crate::baselines::{baseline_schedule, Baseline};
use crate::config::RunConfig;
use crate::env::{GridProfiles, RewardBreakdown, SignMode, V2gEnv};
use crate::error::{Error, Result};
use crate::fleet::{read_fleet_csv, sample_fleet, write_fleet_csv, EvSession};
use crate::metrics::{
    age_pack_for_day, emit_reports, evaluation_indices, simulate_year, EvaluationIndices, ReportInputs, SopSettings,
    StrategyResult, YearTrace,
};
use crate::ppo::{evaluate_policy, write_learning_curve, Checkpoint, PolicyParams, Trainer};
use crate::schedule::{read_schedule_powers, DaySchedule};

pub const CONFIG_FILE: &str = "config.toml";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const FLEET_FILE: &str = "fleet.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "learning_curve.csv";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Parser)]
#[command(name = "v2g-sim", version, about = "Vehicle-to-grid dispatch: train, evaluate, allocate, report")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true, env = "V2G_SIM_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[arg(long, global = true)]
    pub fleet_size: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub sign_mode: Option<SignMode>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct PolicyArgs {
    /// Trained policy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train the PPO dispatcher; writes checkpoint.json and learning_curve.csv.
    Train,
    /// Run one day under a policy; writes schedule.csv, load.csv, indices.json.
    Evaluate(PolicyArgs),
    /// Disaggregate an EVA schedule over the fleet; writes trace.csv.
    Allocate {
        /// Schedule CSV with an eva_kw column.
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Age the fleet over repeated days; writes soh_year.csv.
    SimulateYear(PolicyArgs),
    /// Build the report bundle for a training run directory.
    Report {
        /// Run directory holding config.toml (defaults to --out).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Write synthetic profiles and a sampled fleet.
    GenProfiles,
}

/// Load the configuration named by the flags and apply overrides.
pub fn effective_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(e) = args.episodes {
        cfg.ppo.episodes = e;
    }
    if let Some(n) = args.fleet_size {
        cfg.fleet.size = n;
    }
    if let Some(m) = args.sign_mode {
        cfg.reward.sign_mode = m;
    }
    if let Some(o) = &args.out {
        cfg.paths.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("run"))
}

/// Create the run directory and write the configuration snapshot. The
/// output path itself is left out so identical runs in different
/// directories produce identical files.
pub fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut snapshot = cfg.clone();
    snapshot.paths.out = None;
    write_text(&dir.join(CONFIG_FILE), &snapshot.to_toml()?)?;
    Ok(dir)
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

/// Profiles and fleet for a configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: RunConfig,
    pub profiles: GridProfiles,
    pub sessions: Vec<EvSession>,
}

impl Scenario {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let profiles = match &cfg.paths.profiles {
            Some(p) => GridProfiles::read_csv(p)?,
            None => GridProfiles::synthetic(&cfg.env.profiles, cfg.seed),
        };
        let sessions = match &cfg.paths.fleet {
            Some(p) => read_fleet_csv(p, &cfg.fleet)?,
            None => sample_fleet(cfg.fleet.size, cfg.seed, &cfg.fleet, &cfg.env.horizon)?,
        };
        Ok(Self { cfg: cfg.clone(), profiles, sessions })
    }

    pub fn env(&self) -> Result<V2gEnv> {
        self.env_with(self.sessions.clone())
    }

    fn env_with(&self, sessions: Vec<EvSession>) -> Result<V2gEnv> {
        V2gEnv::new(self.cfg.env, self.cfg.reward, self.cfg.allocation, self.profiles.clone(), sessions)
    }

    pub fn write_inputs(&self, dir: &Path) -> Result<()> {
        self.profiles.write_csv(&dir.join(PROFILES_FILE))?;
        write_fleet_csv(&dir.join(FLEET_FILE), &self.sessions)
    }

    pub fn rated_kwh(&self) -> Vec<f64> {
        self.sessions.iter().map(|s| s.spec.capacity_kwh).collect()
    }
}

/// A dispatch strategy.
#[derive(Debug, Clone)]
pub enum Policy {
    Learned(Box<PolicyParams>),
    Baseline(Baseline),
}

impl Policy {
    pub fn from_args(a: &PolicyArgs) -> Result<Self> {
        match (&a.checkpoint, a.baseline) {
            (Some(p), _) => Ok(Policy::Learned(Box::new(Checkpoint::load(p)?.params))),
            (None, Some(b)) => Ok(Policy::Baseline(b)),
            (None, None) => Err(Error::Config("either --checkpoint or --baseline is required".into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Learned(_) => "mhvcs",
            Policy::Baseline(b) => b.name(),
        }
    }
}

/// One day under `policy`.
#[derive(Debug, Clone)]
pub struct DayRun {
    pub schedule: DaySchedule,
    /// Accepted allocations and slots, for the learned policy.
    pub accepted: Option<(usize, usize)>,
    pub reward: Option<RewardBreakdown>,
}

pub fn run_day(scn: &Scenario, sessions: &[EvSession], policy: &Policy, day_seed: u64) -> Result<DayRun> {
    match policy {
        Policy::Learned(params) => {
            let mut env = scn.env_with(sessions.to_vec())?;
            let (schedule, reward) = evaluate_policy(&mut env, params, day_seed)?;
            let accepted = env.proposals().iter().filter(|p| p.accepted).count();
            Ok(DayRun { schedule, accepted: Some((accepted, env.proposals().len())), reward: Some(reward) })
        }
        Policy::Baseline(b) => Ok(DayRun {
            schedule: baseline_schedule(*b, sessions, &scn.profiles, &scn.cfg.env)?,
            accepted: None,
            reward: None,
        }),
    }
}

fn day_seed(seed: u64, day: usize) -> u64 {
    seed ^ (day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Day 0 plus a year of ageing. With `resample_daily` (and a sampled
/// fleet) every later day draws fresh sessions that inherit the packs.
pub fn run_year(scn: &Scenario, policy: &Policy) -> Result<(DayRun, YearTrace)> {
    let cfg = &scn.cfg;
    let first = run_day(scn, &scn.sessions, policy, cfg.seed)?;
    let packs = scn.sessions.iter().map(|s| s.pack.clone()).collect();
    let resample = cfg.year.resample_daily && cfg.paths.fleet.is_none();
    let year = simulate_year(packs, &scn.rated_kwh(), cfg.year.days, &cfg.battery.cell, &cfg.battery.soh, |day, packs| {
        if day == 0 || !resample {
            return Ok(first.schedule.clone());
        }
        let seed = day_seed(cfg.seed, day);
        let mut sessions = sample_fleet(packs.len(), seed, &cfg.fleet, &cfg.env.horizon)?;
        for (s, p) in sessions.iter_mut().zip(packs) {
            // Health carries over; the day's cycle log does not.
            s.pack = BatteryPackState { cycle_log: Vec::new(), ..p.clone() };
        }
        Ok(run_day(scn, &sessions, policy, seed)?.schedule)
    })?;
    Ok((first, year))
}

fn strategy(scn: &Scenario, policy: &Policy) -> Result<StrategyResult> {
    let (day, year) = run_year(scn, policy)?;
    let indices = evaluation_indices(&day.schedule, &scn.profiles, &year, &scn.rated_kwh(), &scn.cfg.battery.cost);
    Ok(StrategyResult { schedule: day.schedule, year, indices, accepted_slots: day.accepted })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_run_dir(cfg)?;
    let scn = Scenario::build(cfg)?;
    scn.write_inputs(&dir)?;
    let env = scn.env()?;
    let mut trainer = Trainer::new(cfg.ppo.clone(), cfg.seed, &env)?;
    let save = |t: &Trainer| -> Result<()> {
        t.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        write_learning_curve(&dir.join(CURVE_FILE), &t.curve)
    };
    let result = trainer.train(&env, cfg.ppo.episodes, cfg.workers, save);
    // Keep the last healthy parameters on disk whatever happened.
    save(&trainer)?;
    result?;
    println!("trained {} episodes ({} updates) into {}", trainer.episode, trainer.updates, dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationOutput {
    strategy: &'static str,
    indices: EvaluationIndices,
    reward: Option<RewardBreakdown>,
    peak_grid_kw: f64,
    accepted_slots: Option<usize>,
}

#[derive(Debug, Serialize)]
struct LoadRow {
    slot: usize,
    hour: u32,
    baseload_kw: f64,
    pv_kw: f64,
    wind_kw: f64,
    residual_kw: f64,
    eva_kw: f64,
    grid_kw: f64,
}

fn write_load_csv(path: &Path, s: &DaySchedule, p: &GridProfiles) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in 0..s.horizon.slots {
        let h = s.horizon.hour_of(t);
        let i = h as usize;
        w.serialize(LoadRow {
            slot: t,
            hour: h,
            baseload_kw: p.baseload_kw[i],
            pv_kw: p.pv_kw[i],
            wind_kw: p.wind_kw[i],
            residual_kw: p.residual_load(h),
            eva_kw: s.eva_kw[t],
            grid_kw: s.grid_kw[t],
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_evaluate(cfg: &RunConfig, policy: &Policy) -> Result<()> {
    let dir = prepare_run_dir(cfg)?;
    let scn = Scenario::build(cfg)?;
    scn.write_inputs(&dir)?;
    let s = strategy(&scn, policy)?;
    let reward = match policy {
        Policy::Learned(_) => run_day(&scn, &scn.sessions, policy, cfg.seed)?.reward,
        Policy::Baseline(_) => None,
    };
    s.schedule.write_csv(&dir.join("schedule.csv"), &scn.profiles)?;
    write_load_csv(&dir.join("load.csv"), &s.schedule, &scn.profiles)?;
    let out = EvaluationOutput {
        strategy: policy.name(),
        indices: s.indices,
        reward,
        peak_grid_kw: s.schedule.grid_kw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        accepted_slots: s.accepted_slots.map(|a| a.0),
    };
    write_json(&dir.join("indices.json"), &out)?;
    println!(
        "{}: load variance {:.1} kW^2, charging cost {:.2}, SOH after {} days {:.4} %",
        out.strategy, s.indices.load_variance, s.indices.charging_cost, cfg.year.days, s.indices.soh_year_end
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct AllocationSummary {
    slots: usize,
    accepted: usize,
    projected_slots: usize,
    max_abs_residual_kw: f64,
    max_grid_kw: f64,
    evs_in_departure_band: usize,
    fleet_size: usize,
}

#[derive(Debug, Serialize)]
struct SettlementRow {
    ev_id: usize,
    charging_cost: f64,
    degradation_cost: f64,
    deviation_penalty: f64,
    total: f64,
}

pub fn cmd_allocate(cfg: &RunConfig, schedule: &Path) -> Result<()> {
    let dir = prepare_run_dir(cfg)?;
    let powers = read_schedule_powers(schedule)?;
    let scn = Scenario::build(cfg)?;
    let h = cfg.env.horizon;
    if powers.len() != h.slots {
        return Err(Error::Config(format!("{}: {} slots, horizon has {}", schedule.display(), powers.len(), h.slots)));
    }
    let mut env = scn.env()?;
    env.reset(cfg.seed);
    let mut rows = Vec::new();
    let mut projected = 0;
    for p in &powers {
        let out = env.step(*p)?;
        projected += usize::from(out.projected);
        for (i, s) in scn.sessions.iter().enumerate() {
            rows.push(TraceRow {
                slot: out.allocation.slot,
                ev_id: s.ev_id,
                proposed_kw: out.allocation.proposed_kw[i],
                final_kw: out.allocation.final_kw[i],
                soc_after: env.energies()[i] / s.capacity_kwh(),
            });
        }
    }
    write_trace_csv(&dir.join("trace.csv"), &rows)?;

    let day = DaySchedule::from_env("allocated", &env)?;
    let soh_before: Vec<f64> = scn.sessions.iter().map(|s| s.pack.soh).collect();
    let mut soh_after = Vec::with_capacity(scn.sessions.len());
    for (i, s) in scn.sessions.iter().enumerate() {
        let mut pack = s.pack.clone();
        age_pack_for_day(&mut pack, s.spec.capacity_kwh, &day.energies[i], &day.per_ev_kw[i], &cfg.battery.cell, &cfg.battery.soh)?;
        soh_after.push(pack.soh);
    }
    let ids: Vec<usize> = scn.sessions.iter().map(|s| s.ev_id).collect();
    let tariffs: Vec<f64> = (0..h.slots).map(|t| scn.profiles.tariff[h.hour_of(t) as usize]).collect();
    let ledger = settle_rewards(
        env.proposals(),
        &ids,
        &tariffs,
        &scn.rated_kwh(),
        &soh_before,
        &soh_after,
        &[],
        &cfg.battery.cost,
        &cfg.allocation,
        h.slot_hours,
    );
    let mut w = csv::Writer::from_path(dir.join("settlement.csv"))?;
    if ledger.is_empty() {
        w.write_record(["ev_id", "charging_cost", "degradation_cost", "deviation_penalty", "total"])?;
    }
    for e in &ledger {
        w.serialize(SettlementRow {
            ev_id: e.ev_id,
            charging_cost: e.charging_cost,
            degradation_cost: e.degradation_cost,
            deviation_penalty: e.deviation_penalty,
            total: e.total(),
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("settlement.csv"), e))?;

    let in_band = scn
        .sessions
        .iter()
        .zip(env.energies())
        .filter(|(s, e)| {
            let soc = *e / s.capacity_kwh();
            soc >= s.spec.departure_soc_min - 1e-9 && soc <= s.spec.departure_soc_max + 1e-9
        })
        .count();
    let summary = AllocationSummary {
        slots: env.proposals().len(),
        accepted: env.proposals().iter().filter(|p| p.accepted).count(),
        projected_slots: projected,
        max_abs_residual_kw: env.proposals().iter().map(|p| p.residual_kw.abs()).fold(0.0, f64::max),
        max_grid_kw: env.grid_loads().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        evs_in_departure_band: in_band,
        fleet_size: scn.sessions.len(),
    };
    write_json(&dir.join("allocation.json"), &summary)?;
    println!("allocated {} slots, {} accepted, {}/{} EVs in the departure band", summary.slots, summary.accepted, in_band, summary.fleet_size);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SohRow {
    day: usize,
    mean_soh: f64,
}

#[derive(Debug, Serialize)]
struct FinalSohRow {
    ev_id: usize,
    soh: f64,
    efc: f64,
    cycles: usize,
}

pub fn cmd_simulate_year(cfg: &RunConfig, policy: &Policy) -> Result<()> {
    let dir = prepare_run_dir(cfg)?;
    let scn = Scenario::build(cfg)?;
    let (_, year) = run_year(&scn, policy)?;
    let path = dir.join("soh_year.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for (day, soh) in year.daily_mean_soh.iter().enumerate() {
        w.serialize(SohRow { day, mean_soh: *soh })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("soh_final.csv");
    let mut w = csv::Writer::from_path(&path)?;
    if year.packs.is_empty() {
        w.write_record(["ev_id", "soh", "efc", "cycles"])?;
    }
    for (s, p) in scn.sessions.iter().zip(&year.packs) {
        w.serialize(FinalSohRow { ev_id: s.ev_id, soh: p.soh, efc: p.efc, cycles: p.cycle_log.len() })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "{}: mean SOH {:.4} % -> {:.4} % over {} days",
        policy.name(),
        year.daily_mean_soh.first().copied().unwrap_or(f64::NAN),
        year.daily_mean_soh.last().copied().unwrap_or(f64::NAN),
        cfg.year.days
    );
    Ok(())
}

/// Report on a run directory: the learned policy (when a checkpoint is
/// present) followed by the four baselines, on the run's own profiles and
/// fleet.
pub fn cmd_report(run: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
    for (file, slot) in [(PROFILES_FILE, &mut cfg.paths.profiles), (FLEET_FILE, &mut cfg.paths.fleet)] {
        let p = run.join(file);
        if p.exists() {
            *slot = Some(p);
        }
    }
    let scn = Scenario::build(&cfg)?;
    let mut policies = Vec::new();
    let ck = run.join(CHECKPOINT_FILE);
    if ck.exists() {
        policies.push(Policy::Learned(Box::new(Checkpoint::load(&ck)?.params)));
    }
    policies.extend(Baseline::ALL.map(Policy::Baseline));
    let strategies = policies.iter().map(|p| strategy(&scn, p)).collect::<Result<Vec<_>>>()?;
    let dir = run.join(REPORT_DIR);
    emit_reports(
        &dir,
        &ReportInputs {
            seed: cfg.seed,
            profiles: &scn.profiles,
            sessions: &scn.sessions,
            strategies: &strategies,
            sop: SopSettings {
                cell: cfg.battery.cell.clone(),
                topology: cfg.battery.topology,
                horizon_h: cfg.battery.sop_horizon_h,
            },
            enrollment_incentive: cfg.report.enrollment_incentive * scn.sessions.len() as f64,
        },
    )?;
    println!("report for {} strategies written to {}", strategies.len(), dir.display());
    Ok(())
}

pub fn cmd_gen_profiles(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_run_dir(cfg)?;
    let scn = Scenario::build(cfg)?;
    scn.write_inputs(&dir)?;
    println!("profiles and a {}-EV fleet written to {}", scn.sessions.len(), dir.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Evaluate(p) => cmd_evaluate(&cfg, &Policy::from_args(p)?),
        Command::Allocate { schedule } => cmd_allocate(&cfg, schedule),
        Command::SimulateYear(p) => cmd_simulate_year(&cfg, &Policy::from_args(p)?),
        Command::Report { run } => cmd_report(run.as_deref().unwrap_or(&out_dir(&cfg))),
        Command::GenProfiles => cmd_gen_profiles(&cfg),
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
