use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use eudm_core::planner::{Mode, Planner, PlannerConfig};
use eudm_sim::bench::{read_csv, run_benchmark, summarize, summary_markdown, write_csv};
use eudm_sim::env::run_episode;
use eudm_sim::episode::{meta, read_frames, write_frames, EndReason};
use eudm_sim::maps::load_map;
use eudm_sim::plot::{render_keyframes, render_strip, strip_series};
use eudm_sim::replay::{read_log, replay, PerceptionNoise, ReplayConfig};
use eudm_sim::scenario::ScenarioConfig;
use eudm_sim::scene::Scene;
use eudm_sim::SimError;

#[derive(Debug, Parser)]
#[command(name = "eudm", version, about = "Behavior planning with guided branching, in simulation and on logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan once on a scene file and print the cycle record.
    Plan(PlanArgs),
    /// Run one closed-loop episode.
    Sim(SimArgs),
    /// Run a benchmark suite and write per-episode CSV plus a summary.
    Bench(BenchArgs),
    /// Run the planner open loop over a recorded log.
    Replay(ReplayArgs),
    /// Render an episode log to SVG, or a bench CSV to a summary table.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Scene JSON: map, ego id and vehicle poses.
    scene: PathBuf,
    /// Planner config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scene's map.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario JSON; without it `--map` names a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    mode: Option<Mode>,
    /// Episode log, JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite JSON: one scenario or an array of them. Defaults to both
    /// presets, or the one named by `--map`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Only this mode; all three otherwise.
    #[arg(long)]
    mode: Option<Mode>,
    /// Seeds per scenario and mode.
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Results CSV; the summary goes next to it with an `.md` extension.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Log to replay, JSON lines.
    log: PathBuf,
    /// Map the log was recorded on.
    #[arg(long)]
    map: String,
    /// Replay config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Seeds the planner and, with `--noise`, the perception noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Perturb observed poses with default perception noise.
    #[arg(long)]
    noise: bool,
    /// Decision report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-decision planning time in ms, JSON array.
    #[arg(long)]
    latency: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Episode log, or a bench results CSV.
    log: PathBuf,
    /// Output directory (or `.md` file for CSV input).
    #[arg(long)]
    out: PathBuf,
    /// Map to draw when the log carries none.
    #[arg(long)]
    map: Option<String>,
    #[arg(long, default_value_t = 4)]
    keyframes: usize,
}

enum Failure {
    BadInput(String),
    NoFeasiblePolicy(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Plan(eudm_core::planner::PlanError::NoFeasiblePolicy) => {
                Failure::NoFeasiblePolicy(e.to_string())
            }
            other => Failure::BadInput(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::BadInput(e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure::BadInput(msg.into())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn plan(args: PlanArgs) -> Result<(), Failure> {
    let mut scene = Scene::load(&args.scene)?;
    if let Some(map) = args.map {
        scene.map = map;
    }
    let mut cfg: PlannerConfig = args.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    let world = scene.world()?;
    let mut planner = Planner::new(cfg).map_err(SimError::from)?;
    let record = planner.cycle(&world).map_err(SimError::from)?;
    emit(args.out.as_deref(), &to_json(&record))?;
    if record.emergency {
        return Err(Failure::NoFeasiblePolicy("no feasible policy; emergency brake".into()));
    }
    Ok(())
}

fn scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let seed = args.seed;
    let mut cfg = match (&args.config, &args.map) {
        (Some(path), map) => {
            let mut cfg: ScenarioConfig = read_json(path)?;
            if let Some(map) = map {
                cfg.map = map.clone();
            }
            cfg
        }
        (None, map) => {
            let name = map.as_deref().unwrap_or("double_merge");
            ScenarioConfig::preset(name, seed.unwrap_or(0))
                .ok_or_else(|| bad(format!("map `{name}` is not a preset; pass --config with ego and agents")))?
        }
    };
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(d) = args.duration {
        if !(d > 0.0) {
            return Err(bad("--duration must be positive"));
        }
        cfg.duration = d;
    }
    Ok(cfg)
}

fn sim(args: SimArgs) -> Result<(), Failure> {
    let mut cfg = scenario(&args.scenario)?;
    if let Some(mode) = args.mode {
        cfg = cfg.with_mode(mode);
    }
    let episode = run_episode(&cfg)?;
    if let Some(path) = &args.out {
        write_frames(create(path)?, &episode.frames)?;
    }
    let summary = json!({
        "map": cfg.map,
        "mode": cfg.planner.mode,
        "seed": cfg.seed,
        "end": episode.end,
        "cycles": episode.cycles,
        "decision_switches": episode.decision_switches,
        "metrics": episode.metrics,
    });
    println!("{}", to_json(&summary));
    if episode.end == EndReason::NoFeasiblePolicy {
        return Err(Failure::NoFeasiblePolicy("episode aborted: no feasible policy".into()));
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    if args.episodes == 0 {
        return Err(bad("--episodes must be at least 1"));
    }
    let mut suite: Vec<ScenarioConfig> = match &args.config {
        Some(path) => {
            let value: serde_json::Value = read_json(path)?;
            let parsed = if value.is_array() {
                serde_json::from_value(value)
            } else {
                serde_json::from_value(value).map(|one| vec![one])
            };
            parsed.map_err(|e| bad(format!("{}: {e}", path.display())))?
        }
        None => {
            let names = match &args.map {
                Some(name) => vec![name.as_str()],
                None => vec!["double_merge", "ring"],
            };
            names
                .into_iter()
                .map(|n| ScenarioConfig::preset(n, 0).ok_or_else(|| bad(format!("map `{n}` is not a preset"))))
                .collect::<Result<_, _>>()?
        }
    };
    for cfg in &mut suite {
        if args.config.is_some() {
            if let Some(map) = &args.map {
                cfg.map = map.clone();
            }
        }
        if let Some(seed) = args.seed {
            *cfg = cfg.clone().with_seed(seed);
        }
        if let Some(d) = args.duration {
            cfg.duration = d;
        }
    }
    let modes = match args.mode {
        Some(m) => vec![m],
        None => vec![Mode::Eudm, Mode::Edm, Mode::Mpdm],
    };
    let rows = run_benchmark(&suite, &modes, args.episodes);
    write_csv(create(&args.out)?, &rows)?;
    let table = summary_markdown(&summarize(&rows));
    emit(Some(&args.out.with_extension("md")), &table)?;
    print!("{table}");
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> Result<(), Failure> {
    let mut cfg: ReplayConfig = args.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if let Some(mode) = args.mode {
        cfg.planner.mode = mode;
    }
    if args.noise && cfg.noise.is_none() {
        cfg.noise = Some(PerceptionNoise::default());
    }
    if let Some(seed) = args.seed {
        cfg.planner.noise.seed = seed;
        if let Some(n) = &mut cfg.noise {
            n.seed = seed;
        }
    }
    let map = load_map(&args.map).map_err(SimError::from)?;
    let file = File::open(&args.log).map_err(|e| bad(format!("{}: {e}", args.log.display())))?;
    let frames = read_log(BufReader::new(file))?;
    let out = replay(&frames, map, &cfg)?;
    emit(args.out.as_deref(), &to_json(&out.report))?;
    if let Some(path) = &args.latency {
        emit(Some(path), &to_json(&out.latency_ms))?;
    }
    eprintln!(
        "decisions={} switches={} risky_frames={} median_latency_ms={:.2}",
        out.report.decisions.len(),
        out.report.switches,
        out.report.risky_frames,
        out.median_latency_ms().unwrap_or(0.0)
    );
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), Failure> {
    let file = File::open(&args.log).map_err(|e| bad(format!("{}: {e}", args.log.display())))?;
    if args.log.extension().is_some_and(|e| e == "csv") {
        let rows = read_csv(file)?;
        let table = summary_markdown(&summarize(&rows));
        let path = if args.out.extension().is_some_and(|e| e == "md") {
            args.out.clone()
        } else {
            args.out.join("summary.md")
        };
        emit(Some(&path), &table)?;
        print!("{table}");
        return Ok(());
    }
    let frames = read_frames(BufReader::new(file))?;
    let header = meta(&frames);
    let map_name = args
        .map
        .clone()
        .or_else(|| header.map(|m| m.map.clone()))
        .ok_or_else(|| bad("log has no map; pass --map"))?;
    let ego = header.map_or(0, |m| m.ego);
    let map = load_map(&map_name).map_err(SimError::from)?;
    let svgs = render_keyframes(&frames, &map, ego, args.keyframes)?;
    fs::create_dir_all(&args.out)?;
    for (k, svg) in svgs.iter().enumerate() {
        emit(Some(&args.out.join(format!("frame_{k:03}.svg"))), svg)?;
    }
    emit(Some(&args.out.join("strip.svg")), &render_strip(&strip_series(&frames, ego)))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Sim(a) => sim(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::BadInput(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(Failure::NoFeasiblePolicy(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(3)
        }
    }
}
