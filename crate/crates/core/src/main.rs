use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subplan::agent::{evaluate, evaluate_flat, load_flat, metrics_csv, save_flat, train, train_flat_baseline, MetricsRow, TreeAgent};
use subplan::config::RunConfig;
use subplan::datagen::{self, collect, dataset_path, load_dir, report};
use subplan::gridworld::{Subtask, OBS_DIM};
use subplan::numcore::Checkpoint;
use subplan::plot::{aggregate, curve_svg, proportion_svg, MetricsTable};
use subplan::rng::{derive_seed, stream};
use subplan::repr::{embed_sets, export_embeddings, pretrain, GridTransitions, ReprModel, TransitionSet, PAIR_DIM};
use subplan::{Error, Result};

#[derive(Parser)]
#[command(name = "subplan", version, about = "Subtask representations and top-K planning trees on a small gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`key = value` with `[section]` headers).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set ppo.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; takes precedence over SUBPLAN_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect per-subtask trajectory datasets with the scripted expert.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Only this subtask (Open, Goto, PutNext, PickupLoc); all by default.
        #[arg(long)]
        subtask: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Expert, medium and random tier shares, e.g. `0.4,0.3,0.3`.
        #[arg(long)]
        fractions: Option<String>,
        /// Output file (single subtask) or directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the subtask encoders and the shared predictor.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Use one encoder for every subtask (ablation).
        #[arg(long)]
        shared_encoder: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the tree-auxiliary policy (or the flat PPO baseline).
    Train {
        #[command(flatten)]
        common: Common,
        /// Representation checkpoint; defaults to `<checkpoint_dir>/repr`.
        #[arg(long)]
        repr: Option<PathBuf>,
        /// Use randomly initialised encoders instead of a pretrained checkpoint.
        #[arg(long)]
        no_pretrain: bool,
        /// Train the flat PPO baseline instead.
        #[arg(long)]
        flat: bool,
    },
    /// Evaluate a trained checkpoint with frozen parameters.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        flat: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render reward curves and subtask proportions as SVG.
    Plot {
        /// Metrics CSVs of the tree-auxiliary runs.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Metrics CSVs of baseline runs drawn as a second band.
        #[arg(long, num_args = 1..)]
        baseline: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("SUBPLAN_SEED") {
        cfg.set("seed", &s)?;
    }
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn subtask_names() -> Vec<String> {
    Subtask::ALL.iter().map(|s| s.name().to_string()).collect()
}

fn cmd_collect(common: &Common, subtask: Option<String>, episodes: Option<usize>, fractions: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = episodes {
        cfg.collect_episodes = n;
    }
    if let Some(f) = fractions {
        cfg.set("collect.tier_fractions", &f)?;
        cfg.validate()?;
    }
    let subtasks: Vec<Subtask> = match subtask {
        Some(s) => vec![s.parse().map_err(|e: Error| Error::Config(e.to_string()))?],
        None => Subtask::ALL.to_vec(),
    };
    let single_file = subtasks.len() == 1 && out.as_ref().is_some_and(|p| p.extension().is_some());
    let mut sets = Vec::new();
    for s in subtasks {
        let ds = collect(s, cfg.collect_episodes, cfg.tier_fractions, derive_seed(cfg.seed, stream::EXPERT, s.id() as u64))?;
        let path = match (&out, single_file) {
            (Some(p), true) => p.clone(),
            (Some(dir), false) => dataset_path(dir, s),
            (None, _) => dataset_path(&cfg.data_dir, s),
        };
        datagen::save(&ds, &path)?;
        eprintln!("wrote {} ({} episodes, {} transitions)", path.display(), ds.episodes.len(), ds.num_transitions());
        sets.push(ds);
    }
    print!("{}", report(&sets));
    Ok(())
}

fn cmd_pretrain(common: &Common, shared: bool, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.repr.shared_encoder |= shared;
    let mut data = load_dir(&cfg.data_dir)?;
    data.sort_by_key(|d| d.subtask.id());
    if data.iter().map(|d| d.subtask).ne(Subtask::ALL) {
        return Err(Error::MissingArtifact {
            path: cfg.data_dir.clone(),
            hint: "datasets for all four subtasks are required; run `subplan collect` first".into(),
        });
    }
    let sets: Vec<GridTransitions> = data.iter().map(GridTransitions::new).collect();
    let refs: Vec<&dyn TransitionSet> = sets.iter().map(|s| s as &dyn TransitionSet).collect();
    let result = pretrain(&refs, &cfg.repr_config())?;
    let base = out.unwrap_or_else(|| cfg.checkpoint_dir.join("repr"));
    result.model.save(&base, &subtask_names())?;
    let mut losses = String::from("iteration,contrastive,prediction,total\n");
    for r in &result.history {
        losses += &format!("{},{},{},{}\n", r.iteration, r.contrastive, r.prediction, r.total);
    }
    write(&cfg.metrics_dir.join("pretrain_loss.csv"), &losses)?;
    let points = embed_sets(&result.model, &refs, 500)?;
    export_embeddings(&points, &subtask_names(), &cfg.metrics_dir.join("embeddings.csv"))?;
    write(&cfg.checkpoint_dir.join("run.cfg"), &cfg.dump())?;
    if let Some(last) = result.history.last() {
        eprintln!("pretrain done: contrastive {:.4}, prediction {:.4}", last.contrastive, last.prediction);
    }
    eprintln!("wrote {}", Checkpoint::manifest_path(&base).display());
    Ok(())
}

fn print_row(r: &MetricsRow) {
    eprintln!("step {:>8}  episode {:>6}  eval {:.3} ± {:.3}", r.step, r.episode, r.mean_eval_reward, r.eval_std);
}

fn cmd_train(common: &Common, repr_path: Option<PathBuf>, no_pretrain: bool, flat: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let agent_cfg = cfg.agent_config();
    let tag = if flat { "flat" } else { "tree" };
    let metrics_path = cfg.metrics_dir.join(format!("{tag}_seed{}.csv", cfg.seed));
    if flat {
        let out = train_flat_baseline(&agent_cfg, print_row)?;
        save_flat(&out.policy, &agent_cfg, &cfg.checkpoint_dir.join(format!("flat_seed{}", cfg.seed)))?;
        write(&metrics_path, &metrics_csv(&out.metrics))?;
    } else {
        let (repr, pretrain_loss) = if no_pretrain {
            (ReprModel::new(cfg.repr_config(), PAIR_DIM, OBS_DIM, Subtask::COUNT)?, None)
        } else {
            let base = repr_path.unwrap_or_else(|| cfg.checkpoint_dir.join("repr"));
            if !Checkpoint::exists(&base) {
                return Err(Error::MissingArtifact {
                    path: Checkpoint::manifest_path(&base),
                    hint: "no pretrained representation; run `subplan pretrain` first (or pass --no-pretrain)".into(),
                });
            }
            (ReprModel::load(&base)?, last_pretrain_loss(&cfg.metrics_dir.join("pretrain_loss.csv")))
        };
        let out = train(&agent_cfg, repr, pretrain_loss.as_ref(), print_row)?;
        out.agent.save(&cfg.checkpoint_dir.join(format!("agent_seed{}", cfg.seed)))?;
        let names: Vec<&str> = Subtask::ALL.iter().map(|s| s.name()).collect();
        out.agent.ucb.write_csv(&cfg.metrics_dir.join(format!("ucb_seed{}.csv", cfg.seed)), &names)?;
        write(&metrics_path, &metrics_csv(&out.metrics))?;
    }
    write(&cfg.checkpoint_dir.join("run.cfg"), &cfg.dump())?;
    eprintln!("wrote {}", metrics_path.display());
    Ok(())
}

fn last_pretrain_loss(path: &Path) -> Option<subplan::repr::LossRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    let f: Vec<f64> = text.lines().last()?.split(',').map(|v| v.parse().ok()).collect::<Option<_>>()?;
    (f.len() == 4).then(|| subplan::repr::LossRecord { iteration: f[0] as usize, contrastive: f[1], prediction: f[2], total: f[3] })
}

fn cmd_eval(common: &Common, checkpoint: Option<PathBuf>, flat: bool, episodes: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let n = episodes.unwrap_or(cfg.agent.eval_episodes);
    let default = if flat { format!("flat_seed{}", cfg.seed) } else { format!("agent_seed{}", cfg.seed) };
    let base = checkpoint.unwrap_or_else(|| cfg.checkpoint_dir.join(default));
    if !Checkpoint::exists(&base) {
        return Err(Error::MissingArtifact { path: Checkpoint::manifest_path(&base), hint: "run `subplan train` first".into() });
    }
    let report = if flat {
        let (policy, run) = load_flat(&base)?;
        evaluate_flat(&policy, run.level, n, cfg.seed)?
    } else {
        let agent = TreeAgent::load(&base)?;
        evaluate(&agent, agent.config.level, n, cfg.seed)?
    };
    println!("mean reward {:.4} ± {:.4} over {n} episodes", report.mean, report.std);
    if !report.segment_counts.is_empty() {
        let total: u64 = report.segment_counts.iter().sum();
        for (s, c) in Subtask::ALL.iter().zip(&report.segment_counts) {
            println!("  {:<10} {:>7} segments ({:.1}%)", s.name(), c, 100.0 * *c as f64 / total.max(1) as f64);
        }
    }
    write(&cfg.metrics_dir.join(format!("eval_{}.json", base.file_name().map_or("run".into(), |f| f.to_string_lossy()))), &serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_plot(input: &[PathBuf], baseline: &[PathBuf], out: &Path) -> Result<()> {
    let read = |paths: &[PathBuf]| -> Result<Vec<MetricsTable>> {
        paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p)
                    .map_err(|_| Error::MissingArtifact { path: p.clone(), hint: "metrics file not found".into() })?;
                MetricsTable::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
            })
            .collect()
    };
    let runs = read(input)?;
    let mut bands = vec![aggregate("tree-auxiliary", &runs)?];
    if !baseline.is_empty() {
        bands.push(aggregate("flat PPO", &read(baseline)?)?);
    }
    write(&out.join("reward_curve.svg"), &curve_svg("Mean evaluation reward", &bands)?)?;
    let mut totals = runs[0].subtask_totals()?;
    for r in &runs[1..] {
        for (t, (_, c)) in totals.iter_mut().zip(r.subtask_totals()?) {
            t.1 += c;
        }
    }
    if totals.iter().any(|(_, c)| *c > 0.0) {
        write(&out.join("subtask_proportion.svg"), &proportion_svg("Executed segments per subtask", &totals)?)?;
    }
    eprintln!("wrote plots to {}", out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect { common, subtask, episodes, fractions, out } => cmd_collect(&common, subtask, episodes, fractions, out),
        Command::Pretrain { common, shared_encoder, out } => cmd_pretrain(&common, shared_encoder, out),
        Command::Train { common, repr, no_pretrain, flat } => cmd_train(&common, repr, no_pretrain, flat),
        Command::Eval { common, checkpoint, flat, episodes } => cmd_eval(&common, checkpoint, flat, episodes),
        Command::Plot { input, baseline, out } => cmd_plot(&input, &baseline, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
