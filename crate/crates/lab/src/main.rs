use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lightpath_agent::{Activation, GnnConfig, PpoConfig, Selection, TrainConfig, Trainer};
use lightpath_core::exec::Execution;
use lightpath_core::{max_services, EpisodeConfig, Heuristic, PathOrdering, PathTable, Termination, TransmissionConfig};
use lightpath_lab::curve::{training_curve, CurveWriter, CURVE_FILE};
use lightpath_lab::sweep::{format_table, summarize_rows, write_rows};
use lightpath_lab::{
    campaign_seeds, data_dir, load_network, paired, plots, resolve_policy, run_episode, run_episode_traced, summarize,
    sweep, EpisodeLength, Network, SweepSpec,
};

#[derive(Parser)]
#[command(name = "lightpath-lab", version, about = "Routing and wavelength assignment with lightpath reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the candidate paths of every node pair.
    Paths(PathsArgs),
    /// Evaluate one policy over a range of seeds.
    Eval(EvalArgs),
    /// Heuristic sweep over methods, K, orderings and episode lengths.
    Bench(BenchArgs),
    /// Compare two policies on identical request sequences.
    Pair(PairArgs),
    /// Plot the learning curve of a training run.
    Curve(CurveArgs),
    /// Train the graph-attention agent with PPO.
    Train(Box<TrainArgs>),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct NetArgs {
    /// Topology JSON file.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Per-link NSR file.
    #[arg(long = "nsr-file")]
    nsr_file: Option<PathBuf>,
    /// WDM channels per link.
    #[arg(long = "link_resources", default_value_t = 100)]
    link_resources: usize,
    /// Service request size in Gbps.
    #[arg(long = "values_bw", default_value_t = 100.0)]
    values_bw: f64,
}

impl NetArgs {
    fn paths(&self) -> (PathBuf, PathBuf) {
        let d = data_dir();
        (
            self.topology.clone().unwrap_or_else(|| d.join("topologies/nsfnet.json")),
            self.nsr_file.clone().unwrap_or_else(|| d.join("nsr/nsfnet_gn.json")),
        )
    }

    fn network(&self) -> anyhow::Result<Network> {
        let (t, n) = self.paths();
        let (topology, nsr) = load_network(&t, &n)?;
        Ok(Network {
            topology,
            nsr,
            transmission: TransmissionConfig::with_channels(self.link_resources),
        })
    }

    fn table(&self, k: usize, ordering: PathOrdering) -> anyhow::Result<Arc<PathTable>> {
        Ok(Arc::new(self.network()?.table(k, ordering)?))
    }
}

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = PathOrdering::Hops)]
    ordering: PathOrdering,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    net: NetArgs,
    /// `ksp_ff`, `ff_ksp`, `random`, or a checkpoint file.
    #[arg(long, default_value = "ksp_ff")]
    policy: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = PathOrdering::Hops)]
    ordering: PathOrdering,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long = "max_requests", default_value_t = EpisodeConfig::EVAL_REQUESTS)]
    max_requests: usize,
    /// End each episode at its first blocked request.
    #[arg(long)]
    first_blocking: bool,
    /// Sample agent actions instead of taking the most probable one.
    #[arg(long)]
    sample: bool,
    /// Per-step trace of the first seed.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-seed results as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_delimiter = ',', default_value = "ksp_ff,ff_ksp")]
    methods: Vec<Heuristic>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "hops")]
    orderings: Vec<PathOrdering>,
    #[arg(long, value_delimiter = ',', default_value = "first_blocking,10000,15000,20000,25000")]
    lengths: Vec<EpisodeLength>,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    /// Cap on first-blocking episodes that never block.
    #[arg(long, default_value_t = 100_000)]
    first_blocking_cap: usize,
    #[arg(long, default_value = "results/bench")]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct PairArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    a: String,
    #[arg(long, default_value = "ksp_ff")]
    b: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = PathOrdering::Hops)]
    ordering: PathOrdering,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long = "max_requests", default_value_t = EpisodeConfig::EVAL_REQUESTS)]
    max_requests: usize,
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value = "results/pair")]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct CurveArgs {
    /// Training run directory holding `curve.csv` and `run.json`.
    #[arg(long)]
    run: PathBuf,
    /// Heuristic drawn as a horizontal baseline.
    #[arg(long, default_value = "ksp_ff")]
    baseline: String,
    /// Episodes used to estimate the baseline; 0 disables it.
    #[arg(long, default_value_t = 20)]
    baseline_seeds: usize,
    /// Output figure (default: `<run>/curve.svg`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long = "env_type", default_value = "rwa_lightpath_reuse")]
    env_type: String,
    /// Non-expiring traffic; the only supported model.
    #[arg(long = "incremental_loading")]
    incremental_loading: bool,
    /// Named topology under the data directory (overridden by --topology).
    #[arg(long = "topology_name")]
    topology_name: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = PathOrdering::Hops)]
    ordering: PathOrdering,
    /// Evaluation episode length; training episodes are scaled from it.
    #[arg(long = "max_requests", default_value_t = EpisodeConfig::EVAL_REQUESTS)]
    max_requests: usize,
    #[arg(long = "TOTAL_TIMESTEPS", default_value_t = 200_000_000)]
    total_timesteps: u64,
    #[arg(long = "UPDATE_EPOCHS", default_value_t = 10)]
    update_epochs: usize,
    #[arg(long = "ROLLOUT_LENGTH", default_value_t = 150)]
    rollout_length: usize,
    #[arg(long = "NUM_ENVS", default_value_t = 100)]
    num_envs: usize,
    #[arg(long = "NUM_MINIBATCHES", default_value_t = 4)]
    num_minibatches: usize,
    #[arg(long = "ACTION_MASKING")]
    action_masking: bool,
    #[arg(long = "LR_SCHEDULE", default_value = "warmup_cosine")]
    lr_schedule: String,
    #[arg(long = "LR", default_value_t = 1.943e-5)]
    lr: f64,
    #[arg(long = "WARMUP_STEPS_FRACTION", default_value_t = 0.1)]
    warmup_steps_fraction: f64,
    #[arg(long = "WARMUP_PEAK_MULTIPLIER", default_value_t = 2.0)]
    warmup_peak_multiplier: f64,
    #[arg(long = "WARMUP_END_FRACTION", default_value_t = 0.1)]
    warmup_end_fraction: f64,
    #[arg(long = "GAMMA", default_value_t = 0.919)]
    gamma: f64,
    #[arg(long = "GAE_LAMBDA", default_value_t = 0.984)]
    gae_lambda: f64,
    #[arg(long = "CLIP_EPS", default_value_t = 0.2)]
    clip_eps: f64,
    #[arg(long = "ENT_COEF", default_value_t = 0.01)]
    ent_coef: f64,
    #[arg(long = "VF_COEF", default_value_t = 0.5)]
    vf_coef: f64,
    #[arg(long = "MAX_GRAD_NORM", default_value_t = 0.5)]
    max_grad_norm: f64,
    #[arg(long = "scale_factor", default_value_t = 0.2)]
    scale_factor: f64,
    /// Graph network policy; the only supported architecture.
    #[arg(long = "USE_GNN")]
    use_gnn: bool,
    #[arg(long = "gnn_latent", default_value_t = 128)]
    gnn_latent: usize,
    #[arg(long = "message_passing_steps", default_value_t = 3)]
    message_passing_steps: usize,
    #[arg(long = "gnn_mlp_layers", default_value_t = 2)]
    gnn_mlp_layers: usize,
    #[arg(long = "activation", default_value = "relu")]
    activation: String,
    /// Drop remaining-capacity edge features (occupancy only).
    #[arg(long)]
    no_capacity_features: bool,
    /// Value head reads the policy network instead of its own.
    #[arg(long)]
    shared_trunk: bool,
    /// Train on first-blocking episodes.
    #[arg(long)]
    first_blocking: bool,
    #[arg(long = "SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results/train")]
    out: PathBuf,
    /// Write a checkpoint every N updates (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    sequential: bool,
}

/// Everything needed to rebuild a training run's environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunInfo {
    topology: PathBuf,
    nsr_file: PathBuf,
    link_resources: usize,
    k: usize,
    ordering: PathOrdering,
    train: TrainConfig,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn selection(sample: bool) -> Selection {
    if sample {
        Selection::Sample
    } else {
        Selection::Greedy
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_paths(a: PathsArgs) -> anyhow::Result<()> {
    let table = a.net.table(a.k, a.ordering)?;
    let topo = table.topology();
    let mut out = std::io::stdout().lock();
    writeln!(out, "pair,rank,hops,length_km,capacity_gbps,services,nodes")?;
    for idx in 0..table.pair_count() {
        let (s, d) = lightpath_core::topology::pair_from_index(topo.node_count(), idx);
        for (rank, p) in table.paths_by_index(idx).iter().enumerate() {
            let nodes: Vec<&str> = p.nodes.iter().map(|&v| topo.node_name(v)).collect();
            writeln!(
                out,
                "{}-{},{},{},{},{:.3},{},{}",
                topo.node_name(s),
                topo.node_name(d),
                rank,
                p.hops,
                p.length_km,
                p.capacity_gbps,
                max_services(p.capacity_gbps, a.net.values_bw),
                nodes.join(" ")
            )?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let table = a.net.table(a.k, a.ordering)?;
    let policy = resolve_policy(&a.policy, &table, a.net.values_bw, selection(a.sample))?;
    let seeds = campaign_seeds(a.seeds)?;
    let mut template = EpisodeConfig::fixed(a.max_requests, 0);
    template.request_gbps = a.net.values_bw;
    if a.first_blocking {
        template.termination = Termination::FirstBlocking;
    }
    if let Some(path) = &a.trace {
        let (_, rows) = run_episode_traced(policy.as_ref(), &table, &template.with_seed(seeds[0]))?;
        let mut w = csv::Writer::from_writer(create(path)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let policy_ref = policy.as_ref();
    let results = lightpath_core::exec::map_indexed(execution(a.sequential), seeds.len(), |i| {
        run_episode(policy_ref, &table, &template.with_seed(seeds[i]))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["seed", "policy", "accepted", "blocked", "first_block_step", "throughput_gbps"])?;
        for r in &results {
            w.write_record([
                r.seed.to_string(),
                r.policy.clone(),
                r.accepted.to_string(),
                r.blocked.to_string(),
                r.first_block_step.map_or(String::new(), |s| s.to_string()),
                r.throughput_gbps().to_string(),
            ])?;
        }
        w.flush()?;
    }
    let accepted: Vec<f64> = results.iter().map(|r| r.accepted as f64).collect();
    let s = summarize(&accepted).context("no episodes")?;
    println!(
        "{} K={} {}: {} episodes, accepted mean {:.2} std {:.2} median {:.1} [q1 {:.2}, q3 {:.2}] throughput {:.3} Tbps",
        policy.name(),
        a.k,
        a.ordering,
        s.n,
        s.mean,
        s.std,
        s.median,
        s.q1,
        s.q3,
        s.mean * a.net.values_bw / 1000.0
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let net = a.net.network()?;
    let spec = SweepSpec {
        methods: a.methods,
        ks: a.ks,
        orderings: a.orderings,
        lengths: a.lengths,
        seeds: campaign_seeds(a.seeds)?,
        request_gbps: a.net.values_bw,
        first_blocking_cap: a.first_blocking_cap,
    };
    let start = std::time::Instant::now();
    let rows = sweep(&net, &spec, execution(a.sequential))?;
    create_dir(&a.out)?;
    write_rows(create(&a.out.join("sweep.csv"))?, &rows)?;
    let cells = summarize_rows(&rows);
    let mut w = csv::Writer::from_writer(create(&a.out.join("summary.csv"))?);
    w.write_record([
        "method", "ordering", "k", "episode_length", "n", "mean", "median", "std", "q1", "q3", "whisker_low",
        "whisker_high", "quartile_method",
    ])?;
    for c in &cells {
        let s = &c.summary;
        w.write_record([
            c.method.clone(),
            c.ordering.clone(),
            c.k.to_string(),
            c.episode_length.clone(),
            s.n.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.std.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            lightpath_lab::stats::QUARTILE_METHOD.to_string(),
        ])?;
    }
    w.flush()?;
    for length in &spec.lengths {
        let ls = length.to_string();
        let boxes: Vec<(String, lightpath_lab::Summary)> = cells
            .iter()
            .filter(|c| c.episode_length == ls)
            .map(|c| (format!("{} {} K={}", c.method, c.ordering, c.k), c.summary))
            .collect();
        plots::boxplots(&boxes, "accepted services", &a.out.join(format!("box_{ls}.svg")))?;
    }
    print!("{}", format_table(&cells, &spec.lengths));
    eprintln!(
        "{} episodes in {:.1}s; results in {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn cmd_pair(a: PairArgs) -> anyhow::Result<()> {
    let table = a.net.table(a.k, a.ordering)?;
    let pa = resolve_policy(&a.a, &table, a.net.values_bw, selection(a.sample))?;
    let pb = resolve_policy(&a.b, &table, a.net.values_bw, selection(a.sample))?;
    let mut template = EpisodeConfig::fixed(a.max_requests, 0);
    template.request_gbps = a.net.values_bw;
    let seeds = campaign_seeds(a.seeds)?;
    let (rows, summary) = paired::paired_eval(pa.as_ref(), pb.as_ref(), &table, &seeds, &template, execution(a.sequential))?;
    create_dir(&a.out)?;
    paired::write_rows(create(&a.out.join("paired.csv"))?, &rows)?;
    serde_json::to_writer_pretty(create(&a.out.join("paired_summary.json"))?, &summary)?;
    plots::paired_deltas(&rows, &a.out.join("paired.svg"))?;
    println!(
        "{} vs {}: mean {:.2} vs {:.2}, delta {:+.2} ({:+.3} Tbps), wins {}/{} losses {} ties {}",
        summary.policy_a,
        summary.policy_b,
        summary.mean_a,
        summary.mean_b,
        summary.mean_delta,
        summary.mean_gain_tbps,
        summary.wins,
        summary.episodes,
        summary.losses,
        summary.ties
    );
    Ok(())
}

fn cmd_curve(a: CurveArgs) -> anyhow::Result<()> {
    let rows = training_curve(&a.run)?;
    let info_path = a.run.join("run.json");
    let baseline = if a.baseline_seeds > 0 {
        let info: RunInfo = serde_json::from_reader(
            File::open(&info_path).with_context(|| format!("opening {}", info_path.display()))?,
        )?;
        let (topology, nsr) = load_network(&info.topology, &info.nsr_file)?;
        let table = Arc::new(PathTable::build(
            &topology,
            info.k,
            info.ordering,
            &nsr,
            &TransmissionConfig::with_channels(info.link_resources),
        )?);
        let policy = resolve_policy(&a.baseline, &table, info.train.request_gbps, Selection::Greedy)?;
        let mut total = 0.0;
        for seed in campaign_seeds(a.baseline_seeds)? {
            total += run_episode(policy.as_ref(), &table, &info.train.episode(seed))?.accepted as f64;
        }
        Some((a.baseline.clone(), total / a.baseline_seeds as f64))
    } else {
        None
    };
    let out = a.out.unwrap_or_else(|| a.run.join("curve.svg"));
    plots::learning_curve(&rows, baseline.as_ref().map(|(n, v)| (n.as_str(), *v)), &out)?;
    if let Some((name, v)) = &baseline {
        println!("{name} baseline {v:.2}");
    }
    println!("{} updates plotted to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    if a.env_type != "rwa_lightpath_reuse" {
        bail!("unsupported env_type {:?}", a.env_type);
    }
    if a.lr_schedule != "warmup_cosine" {
        bail!("unsupported LR_SCHEDULE {:?}", a.lr_schedule);
    }
    let activation = match a.activation.as_str() {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        other => bail!("unknown activation {other:?}"),
    };
    let mut net = a.net.clone();
    if net.topology.is_none() {
        if let Some(name) = &a.topology_name {
            let file = if name.starts_with("nsfnet") { "nsfnet" } else { name.as_str() };
            net.topology = Some(data_dir().join(format!("topologies/{file}.json")));
        }
    }
    let (topology_path, nsr_path) = net.paths();
    let table = net.table(a.k, a.ordering)?;
    let config = TrainConfig {
        ppo: PpoConfig {
            gamma: a.gamma,
            gae_lambda: a.gae_lambda,
            lr: a.lr,
            update_epochs: a.update_epochs,
            rollout_length: a.rollout_length,
            num_envs: a.num_envs,
            total_timesteps: a.total_timesteps,
            minibatches: a.num_minibatches,
            clip_eps: a.clip_eps,
            vf_coef: a.vf_coef,
            ent_coef: a.ent_coef,
            max_grad_norm: a.max_grad_norm,
            warmup_fraction: a.warmup_steps_fraction,
            peak_multiplier: a.warmup_peak_multiplier,
            end_fraction: a.warmup_end_fraction,
            action_masking: a.action_masking,
            scale_factor: a.scale_factor,
            seed: a.seed,
            ..PpoConfig::default()
        },
        gnn: GnnConfig {
            latent: a.gnn_latent,
            rounds: a.message_passing_steps,
            mlp_layers: a.gnn_mlp_layers,
            activation,
            capacity_features: !a.no_capacity_features,
            shared_trunk: a.shared_trunk,
            ..GnnConfig::default()
        },
        eval_requests: a.max_requests,
        termination: if a.first_blocking {
            Termination::FirstBlocking
        } else {
            Termination::FixedLength
        },
        request_gbps: net.values_bw,
    };
    create_dir(&a.out)?;
    let info = RunInfo {
        topology: topology_path,
        nsr_file: nsr_path,
        link_resources: net.link_resources,
        k: a.k,
        ordering: a.ordering,
        train: config.clone(),
    };
    serde_json::to_writer_pretty(create(&a.out.join("run.json"))?, &info)?;

    let mut trainer = Trainer::new(table, config, execution(a.sequential))?;
    let total = trainer.config().ppo.num_updates();
    let mut log = CurveWriter::new(create(&a.out.join(CURVE_FILE))?);
    let start = std::time::Instant::now();
    while trainer.updates_done() < total {
        let point = trainer.step()?.clone();
        log.push(&point)?;
        let accepted = point
            .mean_accepted
            .map_or("-".to_string(), |m| format!("{m:.1}±{:.1}", point.std_accepted.unwrap_or(0.0)));
        eprintln!(
            "update {}/{} steps {} accepted {} entropy {:.3} kl {:.4} lr {:.3e} [{:.0}s]",
            point.update,
            total,
            point.env_steps,
            accepted,
            point.stats.loss.entropy,
            point.stats.loss.approx_kl,
            point.stats.lr,
            start.elapsed().as_secs_f64()
        );
        if a.checkpoint_every > 0 && point.update % a.checkpoint_every == 0 {
            trainer
                .checkpoint()
                .save(a.out.join(format!("checkpoint_{:06}.json", point.update)))?;
        }
    }
    let path = a.out.join("checkpoint.json");
    trainer.checkpoint().save(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let result = match Cli::parse().command {
        Command::Paths(a) => cmd_paths(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Pair(a) => cmd_pair(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Train(a) => cmd_train(*a),
    };
    match result {
        Err(e) if e.downcast_ref::<std::io::Error>().map(|io| io.kind()) == Some(std::io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}
