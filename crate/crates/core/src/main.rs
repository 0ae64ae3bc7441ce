use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use serde::Serialize;

use sgc_dpl::affinity::{ap_cluster, median_off_diagonal, uniform_preference, ApConfig, ClusterAssignment, PreferenceMode};
use sgc_dpl::embedding::{
    compute_similarity, generate_synthetic, load_embeddings, save_embeddings, EmbeddingSet, Split,
    SyntheticSpec,
};
use sgc_dpl::evaluation::{dbscan_cluster, evaluate_clustering, evaluate_retrieval, MetricReport};
use sgc_dpl::pipeline::{curves_csv, run_pipeline, PipelineConfig};
use sgc_dpl::refiner::{parameter_header, write_loss_trace, write_matrix_csv};
use sgc_dpl::sgap::{
    adaptive_preference, search_p_star, PreferenceSearchConfig,
    PreferenceSearchResult,
};
use sgc_dpl::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "sgc-dpl", version, about = "Semantics-guided clustering with progressive pseudo-labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-blob dataset CSV.
    Synth(SynthArgs),
    /// Cluster one split of a dataset and write the assignment JSON.
    Cluster(ClusterArgs),
    /// Run initialization plus progressive pseudo-labeling iterations.
    Pipeline(PipelineArgs),
    /// Retrieval and clustering metrics for a dataset and optional assignment.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 120)]
    ids: usize,
    #[arg(long, default_value_t = 10)]
    per_id: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    #[arg(long, default_value_t = 10.0)]
    spacing: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    labeled_frac: f64,
    /// Centers vary only in this many leading coordinates.
    #[arg(long)]
    signal_dim: Option<usize>,
    /// Held-out identities written as query and gallery rows.
    #[arg(long, default_value_t = 0)]
    test_ids: usize,
    #[arg(long, default_value_t = 2)]
    cameras: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Ap,
    SgAp,
    Dbscan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PreferenceArg {
    Median,
    Min,
    Adaptive,
    Search,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Ap)]
    algo: Algo,
    /// Split to cluster.
    #[arg(long, default_value = "unlabeled")]
    split: Split,
    /// Preference for `ap`; `sg-ap` always searches.
    #[arg(long, value_enum, default_value_t = PreferenceArg::Median)]
    preference: PreferenceArg,
    /// Preference scalar for `--preference adaptive` (default: off-diagonal median).
    #[arg(long, allow_hyphen_values = true)]
    p: Option<f64>,
    /// Target exemplar count for the search (default: labeled identity count).
    #[arg(long)]
    target_c: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    min_pts: usize,
    #[arg(long, default_value_t = 0.9)]
    damping: f64,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    #[arg(long, default_value_t = 50)]
    convergence_window: usize,
    #[arg(long)]
    out: PathBuf,
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// Flags mirroring the configuration keys; they override file values.
        #[derive(Debug, Args)]
        struct ConfigFlags {
            $(
                #[arg(long, value_name = "VALUE", allow_hyphen_values = true,
                      help = concat!("Overrides config key `", stringify!($field), "`"))]
                $field: Option<String>,
            )*
        }

        impl ConfigFlags {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(
    iterations,
    seed,
    clustering,
    damping,
    ap_max_iterations,
    convergence_window,
    stall_window,
    max_search_steps,
    ranking_scope,
    p_identities,
    k_per_identity,
    margin,
    learning_rate,
    epochs,
    init_epochs,
    decay_every,
    triplet_weight,
    id_weight,
    aug_weight,
    perturbation_scale,
    d_step_mode,
    d_step,
    bin_count,
    re_search_p,
    re_estimate_tau,
    warm_start,
    normalize,
    cross_camera,
);

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Dataset CSV with labeled, unlabeled, query and gallery rows.
    #[arg(long)]
    input: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    /// Assignment JSON from `cluster`, scored against the split's identities.
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long, default_value = "unlabeled")]
    split: Split,
    /// Keep same-camera true matches in the gallery.
    #[arg(long)]
    same_camera: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ClusterOutput {
    algorithm: &'static str,
    split: Split,
    preference: Option<f64>,
    search: Option<PreferenceSearchResult>,
    #[serde(flatten)]
    assignment: ClusterAssignment,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_error(path))
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(io_error(path))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(io_error(path))
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        identities: args.ids,
        samples_per_identity: args.per_id,
        dim: args.dim,
        intra_std: args.std,
        spacing: args.spacing,
        labeled_fraction: args.labeled_frac,
        seed: args.seed,
        signal_dim: args.signal_dim,
        test_identities: args.test_ids,
        cameras: args.cameras,
    };
    save_embeddings(&generate_synthetic(&spec)?, &args.out)
}

fn search_on_labeled(
    data: &EmbeddingSet,
    target: Option<usize>,
    ap: &ApConfig,
) -> Result<PreferenceSearchResult> {
    let labeled = data.select(Split::Labeled).map_err(|_| {
        Error::GuidanceUnavailable("preference search needs labeled rows".into())
    })?;
    let target = target.unwrap_or_else(|| labeled.label_set().len());
    search_p_star(
        &compute_similarity(&labeled)?,
        &PreferenceSearchConfig::new(target),
        ap,
    )
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let data = load_embeddings(&args.input)?;
    let target = data.select(args.split)?;
    let ap = ApConfig {
        damping: args.damping,
        max_iterations: args.max_iterations,
        convergence_window: args.convergence_window,
        jitter: None,
    };
    let (algorithm, preference_mode) = match args.algo {
        Algo::Dbscan => {
            let assignment = dbscan_cluster(&target, args.eps, args.min_pts)?;
            let output = ClusterOutput {
                algorithm: "dbscan",
                split: args.split,
                preference: None,
                search: None,
                assignment,
            };
            return write_json(&output, &args.out);
        }
        Algo::SgAp => ("sg-ap", PreferenceArg::Search),
        Algo::Ap => ("ap", args.preference),
    };
    let sim = compute_similarity(&target)?;
    let (prepared, preference, search) = match preference_mode {
        PreferenceArg::Median => {
            let s = uniform_preference(&sim, PreferenceMode::Median)?;
            let p = s.get(0, 0);
            (s, Some(p), None)
        }
        PreferenceArg::Min => {
            let s = uniform_preference(&sim, PreferenceMode::Min)?;
            let p = s.get(0, 0);
            (s, Some(p), None)
        }
        PreferenceArg::Adaptive => {
            let p = match args.p {
                Some(p) => p,
                None => median_off_diagonal(&sim),
            };
            (adaptive_preference(&sim, p)?, Some(p), None)
        }
        PreferenceArg::Search => {
            let result = search_on_labeled(&data, args.target_c, &ap)?;
            let p = result.p_star;
            (adaptive_preference(&sim, p)?, Some(p), Some(result))
        }
    };
    let output = ClusterOutput {
        algorithm,
        split: args.split,
        preference,
        search,
        assignment: ap_cluster(&prepared, &ap)?,
    };
    write_json(&output, &args.out)
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in args.flags.overrides() {
        config.set(key, value)?;
    }
    config.validate()?;
    let data = load_embeddings(&args.input)?;
    let labeled = data.select(Split::Labeled)?;
    let unlabeled = data.select(Split::Unlabeled)?;
    let query = data.select(Split::Query)?;
    let gallery = data.select(Split::Gallery)?;
    let run = run_pipeline(&labeled, &unlabeled, &query, &gallery, &config)?;

    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_json(&run.reports, &dir.join("reports.json"))?;
    let curves = dir.join("curves.csv");
    fs::write(&curves, curves_csv(&run.reports)).map_err(io_error(&curves))?;
    write_with(&dir.join("loss_trace.csv"), |out| {
        write_loss_trace(&run.loss_trace, out)
    })?;
    let state = &run.final_state;
    if let Some(threshold) = state.threshold() {
        write_with(&dir.join("threshold.csv"), |out| threshold.write_csv(out))?;
    }
    write_json(
        &parameter_header(state.embedder(), state.classifier()),
        &dir.join("model.json"),
    )?;
    write_with(&dir.join("embedder.csv"), |out| {
        write_matrix_csv(state.embedder().weight(), out)
    })?;
    write_with(&dir.join("classifier.csv"), |out| {
        write_matrix_csv(state.classifier().weight(), out)
    })?;
    save_embeddings(&state.embed(&data)?, &dir.join("embedded.csv"))
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = load_embeddings(&args.input)?;
    let mut report = MetricReport::default();
    if data.has_split(Split::Query) && data.has_split(Split::Gallery) {
        let retrieval = evaluate_retrieval(
            &data.select(Split::Query)?,
            &data.select(Split::Gallery)?,
            !args.same_camera,
        )?;
        report = report.with_retrieval(&retrieval);
    }
    if let Some(path) = &args.assignment {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let assignment: ClusterAssignment = serde_json::from_str(&text)?;
        assignment.validate()?;
        let rows = data.select(args.split)?;
        let truth = rows
            .ground_truth()
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| Error::input(format!("row {i} has no identity"))))
            .collect::<Result<Vec<u32>>>()?;
        report = report.with_clustering(&evaluate_clustering(&assignment, &truth)?);
    }
    write_json(&report, &args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Cluster(a) => cluster(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
