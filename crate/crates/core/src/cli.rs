//! Command-line interface.
//!
//! Inputs are read and validated before any computation starts. Outputs
//! are rendered in memory and written only once everything has succeeded,
//! each through an atomic rename.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::eb::{eb_fit, EbFitResult, EbSettings};
use crate::error::{Error, Result};
use crate::gibbs::{compare_equation, DiscrepancyReport, GibbsSettings};
use crate::graph::{
    gen_precision, perturb_prior, precision_to_adjacency, sample_ggm, AdjacencyMatrix,
    DataMatrix, Topology, TopologySpec, DEFAULT_SUPPORT_TOL,
};
use crate::io;
use crate::selection::{
    edge_scores, mean_overlap, roc, split_repro, symmetrize, EdgeScoreMatrix, OverlapRow,
};
use crate::vb::{build_equations, fit_network, Hyperparameters, NetworkPosterior, VbSettings};

#[derive(Debug, Parser)]
#[command(
    name = "semnet",
    version,
    about = "Gene network reconstruction from regression equations with a prior network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate data from a band, cluster or hub network.
    Simulate(SimulateArgs),
    /// Fit all node-wise regressions and rank the edges.
    Fit(FitArgs),
    /// Compare variational and Gibbs posteriors of one equation.
    GibbsCheck(GibbsArgs),
    /// ROC curve of a ranked edge list against a true network.
    Roc(RocArgs),
    /// Top-k edge overlap between fits on random halves of the data.
    SplitRepro(SplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TopologyKind {
    Band,
    Cluster,
    Hub,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub topology: TopologyKind,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Band half-width.
    #[arg(long, default_value_t = 4)]
    pub bandwidth: usize,
    /// Band strength c; defaults to 0.4 / bandwidth.
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub block_size: usize,
    #[arg(long, default_value_t = 9)]
    pub spokes: usize,
    /// Off-diagonal value for cluster and hub topologies.
    #[arg(long)]
    pub value: Option<f64>,
    /// Also write prior.csv: the truth with this fraction of edges swapped
    /// for absent pairs (seeded with seed + 1).
    #[arg(long)]
    pub swap_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b1: f64,
    #[arg(long, default_value_t = 0.001)]
    pub a2: f64,
    #[arg(long, default_value_t = 0.001)]
    pub b2: f64,
}

impl HyperArgs {
    fn hyper(&self) -> Result<Hyperparameters> {
        let h = Hyperparameters {
            a0: self.a0,
            b0: self.b0,
            a1: self.a1,
            b1: self.b1,
            a2: self.a2,
            b2: self.b2,
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Numeric CSV, one column per node, optional header of node names.
    #[arg(long)]
    pub data: PathBuf,
    /// Symmetric 0/1 prior adjacency CSV; defaults to the complete graph.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Keep the hyperparameters fixed instead of estimating them.
    #[arg(long)]
    pub no_eb: bool,
    #[arg(long)]
    pub no_standardize: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub outer_max: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub outer_tol: f64,
}

impl ModelArgs {
    fn eb_settings(&self) -> Result<EbSettings> {
        if self.max_iter == 0 || self.rel_tol <= 0.0 || self.outer_tol <= 0.0 {
            return Err(Error::InvalidArgument(
                "max-iter must be positive and tolerances > 0".into(),
            ));
        }
        Ok(EbSettings {
            outer_max: self.outer_max,
            outer_tol: self.outer_tol,
            vb: VbSettings {
                max_iter: self.max_iter,
                rel_tol: self.rel_tol,
                ..VbSettings::default()
            },
            ..EbSettings::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Response node, 1-based.
    #[arg(long)]
    pub node: usize,
    #[arg(long, default_value_t = 100_000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// Edge list written by `fit`.
    #[arg(long)]
    pub edges: PathBuf,
    /// True adjacency CSV.
    #[arg(long)]
    pub truth: PathBuf,
    /// Data file whose header supplies the node names used in the edge list.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of top edges to compare; repeatable.
    #[arg(long = "k", required = true)]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 on usage errors, 1 on other failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let outputs = match &cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Fit(a) => fit(a)?,
        Command::GibbsCheck(a) => gibbs_check(a)?,
        Command::Roc(a) => roc_cmd(a)?,
        Command::SplitRepro(a) => split_cmd(a)?,
    };
    outputs.write()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn write(self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for (name, contents) in &self.files {
            io::write_atomic(&self.dir.join(name), contents.as_bytes())?;
        }
        Ok(())
    }
}

fn check_out_dir(dir: &Path) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "output path {} exists and is not a directory",
            dir.display()
        )));
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<Outputs> {
    check_out_dir(&a.out_dir)?;
    let topology = match a.topology {
        TopologyKind::Band => Topology::Band {
            bandwidth: a.bandwidth,
            strength: a.strength,
        },
        TopologyKind::Cluster => match a.value {
            Some(value) => Topology::Cluster {
                block_size: a.block_size,
                value,
            },
            None => Topology::cluster(a.block_size),
        },
        TopologyKind::Hub => match a.value {
            Some(value) => Topology::Hub {
                spokes: a.spokes,
                value,
            },
            None => Topology::hub(a.spokes),
        },
    };
    let omega = gen_precision(&TopologySpec::new(a.p, topology), a.seed)?;
    let truth = precision_to_adjacency(&omega, DEFAULT_SUPPORT_TOL);
    let prior = a
        .swap_fraction
        .map(|f| perturb_prior(&truth, f, a.seed.wrapping_add(1)))
        .transpose()?;
    let data = sample_ggm(&omega, a.n, a.seed)?;

    let mut out = Outputs::new(&a.out_dir);
    out.add("data.csv", io::format_data_csv(&data));
    out.add("truth.csv", io::format_adjacency_csv(&truth));
    out.add("precision.csv", io::format_data_csv(&DataMatrix::new(omega.matrix().clone())?));
    if let Some(prior) = prior {
        out.add("prior.csv", io::format_adjacency_csv(&prior));
    }
    Ok(out)
}

struct Inputs {
    data: DataMatrix,
    prior: AdjacencyMatrix,
    hyper: Hyperparameters,
    settings: EbSettings,
}

/// Reads data and prior; `standardize` overrides the flag when the caller
/// standardizes later (split halves).
fn load(m: &ModelArgs, standardize: bool) -> Result<Inputs> {
    let hyper = m.hyper.hyper()?;
    let settings = m.eb_settings()?;
    let data = io::read_data_csv(&m.data, standardize)?;
    let prior = match &m.prior {
        Some(path) => io::read_adjacency_csv(path, data.p())?,
        None => AdjacencyMatrix::complete(data.p()),
    };
    Ok(Inputs {
        data,
        prior,
        hyper,
        settings,
    })
}

enum Fitted {
    Fixed(NetworkPosterior),
    Eb(Box<EbFitResult>),
}

impl Fitted {
    fn network(&self) -> &NetworkPosterior {
        match self {
            Fitted::Fixed(n) => n,
            Fitted::Eb(r) => &r.network,
        }
    }

    fn hyper(&self) -> Hyperparameters {
        self.network().hyper
    }
}

fn fit_model(
    data: &DataMatrix,
    prior: &AdjacencyMatrix,
    hyper: &Hyperparameters,
    settings: &EbSettings,
    eb: bool,
) -> Result<Fitted> {
    if eb {
        Ok(Fitted::Eb(Box::new(eb_fit(data, prior, hyper, settings)?)))
    } else {
        Ok(Fitted::Fixed(fit_network(data, prior, hyper, &settings.vb)?))
    }
}

fn ranked_scores(network: &NetworkPosterior) -> Result<EdgeScoreMatrix> {
    Ok(symmetrize(&edge_scores(network)?))
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    p: usize,
    prior_edges: usize,
    standardized: bool,
    empirical_bayes: bool,
    initial: Hyperparameters,
    #[serde(rename = "final")]
    final_hyper: Hyperparameters,
    prior_mean_tau0: f64,
    prior_mean_tau1: f64,
    ratio: f64,
    outer_iterations: usize,
    converged: bool,
    total_elbo: f64,
    hyper_trace: Vec<Hyperparameters>,
    elbo_trace: Vec<f64>,
}

impl FitReport {
    fn new(inputs: &Inputs, standardized: bool, fitted: &Fitted) -> Self {
        let network = fitted.network();
        let final_hyper = fitted.hyper();
        let (hyper_trace, elbo_trace, outer_iterations, converged) = match fitted {
            Fitted::Fixed(n) => (vec![inputs.hyper], vec![n.total_elbo], 0, true),
            Fitted::Eb(r) => (
                r.hyper_trace.clone(),
                r.elbo_trace.clone(),
                r.outer_iterations,
                r.converged,
            ),
        };
        FitReport {
            n: inputs.data.n(),
            p: inputs.data.p(),
            prior_edges: inputs.prior.edge_count(),
            standardized,
            empirical_bayes: matches!(fitted, Fitted::Eb(_)),
            initial: inputs.hyper,
            final_hyper,
            prior_mean_tau0: final_hyper.prior_mean_tau0(),
            prior_mean_tau1: final_hyper.prior_mean_tau1(),
            ratio: final_hyper.prior_mean_tau0() / final_hyper.prior_mean_tau1(),
            outer_iterations,
            converged,
            total_elbo: network.total_elbo,
            hyper_trace,
            elbo_trace,
        }
    }
}

fn fit(a: &FitArgs) -> Result<Outputs> {
    check_out_dir(&a.out_dir)?;
    let standardize = !a.model.no_standardize;
    let inputs = load(&a.model, standardize)?;
    let fitted = fit_model(
        &inputs.data,
        &inputs.prior,
        &inputs.hyper,
        &inputs.settings,
        !a.model.no_eb,
    )?;
    let scores = ranked_scores(fitted.network())?;
    let mut out = Outputs::new(&a.out_dir);
    out.add(
        "edges.tsv",
        io::format_edge_list(&scores, &inputs.prior, &inputs.data.labels())?,
    );
    out.add(
        "hyper.json",
        io::format_json(&FitReport::new(&inputs, standardize, &fitted))?,
    );
    Ok(out)
}

#[derive(Serialize)]
struct GibbsReport {
    node: usize,
    label: String,
    hyperparameters: Hyperparameters,
    settings: GibbsSettings,
    report: DiscrepancyReport,
}

fn gibbs_check(a: &GibbsArgs) -> Result<Outputs> {
    check_out_dir(&a.out_dir)?;
    let settings = GibbsSettings {
        n_iter: a.n_iter,
        burnin: a.burnin,
        thin: a.thin,
        seed: a.seed,
    };
    let inputs = load(&a.model, !a.model.no_standardize)?;
    let p = inputs.data.p();
    if a.node == 0 || a.node > p {
        return Err(Error::InvalidArgument(format!(
            "node {} outside 1..={p}",
            a.node
        )));
    }
    let i = a.node - 1;
    let hyper = if a.model.no_eb {
        inputs.hyper
    } else {
        eb_fit(&inputs.data, &inputs.prior, &inputs.hyper, &inputs.settings)?.final_hyper
    };
    let equations = build_equations(&inputs.data, &inputs.prior)?;
    let cmp = compare_equation(&equations[i], &hyper, &inputs.settings.vb, &settings)?;
    let report = GibbsReport {
        node: a.node,
        label: inputs.data.labels()[i].clone(),
        hyperparameters: hyper,
        settings,
        report: cmp.report,
    };
    let mut out = Outputs::new(&a.out_dir);
    out.add("discrepancy.json", io::format_json(&report)?);
    Ok(out)
}

fn roc_cmd(a: &RocArgs) -> Result<Outputs> {
    check_out_dir(&a.out_dir)?;
    let truth = io::read_adjacency_csv_any(&a.truth)?;
    let p = truth.p();
    let labels = match &a.data {
        Some(path) => {
            let data = io::read_data_csv(path, false)?;
            if data.p() != p {
                return Err(Error::Dimension(format!(
                    "data have p = {}, truth has p = {p}",
                    data.p()
                )));
            }
            data.labels()
        }
        None => (1..=p).map(|i| i.to_string()).collect(),
    };
    let rows = io::read_edge_list(&a.edges, &labels)?;
    let scores = io::edge_rows_to_scores(p, &rows)?;
    let curve = roc(&scores, &truth)?;
    let points: Vec<Vec<String>> = curve
        .fpr
        .iter()
        .zip(&curve.tpr)
        .map(|(f, t)| vec![format!("{f:.6}"), format!("{t:.6}")])
        .collect();
    let mut out = Outputs::new(&a.out_dir);
    out.add("roc.csv", io::format_csv_table(&["fpr", "tpr"], &points));
    out.add(
        "auc.csv",
        io::format_csv_table(&["auc"], &[vec![format!("{:.6}", curve.auc)]]),
    );
    Ok(out)
}

fn split_cmd(a: &SplitArgs) -> Result<Outputs> {
    check_out_dir(&a.out_dir)?;
    let standardize = !a.model.no_standardize;
    let inputs = load(&a.model, false)?;
    let eb = !a.model.no_eb;
    let rows: Vec<OverlapRow> = split_repro(&inputs.data, &a.k, a.replicates, a.seed, |half| {
        let half = if standardize {
            half.standardized()?
        } else {
            half.clone()
        };
        let fitted = fit_model(&half, &inputs.prior, &inputs.hyper, &inputs.settings, eb)?;
        ranked_scores(fitted.network())
    })?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.replicate.to_string(), r.k.to_string(), r.overlap.to_string()])
        .collect();
    let summary: Vec<Vec<String>> = mean_overlap(&rows)
        .into_iter()
        .map(|(k, m)| vec![k.to_string(), format!("{m:.6}")])
        .collect();
    let mut out = Outputs::new(&a.out_dir);
    out.add(
        "overlap.csv",
        io::format_csv_table(&["replicate", "k", "overlap"], &table),
    );
    out.add(
        "overlap_summary.csv",
        io::format_csv_table(&["k", "mean_overlap"], &summary),
    );
    Ok(out)
}
