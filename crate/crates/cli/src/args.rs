use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hpfa", version, about = "Topic models with local topics and topic-presence priors")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores. Results do not
    /// depend on this setting.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, validate and filter a corpus.
    Ingest(IngestArgs),
    /// Fit a model and write posterior samples.
    Fit(FitArgs),
    /// Cross-validated perplexity over a grid of K and variants.
    Perplexity(PerplexityArgs),
    /// Topic, presence and covariate reports from fitted samples.
    Report(ReportArgs),
    /// Simulate a corpus from the generative model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Pages as JSON lines `{"site_id", "page_id", "tokens": [...]}`.
    #[arg(long)]
    pub pages: PathBuf,
    /// Site covariates CSV: `site_id,region` or numeric columns.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value` settings file using the flag names below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drop words found on fewer pages [default: 20]; 0 disables.
    #[arg(long)]
    pub min_pages_per_word: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    pub min_words_per_page: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    pub max_words_per_page: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    pub max_pages_per_site: Option<usize>,
    /// Also write this many random held-out splits [default: 0].
    #[arg(long)]
    pub folds: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Model and sampler settings shared by `fit` and `perplexity`. Values given
/// here override the `--config` file.
#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// `key=value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `full` keeps Φ, Ψ and θ of every draw, `summary` only their means.
    #[arg(long)]
    pub storage: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Presence prior code: aa, ea, sa, ae, ee or se [default: aa].
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub local_topics: bool,
    /// Global topics [default: 25].
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PerplexityArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated K values [default: 25,50,100,200,300,400,500,600].
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Comma-separated variant codes such as `sa-lt,aa` [default: sa-lt].
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Average per-sample predictive probabilities instead of pooling.
    #[arg(long)]
    pub per_sample: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Samples file written by `fit`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Report only this topic.
    #[arg(long)]
    pub topic: Option<usize>,
    /// Keep only topics passing the presence-range and contrast filters.
    #[arg(long)]
    pub select: bool,
    #[arg(long, default_value_t = 5)]
    pub top_words: usize,
    /// Probability threshold for the high-probability word check.
    #[arg(long, default_value_t = 0.1)]
    pub word_threshold: f64,
    /// Share of draws with the topic absent for a site to count as missing.
    #[arg(long, default_value_t = 0.975)]
    pub missing_threshold: f64,
    #[arg(long, default_value_t = 20.0)]
    pub min_sites: f64,
    #[arg(long, default_value_t = 0.815)]
    pub max_site_fraction: f64,
    /// Fail unless the samples carry covariate contrasts.
    #[arg(long)]
    pub contrasts: bool,
    /// Also list local-topic words for these site ids.
    #[arg(long, value_delimiter = ',')]
    pub local_sites: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Model settings file; also accepts the flag names below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Variant code [default: sa-lt].
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub local_topics: bool,
    /// [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub sites: Option<usize>,
    /// Pages per site [default: 10].
    #[arg(long)]
    pub pages: Option<usize>,
    /// Exposure standing in for page length in the topic-weight prior
    /// [default: 100].
    #[arg(long)]
    pub tokens: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Rate `r_k` of every topic [default: one over the number of topics,
    /// so pages average `--tokens` tokens when every topic is present].
    #[arg(long, conflicts_with = "draw_r")]
    pub r: Option<f64>,
    /// Draw `r0` and the rates from their priors instead.
    #[arg(long)]
    pub draw_r: bool,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}
