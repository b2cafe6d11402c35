use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "concord", version, about = "Run multi-round annotation campaigns and evaluate the resulting classifiers")]
pub struct Cli {
    /// Event store directory. Overrides the config file.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Trajectory,
    MinValLoss,
    MaxF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HoldoutModeArg {
    AsTest,
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    None,
    Casefold,
    StripDiacritics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReviewActionArg {
    Confirm,
    Amend,
    Escalate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a campaign and issue annotator tokens.
    Init(InitArgs),
    /// Import items from a JSONL file into a campaign's pool.
    Import(ImportArgs),
    /// Draw a seeded uniform sample from a JSONL corpus.
    Sample(SampleArgs),
    /// Print geometric round sizes.
    Plan(PlanArgs),
    /// Open the next round and assign its items.
    Assign(AssignArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Record one annotation or review response.
    Submit(SubmitArgs),
    /// Close a round and print its summary.
    CloseRound(CloseRoundArgs),
    /// Per-round or cumulative agreement.
    Agreement(AgreementArgs),
    /// Final labels for every annotated item.
    Aggregate(AggregateArgs),
    /// Carve the gold holdout from the labelled items.
    Holdout(HoldoutArgs),
    /// Train/test split statistics.
    Split(SplitArgs),
    /// Write the dataset splits and manifest.
    Export(ExportArgs),
    /// Metrics for one prediction file against gold labels.
    Evaluate(EvaluateArgs),
    /// Side-by-side comparison of several models.
    Compare(CompareArgs),
    /// Choose an epoch from a training log.
    SelectEpoch(SelectEpochArgs),
}

#[derive(Debug, Args)]
pub struct CampaignArg {
    /// Campaign id. Falls back to the config file.
    #[arg(long)]
    pub campaign: Option<String>,
}

#[derive(Debug, Args)]
pub struct FormatArg {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    /// Comma-separated annotator ids.
    #[arg(long, value_delimiter = ',')]
    pub annotators: Vec<String>,
    /// Labelling schema as JSON; defaults to the three-level scale with the
    /// five polarization flags.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub annotators_per_item: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Store a round plan: total items, rounds and growth factor.
    #[arg(long, num_args = 3, value_names = ["TOTAL", "ROUNDS", "GROWTH"])]
    pub plan: Option<Vec<String>>,
    /// Show annotator ids in deliberation views.
    #[arg(long)]
    pub no_anonymize: bool,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub total: usize,
    #[arg(long)]
    pub rounds: usize,
    #[arg(long)]
    pub growth: f64,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[arg(long)]
    pub seed: u64,
    /// Fresh items for this round; defaults to the stored plan.
    #[arg(long)]
    pub size: Option<usize>,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    /// Administrator bearer token.
    #[arg(long, env = "CONCORD_ADMIN_TOKEN", hide_env_values = true)]
    pub admin_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[arg(long)]
    pub annotator: String,
    #[arg(long)]
    pub item: String,
    #[arg(long)]
    pub round: u32,
    #[arg(long = "class")]
    pub class_value: u32,
    #[arg(long, value_delimiter = ',')]
    pub flags: Vec<String>,
    #[arg(long)]
    pub mark_for_review: bool,
    /// Submit as a response to a broadcast review.
    #[arg(long, value_enum)]
    pub review: Option<ReviewActionArg>,
    #[arg(long)]
    pub key: String,
}

#[derive(Debug, Args)]
pub struct CloseRoundArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[arg(long)]
    pub round: u32,
    /// Expire unfinished assignments instead of refusing to close.
    #[arg(long)]
    pub expire_pending: bool,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    /// One round; cumulative across rounds when omitted.
    #[arg(long)]
    pub round: Option<u32>,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitOptions {
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, value_enum, default_value_t = HoldoutModeArg::AsTest)]
    pub holdout_mode: HoldoutModeArg,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[command(flatten)]
    pub split: SplitOptions,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub campaign: CampaignArg,
    #[command(flatten)]
    pub split: SplitOptions,
    #[arg(long)]
    pub out: PathBuf,
    /// Include consensus flags in each record.
    #[arg(long)]
    pub flags: bool,
    /// Also write CSV copies.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Score threshold for probabilistic predictions.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction files, as `NAME=PATH` or a bare path named by its file stem.
    #[arg(long)]
    pub pred: Vec<String>,
    /// Keyword list, one per line; adds a keyword-baseline row computed on
    /// the gold texts.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Casefold)]
    pub normalization: NormalizationArg,
    /// Apply Arabic letter-variant folding to keywords and texts.
    #[arg(long)]
    pub arabic_folding: bool,
    /// Published reference rows (CSV) shown alongside computed rows.
    #[arg(long)]
    pub reported: Option<PathBuf>,
    #[arg(long, default_value = "Positive")]
    pub positive_label: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct SelectEpochArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, value_enum, default_value_t = Policy::Trajectory)]
    pub policy: Policy,
    #[command(flatten)]
    pub format: FormatArg,
}
