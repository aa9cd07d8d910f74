//! Command-line flags for the `iauc` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::data::{LabelColumn, LabelScheme};
use crate::experiment::{DatasetSource, ExperimentConfig};
use crate::objective::{Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

/// Anomaly detection with inexact anomaly labels: trains autoencoder scorers
/// over repeated random splits and reports test AUC.
#[derive(Debug, Parser)]
#[command(name = "iauc", version, arg_required_else_help = true)]
pub struct Cli {
    /// Data source.
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,

    /// CSV file with numeric attributes and a label column.
    #[arg(long, value_name = "PATH", required_if_eq("dataset", "csv"))]
    pub csv: Option<PathBuf>,

    /// Label column: header name, zero-based index, or "last".
    #[arg(long, value_name = "NAME", default_value = "last")]
    pub label_col: String,

    /// Label value marking an anomaly (repeatable; replaces the defaults).
    #[arg(long, value_name = "VALUE")]
    pub anomaly_value: Vec<String>,

    /// Label value marking a normal instance (repeatable; replaces the defaults).
    #[arg(long, value_name = "VALUE")]
    pub normal_value: Vec<String>,

    /// Training mode; repeat for several. Defaults to all four.
    #[arg(long = "mode", value_name = "MODE", value_parser = ["proposed", "ae", "mil", "sae"])]
    pub modes: Vec<String>,

    /// Fixed lambda instead of a validation search.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,

    /// Comma-separated lambda values to search.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda_grid: Option<Vec<f64>>,

    /// Number of random train/validation/test splits.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,

    /// Base seed; repeat r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Maximum training epochs.
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,

    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long, default_value_t = 100)]
    pub patience: usize,

    /// Directory for summary.json and the CSV files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Cli {
    pub fn into_config(self) -> ExperimentConfig {
        let source = match self.dataset {
            DatasetKind::Synthetic => DatasetSource::Synthetic,
            DatasetKind::Csv => {
                let mut labels = LabelScheme::default();
                if !self.anomaly_value.is_empty() {
                    labels.anomaly = self.anomaly_value;
                }
                if !self.normal_value.is_empty() {
                    labels.normal = self.normal_value;
                }
                DatasetSource::Csv {
                    path: self.csv.expect("clap requires --csv for csv datasets"),
                    label_column: LabelColumn::parse(&self.label_col),
                    labels,
                }
            }
        };
        let mut modes: Vec<Mode> = self
            .modes
            .iter()
            .map(|m| m.parse().expect("clap restricts mode values"))
            .collect();
        modes.dedup();
        if modes.is_empty() {
            modes = Mode::ALL.to_vec();
        }
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            max_epochs: self.epochs,
            patience: (self.patience > 0).then_some(self.patience),
            lambda: self.lambda.unwrap_or(defaults.lambda),
            lambda_grid: self.lambda_grid.unwrap_or(defaults.lambda_grid.clone()),
            ..defaults
        };
        ExperimentConfig {
            source,
            n_repeats: self.repeats,
            base_seed: self.seed,
            modes,
            fixed_lambda: self.lambda,
            train,
            output_dir: self.out,
            ..ExperimentConfig::default()
        }
    }
}

/// Parses `argv` (including the program name) into an experiment config.
pub fn cli_parse<I, T>(argv: I) -> Result<ExperimentConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Ok(Cli::try_parse_from(argv)?.into_config())
}
