//! Command-line flags and the matching `--config` file sections.
//!
//! Every option struct is both a clap argument group and a TOML table. A flag
//! `--k-range` corresponds to the key `k_range` in the command's section;
//! explicit flags win over the file, and the file wins over built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use metric_prefs::simulation::ChoiceMode;
use serde::Deserialize;

use crate::CliError;

pub const BUNDLE_ENV: &str = "METRIC_PREFS_BUNDLE";

#[derive(Debug, Parser)]
#[command(name = "metric-prefs", version, about = "Metric preference study pipeline")]
pub struct Cli {
    /// TOML file with one table per subcommand; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the summary as one JSON object.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded session plan and add it to the bundle.
    GenSession(WithBundle<GenSessionOpts>),
    /// Simulate respondents with known preferences into a new bundle.
    Simulate(WithBundle<SimulateOpts>),
    /// Fit a preference vector for every included respondent.
    Fit(WithBundle<FitOpts>),
    /// Cluster the normalized fitted preferences.
    Cluster(WithBundle<ClusterOpts>),
    /// Build the demographic lift table from clusters and profiles.
    Lift(WithBundle<LiftOpts>),
    /// Summarize a bundle.
    Report(WithBundle<NoOpts>),
    /// Check a bundle for schema and referential-integrity violations.
    Validate(WithBundle<NoOpts>),
    /// Run the survey service.
    Serve(ServeOpts),
}

#[derive(Debug, Args)]
pub struct WithBundle<T: Args> {
    /// Bundle directory.
    #[arg(long, env = BUNDLE_ENV)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub opts: T,
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoOpts {}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct GenSessionOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub applicants: Option<usize>,
    #[arg(long)]
    pub differing_rows: Option<usize>,
}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct SimulateOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub respondents_per_archetype: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub applicants: Option<usize>,
    #[arg(long)]
    pub differing_rows: Option<usize>,
    /// stochastic or deterministic
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ChoiceMode>,
    /// JSON file with a list of archetypes; defaults to the built-in five.
    #[arg(long)]
    pub archetypes: Option<PathBuf>,
}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct FitOpts {
    /// Ridge penalty λ.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Gradient-norm tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct ClusterOpts {
    /// "auto" or a fixed number of clusters.
    #[arg(long)]
    pub k: Option<KArg>,
    /// Range searched by --k auto, as MIN,MAX.
    #[arg(long)]
    pub k_range: Option<KRange>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct LiftOpts {
    /// Low and high lift thresholds, as LOW,HIGH.
    #[arg(long)]
    pub thresholds: Option<Thresholds>,
    /// JSON file with attribute binarizations; defaults to the built-in set.
    #[arg(long)]
    pub binarizations: Option<PathBuf>,
}

#[derive(Debug, Args, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct ServeOpts {
    /// Listen address.
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub applicants: Option<usize>,
    #[arg(long)]
    pub differing_rows: Option<usize>,
    /// Text file replacing the default consent form.
    #[arg(long)]
    pub consent_file: Option<PathBuf>,
    /// Text file replacing the default scenario text.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ChoiceMode, String> {
    match s {
        "stochastic" => Ok(ChoiceMode::Stochastic),
        "deterministic" => Ok(ChoiceMode::Deterministic),
        _ => Err(format!("expected stochastic or deterministic, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum KArg {
    Auto,
    Fixed(usize),
}

impl FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KArg::Fixed(k)),
            _ => Err(format!("expected \"auto\" or a positive integer, got {s:?}")),
        }
    }
}

fn pair<T: FromStr>(s: &str, what: &str) -> Result<(T, T), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(format!("expected {what}, got {s:?}")),
        },
        _ => Err(format!("expected {what}, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (min, max) = pair(s, "MIN,MAX")?;
        if min < 1 || min > max {
            return Err(format!("k range needs 1 <= MIN <= MAX, got {s:?}"));
        }
        Ok(KRange { min, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl FromStr for Thresholds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (low, high) = pair(s, "LOW,HIGH")?;
        Ok(Thresholds { low, high })
    }
}

macro_rules! string_conversions {
    ($($t:ty),*) => {$(
        impl TryFrom<String> for $t {
            type Error = String;

            fn try_from(s: String) -> Result<Self, String> {
                s.parse()
            }
        }
    )*};
}

string_conversions!(KArg, KRange, Thresholds);

impl fmt::Display for KRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.min, self.max)
    }
}

/// Field-wise `flag.or(file)`.
pub trait Overlay {
    fn overlay(self, file: Self) -> Self;
}

macro_rules! overlay {
    ($t:ty { $($f:ident),* }) => {
        impl Overlay for $t {
            #[allow(unused_variables)]
            fn overlay(self, file: Self) -> Self {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

overlay!(NoOpts {});
overlay!(GenSessionOpts { seed, tasks, applicants, differing_rows });
overlay!(SimulateOpts { seed, respondents_per_archetype, tasks, applicants, differing_rows, mode, archetypes });
overlay!(FitOpts { ridge, max_iterations, tolerance });
overlay!(ClusterOpts { k, k_range, seed });
overlay!(LiftOpts { thresholds, binarizations });
overlay!(ServeOpts { addr, seed, tasks, applicants, differing_rows, consent_file, scenario_file });

/// Contents of a `--config` file.
#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub gen_session: GenSessionOpts,
    #[serde(default)]
    pub simulate: SimulateOpts,
    #[serde(default)]
    pub fit: FitOpts,
    #[serde(default)]
    pub cluster: ClusterOpts,
    #[serde(default)]
    pub lift: LiftOpts,
    #[serde(default)]
    pub serve: ServeOpts,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let flag = FitOpts { ridge: Some(0.5), ..FitOpts::default() };
        let file = FitOpts { ridge: Some(0.1), max_iterations: Some(7), tolerance: None };
        let merged = flag.overlay(file);
        assert_eq!(merged.ridge, Some(0.5));
        assert_eq!(merged.max_iterations, Some(7));
        assert_eq!(merged.tolerance, None);
    }

    #[test]
    fn config_keys_mirror_flags() {
        let c: ConfigFile = toml::from_str(
            "bundle = \"b\"\n[cluster]\nk = \"auto\"\nk_range = \"2,6\"\nseed = 3\n[lift]\nthresholds = \"0.8,1.2\"\n[simulate]\nmode = \"deterministic\"\n",
        )
        .unwrap();
        assert_eq!(c.cluster.k, Some(KArg::Auto));
        assert_eq!(c.cluster.k_range, Some(KRange { min: 2, max: 6 }));
        assert_eq!(c.lift.thresholds, Some(Thresholds { low: 0.8, high: 1.2 }));
        assert_eq!(c.simulate.mode, Some(ChoiceMode::Deterministic));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[fit]\nlambda = 1.0\n").is_err());
    }

    #[test]
    fn value_parsers() {
        assert_eq!("7".parse::<KArg>().unwrap(), KArg::Fixed(7));
        assert!("0".parse::<KArg>().is_err());
        assert!("5,2".parse::<KRange>().is_err());
        assert!("0.75".parse::<Thresholds>().is_err());
    }
}
