//! Settings from the command line and from TOML files, merged over presets.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cirboost::SchemeKind;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cir,
    Heston,
}

/// A scheme name usable from clap and serde.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scheme(pub SchemeKind);

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(Scheme).map_err(|e: cirboost::Error| e.to_string())
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.name())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// Every setting, each optional so that layers can be merged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Named parameter set applied before everything else
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Scheme name, or a comma-separated list for variance tables
    #[arg(long, value_delimiter = ',')]
    pub scheme: Option<Vec<Scheme>>,
    /// Estimator orders (1, 2 or 3)
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<usize>>,
    /// Coarse step counts
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Base sample count M1
    #[arg(long)]
    pub samples: Option<u64>,
    /// Target 95% half-width
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses every core)
    #[arg(long)]
    pub workers: Option<usize>,
    /// CSV output path; a JSON sidecar is written next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pilot sample count for variance estimates
    #[arg(long)]
    pub pilot: Option<u64>,
    /// Cost ratio of a correction sample to a base sample; measured when unset
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Write zero wall times to the CSV and never time kernels
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reproducible: Option<bool>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Maturity T
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Payoff exp(-lambda x) for the CIR model
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Put strike for the Heston model
    #[arg(long)]
    pub strike: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay!(base, top; preset, model, scheme, order, n, samples, eps, seed, workers, out, pilot, zeta,
                 reproducible, x0, a, k, sigma, horizon, s0, r, rho, lambda, strike)
    }

    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let base = match &self.preset {
            Some(name) => preset(name)?,
            None => Settings::default(),
        };
        let s = preset("cir-zero-start")?.overlay(base).overlay(self);
        let model = s.model.unwrap();
        let cfg = ExperimentConfig {
            preset: s.preset,
            model,
            schemes: s.scheme.unwrap().into_iter().map(|x| x.0).collect(),
            orders: s.order.unwrap(),
            ns: s.n.unwrap(),
            samples: s.samples,
            eps: s.eps,
            seed: s.seed.unwrap_or(1),
            workers: s.workers.unwrap_or(0),
            out: s.out,
            pilot: s.pilot.unwrap_or(100_000),
            zeta: s.zeta,
            reproducible: s.reproducible.unwrap_or(false),
            params: ModelParams {
                x0: s.x0.unwrap(),
                a: s.a.unwrap(),
                k: s.k.unwrap(),
                sigma: s.sigma.unwrap(),
                horizon: s.horizon.unwrap_or(1.0),
                s0: s.s0.unwrap_or(100.0),
                r: s.r.unwrap_or(0.0),
                rho: s.rho.unwrap_or(0.0),
            },
            lambda: s.lambda.unwrap_or(1.0),
            strike: s.strike.unwrap_or(100.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cir(x0: f64, a: f64, k: f64, sigma: f64, lambda: f64) -> Settings {
    Settings {
        model: Some(ModelKind::Cir),
        scheme: Some(vec![Scheme(SchemeKind::NvGaussian)]),
        order: Some(vec![1, 2, 3]),
        n: Some(vec![2, 3, 4, 5, 6]),
        x0: Some(x0),
        a: Some(a),
        k: Some(k),
        sigma: Some(sigma),
        horizon: Some(1.0),
        lambda: Some(lambda),
        ..Settings::default()
    }
}

fn heston(x0: f64, sigma: f64, rho: f64, strike: f64) -> Settings {
    Settings {
        model: Some(ModelKind::Heston),
        scheme: Some(vec![Scheme(SchemeKind::NvGaussian)]),
        order: Some(vec![1, 2, 3]),
        n: Some(vec![2, 3, 4, 5, 6]),
        x0: Some(x0),
        a: Some(x0),
        k: Some(1.0),
        sigma: Some(sigma),
        horizon: Some(1.0),
        s0: Some(100.0),
        r: Some(0.0),
        rho: Some(rho),
        strike: Some(strike),
        ..Settings::default()
    }
}

pub const PRESETS: [&str; 10] = [
    "cir-zero-start",
    "cir-mild",
    "cir-high-mean",
    "cir-variance",
    "cir-switching",
    "heston-put",
    "heston-calm",
    "heston-wild",
    "heston-variance",
    "heston-switching",
];

/// Named parameter sets.
pub fn preset(name: &str) -> Result<Settings, CliError> {
    let powers = Some(vec![2, 4, 8, 16, 32]);
    let s = match name {
        "cir-zero-start" => cir(0.0, 0.2, 0.5, 0.65, 10.0),
        "cir-mild" => cir(0.3, 0.4, 1.0, 0.4, 8.0),
        "cir-high-mean" => cir(10.0, 10.0, 1.0, 0.23, 1.0),
        "cir-variance" => Settings {
            n: powers,
            order: Some(vec![2]),
            scheme: Some(vec![
                Scheme(SchemeKind::NvGaussian),
                Scheme(SchemeKind::SwitchA),
                Scheme(SchemeKind::SwitchB),
            ]),
            ..cir(0.2, 0.2, 0.5, 0.5, 10.0)
        },
        "cir-switching" => Settings {
            n: powers,
            order: Some(vec![2]),
            scheme: Some(vec![Scheme(SchemeKind::SwitchA), Scheme(SchemeKind::SwitchB)]),
            ..cir(0.2, 0.2, 0.5, 1.5, 10.0)
        },
        "heston-put" => heston(0.25, 0.65, -0.3, 100.0),
        "heston-calm" => Settings { n: Some(vec![2, 3, 4, 5]), order: Some(vec![2]), ..heston(0.4, 0.2, -0.3, 100.0) },
        "heston-wild" => Settings { n: Some(vec![2, 3, 4, 5]), order: Some(vec![2]), ..heston(0.1, 0.63, -0.3, 100.0) },
        "heston-variance" => Settings {
            n: powers,
            order: Some(vec![2]),
            scheme: Some(SchemeKind::ALL.iter().map(|&k| Scheme(k)).collect()),
            ..heston(0.2, 0.5, -0.7, 105.0)
        },
        "heston-switching" => Settings {
            n: powers,
            order: Some(vec![2]),
            scheme: Some(vec![Scheme(SchemeKind::SwitchA), Scheme(SchemeKind::SwitchB), Scheme(SchemeKind::Exact)]),
            ..heston(0.2, 1.5, -0.7, 105.0)
        },
        _ => return Err(CliError::Config(format!("unknown preset '{name}'; known: {}", PRESETS.join(", ")))),
    };
    Ok(Settings { preset: Some(name.to_string()), ..s })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelParams {
    pub x0: f64,
    pub a: f64,
    pub k: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub s0: f64,
    pub r: f64,
    pub rho: f64,
}

/// Fully resolved settings of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub model: ModelKind,
    #[serde(serialize_with = "scheme_names")]
    pub schemes: Vec<SchemeKind>,
    pub orders: Vec<usize>,
    pub ns: Vec<usize>,
    pub samples: Option<u64>,
    pub eps: Option<f64>,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub pilot: u64,
    pub zeta: Option<f64>,
    pub reproducible: bool,
    pub params: ModelParams,
    pub lambda: f64,
    pub strike: f64,
}

fn scheme_names<S: Serializer>(v: &[SchemeKind], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|k| k.name()))
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.ns.is_empty() || self.ns.iter().any(|&n| n < 2) {
            return bad(format!("n values must be >= 2, got {:?}", self.ns));
        }
        if self.orders.is_empty() || self.orders.iter().any(|o| !(1..=3).contains(o)) {
            return bad(format!("orders must be 1, 2 or 3, got {:?}", self.orders));
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                return bad(format!("eps must be > 0, got {e}"));
            }
        }
        if self.samples == Some(0) {
            return bad("samples must be > 0".into());
        }
        if self.pilot < 100 {
            return bad(format!("pilot must be >= 100, got {}", self.pilot));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0) {
                return bad(format!("zeta must be > 0, got {z}"));
            }
        }
        Ok(())
    }

    /// Worker count with 0 mapped to the available cores.
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(usize::from).unwrap_or(1)
        }
    }

    /// The single scheme of commands that take one.
    pub fn single_scheme(&self) -> Result<SchemeKind, CliError> {
        match self.schemes.as_slice() {
            [k] => Ok(*k),
            _ => Err(CliError::Config(format!("this command takes one scheme, got {}", self.schemes.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = Settings { preset: Some(name.into()), ..Settings::default() }.resolve().unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(name));
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn later_layers_win() {
        let file =
            Settings::from_toml("preset = \"heston-put\"\nseed = 9\nn = [2, 4]\nscheme = \"exact\"").unwrap_err();
        assert!(matches!(file, CliError::Config(_)));
        let file = Settings::from_toml("preset = \"heston-put\"\nseed = 9\nn = [2, 4]\nscheme = [\"exact\"]").unwrap();
        let cli = Settings { seed: Some(3), ..Settings::default() };
        let cfg = file.overlay(cli).resolve().unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.ns, vec![2, 4]);
        assert_eq!(cfg.model, ModelKind::Heston);
        assert_eq!(cfg.schemes, vec![SchemeKind::Exact]);
        assert_eq!(cfg.params.rho, -0.3);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(Settings::from_toml("bogus = 1").is_err());
        for s in [
            Settings { n: Some(vec![1]), ..Settings::default() },
            Settings { order: Some(vec![4]), ..Settings::default() },
            Settings { eps: Some(0.0), ..Settings::default() },
            Settings { pilot: Some(5), ..Settings::default() },
        ] {
            assert!(s.resolve().is_err());
        }
    }

    #[test]
    fn toml_mirrors_every_flag() {
        let text = r#"
            preset = "cir-mild"
            model = "cir"
            scheme = ["switch-b"]
            order = [1, 2]
            n = [3]
            samples = 1000
            eps = 0.01
            seed = 4
            workers = 2
            out = "runs/x.csv"
            pilot = 500
            zeta = 2.5
            reproducible = true
            x0 = 0.1
            a = 0.3
            k = 0.7
            sigma = 0.2
            horizon = 2.0
            s0 = 90.0
            r = 0.01
            rho = -0.5
            lambda = 3.0
            strike = 95.0
        "#;
        let s = Settings::from_toml(text).unwrap();
        let back: Settings = toml::from_str(&toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
        let cfg = s.resolve().unwrap();
        assert_eq!(cfg.params.horizon, 2.0);
        assert!(cfg.reproducible);
    }
}
