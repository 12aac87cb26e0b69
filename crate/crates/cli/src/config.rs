//! Experiment configuration: JSON file, embedded defaults, `PMQDS_` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pmqds::diffusion::TestFunction;
use pmqds::green_kubo::Observable;
use pmqds::mc::InitialMeasure;
use pmqds::schedule::{CurveKind, ParameterCurve};
use pmqds::GridDensity;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const ENV_PREFIX: &str = "PMQDS_";

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Invalid { field: String, message: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid { field, message } => write!(f, "invalid config field `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Constant { value: f64 },
    Linear { start: f64, end: f64 },
    Cosine { low: f64, high: f64 },
    Table { knots: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Identity,
    Affine { slope: f64, intercept: f64 },
    Sine { amplitude: f64, frequency: u32 },
    Coboundary { frequency: u32, alpha: f64 },
    Table { knots: Vec<(f64, f64)> },
}

/// A nonnegative density with a weight; `power_law` is `(1 - a) x^{-a}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform { weight: f64 },
    PowerLaw { exponent: f64, weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Lebesgue,
    Density {
        density: DensitySpec,
    },
    SignedPair {
        positive: DensitySpec,
        negative: DensitySpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub curve: CurveSpec,
    pub beta_star: f64,
    pub eta: f64,
    pub observable: ObservableSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    /// Run used for the second-moment and law comparisons.
    pub law_run: String,
    /// Run used for tightness, decorrelation, martingale and centering tests.
    pub tightness_run: String,
    pub moment2_bias_budget: f64,
    pub ks_threshold: f64,
    pub envelope_slack: f64,
    pub increment_slack: f64,
    pub tightness_time: f64,
    pub deltas: Vec<f64>,
    pub decorrelation_s: f64,
    pub decorrelation_t: f64,
    pub decorrelation_bump_radius: f64,
    pub martingale_times: [f64; 3],
    pub martingale_bump_radius: f64,
    pub partition_times: [f64; 2],
    pub partition_samples: usize,
    pub ergodic_samples: usize,
    pub covariance_grid_points: usize,
    pub srb_alphas: Vec<f64>,
    pub cone_alphas: Vec<f64>,
    pub memory_loss_beta_star: f64,
    pub memory_loss_window: [usize; 2],
    pub preimage_alphas: Vec<f64>,
    pub perturbation_alpha: f64,
    pub perturbation_betas: Vec<f64>,
    /// Exponent of `beta - alpha` in the SRB continuity envelope; `None` means `(1 - beta_*)^2 / 3`.
    pub perturbation_exponent: Option<f64>,
    pub coboundary_alpha: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            law_run: "doubling".into(),
            tightness_run: "intermittent".into(),
            moment2_bias_budget: 0.0,
            ks_threshold: 0.02,
            envelope_slack: 2.0,
            increment_slack: 2.0,
            tightness_time: 0.4,
            deltas: (2..=7).map(|k| 0.5f64.powi(k)).collect(),
            decorrelation_s: 0.25,
            decorrelation_t: 0.75,
            decorrelation_bump_radius: 1.0,
            martingale_times: [0.2, 0.4, 0.8],
            martingale_bump_radius: 1.5,
            partition_times: [0.2, 0.4],
            partition_samples: 1000,
            ergodic_samples: 2000,
            covariance_grid_points: 64,
            srb_alphas: vec![0.0, 0.1, 0.25, 0.4],
            cone_alphas: vec![0.1, 0.25, 0.4],
            memory_loss_beta_star: 0.25,
            memory_loss_window: [32, 512],
            preimage_alphas: vec![0.25, 0.5],
            perturbation_alpha: 0.1,
            perturbation_betas: vec![0.3, 0.2, 0.15, 0.12, 0.11],
            perturbation_exponent: None,
            coboundary_alpha: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: PathBuf,
    pub ulam_bins: usize,
    pub srb_tolerance: f64,
    pub truncation: usize,
    pub ladder: Vec<usize>,
    pub paths: usize,
    pub limit_paths: usize,
    pub grid_points: usize,
    pub extra_times: Vec<f64>,
    /// Needed for `1/3 <= beta_star < 1/2`, where tightness is assumed rather than proved.
    pub allow_assumed_tightness: bool,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub runs: BTreeMap<String, RunConfig>,
    pub battery: BatteryConfig,
    /// Write full binary ensembles during `verify` (large).
    pub write_ensembles: bool,
    /// Empty selects every test.
    pub tests: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut runs = BTreeMap::new();
        runs.insert(
            "doubling".to_string(),
            RunConfig {
                curve: CurveSpec::Constant { value: 0.0 },
                beta_star: 0.25,
                eta: 1.0,
                observable: ObservableSpec::Identity,
            },
        );
        runs.insert(
            "intermittent".to_string(),
            RunConfig {
                curve: CurveSpec::Cosine { low: 0.05, high: 0.25 },
                beta_star: 0.25,
                eta: 1.0,
                observable: ObservableSpec::Identity,
            },
        );
        let mut extra_times = vec![0.2, 0.4, 0.8];
        extra_times.extend((2..=7).map(|k| 0.4 + 0.5f64.powi(k)));
        Self {
            seed: 20_240_601,
            threads: None,
            output: PathBuf::from("runs/default"),
            ulam_bins: 1 << 14,
            srb_tolerance: 1e-13,
            truncation: 500,
            ladder: vec![1 << 10, 1 << 12, 1 << 14],
            paths: 100_000,
            limit_paths: 100_000,
            grid_points: 64,
            extra_times,
            allow_assumed_tightness: false,
            mu: MeasureSpec::Lebesgue,
            nu: MeasureSpec::SignedPair {
                positive: DensitySpec::PowerLaw {
                    exponent: 0.25,
                    weight: 2.0,
                },
                negative: DensitySpec::Uniform { weight: 1.0 },
            },
            runs,
            battery: BatteryConfig::default(),
            write_ensembles: false,
            tests: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, overlaid by the file (if any), then by `PMQDS_*` variables from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(path) = path {
            let text =
                std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
            merge(&mut value, file);
            if let Err(e) = serde_json::from_value::<Self>(value.clone()) {
                return Err(ConfigError::Parse(format!(
                    "{}: {}",
                    path.display(),
                    positioned(&text, e)
                )));
            }
        }
        apply_env(&mut value, env)?;
        let config: Self =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(format!("environment override: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::default()).expect("defaults serialize");
        let file: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut value, file);
        let config: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(positioned(text, e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&Self::default()).expect("defaults serialize")
    }

    /// SHA-256 of the canonical JSON form, excluding fields that do not affect numbers.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = None;
        canonical.output = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ulam_bins < 2 {
            return Err(invalid("ulam_bins", "at least 2 bins are required"));
        }
        if !(self.srb_tolerance > 0.0) {
            return Err(invalid("srb_tolerance", "must be positive"));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[1] <= w[0]) || self.ladder[0] == 0 {
            return Err(invalid(
                "ladder",
                "must be a nonempty strictly increasing list of positive levels",
            ));
        }
        if self.paths < 2 || self.limit_paths < 2 {
            return Err(invalid("paths", "at least 2 paths are required"));
        }
        if self.grid_points == 0 {
            return Err(invalid("grid_points", "must be positive"));
        }
        if let Some(t) = self.extra_times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(invalid("extra_times", format!("{t} lies outside [0, 1]")));
        }
        if let Some(e) = self.battery.perturbation_exponent.filter(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(invalid(
                "battery.perturbation_exponent",
                format!("{e} lies outside (0, 1]"),
            ));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be positive"));
        }
        if self.runs.is_empty() {
            return Err(invalid("runs", "at least one run is required"));
        }
        for (name, run) in &self.runs {
            let field = |f: &str| format!("runs.{name}.{f}");
            if !(run.beta_star > 0.0) {
                return Err(invalid(field("beta_star"), "must be positive"));
            }
            if run.beta_star >= 0.5 {
                return Err(invalid(
                    field("beta_star"),
                    format!(
                        "{} violates beta_star < 1/2, required by the functional limit theorem for the fluctuations",
                        run.beta_star
                    ),
                ));
            }
            if run.beta_star >= 1.0 / 3.0 && !self.allow_assumed_tightness {
                return Err(invalid(
                    field("beta_star"),
                    format!(
                        "{} is in [1/3, 1/2), where tightness is assumed rather than proved; set allow_assumed_tightness = true",
                        run.beta_star
                    ),
                ));
            }
            run.curve(name)?;
            run.observable(name)?;
            self.measure(&self.mu, "mu", run.beta_star)?;
            self.measure(&self.nu, "nu", run.beta_star)?;
        }
        let b = &self.battery;
        for (field, run) in [
            ("battery.law_run", &b.law_run),
            ("battery.tightness_run", &b.tightness_run),
        ] {
            if !self.runs.contains_key(run) {
                return Err(invalid(field, format!("unknown run `{run}`")));
            }
        }
        let grid = self.grid();
        let on_grid = |t: f64| grid.iter().any(|g| (g - t).abs() <= 1e-12);
        let mut required = vec![
            ("battery.tightness_time", b.tightness_time),
            ("battery.decorrelation_s", b.decorrelation_s),
            ("battery.decorrelation_t", b.decorrelation_t),
            ("battery.partition_times", b.partition_times[0]),
            ("battery.partition_times", b.partition_times[1]),
        ];
        required.extend(b.martingale_times.iter().map(|t| ("battery.martingale_times", *t)));
        required.extend(b.deltas.iter().map(|d| ("battery.deltas", b.tightness_time + d)));
        for (field, t) in required {
            if !on_grid(t) {
                return Err(invalid(
                    field,
                    format!("time {t} is not on the path grid; add it to extra_times"),
                ));
            }
        }
        if !(b.martingale_times[0] <= b.martingale_times[1] && b.martingale_times[1] < b.martingale_times[2]) {
            return Err(invalid("battery.martingale_times", "need t_1 <= r < t"));
        }
        if b.decorrelation_s > b.decorrelation_t {
            return Err(invalid("battery.decorrelation_s", "must not exceed decorrelation_t"));
        }
        if b.deltas.len() < 2 || b.deltas.len() > 10 {
            return Err(invalid("battery.deltas", "between 2 and 10 increments are supported"));
        }
        if b.memory_loss_window[0] < 1 || b.memory_loss_window[1] <= b.memory_loss_window[0] {
            return Err(invalid("battery.memory_loss_window", "need 1 <= lo < hi"));
        }
        for (field, v) in [
            ("battery.envelope_slack", b.envelope_slack),
            ("battery.increment_slack", b.increment_slack),
        ] {
            if !(v >= 1.0) {
                return Err(invalid(field, "slack factors must be at least 1"));
            }
        }
        if !(b.moment2_bias_budget >= 0.0) {
            return Err(invalid("battery.moment2_bias_budget", "must be nonnegative"));
        }
        Ok(())
    }

    /// `i / grid_points` for `i = 0..=grid_points` merged with `extra_times`.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = (0..=self.grid_points)
            .map(|i| i as f64 / self.grid_points as f64)
            .collect();
        g.extend(&self.extra_times);
        g.sort_by(|a, b| a.total_cmp(b));
        g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        g
    }

    pub fn measure(&self, spec: &MeasureSpec, field: &str, beta_star: f64) -> Result<InitialMeasure, ConfigError> {
        let density = |d: &DensitySpec| -> Result<GridDensity<f64>, ConfigError> {
            match *d {
                DensitySpec::Uniform { weight } => Ok(GridDensity::uniform(self.ulam_bins).scaled(weight)),
                DensitySpec::PowerLaw { exponent, weight } => {
                    if !(0.0..1.0).contains(&exponent) {
                        return Err(invalid(format!("{field}.exponent"), "must lie in [0, 1)"));
                    }
                    Ok(GridDensity::power_law(self.ulam_bins, exponent).scaled(weight))
                }
            }
        };
        let out = match spec {
            MeasureSpec::Lebesgue => Ok(InitialMeasure::Lebesgue),
            MeasureSpec::Density { density: d } => InitialMeasure::density(density(d)?, beta_star),
            MeasureSpec::SignedPair { positive, negative } => {
                InitialMeasure::signed_pair(density(positive)?, density(negative)?, beta_star)
            }
        };
        out.map_err(|e| invalid(field, e.to_string()))
    }

    pub fn run(&self, name: &str) -> Result<&RunConfig, ConfigError> {
        self.runs
            .get(name)
            .ok_or_else(|| invalid("runs", format!("unknown run `{name}`")))
    }

    pub fn selected(&self, test: &str) -> bool {
        self.tests.is_empty() || self.tests.iter().any(|t| t == test || t == "all")
    }
}

impl RunConfig {
    pub fn curve(&self, name: &str) -> Result<ParameterCurve<f64>, ConfigError> {
        let kind = match &self.curve {
            CurveSpec::Constant { value } => CurveKind::Constant { value: *value },
            CurveSpec::Linear { start, end } => CurveKind::Linear {
                start: *start,
                end: *end,
            },
            CurveSpec::Cosine { low, high } => CurveKind::Cosine { low: *low, high: *high },
            CurveSpec::Table { knots } => CurveKind::Table { knots: knots.clone() },
        };
        ParameterCurve::new(kind, self.eta, self.beta_star)
            .map_err(|e| invalid(format!("runs.{name}.curve"), e.to_string()))
    }

    pub fn observable(&self, name: &str) -> Result<Observable<f64>, ConfigError> {
        let out = match &self.observable {
            ObservableSpec::Identity => Ok(Observable::identity()),
            ObservableSpec::Affine { slope, intercept } => Ok(Observable::Affine {
                slope: *slope,
                intercept: *intercept,
            }),
            ObservableSpec::Sine { amplitude, frequency } => Ok(Observable::Sine {
                amplitude: *amplitude,
                frequency: *frequency,
            }),
            ObservableSpec::Coboundary { frequency, alpha } => Observable::coboundary(*frequency, *alpha),
            ObservableSpec::Table { knots } => Observable::table(knots.clone()),
        };
        out.map_err(|e| invalid(format!("runs.{name}.observable"), e.to_string()))
    }
}

impl BatteryConfig {
    pub fn decorrelation_bump(&self) -> TestFunction {
        TestFunction::bump(0.0, self.decorrelation_bump_radius).expect("validated radius")
    }
}

/// Re-parses the file text on its own to recover line and column for a type error.
fn positioned(text: &str, merged: serde_json::Error) -> String {
    match serde_json::from_str::<ExperimentConfig>(text) {
        Err(e) => e.to_string(),
        Ok(_) => merged.to_string(),
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                // Maps of named runs are replaced wholesale when a file gives them.
                if k == "runs" {
                    b.insert(k, v);
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `PMQDS_SEED=7` sets `seed`; `PMQDS_BATTERY__KS_THRESHOLD=0.03` sets
/// `battery.ks_threshold`. Values are parsed as JSON, falling back to strings.
fn apply_env(value: &mut Value, env: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
    let mut pairs: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
        let mut slot = &mut *value;
        for (i, part) in path.iter().enumerate() {
            let obj = slot.as_object_mut().ok_or_else(|| {
                invalid(
                    path[..i].join("."),
                    format!("cannot override inside a non-object from {key}"),
                )
            })?;
            if !obj.contains_key(part) {
                return Err(invalid(
                    path.join("."),
                    format!("unknown field in environment override {key}"),
                ));
            }
            slot = obj.get_mut(part).expect("checked");
        }
        *slot = parsed;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&ExperimentConfig::defaults_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn grid_contains_test_times() {
        let g = ExperimentConfig::default().grid();
        for t in [0.0, 0.2, 0.25, 0.4, 0.65, 0.4078125, 0.75, 0.8, 1.0] {
            assert!(g.iter().any(|x| (x - t).abs() < 1e-12), "{t}");
        }
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn beta_star_guard_names_the_constraint() {
        let err = ExperimentConfig::from_json(
            r#"{"runs": {"a": {"curve": {"kind": "constant", "value": 0.1}, "beta_star": 0.6, "eta": 1.0, "observable": {"kind": "identity"}}},
                "battery": {"law_run": "a", "tightness_run": "a"}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("runs.a.beta_star"), "{err}");
        assert!(err.contains("beta_star < 1/2"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"runs": {"a": {"curve": {"kind": "constant", "value": 0.1}, "beta_star": 0.4, "eta": 1.0, "observable": {"kind": "identity"}}},
                "battery": {"law_run": "a", "tightness_run": "a"}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("allow_assumed_tightness"), "{err}");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = ExperimentConfig::from_json("{\n  \"seed\": 1,\n  \"paths\": \"many\"\n}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = ExperimentConfig::from_json("{\n  \"seed\": 1,\n  oops\n}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(ExperimentConfig::from_json(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn environment_overrides() {
        let env = vec![
            ("PMQDS_SEED".to_string(), "7".to_string()),
            ("PMQDS_BATTERY__KS_THRESHOLD".to_string(), "0.03".to_string()),
            ("PMQDS_LADDER".to_string(), "[64, 256]".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = ExperimentConfig::load(None, env).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.battery.ks_threshold, 0.03);
        assert_eq!(c.ladder, vec![64, 256]);
        let bad = vec![("PMQDS_NOPE".to_string(), "1".to_string())];
        assert!(ExperimentConfig::load(None, bad)
            .unwrap_err()
            .to_string()
            .contains("nope"));
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.threads = Some(8);
        b.output = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_nu_is_a_probability_measure() {
        let c = ExperimentConfig::default();
        let nu = c.measure(&c.nu, "nu", 0.25).unwrap();
        let v = nu.density_values(c.ulam_bins).unwrap();
        let mass: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mass - 1.0).abs() < 1e-10);
    }
}
