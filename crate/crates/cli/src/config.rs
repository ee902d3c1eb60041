//! The resolved run configuration and its `key = value` file format.
//!
//! Precedence, lowest to highest: built-in defaults, the MVTER_SEED
//! environment variable (seed only), the --config file, command-line
//! flags. Every run writes the resolved configuration back out so it can
//! be replayed bit-for-bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvter_core::error::{Error, Result};
use mvter_core::model::Scheme;
use mvter_core::renderer::CameraRig;
use mvter_core::training::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_rate: f64,
    pub seed: u64,
    pub views: usize,
    pub elevation: f64,
    pub resolution: usize,
    pub ortho_extent: f64,
    pub points_per_object: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub threads: usize,
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Average,
            lambda: 1.0,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_halving_period: 10,
            batch_size: 24,
            epochs: 30,
            label_rate: 1.0,
            seed: 0,
            views: 12,
            elevation: 30.0,
            resolution: 32,
            ortho_extent: 1.2,
            points_per_object: 1024,
            train_per_class: 40,
            val_per_class: 5,
            test_per_class: 15,
            threads: 1,
            data: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.views == 0 {
            return Err(Error::domain("views must be at least 1"));
        }
        if self.resolution < 8 || !self.resolution.is_multiple_of(8) {
            return Err(Error::domain(format!(
                "resolution {} must be at least 8 and divisible by 8",
                self.resolution
            )));
        }
        if !(self.elevation > -90.0 && self.elevation < 90.0) {
            return Err(Error::domain(format!(
                "elevation {} must lie strictly inside (-90, 90)",
                self.elevation
            )));
        }
        if !self.ortho_extent.is_finite() || self.ortho_extent <= 0.0 {
            return Err(Error::domain("ortho_extent must be positive"));
        }
        if self.points_per_object < 64 {
            return Err(Error::domain("points_per_object must be at least 64"));
        }
        if self.train_per_class < 1 || self.val_per_class < 1 || self.test_per_class < 1 {
            return Err(Error::domain("each split needs at least one object per class"));
        }
        if self.threads < 1 {
            return Err(Error::domain("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            scheme: self.scheme,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_halving_period: self.lr_halving_period,
            batch_size: self.batch_size,
            epochs: self.epochs,
            label_rate: self.label_rate,
            seed: self.seed,
        }
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::ring(
            self.views,
            self.elevation,
            self.ortho_extent,
            (self.resolution, self.resolution),
        )
    }

    pub fn shape_spec(&self) -> mvter_core::dataset::ShapeSpec {
        mvter_core::dataset::ShapeSpec {
            points_per_object: self.points_per_object,
            ..mvter_core::dataset::ShapeSpec::default()
        }
    }

    pub fn split_counts(&self) -> mvter_core::dataset::SplitCounts {
        mvter_core::dataset::SplitCounts {
            train: self.train_per_class,
            val: self.val_per_class,
            test: self.test_per_class,
        }
    }

    /// Applies one `key = value` assignment; `source` names the origin
    /// for diagnostics (for example "line 3").
    pub fn set(&mut self, key: &str, value: &str, source: &str) -> Result<()> {
        let bad = |what: &str| {
            Error::domain(format!("{source}: invalid value '{value}' for '{key}' ({what})"))
        };
        macro_rules! parse {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "scheme" => self.scheme = Scheme::parse(value).map_err(|_| bad("fusion|average"))?,
            "lambda" => self.lambda = parse!("number"),
            "learning_rate" => self.learning_rate = parse!("number"),
            "momentum" => self.momentum = parse!("number"),
            "weight_decay" => self.weight_decay = parse!("number"),
            "lr_halving_period" => self.lr_halving_period = parse!("integer"),
            "batch_size" => self.batch_size = parse!("integer"),
            "epochs" => self.epochs = parse!("integer"),
            "label_rate" => self.label_rate = parse!("number"),
            "seed" => self.seed = parse!("integer"),
            "views" => self.views = parse!("integer"),
            "elevation" => self.elevation = parse!("number"),
            "resolution" => self.resolution = parse!("integer"),
            "ortho_extent" => self.ortho_extent = parse!("number"),
            "points_per_object" => self.points_per_object = parse!("integer"),
            "train_per_class" => self.train_per_class = parse!("integer"),
            "val_per_class" => self.val_per_class = parse!("integer"),
            "test_per_class" => self.test_per_class = parse!("integer"),
            "threads" => self.threads = parse!("integer"),
            "data" => self.data = Some(PathBuf::from(value)),
            other => {
                return Err(Error::domain(format!("{source}: unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// The full effective configuration in the config-file format.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scheme = {}", self.scheme.name());
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "momentum = {}", self.momentum);
        let _ = writeln!(out, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(out, "lr_halving_period = {}", self.lr_halving_period);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "label_rate = {}", self.label_rate);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "views = {}", self.views);
        let _ = writeln!(out, "elevation = {}", self.elevation);
        let _ = writeln!(out, "resolution = {}", self.resolution);
        let _ = writeln!(out, "ortho_extent = {}", self.ortho_extent);
        let _ = writeln!(out, "points_per_object = {}", self.points_per_object);
        let _ = writeln!(out, "train_per_class = {}", self.train_per_class);
        let _ = writeln!(out, "val_per_class = {}", self.val_per_class);
        let _ = writeln!(out, "test_per_class = {}", self.test_per_class);
        let _ = writeln!(out, "threads = {}", self.threads);
        if let Some(data) = &self.data {
            let _ = writeln!(out, "data = {}", data.display());
        }
        out
    }

    /// Parses a config file and applies every assignment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let source = format!("line {}", lineno + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::domain(format!("{source}: expected 'key = value'")))?;
            self.set(key.trim(), value.trim(), &source)?;
        }
        Ok(())
    }
}

/// Loads a config file over the defaults (no environment, no flags).
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    config.apply_file(path)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let mut config = RunConfig::default();
        config.apply_text("").unwrap();
        assert_eq!(config.lambda, 1.0);
        assert_eq!(config.views, 12);
        assert_eq!(config.epochs, 30);
    }

    #[test]
    fn comments_and_assignments() {
        let mut config = RunConfig::default();
        config
            .apply_text("# a comment\nlambda = 0.5\n\nseed = 9 # trailing\n")
            .unwrap();
        assert_eq!(config.lambda, 0.5);
        assert_eq!(config.seed, 9);
    }

    #[test]
    fn bad_value_names_line() {
        let mut config = RunConfig::default();
        let err = config.apply_text("lambda = abc").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = config.apply_text("lambda = 1\nmystery = 3").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn resolved_text_round_trips() {
        let config = RunConfig {
            lambda: 0.25,
            scheme: Scheme::Fusion,
            data: Some(PathBuf::from("toy.mvds")),
            ..RunConfig::default()
        };
        let text = config.resolved_text();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back.lambda, 0.25);
        assert_eq!(back.scheme, Scheme::Fusion);
        assert_eq!(back.data.as_deref(), Some(Path::new("toy.mvds")));
        assert_eq!(back.resolved_text(), text);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut config = RunConfig {
            lambda: -1.0,
            ..RunConfig::default()
        };
        assert!(config.validate().is_err());
        config.lambda = 1.0;
        config.resolution = 20;
        assert!(config.validate().is_err());
        config.resolution = 32;
        config.label_rate = 2.0;
        assert!(config.validate().is_err());
    }
}
