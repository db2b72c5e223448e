//! Flat `key = value` run configuration, layered precedence and
//! reproducibility manifests.
//!
//! ```text
//! # blobs baseline
//! data = blobs
//! data.n = 2000
//! mode = fixed:hinge
//! hidden = 64,64
//! epochs = 300
//! ```
//!
//! A manifest is the fully resolved configuration plus `manifest.*` and
//! `artifact.*` entries; feeding it back as a config file reproduces the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datasets::{self, load_csv, make_synthetic, split_standardize, CsvOptions, SplitDataset, SyntheticKind, SyntheticSpec};
use crate::derivgen::GenConfig;
use crate::error::{Error, Result};
use crate::models::Activation;
use crate::numerics::BoxCoxParam;
use crate::scalar::Scalar;
use crate::trainer::{EarlyStop, ModelSpec, TrainConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "ENSLOSS_SEED";

/// Ordered key-value map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap(BTreeMap<String, String>);

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                msg: format!("line {}: expected `key = value`", i + 1),
            })?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Format {
                    path: origin.to_path_buf(),
                    msg: format!("line {}: duplicate key `{k}`", i + 1),
                });
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries of `other` replace entries of `self`.
    pub fn overlay(&mut self, other: &KvMap) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }
}

impl fmt::Display for KvMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Config file, then [`SEED_ENV`], then explicit flags.
pub fn resolve_layers(file: Option<&KvMap>, env_seed: Option<&str>, flags: &KvMap) -> KvMap {
    let mut out = file.cloned().unwrap_or_default();
    if let Some(seed) = env_seed {
        out.set("seed", seed.trim());
    }
    out.overlay(flags);
    out
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        opts: CsvOptions,
        test_fraction: f64,
    },
    /// A binary dataset cache, already split.
    Cache(PathBuf),
}

impl DataSource {
    /// Short identifier used in benchmark tables.
    pub fn id(&self) -> String {
        match self {
            DataSource::Synthetic(s) => s.kind.name().to_string(),
            DataSource::Csv { path, .. } | DataSource::Cache(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        }
    }

    /// Builds the split; synthetic samples and split shuffles use `seed`.
    pub fn load<T: Scalar>(&self, seed: u64) -> Result<SplitDataset<T>> {
        let ds = match self {
            DataSource::Synthetic(spec) => make_synthetic(spec, seed)?,
            DataSource::Csv {
                path,
                opts,
                test_fraction,
            } => {
                let raw = load_csv(path, opts)?;
                let mut s = split_standardize(&raw, *test_fraction, seed)?;
                s.name = self.id();
                s
            }
            DataSource::Cache(path) => return datasets::load_dataset(path),
        };
        Ok(ds.cast())
    }

    fn from_kv(kv: &KvMap) -> Result<Self> {
        let data = kv
            .get("data")
            .ok_or_else(|| Error::Config("no dataset given (`data`)".into()))?;
        let test_fraction = kv.parsed_or("data.test_fraction", 0.25)?;
        if let Some(kind) = SyntheticKind::from_name(data) {
            let d_default = match kind {
                SyntheticKind::GaussianBlobs => 2,
                SyntheticKind::HighDimSparse => 2000,
            };
            let spec = SyntheticSpec {
                kind,
                n: kv.parsed_or("data.n", 2000)?,
                d: kv.parsed_or("data.d", d_default)?,
                class_sep: kv.parsed_or("data.class_sep", 2.0)?,
                noise: kv.parsed_or("data.noise", 0.0)?,
                informative: kv.parsed_or("data.informative", if kind == SyntheticKind::GaussianBlobs { 1 } else { 20 })?,
                test_fraction,
            };
            spec.validate()?;
            return Ok(DataSource::Synthetic(spec));
        }
        let path = PathBuf::from(data);
        if !path.exists() {
            return Err(Error::Config(format!(
                "dataset `{data}` is neither a synthetic kind (blobs, sparse) nor an existing file"
            )));
        }
        if path.extension().is_some_and(|e| e == "bin") {
            return Ok(DataSource::Cache(path));
        }
        let delim = kv.get("data.delimiter").unwrap_or(",");
        let delimiter = match delim {
            "tab" | "\\t" => b'\t',
            "semicolon" => b';',
            d if d.len() == 1 => d.as_bytes()[0],
            d => return Err(Error::Config(format!("delimiter must be one byte, got `{d}`"))),
        };
        let defaults = CsvOptions::default();
        Ok(DataSource::Csv {
            path,
            opts: CsvOptions {
                label_column: kv.get("data.label_column").map_or(defaults.label_column, str::to_string),
                positive_label: kv.get("data.positive_label").map_or(defaults.positive_label, str::to_string),
                delimiter,
                has_header: kv.parsed_or("data.header", true)?,
            },
            test_fraction,
        })
    }

    fn to_kv(&self, kv: &mut KvMap) {
        match self {
            DataSource::Synthetic(s) => {
                kv.set("data", s.kind.name());
                kv.set("data.n", s.n);
                kv.set("data.d", s.d);
                kv.set("data.class_sep", s.class_sep);
                kv.set("data.noise", s.noise);
                kv.set("data.informative", s.informative);
                kv.set("data.test_fraction", s.test_fraction);
            }
            DataSource::Csv {
                path,
                opts,
                test_fraction,
            } => {
                kv.set("data", path.display());
                kv.set("data.label_column", &opts.label_column);
                kv.set("data.positive_label", &opts.positive_label);
                kv.set("data.delimiter", char::from(opts.delimiter));
                kv.set("data.header", opts.has_header);
                kv.set("data.test_fraction", test_fraction);
            }
            DataSource::Cache(path) => kv.set("data", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got `{s}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub data: DataSource,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub precision: Precision,
}

fn parse_list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| Error::Config(format!("invalid entry `{t}` in `{key}`"))))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

const KNOWN_KEYS: &[&str] = &[
    "activation",
    "batch_size",
    "data",
    "dropout",
    "early_stop",
    "epochs",
    "hidden",
    "lambda",
    "lambda_pool",
    "lr",
    "lr_schedule",
    "mode",
    "precision",
    "resample_T",
    "seed",
    "tie_eps",
    "weight_decay",
];

impl RunSpec {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        for (k, _) in kv.iter() {
            let known = KNOWN_KEYS.contains(&k)
                || k.starts_with("data.")
                || k.starts_with("manifest.")
                || k.starts_with("artifact.");
            if !known {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        let data = DataSource::from_kv(kv)?;
        let hidden = match kv.get("hidden") {
            Some(h) => parse_list(h, "hidden")?,
            None => vec![256],
        };
        let activation = match kv.get("activation") {
            Some(a) => Activation::from_name(a).ok_or_else(|| Error::Config(format!("unknown activation `{a}`")))?,
            None => Activation::Relu,
        };
        let defaults = TrainConfig::default();
        let lambda = BoxCoxParam::new(kv.parsed_or("lambda", 0.0)?)?;
        let lambda_pool = match kv.get("lambda_pool") {
            Some(p) => parse_list::<f64>(p, "lambda_pool")?
                .into_iter()
                .map(BoxCoxParam::new)
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let early_stop = match kv.get("early_stop") {
            None | Some("none") => None,
            Some(v) => {
                let bad = || Error::Config(format!("early_stop must be `none` or `<threshold>@<patience>`, got `{v}`"));
                let (t, p) = v.split_once('@').ok_or_else(bad)?;
                Some(EarlyStop {
                    threshold: t.parse().map_err(|_| bad())?,
                    patience: p.parse().map_err(|_| bad())?,
                })
            }
        };
        let train = TrainConfig {
            mode: kv.get("mode").unwrap_or("ensloss").parse()?,
            epochs: kv.parsed_or("epochs", defaults.epochs)?,
            batch_size: kv.parsed_or("batch_size", defaults.batch_size)?,
            lr: kv.parsed_or("lr", defaults.lr)?,
            lr_schedule: kv.get("lr_schedule").unwrap_or("cosine").parse()?,
            weight_decay: kv.parsed_or("weight_decay", defaults.weight_decay)?,
            dropout_rate: kv.parsed_or("dropout", defaults.dropout_rate)?,
            gen: GenConfig {
                lambda,
                resample_period: kv.parsed_or("resample_T", 0)?,
                lambda_pool,
                tie_eps: kv.parsed_or("tie_eps", 0.0)?,
            },
            seed: kv.parsed_or("seed", defaults.seed)?,
            early_stop,
        };
        train.validate()?;
        Ok(Self {
            data,
            model: ModelSpec { hidden, activation },
            train,
            precision: kv.get("precision").unwrap_or("f64").parse()?,
        })
    }

    /// Fully resolved configuration; `from_kv(to_kv())` is the identity.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.data.to_kv(&mut kv);
        let t = &self.train;
        kv.set("mode", &t.mode);
        kv.set("epochs", t.epochs);
        kv.set("batch_size", t.batch_size);
        kv.set("lr", t.lr);
        kv.set("lr_schedule", &t.lr_schedule);
        kv.set("weight_decay", t.weight_decay);
        kv.set("dropout", t.dropout_rate);
        kv.set("lambda", t.gen.lambda.lambda());
        kv.set("resample_T", t.gen.resample_period);
        kv.set(
            "lambda_pool",
            join(&t.gen.lambda_pool.iter().map(|p| p.lambda()).collect::<Vec<_>>()),
        );
        kv.set("tie_eps", t.gen.tie_eps);
        kv.set("seed", t.seed);
        kv.set(
            "early_stop",
            t.early_stop
                .map_or("none".to_string(), |e| format!("{}@{}", e.threshold, e.patience)),
        );
        kv.set("hidden", join(&self.model.hidden));
        kv.set("activation", self.model.activation.name());
        kv.set("precision", self.precision);
        kv
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resolved run configuration plus provenance and artifact digests.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub spec: RunSpec,
    pub out_dir: PathBuf,
    /// File name to SHA-256, sorted by name.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(spec: RunSpec, config_path: Option<PathBuf>, out_dir: PathBuf) -> Self {
        Self {
            config_path,
            spec,
            out_dir,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_artifact(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.spec.to_kv();
        if let Some(p) = &self.config_path {
            kv.set("manifest.config_path", p.display());
        }
        kv.set("manifest.out_dir", self.out_dir.display());
        for (name, digest) in &self.artifacts {
            kv.set(&format!("artifact.{name}.sha256"), digest);
        }
        kv
    }

    pub fn render(&self) -> String {
        self.to_kv().to_string()
    }
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvMap {
        KvMap::parse(text, Path::new("test")).unwrap()
    }

    #[test]
    fn parse_and_errors() {
        let m = kv("# c\n a = 1 \n\nb=x y\n");
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(m.get("b"), Some("x y"));
        assert!(KvMap::parse("a=1\na=2", Path::new("t")).is_err());
        assert!(KvMap::parse("novalue", Path::new("t")).is_err());
    }

    #[test]
    fn precedence() {
        let file = kv("seed = 1\nepochs = 5\n");
        let flags = kv("seed = 3\n");
        assert_eq!(resolve_layers(Some(&file), Some("2"), &KvMap::new()).get("seed"), Some("2"));
        assert_eq!(resolve_layers(Some(&file), Some("2"), &flags).get("seed"), Some("3"));
        assert_eq!(resolve_layers(Some(&file), None, &KvMap::new()).get("epochs"), Some("5"));
    }

    #[test]
    fn spec_round_trip() {
        let text = "data = blobs\nmode = fixed:hinge\nhidden = 64,64\nlambda_pool = 0,0.5,1\nresample_T = 10\n\
                    early_stop = 0.99@3\nlr_schedule = step:10,20@0.5\nprecision = f32\n";
        let spec = RunSpec::from_kv(&kv(text)).unwrap();
        assert_eq!(spec.model.hidden, vec![64, 64]);
        assert_eq!(spec.train.gen.lambda_pool.len(), 3);
        assert_eq!(spec.precision, Precision::F32);
        let again = RunSpec::from_kv(&spec.to_kv()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.to_kv().to_string(), spec.to_kv().to_string());
    }

    #[test]
    fn linear_model_and_validation() {
        let spec = RunSpec::from_kv(&kv("data = blobs\nhidden =\n")).unwrap();
        assert!(spec.model.hidden.is_empty());
        assert!(RunSpec::from_kv(&kv("data = blobs\nepochs = 0\n")).is_err());
        assert!(RunSpec::from_kv(&kv("data = blobs\nbogus = 1\n")).is_err());
        assert!(RunSpec::from_kv(&kv("data = /no/such/file.csv\n")).is_err());
        assert!(RunSpec::from_kv(&kv("epochs = 2\n")).is_err());
        let err = RunSpec::from_kv(&kv("data = blobs\nmode = fixed:nope\n")).unwrap_err();
        assert!(matches!(err, Error::UnknownLoss { .. }));
    }

    #[test]
    fn manifest_feeds_back() {
        let spec = RunSpec::from_kv(&kv("data = blobs\nseed = 7\n")).unwrap();
        let mut m = RunManifest::new(spec.clone(), None, PathBuf::from("out"));
        m.add_artifact("runrecord.jsonl", b"abc");
        let text = m.render();
        assert!(text.contains("artifact.runrecord.jsonl.sha256 = ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
        assert_eq!(RunSpec::from_kv(&kv(&text)).unwrap(), spec);
    }

    #[test]
    fn atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
