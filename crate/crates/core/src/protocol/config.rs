//! TOML run configuration shared by the CLI subcommands.
//!
//! One file describes a run: the network, the data source, the training
//! knobs, and (for networked processes) the SNT/FNT endpoints and TLS
//! paths. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::local::OptimizerKind;
use super::scheduler::SchedulerKind;
use super::simulate::SimConfig;
use super::tls::TlsPaths;
use super::ProtocolError;
use crate::data::{load_csv, load_idx, partition, stratified_split, CsvOptions, Dataset, LabelKind};
use crate::envelope::SymmetricKey;
use crate::nn::NetworkSpec;
use crate::optim::LrSchedule;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub seed: u64,
    pub network: NetworkSection,
    pub data: DataSection,
    pub run: RunSection,
    #[serde(default)]
    pub snt: Option<SntSection>,
    #[serde(default)]
    pub fnt: Option<FntSection>,
    #[serde(default)]
    pub tls: Option<TlsSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Named preset; alternative to an explicit layer list.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub layers: Option<Vec<crate::nn::LayerSpec>>,
    #[serde(default)]
    pub loss: Option<crate::nn::OutputLoss>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_format")]
    pub format: String,
    /// CSV: training table. IDX: see the *_images/*_labels fields.
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub has_header: bool,
    /// Number of label classes; 2 means a binary task.
    #[serde(default = "default_classes")]
    pub classes: u32,
    /// Held-out fraction when no explicit test set is given.
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: Option<u64>,
    /// Standardize features with train-set statistics.
    #[serde(default)]
    pub standardize: bool,
    /// Cap the training set to N rows (after a seeded shuffle).
    #[serde(default)]
    pub subset: Option<usize>,
}

fn default_format() -> String {
    "csv".into()
}

fn default_classes() -> u32 {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub trainers: u32,
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub local_epochs: u32,
    pub central_epochs: u32,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    #[serde(default = "default_schedule")]
    pub schedule: SchedulerKind,
    #[serde(default)]
    pub record_ledger: bool,
    #[serde(default = "default_true")]
    pub dropout: bool,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub max_batches_per_round: Option<usize>,
    #[serde(default)]
    pub reset_moments: bool,
}

fn default_one() -> u32 {
    1
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

fn default_schedule() -> SchedulerKind {
    SchedulerKind::RoundRobin
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SntSection {
    #[serde(default)]
    pub server_addr: Option<String>,
    #[serde(default)]
    pub trainer_id: Option<u32>,
    #[serde(default)]
    pub seed_trainer: u32,
    #[serde(default)]
    pub key_file: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub token_timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FntSection {
    pub peer_id: u32,
    /// Peer addresses indexed by peer id (including this peer's own).
    pub peers: Vec<String>,
    #[serde(default = "default_dial_retry")]
    pub dial_retry_secs: u64,
}

fn default_dial_retry() -> u64 {
    30
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSection {
    pub cert: PathBuf,
    pub key: PathBuf,
    pub ca: PathBuf,
    #[serde(default = "default_server_name")]
    pub server_name: String,
}

fn default_server_name() -> String {
    "localhost".into()
}

/// Train set plus optional held-out set, post split/standardize/subset.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl RunFile {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf), ProtocolError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProtocolError::Config(format!("read {}: {e}", path.display())))?;
        let file: RunFile = toml::from_str(&text)
            .map_err(|e| ProtocolError::Config(format!("parse {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        file.validate()?;
        Ok((file, base))
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        if self.run.trainers == 0 {
            return Err(ProtocolError::Config("run.trainers must be at least 1".into()));
        }
        if self.run.batch_size == 0 {
            return Err(ProtocolError::Config("run.batch_size must be at least 1".into()));
        }
        self.run
            .lr
            .validate()
            .map_err(|e| ProtocolError::Config(format!("run.lr: {e}")))?;
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ProtocolError> {
        let spec = match (&self.network.preset, &self.network.layers) {
            (Some(name), None) => crate::presets::by_name(name)
                .ok_or_else(|| ProtocolError::Config(format!("unknown preset {name:?}")))?,
            (None, Some(layers)) => {
                let loss = self.network.loss.ok_or_else(|| {
                    ProtocolError::Config("network.loss required with explicit layers".into())
                })?;
                NetworkSpec { layers: layers.clone(), output_loss: loss }
            }
            _ => {
                return Err(ProtocolError::Config(
                    "network needs exactly one of `preset` or `layers`".into(),
                ))
            }
        };
        spec.validate()
            .map_err(|e| ProtocolError::Config(format!("network: {e}")))?;
        Ok(spec)
    }

    fn label_kind(&self) -> LabelKind {
        if self.data.classes <= 2 {
            LabelKind::Binary
        } else {
            LabelKind::Classes(self.data.classes)
        }
    }

    fn resolve(&self, base: &Path, p: &PathBuf) -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    }

    /// Loads + splits + standardizes + subsets per the data section.
    pub fn load_data(&self, base: &Path) -> Result<LoadedData, ProtocolError> {
        let (mut train, mut test) = match self.data.format.as_str() {
            "csv" => {
                let train_path = self.data.train.as_ref().ok_or_else(|| {
                    ProtocolError::Config("data.train required for csv format".into())
                })?;
                let options =
                    CsvOptions { has_header: self.data.has_header, label_kind: self.label_kind() };
                let full = load_csv(self.resolve(base, train_path), &options)?;
                match (&self.data.test, self.data.test_fraction) {
                    (Some(test_path), _) => {
                        let test = load_csv(self.resolve(base, test_path), &options)?;
                        (full, Some(test))
                    }
                    (None, Some(fraction)) => {
                        let seed = self.data.split_seed.unwrap_or(self.seed);
                        let (train, test) = stratified_split(&full, fraction, seed)?;
                        (train, Some(test))
                    }
                    (None, None) => (full, None),
                }
            }
            "idx" => {
                let (Some(images), Some(labels)) =
                    (&self.data.train_images, &self.data.train_labels)
                else {
                    return Err(ProtocolError::Config(
                        "data.train_images and data.train_labels required for idx format".into(),
                    ));
                };
                let subset = self.data.subset.map(|n| (n, self.data.split_seed.unwrap_or(self.seed)));
                let train = load_idx(
                    self.resolve(base, images),
                    self.resolve(base, labels),
                    self.data.classes,
                    subset,
                )?;
                let test = match (&self.data.test_images, &self.data.test_labels) {
                    (Some(ti), Some(tl)) => Some(load_idx(
                        self.resolve(base, ti),
                        self.resolve(base, tl),
                        self.data.classes,
                        None,
                    )?),
                    _ => None,
                };
                (train, test)
            }
            other => {
                return Err(ProtocolError::Config(format!(
                    "unknown data.format {other:?} (expected \"csv\" or \"idx\")"
                )))
            }
        };
        // csv subset cap (idx applies it at load)
        if self.data.format == "csv" {
            if let Some(n) = self.data.subset {
                if n < train.len() {
                    use rand::seq::SliceRandom;
                    use rand::SeedableRng;
                    let mut indices: Vec<usize> = (0..train.len()).collect();
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seed::derive(
                        self.seed,
                        crate::seed::Domain::Subset,
                        &[],
                    ));
                    indices.shuffle(&mut rng);
                    indices.truncate(n);
                    train = train.select(&indices);
                }
            }
        }
        if self.data.standardize {
            let (means, stds) = train.feature_stats();
            train.standardize(&means, &stds);
            if let Some(test) = &mut test {
                test.standardize(&means, &stds);
            }
        }
        Ok(LoadedData { train, test })
    }

    /// Builds the deterministic in-process run: loads data, shards it across
    /// the trainers, and assembles the simulator config.
    pub fn sim_config(&self, base: &Path) -> Result<SimConfig, ProtocolError> {
        let spec = self.network_spec()?;
        let data = self.load_data(base)?;
        let plan = partition(&data.train, self.run.trainers as usize, self.seed)?;
        let shards: Vec<Dataset> =
            plan.assignment.iter().map(|ix| data.train.select(ix)).collect();
        Ok(SimConfig {
            spec,
            shards,
            eval_set: data.test,
            central_epochs: self.run.central_epochs,
            local_epochs: self.run.local_epochs,
            batch_size: self.run.batch_size,
            schedule: self.run.lr.clone(),
            optimizer: self.run.optimizer,
            scheduler: self.run.schedule,
            seed: self.seed,
            dropout: self.run.dropout,
            shuffle: self.run.shuffle,
            record_ledger: self.run.record_ledger,
            max_batches_per_round: self.run.max_batches_per_round,
            reset_moments: self.run.reset_moments,
            key: self.load_key(base)?,
        })
    }

    /// Reads the shared 16-byte key file when one is configured.
    pub fn load_key(&self, base: &Path) -> Result<Option<SymmetricKey>, ProtocolError> {
        let Some(snt) = &self.snt else { return Ok(None) };
        let Some(key_file) = &snt.key_file else { return Ok(None) };
        let path = self.resolve(base, key_file);
        let bytes = std::fs::read(&path)
            .map_err(|e| ProtocolError::Config(format!("read key {}: {e}", path.display())))?;
        let arr: [u8; 16] = bytes.as_slice().try_into().map_err(|_| {
            ProtocolError::Config(format!(
                "key file {} holds {} bytes, expected 16",
                path.display(),
                bytes.len()
            ))
        })?;
        Ok(Some(SymmetricKey::from_bytes(arr)))
    }

    pub fn tls_paths(&self, base: &Path) -> Option<TlsPaths> {
        self.tls.as_ref().map(|t| TlsPaths {
            cert: self.resolve(base, &t.cert),
            key: self.resolve(base, &t.key),
            ca: self.resolve(base, &t.ca),
            server_name: t.server_name.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_a_minimal_simulate_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.csv"), "1,2,0\n3,4,1\n5,6,0\n7,8,1\n").unwrap();
        let path = write_config(
            dir.path(),
            r#"
seed = 7
[network]
layers = [
  { type = "dense", in_dim = 2, out_dim = 4 },
  { type = "activation", f = "relu" },
  { type = "dense", in_dim = 4, out_dim = 1 },
]
loss = "sigmoid-binary-cross-entropy"
[data]
train = "train.csv"
[run]
trainers = 2
batch_size = 2
central_epochs = 1
lr = 0.1
"#,
        );
        let (file, base) = RunFile::load(&path).unwrap();
        let sim = file.sim_config(&base).unwrap();
        assert_eq!(sim.trainer_count(), 2);
        assert_eq!(sim.shards.iter().map(|s| s.len()).sum::<usize>(), 4);
    }

    #[test]
    fn preset_and_piecewise_lr_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
seed = 1
[network]
preset = "pima"
[data]
train = "absent.csv"
[run]
trainers = 20
batch_size = 128
central_epochs = 100
lr = [ { from = 0, to = 40, alpha = 1e-3 }, { from = 41, to = 99, alpha = 1e-4 } ]
optimizer = "adam"
schedule = "random"
"#,
        );
        let (file, _) = RunFile::load(&path).unwrap();
        let spec = file.network_spec().unwrap();
        assert_eq!(spec.param_count(), 37_505);
        assert_eq!(file.run.optimizer, OptimizerKind::Adam);
        assert_eq!(file.run.schedule, SchedulerKind::Random);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "seed = 1\nbogus = true\n[network]\npreset = \"pima\"\n[data]\n[run]\ntrainers = 1\nbatch_size = 1\ncentral_epochs = 1\nlr = 0.1\n",
        );
        assert!(RunFile::load(&path).is_err());
    }

    #[test]
    fn preset_or_layers_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "seed = 1\n[network]\n[data]\n[run]\ntrainers = 1\nbatch_size = 1\ncentral_epochs = 1\nlr = 0.1\n",
        );
        let (file, _) = RunFile::load(&path).unwrap();
        assert!(file.network_spec().is_err());
    }
}
