//! Run configuration files (TOML) and their canonical hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::data::{load_dataset, resolve_data_path, synthetic_sbm, Dataset, SbmConfig};
use crate::encoders::{EncoderConfig, StructToggles};
use crate::error::{Error, Result};
use crate::model::ViewToggles;
use crate::netcl::NegativeStrategy;
use crate::trainer::TrainConfig;
use crate::views::{AttributeViewConfig, GlobalViewConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Directory holding `edges.txt`, `features.csv`, `labels.csv`.
    pub path: Option<PathBuf>,
    pub name: Option<String>,
    pub sbm: Option<SbmConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewsSection {
    pub attribute: bool,
    pub local: bool,
    pub global: bool,
    pub k_nn: usize,
    pub k_clusters: usize,
    pub s: usize,
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
    pub n_g: usize,
    pub detector: String,
    pub detector_params: BTreeMap<String, String>,
    pub seed: u64,
}

impl Default for ViewsSection {
    fn default() -> Self {
        let a = AttributeViewConfig::default();
        let g = GlobalViewConfig::default();
        ViewsSection {
            attribute: true,
            local: true,
            global: true,
            k_nn: a.k_nn,
            k_clusters: a.k_clusters,
            s: a.s,
            kmeans_iters: a.kmeans_iters,
            kmeans_seed: a.seed,
            n_g: g.n_g,
            detector: g.detector,
            detector_params: g.detector_params,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSection {
    pub enabled: bool,
    pub tau: f64,
    pub theta: f64,
    pub keep_init: f64,
    pub drop_init: f64,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        AugmentationSection {
            enabled: true,
            tau: a.tau,
            theta: a.theta,
            keep_init: a.keep_init,
            drop_init: a.drop_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_model: usize,
    pub d_hid: usize,
    pub heads: usize,
    pub slope: f64,
    pub dropout: f64,
    pub bins: usize,
    pub shygan: bool,
    pub lce: bool,
    pub ce: bool,
    pub de: bool,
    pub lc: bool,
    pub hd: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSection {
            d_model: e.d_model,
            d_hid: e.d_hid,
            heads: e.heads,
            slope: e.slope,
            dropout: e.attn_dropout,
            bins: e.bins,
            shygan: true,
            lce: true,
            ce: true,
            de: true,
            lc: true,
            hd: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetclSection {
    pub enabled: bool,
    pub strategy: NegativeStrategy,
    pub t: usize,
    pub eta: f64,
}

impl Default for NetclSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        NetclSection {
            enabled: true,
            strategy: c.strategy,
            t: c.t,
            eta: c.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub lr: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainerSection {
            lr: c.lr,
            epochs_max: c.epochs_max,
            patience: c.patience,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            train_frac: c.split.0,
            val_frac: c.split.1,
            test_frac: c.split.2,
            seeds: (0..10).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    pub views: ViewsSection,
    pub augmentation: AugmentationSection,
    pub encoder: EncoderSection,
    pub netcl: NetclSection,
    pub trainer: TrainerSection,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.sbm) {
            (Some(_), Some(_)) => return Err(Error::Config("[dataset] takes either path or sbm, not both".into())),
            (None, None) => return Err(Error::Config("[dataset] needs path or sbm".into())),
            (None, Some(sbm)) => sbm.validate()?,
            _ => {}
        }
        let t = &self.trainer;
        let fracs = [t.train_frac, t.val_frac, t.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must lie in [0,1] and sum to 1, got {fracs:?}")));
        }
        if t.train_frac == 0.0 {
            return Err(Error::Config("train_frac must be positive".into()));
        }
        if t.epochs_max == 0 || t.patience == 0 {
            return Err(Error::Config("epochs_max and patience must be positive".into()));
        }
        if t.seeds.is_empty() {
            return Err(Error::Config("trainer.seeds must not be empty".into()));
        }
        if self.netcl.t == 0 {
            return Err(Error::Config("netcl.t must be positive".into()));
        }
        let v = &self.views;
        if v.k_nn == 0 || v.k_clusters == 0 || v.s == 0 || v.s > v.k_clusters || v.kmeans_iters == 0 {
            return Err(Error::Config(
                "views: k_nn, k_clusters, kmeans_iters must be positive and 1 <= s <= k_clusters".into(),
            ));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let (v, a, e, n, t) = (&self.views, &self.augmentation, &self.encoder, &self.netcl, &self.trainer);
        TrainConfig {
            lr: t.lr,
            epochs_max: t.epochs_max,
            patience: t.patience,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            split: (t.train_frac, t.val_frac, t.test_frac),
            strategy: n.strategy,
            t: n.t,
            eta: n.eta,
            netcl: n.enabled,
            views: ViewToggles {
                attribute: v.attribute,
                local: v.local,
                global: v.global,
            },
            augmentation: a.enabled,
            augment: AugmentConfig {
                tau: a.tau,
                theta: a.theta,
                keep_init: a.keep_init,
                drop_init: a.drop_init,
            },
            encoder: EncoderConfig {
                d_model: e.d_model,
                d_hid: e.d_hid,
                heads: e.heads,
                slope: e.slope,
                attn_dropout: e.dropout,
                bins: e.bins,
            },
            shygan: e.shygan,
            structure: StructToggles {
                lce: e.lce,
                ce: e.ce,
                de: e.de,
                lc: e.lc,
                hd: e.hd,
            },
            attribute_view: AttributeViewConfig {
                k_nn: v.k_nn,
                k_clusters: v.k_clusters,
                s: v.s,
                kmeans_iters: v.kmeans_iters,
                seed: v.kmeans_seed,
            },
            global_view: GlobalViewConfig {
                n_g: v.n_g,
                detector: v.detector.clone(),
                detector_params: v.detector_params.clone(),
            },
            view_seed: v.seed,
        }
    }

    /// Canonical form: every key present, defaults filled in, fixed order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical`], lowercase hex.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    /// Loads the configured dataset; relative paths resolve against
    /// `HYPERGCL_DATA_DIR` or `default_root`.
    pub fn load_dataset(&self, default_root: &Path) -> Result<Dataset> {
        let mut ds = match (&self.dataset.path, &self.dataset.sbm) {
            (Some(p), _) => load_dataset(resolve_data_path(p, default_root))?,
            (None, Some(sbm)) => synthetic_sbm(sbm)?,
            (None, None) => return Err(Error::Config("[dataset] needs path or sbm".into())),
        };
        if let Some(name) = &self.dataset.name {
            ds.name = name.clone();
        }
        Ok(ds)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
