//! Trained model set plus the metadata needed to rebuild and reload it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::flow::FlowPrior;
use super::forward::{ForwardCvae, ForwardMlp, NaiveMean};
use super::inverse::InverseCvae;
use super::train::{TrainData, TrainHistory};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::ingest::{Scaler, Split, WindowedDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "cvae")]
    Cvae,
    #[serde(rename = "inv-flow")]
    InvFlow,
    #[serde(rename = "inv-gauss")]
    InvGauss,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Naive, Method::Mlp, Method::Cvae, Method::InvFlow, Method::InvGauss];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Mlp => "mlp",
            Method::Cvae => "cvae",
            Method::InvFlow => "inv-flow",
            Method::InvGauss => "inv-gauss",
        }
    }

    pub fn is_retrodictive(self) -> bool {
        matches!(self, Method::InvFlow | Method::InvGauss)
    }

    /// Parses a comma-separated list; `all` selects every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        if s.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        let mut out: Vec<Method> = s.split(',').map(str::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParam(format!("unknown method `{s}`")))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    past_len: usize,
    horizon: usize,
    config: TrainConfig,
    scaler: Scaler,
    naive: Option<NaiveMean>,
    networks: Vec<String>,
    histories: BTreeMap<String, TrainHistory>,
}

/// Every model trained on one dataset split.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub past_len: usize,
    pub horizon: usize,
    pub config: TrainConfig,
    pub scaler: Scaler,
    pub naive: Option<NaiveMean>,
    pub mlp: Option<ForwardMlp>,
    pub cvae: Option<ForwardCvae>,
    pub inverse: Option<InverseCvae>,
    pub flow: Option<FlowPrior>,
    pub histories: BTreeMap<String, TrainHistory>,
}

fn missing<T>(what: &str) -> Result<&T> {
    Err(Error::Missing(format!("{what} is not in the bundle")))
}

impl ModelBundle {
    fn empty(past_len: usize, horizon: usize, config: TrainConfig, scaler: Scaler) -> Self {
        Self {
            past_len,
            horizon,
            config,
            scaler,
            naive: None,
            mlp: None,
            cvae: None,
            inverse: None,
            flow: None,
            histories: BTreeMap::new(),
        }
    }

    /// Trains whatever `methods` need. The retrodictive methods also pull in
    /// the forward CVAE, whose prediction seeds the first MAP restart.
    pub fn train(ds: &WindowedDataset, config: &TrainConfig, methods: &[Method]) -> Result<Self> {
        config.validate()?;
        if methods.is_empty() {
            return Err(Error::InvalidParam("no methods selected".into()));
        }
        let (n, m) = (ds.config.past_len, ds.config.horizon);
        let data = TrainData::from_dataset(ds);
        let mut b = Self::empty(n, m, config.clone(), ds.scaler);
        let wants = |ms: &[Method]| methods.iter().any(|x| ms.contains(x));
        let arch = &config.arch;
        if wants(&[Method::Naive]) {
            b.naive = Some(NaiveMean::fit(&ds.y_split(Split::Train))?);
        }
        if wants(&[Method::Mlp]) {
            let mut net = ForwardMlp::new(n, m, arch, config.seed)?;
            b.histories.insert("mlp".into(), net.fit(&data, config)?);
            b.mlp = Some(net);
        }
        if wants(&[Method::Cvae, Method::InvFlow, Method::InvGauss]) {
            let mut net = ForwardCvae::new(n, m, arch, config.seed)?;
            b.histories.insert("cvae".into(), net.fit(&data, config)?);
            b.cvae = Some(net);
        }
        if wants(&[Method::InvFlow, Method::InvGauss]) {
            let mut net = InverseCvae::new(n, m, arch, config.seed)?;
            b.histories.insert("inverse".into(), net.fit(&data, config)?);
            b.inverse = Some(net);
        }
        if wants(&[Method::InvFlow]) {
            let mut net = FlowPrior::new(m, arch, config.seed)?;
            b.histories.insert("flow".into(), net.fit(&data, config)?);
            b.flow = Some(net);
        }
        Ok(b)
    }

    pub fn naive(&self) -> Result<&NaiveMean> {
        self.naive.as_ref().map_or_else(|| missing("naive mean"), Ok)
    }

    pub fn mlp(&self) -> Result<&ForwardMlp> {
        self.mlp.as_ref().map_or_else(|| missing("forward MLP"), Ok)
    }

    pub fn cvae(&self) -> Result<&ForwardCvae> {
        self.cvae.as_ref().map_or_else(|| missing("forward CVAE"), Ok)
    }

    pub fn inverse(&self) -> Result<&InverseCvae> {
        self.inverse.as_ref().map_or_else(|| missing("inverse CVAE"), Ok)
    }

    pub fn flow(&self) -> Result<&FlowPrior> {
        self.flow.as_ref().map_or_else(|| missing("flow prior"), Ok)
    }

    /// Writes `manifest.json` and one `.bin`/`.json` pair per network.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut networks = Vec::new();
        let stores = [
            ("mlp", self.mlp.as_ref().map(|n| n.store())),
            ("cvae", self.cvae.as_ref().map(|n| n.store())),
            ("inverse", self.inverse.as_ref().map(|n| n.store())),
            ("flow", self.flow.as_ref().map(|n| n.store())),
        ];
        for (name, store) in stores {
            if let Some(store) = store {
                store.save(dir, name)?;
                networks.push(name.to_string());
            }
        }
        let manifest = Manifest {
            past_len: self.past_len,
            horizon: self.horizon,
            config: self.config.clone(),
            scaler: self.scaler,
            naive: self.naive.clone(),
            networks,
            histories: self.histories.clone(),
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let man: Manifest = serde_json::from_slice(&bytes)?;
        let (n, m, cfg) = (man.past_len, man.horizon, &man.config);
        let mut b = Self::empty(n, m, cfg.clone(), man.scaler);
        b.naive = man.naive;
        b.histories = man.histories;
        for name in &man.networks {
            match name.as_str() {
                "mlp" => {
                    let mut net = ForwardMlp::new(n, m, &cfg.arch, cfg.seed)?;
                    net.store_mut().load_into(dir, name)?;
                    b.mlp = Some(net);
                }
                "cvae" => {
                    let mut net = ForwardCvae::new(n, m, &cfg.arch, cfg.seed)?;
                    net.store_mut().load_into(dir, name)?;
                    b.cvae = Some(net);
                }
                "inverse" => {
                    let mut net = InverseCvae::new(n, m, &cfg.arch, cfg.seed)?;
                    net.store_mut().load_into(dir, name)?;
                    b.inverse = Some(net);
                }
                "flow" => {
                    let mut net = FlowPrior::new(m, &cfg.arch, cfg.seed)?;
                    net.store_mut().load_into(dir, name)?;
                    b.flow = Some(net);
                }
                other => return Err(Error::InvalidParam(format!("unknown network `{other}` in manifest"))),
            }
        }
        Ok(b)
    }
}
