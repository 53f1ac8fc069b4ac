//! One handle over both model families plus on-disk checkpoints.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::m3gn::{M3gn, M3gnConfig};
use crate::meshgraph::Episode;
use crate::mgn::{MaterialFeature, Mgn, MgnConfig};
use crate::numerics::{ParamStore, Scalar};
use crate::trajectory::{ContextSet, Prediction};

const SPEC_FILE: &str = "model.json";
const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    M3gn(M3gnConfig),
    Mgn(MgnConfig),
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::M3gn(_) => "m3gn",
            ModelSpec::Mgn(c) if c.material == MaterialFeature::Oracle => "mgn_oracle",
            ModelSpec::Mgn(_) => "mgn",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    M3gn(M3gn),
    Mgn(Mgn),
}

impl Model {
    /// Builds the architecture for the node layout and task features of `episode`.
    pub fn build(spec: &ModelSpec, episode: &Episode) -> Result<Self> {
        Ok(match spec {
            ModelSpec::M3gn(c) => Model::M3gn(M3gn::new(c.clone(), episode)?),
            ModelSpec::Mgn(c) => Model::Mgn(Mgn::new(c.clone(), episode)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::M3gn(m) => ModelSpec::M3gn(m.config.clone()),
            Model::Mgn(m) => ModelSpec::Mgn(m.config.clone()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Model::M3gn(_) => "m3gn",
            Model::Mgn(m) if m.config.material == MaterialFeature::Oracle => "mgn_oracle",
            Model::Mgn(_) => "mgn",
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        match self {
            Model::M3gn(m) => m.init(store, rng),
            Model::Mgn(m) => m.init(store, rng),
        }
    }

    /// Fits the input (and for MGN, target) standardisation on `episodes`.
    pub fn fit_stats<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        episodes: &[Episode],
    ) -> Result<()> {
        match self {
            Model::M3gn(m) => m.fit_input_stats(store, episodes),
            Model::Mgn(m) => m.fit_stats(store, episodes),
        }
    }

    /// Positions for frames `anchor ..= T−1` given the context.
    pub fn predict<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<Prediction> {
        match self {
            Model::M3gn(m) => m.predict(store, ctx).map(|(p, _)| p),
            Model::Mgn(m) => m.rollout(store, ctx),
        }
    }
}

/// Architecture description and trained parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let spec_path = dir.join(SPEC_FILE);
        let json = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::Format {
            path: spec_path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
        self.params.save(dir.join(PARAMS_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec_path = dir.join(SPEC_FILE);
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: spec_path.clone(),
            reason: e.to_string(),
        })?;
        let params = ParamStore::load(dir.join(PARAMS_FILE))?;
        Ok(Checkpoint { spec, params })
    }

    pub fn model(&self, episode: &Episode) -> Result<Model> {
        Model::build(&self.spec, episode)
    }
}
