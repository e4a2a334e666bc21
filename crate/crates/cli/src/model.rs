//! Trained model files: reservoir, generator, OLS map and the config that produced them.

use std::path::Path;

use rsig_core::generator::{CondGeneratorParams, GeneratorDoc, GeneratorParams};
use rsig_core::signature::RsParamsDoc;
use rsig_core::training::OlsFit;
use rsig_core::RsParams;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

pub const FORMAT: &str = "rsig-model/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub format: String,
    pub config: ExperimentConfig,
    pub rs: RsParamsDoc,
    pub generator: GeneratorDoc,
    pub past_len: Option<usize>,
    pub ols: Option<OlsFit>,
}

pub enum Generator {
    Uncond(GeneratorParams),
    Cond { gen: CondGeneratorParams, ols: OlsFit },
}

pub struct Model {
    pub config: ExperimentConfig,
    pub rs: RsParams,
    pub generator: Generator,
}

impl Model {
    pub fn to_doc(&self) -> ModelDoc {
        let (generator, past_len, ols) = match &self.generator {
            Generator::Uncond(g) => (GeneratorDoc::from(g), None, None),
            Generator::Cond { gen, ols } => (GeneratorDoc::from(&gen.core), Some(gen.past_len), Some(ols.clone())),
        };
        ModelDoc {
            format: FORMAT.into(),
            config: self.config.clone(),
            rs: RsParamsDoc::from(&self.rs),
            generator,
            past_len,
            ols,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.to_doc()).map_err(CliError::runtime)?;
        std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read model {}: {e}", path.display())))?;
        let doc: ModelDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("invalid model file {}: {e}", path.display())))?;
        if doc.format != FORMAT {
            return Err(CliError::Runtime(format!("unsupported model format {:?}", doc.format)));
        }
        let rs = RsParams::try_from(doc.rs)?;
        let core = GeneratorParams::try_from(doc.generator)?;
        let generator = match (doc.config.mode, doc.past_len, doc.ols) {
            (Mode::Uncond, _, _) => Generator::Uncond(core),
            (Mode::Cond, Some(p), Some(ols)) => Generator::Cond { gen: CondGeneratorParams::from_core(core, p)?, ols },
            (Mode::Cond, _, _) => return Err(CliError::Runtime("conditional model lacks past_len or OLS map".into())),
        };
        Ok(Self { config: doc.config, rs, generator })
    }
}
