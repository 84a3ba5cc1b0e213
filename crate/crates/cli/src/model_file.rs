//! Model JSON: the fitted model plus the original domains of its inputs.

use std::path::Path;

use fepls::io::Domain;
use fepls::pipeline::FeplsModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FORMAT: &str = "fepls-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// Domain of each functional predictor.
    pub x_domains: Vec<Domain>,
    /// Domain of a functional response.
    pub y_domain: Option<Domain>,
    /// Training response grid in original units.
    pub y_grid: Option<Vec<f64>>,
    pub model: FeplsModel,
}

impl ModelFile {
    pub fn new(model: FeplsModel, x_domains: Vec<Domain>, y_domain: Option<Domain>, y_grid: Option<Vec<f64>>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            x_domains,
            y_domain,
            y_grid,
            model,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::User(format!("{}: not a model file ({e})", path.display())))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(CliError::User(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
    }
}
