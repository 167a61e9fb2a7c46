//! JSON instance files.
//!
//! `profiles[i]` is agent i's delegation profile (a row per agent); the
//! engine transposes it into column i of the delegation matrix. Agent
//! indices inside `neighborhoods` are 1-based.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delegation::{DelegationMatrix, WeightSource};
use crate::error::Error;
use crate::game::{PreferenceProfile, StrategySpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    pub profiles: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighborhoods: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed instance: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {0}")]
    Invalid(#[from] Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub matrix: DelegationMatrix,
    pub source: WeightSource,
    pub preferences: Option<PreferenceProfile>,
    pub epsilon: Option<f64>,
    pub space: Option<StrategySpace>,
}

impl Instance {
    pub fn new(matrix: DelegationMatrix) -> Self {
        let n = matrix.n();
        Self {
            matrix,
            source: WeightSource::uniform(n),
            preferences: None,
            epsilon: None,
            space: None,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn from_file(file: InstanceFile) -> Result<Self, Error> {
        let n = file.n;
        if file.profiles.len() != n {
            return Err(Error::DimensionMismatch {
                what: "profiles",
                expected: n,
                found: file.profiles.len(),
            });
        }
        let matrix = DelegationMatrix::from_rows(&file.profiles)?;
        let source = match file.f {
            Some(f) => {
                let s = WeightSource::new(f);
                s.check_agents(n)?;
                s
            }
            None => WeightSource::uniform(n),
        };
        let preferences = file.preferences.map(PreferenceProfile::new).transpose()?;
        if let Some(w) = &preferences {
            if w.n() != n {
                return Err(Error::DimensionMismatch {
                    what: "preferences",
                    expected: n,
                    found: w.n(),
                });
            }
        }
        let space = match file.neighborhoods {
            Some(nb) => {
                if nb.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "neighborhoods",
                        expected: n,
                        found: nb.len(),
                    });
                }
                let zero_based = nb
                    .into_iter()
                    .map(|set| {
                        set.into_iter()
                            .map(|t| match t {
                                0 => Err(Error::IndexOutOfRange { index: 0, n }),
                                t => Ok(t - 1),
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(StrategySpace::restricted(zero_based)?)
            }
            None => None,
        };
        if let Some(e) = file.epsilon {
            crate::delegation::check_epsilon(e)?;
        }
        Ok(Self {
            matrix,
            source,
            preferences,
            epsilon: file.epsilon,
            space,
        })
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            n: self.n(),
            profiles: self.matrix.rows(),
            f: Some(self.source.values().to_vec()),
            preferences: self.preferences.as_ref().map(|w| w.rows().to_vec()),
            epsilon: self.epsilon,
            neighborhoods: self.space.as_ref().map(|s| {
                s.neighborhoods()
                    .iter()
                    .map(|nb| nb.iter().map(|t| t + 1).collect())
                    .collect()
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self, LoadError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Ok(Self::from_file(file)?)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("instance serializes")
    }

    /// The strategy space, defaulting to unrestricted.
    pub fn space_or_full(&self) -> StrategySpace {
        self.space
            .clone()
            .unwrap_or_else(|| StrategySpace::full(self.n()))
    }
}
