//! Self-describing JSON checkpoints for the score and velocity models.
//!
//! Weights are stored row-major (`weights[out][in]`) and floats are written
//! in shortest round-trip form, so loading a saved checkpoint reproduces the
//! parameters bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, MlpParams};
use crate::data::write_atomic;
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::score::{GammaSource, NoiseSchedule, ScoreModel, Standardization};
use crate::velocity::{CollocationPolicy, LambdaStats, Termination, VelocityModel};

pub const CHECKPOINT_FORMAT: &str = "imsm-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    /// `fan_out` rows of `fan_in` entries.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerDoc>,
}

impl NetworkDoc {
    pub fn from_params(p: &MlpParams) -> Self {
        let layers = p
            .weights
            .iter()
            .zip(&p.biases)
            .map(|(w, b)| LayerDoc {
                weights: w.rows().into_iter().map(|r| r.to_vec()).collect(),
                bias: b.to_vec(),
            })
            .collect();
        Self {
            widths: p.widths.clone(),
            activation: p.activation,
            layers,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        if self.layers.len() + 1 != self.widths.len() {
            return Err(Error::Data(format!(
                "checkpoint lists {} widths but {} layers",
                self.widths.len(),
                self.layers.len()
            )));
        }
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            if layer.weights.len() != fo
                || layer.weights.iter().any(|r| r.len() != fi)
                || layer.bias.len() != fo
            {
                return Err(Error::Data(format!(
                    "layer {l} does not match widths {fi} -> {fo}"
                )));
            }
            let flat: Vec<f64> = layer.weights.iter().flatten().cloned().collect();
            weights.push(
                Array2::from_shape_vec((fo, fi), flat).map_err(|e| Error::Data(e.to_string()))?,
            );
            biases.push(Array1::from(layer.bias.clone()));
        }
        let p = MlpParams {
            widths: self.widths.clone(),
            weights,
            biases,
            activation: self.activation,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Provenance attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub seed: u64,
    /// Hex SHA-256 of the canonical run configuration.
    pub config_digest: String,
    pub software_version: String,
    #[serde(rename = "D")]
    pub diffusion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataStandardization {
    pub enabled: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreDoc {
    pub sigmas: Vec<f64>,
    pub gamma: f64,
    #[serde(rename = "L")]
    pub levels: usize,
    pub sigma_min: f64,
    pub gamma_source: GammaSource,
    pub data_standardization: DataStandardization,
    pub data_bounds: Vec<(f64, f64)>,
    pub data_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityDoc {
    pub known_mask: Vec<bool>,
    pub known_drift: Option<SystemSpec>,
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub collocation: CollocationPolicy,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_scale: f64,
    pub lambda: LambdaStats,
    pub termination: Termination,
    pub baseline_pinn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Body {
    Score(ScoreDoc),
    Velocity(VelocityDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub metadata: Metadata,
    pub network: NetworkDoc,
    pub model: Body,
}

/// Training outcome stored alongside a velocity network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityOutcome {
    pub lambda: LambdaStats,
    pub termination: Termination,
    pub baseline_pinn: bool,
}

impl Checkpoint {
    pub fn from_score(model: &ScoreModel, metadata: Metadata) -> Self {
        let st = &model.standardization;
        Self {
            format: CHECKPOINT_FORMAT.into(),
            metadata,
            network: NetworkDoc::from_params(&model.net),
            model: Body::Score(ScoreDoc {
                sigmas: model.schedule.sigmas.clone(),
                gamma: model.schedule.gamma,
                levels: model.schedule.levels(),
                sigma_min: model.schedule.sigma_min,
                gamma_source: model.schedule.gamma_source,
                data_standardization: DataStandardization {
                    enabled: !st.is_identity(),
                    mean: st.mean.clone(),
                    std: st.std.clone(),
                },
                data_bounds: model.data_bounds.clone(),
                data_std: model.data_std.clone(),
            }),
        }
    }

    pub fn from_velocity(
        model: &VelocityModel,
        outcome: VelocityOutcome,
        metadata: Metadata,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            metadata,
            network: NetworkDoc::from_params(&model.net),
            model: Body::Velocity(VelocityDoc {
                known_mask: model.known_mask.clone(),
                known_drift: model.known_drift.clone(),
                diffusion: model.diffusion,
                collocation: model.collocation,
                input_shift: model.input_shift.clone(),
                input_scale: model.input_scale.clone(),
                output_scale: model.output_scale,
                lambda: outcome.lambda,
                termination: outcome.termination,
                baseline_pinn: outcome.baseline_pinn,
            }),
        }
    }

    pub fn score_model(&self) -> Result<ScoreModel> {
        let Body::Score(doc) = &self.model else {
            return Err(Error::Compatibility(
                "checkpoint holds a velocity model, not a score model".into(),
            ));
        };
        if doc.levels != doc.sigmas.len() {
            return Err(Error::Data(
                "score checkpoint: L does not match sigmas".into(),
            ));
        }
        let schedule = NoiseSchedule {
            sigmas: doc.sigmas.clone(),
            gamma: doc.gamma,
            sigma_min: doc.sigma_min,
            gamma_source: doc.gamma_source,
        };
        let st = &doc.data_standardization;
        let standardization = if st.enabled {
            Standardization {
                mean: st.mean.clone(),
                std: st.std.clone(),
            }
        } else {
            Standardization::identity(doc.data_bounds.len())
        };
        let mut m = ScoreModel::new(
            self.network.to_params()?,
            schedule,
            standardization,
            doc.data_bounds.clone(),
        )?;
        m.data_std = doc.data_std.clone();
        Ok(m)
    }

    pub fn velocity_model(&self) -> Result<(VelocityModel, VelocityOutcome)> {
        let Body::Velocity(doc) = &self.model else {
            return Err(Error::Compatibility(
                "checkpoint holds a score model, not a velocity model".into(),
            ));
        };
        let m = VelocityModel {
            net: self.network.to_params()?,
            known_mask: doc.known_mask.clone(),
            known_drift: doc.known_drift.clone(),
            diffusion: doc.diffusion,
            collocation: doc.collocation,
            input_shift: doc.input_shift.clone(),
            input_scale: doc.input_scale.clone(),
            output_scale: doc.output_scale,
        };
        m.validate()?;
        let outcome = VelocityOutcome {
            lambda: doc.lambda,
            termination: doc.termination,
            baseline_pinn: doc.baseline_pinn,
        };
        Ok((m, outcome))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("malformed checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Compatibility(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT})",
                c.format
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
