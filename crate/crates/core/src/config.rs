//! The single structured run configuration (TOML) shared by every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sim::AgentType;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Prison,
    Narco,
}

impl DomainKind {
    /// Reference map size in cells (width, height).
    pub fn reference_dims(self) -> (usize, usize) {
        match self {
            DomainKind::Prison => (2428, 2428),
            DomainKind::Narco => (7884, 3538),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Prison => "prison",
            DomainKind::Narco => "narco",
        }
    }
}

/// One entry of the blue roster. Radii and speeds are in reference-map cells
/// and are multiplied by `domain.scale` at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub kind: AgentType,
    pub count: usize,
    pub detect_radius: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// Multiplies reference dimensions, radii and speeds.
    pub scale: f64,
    /// Seeds the terrain texture; landmark placement uses the rollout seed.
    pub terrain_seed: u64,
    pub dark_forest_threshold: f64,
    /// Approximate fraction of cells below the dark-forest threshold.
    pub dark_forest_fraction: f64,
    /// Lattice spacing of the coarse terrain noise, in reference cells.
    pub noise_cell: f64,
    pub max_steps: u32,
    pub known_hideouts: usize,
    pub unknown_hideouts: usize,
    pub rendezvous: usize,
    /// Minimum adversary-start to hideout distance, as a fraction of the map width.
    pub hideout_min_distance: f64,
    /// Marine-vessel capture distance in reference cells.
    pub capture_radius: f64,
    /// Global multiplier on every blue detection radius (detection-rate knob).
    pub detection_radius_scale: f64,
    pub agents: Vec<RosterEntry>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self::prison()
    }
}

impl DomainConfig {
    pub fn prison() -> Self {
        Self {
            kind: DomainKind::Prison,
            scale: 1.0 / 16.0,
            terrain_seed: 7,
            dark_forest_threshold: 0.3,
            dark_forest_fraction: 0.15,
            noise_cell: 300.0,
            max_steps: 4320,
            known_hideouts: 3,
            unknown_hideouts: 3,
            rendezvous: 0,
            hideout_min_distance: 0.3,
            capture_radius: 0.0,
            detection_radius_scale: 1.0,
            agents: vec![
                RosterEntry {
                    kind: AgentType::Camera,
                    count: 6,
                    detect_radius: 60.0,
                    speed: 0.0,
                },
                RosterEntry {
                    kind: AgentType::SearchParty,
                    count: 4,
                    detect_radius: 80.0,
                    speed: 1.0,
                },
                RosterEntry {
                    kind: AgentType::Helicopter,
                    count: 1,
                    detect_radius: 150.0,
                    speed: 3.0,
                },
            ],
        }
    }

    pub fn narco() -> Self {
        Self {
            kind: DomainKind::Narco,
            scale: 1.0 / 16.0,
            terrain_seed: 11,
            dark_forest_threshold: 0.3,
            dark_forest_fraction: 0.12,
            noise_cell: 700.0,
            max_steps: 4320,
            known_hideouts: 0,
            unknown_hideouts: 3,
            rendezvous: 2,
            hideout_min_distance: 0.3,
            capture_radius: 20.0,
            detection_radius_scale: 1.0,
            agents: vec![
                RosterEntry {
                    kind: AgentType::Airplane,
                    count: 2,
                    detect_radius: 300.0,
                    speed: 8.0,
                },
                RosterEntry {
                    kind: AgentType::MarineVessel,
                    count: 3,
                    detect_radius: 120.0,
                    speed: 3.0,
                },
            ],
        }
    }

    /// Scaled grid dimensions.
    pub fn dims(&self) -> (usize, usize) {
        let (w, h) = self.kind.reference_dims();
        (
            ((w as f64) * self.scale).round() as usize,
            ((h as f64) * self.scale).round() as usize,
        )
    }

    pub fn blue_count(&self) -> usize {
        self.agents.iter().map(|a| a.count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    /// Reference cells per step.
    pub speed: f64,
    /// Radius within which the adversary notices blue agents (reference cells).
    pub sensing_radius: f64,
    pub evade_timer: u32,
    pub forest_weight: f64,
    /// Upper bound on dark-forest candidates considered when evading.
    pub dark_candidates: usize,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            speed: 1.5,
            sensing_radius: 120.0,
            evade_timer: 60,
            forest_weight: 2.0,
            dark_candidates: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlueConfig {
    /// Steps after the latest detection before the team switches to spiral search.
    pub staleness: u32,
    /// Extrapolation horizon (steps) for the intercept waypoint.
    pub intercept_horizon: f64,
    /// Spiral arm spacing in reference cells.
    pub spiral_spacing: f64,
    pub spiral_turns: u32,
}

impl Default for BlueConfig {
    fn default() -> Self {
        Self {
            staleness: 30,
            intercept_horizon: 30.0,
            spiral_spacing: 60.0,
            spiral_turns: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Agent-state window length H (the window holds H + 1 steps).
    pub history: usize,
    pub stride: usize,
    /// Most recent detections kept per sample (K).
    pub max_detections: usize,
    pub horizons: Vec<u32>,
    pub split: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            history: 8,
            stride: 5,
            max_detections: 16,
            horizons: vec![0, 30, 60],
            split: [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdeMode {
    #[default]
    MixtureMean,
    TopComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub delta: f64,
    pub p_threshold: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub ade_mode: AdeMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            p_threshold: 0.5,
            mc_samples: 1000,
            seed: 0,
            ade_mode: AdeMode::MixtureMean,
        }
    }
}

/// Fully merged configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset label used in reports (e.g. `prisoner_low`).
    pub name: String,
    pub domain: DomainConfig,
    pub adversary: AdversaryConfig,
    pub blue: BlueConfig,
    pub dataset: DatasetConfig,
    pub model: crate::model::ModelConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "prison".into(),
            domain: DomainConfig::prison(),
            adversary: AdversaryConfig::default(),
            blue: BlueConfig::default(),
            dataset: DatasetConfig::default(),
            model: crate::model::ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn short_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn narco() -> Self {
        Self {
            name: "narco".into(),
            domain: DomainConfig::narco(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 prefix of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        short_digest(self.to_toml_string().as_bytes())
    }

    /// Hash over the sections that affect simulation output only.
    pub fn simulation_hash(&self) -> String {
        #[derive(Serialize)]
        struct SimPart<'a> {
            domain: &'a DomainConfig,
            adversary: &'a AdversaryConfig,
            blue: &'a BlueConfig,
        }
        let text = toml::to_string(&SimPart {
            domain: &self.domain,
            adversary: &self.adversary,
            blue: &self.blue,
        })
        .expect("config serializes");
        short_digest(text.as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = &self.domain;
        if !(d.scale >= 1.0 / 64.0 - 1e-12) || d.scale > 1.0 + 1e-12 {
            return bad(format!("domain.scale {} outside [1/64, 1]", d.scale));
        }
        if !(0.0 < d.dark_forest_threshold && d.dark_forest_threshold < 1.0) {
            return bad("domain.dark_forest_threshold must lie in (0,1)".into());
        }
        if !(0.0..1.0).contains(&d.dark_forest_fraction) {
            return bad("domain.dark_forest_fraction must lie in [0,1)".into());
        }
        if d.kind == DomainKind::Prison && d.dark_forest_fraction <= 0.0 {
            return bad("prison maps need a positive dark_forest_fraction".into());
        }
        if d.kind == DomainKind::Narco && (d.rendezvous == 0 || d.unknown_hideouts + d.known_hideouts == 0) {
            return bad("narco maps need at least one rendezvous and one hideout".into());
        }
        if d.kind == DomainKind::Prison && d.known_hideouts + d.unknown_hideouts == 0 {
            return bad("prison maps need at least one hideout".into());
        }
        if d.kind == DomainKind::Prison && d.unknown_hideouts == 0 {
            return bad("prison maps need an unknown hideout as the adversary goal".into());
        }
        if d.max_steps == 0 {
            return bad("domain.max_steps must be positive".into());
        }
        if d.detection_radius_scale < 0.0 {
            return bad("domain.detection_radius_scale must be non-negative".into());
        }
        if d.agents.iter().all(|a| a.count == 0) {
            return bad("roster has no blue agents".into());
        }
        for a in &d.agents {
            if a.kind == AgentType::Adversary {
                return bad("roster may not contain the adversary".into());
            }
            if a.kind == AgentType::Camera && a.speed != 0.0 {
                return bad("cameras must have speed 0".into());
            }
            if a.kind != AgentType::Camera && a.speed <= 0.0 {
                return bad(format!("{:?} speed must be positive", a.kind));
            }
            if a.detect_radius < 0.0 {
                return bad(format!("{:?} detect_radius must be non-negative", a.kind));
            }
        }
        let valid_kinds: &[AgentType] = match d.kind {
            DomainKind::Prison => &[AgentType::Camera, AgentType::SearchParty, AgentType::Helicopter],
            DomainKind::Narco => &[AgentType::Airplane, AgentType::MarineVessel],
        };
        if let Some(a) = d.agents.iter().find(|a| !valid_kinds.contains(&a.kind)) {
            return bad(format!("{:?} agents do not belong to the {} domain", a.kind, d.kind.name()));
        }
        if self.adversary.speed <= 0.0 {
            return bad("adversary.speed must be positive".into());
        }
        if self.adversary.forest_weight < 0.0 {
            return bad("adversary.forest_weight must be non-negative".into());
        }
        if self.blue.spiral_spacing <= 0.0 {
            return bad("blue.spiral_spacing must be positive".into());
        }
        let ratios: f64 = self.dataset.split.iter().sum();
        if (ratios - 1.0).abs() > 1e-6 || self.dataset.split.iter().any(|r| *r < 0.0) {
            return bad("dataset.split ratios must be non-negative and sum to 1".into());
        }
        if self.dataset.stride == 0 || self.dataset.max_detections == 0 {
            return bad("dataset.stride and dataset.max_detections must be positive".into());
        }
        self.model.validate().map_err(ConfigError::Invalid)?;
        if self.eval.delta <= 0.0 || self.eval.mc_samples == 0 {
            return bad("eval.delta and eval.mc_samples must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for cfg in [RunConfig::default(), RunConfig::narco()] {
            cfg.validate().unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = RunConfig::from_toml_str("[domain]\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn moving_camera_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.domain.agents[0].speed = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_dims_scale() {
        let mut d = DomainConfig::prison();
        d.scale = 1.0;
        assert_eq!(d.dims(), (2428, 2428));
        let mut n = DomainConfig::narco();
        n.scale = 1.0;
        assert_eq!(n.dims(), (7884, 3538));
        n.scale = 1.0 / 16.0;
        assert_eq!(n.dims(), (493, 221));
    }
}
