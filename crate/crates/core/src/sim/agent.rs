use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Camera,
    SearchParty,
    Helicopter,
    Airplane,
    MarineVessel,
    Adversary,
}

impl AgentType {
    pub const ALL: [AgentType; 6] = [
        AgentType::Camera,
        AgentType::SearchParty,
        AgentType::Helicopter,
        AgentType::Airplane,
        AgentType::MarineVessel,
        AgentType::Adversary,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Camera => "camera",
            AgentType::SearchParty => "search_party",
            AgentType::Helicopter => "helicopter",
            AgentType::Airplane => "airplane",
            AgentType::MarineVessel => "marine_vessel",
            AgentType::Adversary => "adversary",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Whether movement is confined to traversable cells.
    pub fn surface_bound(self) -> bool {
        matches!(self, AgentType::MarineVessel | AgentType::Adversary | AgentType::SearchParty)
    }
}

/// Length of the normalized state vector `[x/w, y/h, one_hot(type), t/T_max]`.
pub const STATE_DIM: usize = 2 + AgentType::ALL.len() + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    /// Continuous position in cell units, `0 <= x < width`.
    pub position: (f64, f64),
    pub agent_type: AgentType,
    /// Maximum speed in cells per step.
    pub speed: f64,
    /// Detection radius in cells before terrain attenuation.
    pub detect_radius_base: f64,
    pub timestep: u32,
}

impl AgentState {
    pub fn new(agent_type: AgentType, position: (f64, f64), speed: f64, detect_radius_base: f64) -> Self {
        Self {
            position,
            agent_type,
            speed,
            detect_radius_base,
            timestep: 0,
        }
    }

    /// Normalized state vector with fixed field order.
    pub fn state_vector(&self, width: usize, height: usize, max_steps: u32) -> [f64; STATE_DIM] {
        state_vector(self.position, self.agent_type, self.timestep, width, height, max_steps)
    }
}

pub fn state_vector(
    position: (f64, f64),
    agent_type: AgentType,
    t: u32,
    width: usize,
    height: usize,
    max_steps: u32,
) -> [f64; STATE_DIM] {
    let mut v = [0.0; STATE_DIM];
    v[0] = position.0 / width as f64;
    v[1] = position.1 / height as f64;
    v[2 + agent_type.index()] = 1.0;
    v[STATE_DIM - 1] = t as f64 / max_steps as f64;
    v
}
