//! Scenario files (TOML) and their validation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dynamics::AgentState;
use crate::graph::{check_admissible_variation, check_gains, GainPair, Topology};
use crate::protocol::{ProtocolConfig, DEFAULT_KEY_BITS, DEFAULT_SCALE_BITS};

/// Weight draws checked against the admissible-variation condition.
pub const VARIATION_SAMPLES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plaintext,
    Encrypted,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plaintext" => Ok(Mode::Plaintext),
            "encrypted" => Ok(Mode::Encrypted),
            other => Err(format!("unknown mode {other:?} (expected plaintext or encrypted)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKnowledge {
    Known,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub agents: usize,
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub attacker: usize,
    pub target: usize,
    pub weights: WeightKnowledge,
    /// Local agreement radius used to pick the anchor round.
    #[serde(default = "default_agreement_delta")]
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_grid_seeds")]
    pub seeds: u64,
    /// `[attacker, target]` where the target's only neighbor is the attacker.
    pub sole_neighbor: (usize, usize),
    /// `[attacker, target]` where the target has other neighbors too.
    pub multi_neighbor: (usize, usize),
    #[serde(default = "default_slow_factor")]
    pub slow_factor: f64,
    #[serde(default = "default_unknown_delta_a")]
    pub unknown_delta_a: f64,
}

fn default_agreement_delta() -> f64 {
    1e-3
}
fn default_consensus_delta() -> f64 {
    1e-6
}
fn default_grid_seeds() -> u64 {
    20
}
fn default_slow_factor() -> f64 {
    0.8
}
fn default_unknown_delta_a() -> f64 {
    0.02
}
fn default_weight_factor() -> f64 {
    1.0
}
fn default_key_bits() -> u64 {
    DEFAULT_KEY_BITS
}
fn default_scale_bits() -> u32 {
    DEFAULT_SCALE_BITS
}
fn default_mode() -> Mode {
    Mode::Plaintext
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_weight_factor")]
    pub weight_factor: f64,
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    #[serde(default = "default_scale_bits")]
    pub scale_bits: u32,
    #[serde(default)]
    pub rekey_per_round: bool,
    #[serde(default)]
    pub delta_a: f64,
    /// Radius for practical consensus.
    #[serde(default = "default_consensus_delta")]
    pub consensus_delta: f64,
    /// Radius for per-pair local agreement.
    #[serde(default = "default_agreement_delta")]
    pub agreement_delta: f64,
    pub topology: TopologySpec,
    pub gains: GainPair,
    pub initial: InitialSpec,
    #[serde(default)]
    pub attack: Vec<AttackSpec>,
    pub grid: Option<GridSpec>,
}

/// Outcome of the checks run on a parsed config.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub binding_eigenvalue: f64,
    pub gain_slack: f64,
    /// Worst Lyapunov-decrease eigenvalue over sampled weights; `None` for
    /// fixed weights.
    pub variation_margin: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Base topology times `weight_factor`, with `delta_a` attached.
    pub fn topology(&self) -> Result<Topology, HarnessError> {
        let t = Topology::new(
            self.topology.agents,
            self.topology
                .edges
                .iter()
                .map(|&(i, j, w)| (i, j, w * self.weight_factor)),
            0.0,
        )?;
        Ok(t.with_delta_a(self.delta_a)?)
    }

    pub fn initial_states(&self) -> Vec<AgentState> {
        self.initial
            .positions
            .iter()
            .zip(&self.initial.velocities)
            .map(|(&p, &v)| AgentState::new(p, v))
            .collect()
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            key_bits: self.key_bits,
            scale_bits: self.scale_bits,
            seed: self.seed,
            rekey_per_round: self.rekey_per_round,
        }
    }

    pub fn label(&self, agent: usize) -> String {
        self.topology
            .labels
            .get(agent)
            .cloned()
            .unwrap_or_else(|| agent.to_string())
    }

    /// Structural checks, the gain condition and, for `delta_a > 0`, the
    /// admissible-variation check.
    pub fn validate(&self) -> Result<ValidationReport, HarnessError> {
        let invalid = |msg: String| Err(HarnessError::Validation(msg));
        let n = self.topology.agents;
        if self.rounds == 0 {
            return invalid("rounds must be positive".into());
        }
        if !(self.weight_factor.is_finite() && self.weight_factor > 0.0) {
            return invalid(format!("weight_factor must be positive, got {}", self.weight_factor));
        }
        if self.initial.positions.len() != n || self.initial.velocities.len() != n {
            return invalid(format!(
                "initial state needs {n} positions and {n} velocities, got {} and {}",
                self.initial.positions.len(),
                self.initial.velocities.len()
            ));
        }
        if self
            .initial
            .positions
            .iter()
            .chain(&self.initial.velocities)
            .any(|x| !x.is_finite())
        {
            return invalid("initial states must be finite".into());
        }
        if !self.topology.labels.is_empty() && self.topology.labels.len() != n {
            return invalid(format!("{} labels for {n} agents", self.topology.labels.len()));
        }
        for delta in [self.consensus_delta, self.agreement_delta] {
            if !(delta.is_finite() && delta > 0.0) {
                return invalid(format!("agreement radii must be positive, got {delta}"));
            }
        }
        if self.scale_bits == 0 || self.scale_bits > 40 {
            return invalid(format!("scale_bits must be in 1..=40, got {}", self.scale_bits));
        }
        if self.key_bits < 64 || self.key_bits > 4096 {
            return invalid(format!("key_bits must be in 64..=4096, got {}", self.key_bits));
        }
        let topology = self.topology().map_err(|e| HarnessError::Validation(e.to_string()))?;
        for a in &self.attack {
            if topology.edge_index(a.attacker, a.target).is_none() {
                return invalid(format!(
                    "attacker {} and target {} are not neighbors",
                    a.attacker, a.target
                ));
            }
            if !(a.delta.is_finite() && a.delta > 0.0) {
                return invalid(format!("attack delta must be positive, got {}", a.delta));
            }
        }
        if let Some(grid) = &self.grid {
            for (a, b) in [grid.sole_neighbor, grid.multi_neighbor] {
                if topology.edge_index(a, b).is_none() {
                    return invalid(format!("grid pair ({a}, {b}) is not an edge"));
                }
            }
            if topology.degree(grid.sole_neighbor.1) != 1 {
                return invalid(format!("grid sole-neighbor target {} has other neighbors", grid.sole_neighbor.1));
            }
            if topology.degree(grid.multi_neighbor.1) < 2 {
                return invalid(format!("grid multi-neighbor target {} has a single neighbor", grid.multi_neighbor.1));
            }
            if grid.seeds == 0 {
                return invalid("grid needs at least one seed".into());
            }
        }

        let gains = check_gains(&self.gains, &topology.base_laplacian())
            .map_err(|e| HarnessError::Validation(e.to_string()))?;
        if let Some(reason) = gains.violation() {
            return Err(HarnessError::Validation(reason));
        }
        let variation_margin = if self.delta_a > 0.0 {
            Some(self.check_variation(&topology, self.delta_a)?)
        } else {
            None
        };
        Ok(ValidationReport {
            binding_eigenvalue: gains.binding_eigenvalue,
            gain_slack: gains.binding_slack,
            variation_margin,
        })
    }

    pub(crate) fn check_variation(&self, topology: &Topology, delta_a: f64) -> Result<f64, HarnessError> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let report = check_admissible_variation(topology, &self.gains, delta_a, VARIATION_SAMPLES, &mut rng)
            .map_err(|e| HarnessError::Validation(e.to_string()))?;
        if !report.admissible {
            return Err(HarnessError::Validation(format!(
                "delta_a = {delta_a} is not admissible: weight variation breaks the Lyapunov decrease (margin {})",
                report.margin
            )));
        }
        Ok(report.margin)
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: &Path) -> Result<(ScenarioConfig, ValidationReport), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let cfg = ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        HarnessError::Parse(msg) => HarnessError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let report = cfg.validate()?;
    Ok((cfg, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "pair"
rounds = 10

[topology]
agents = 2
edges = [[0, 1, 1.0]]

[gains]
gamma1 = 0.3
gamma2 = 0.6

[initial]
positions = [0.0, 1.0]
velocities = [0.0, 0.0]
"#;

    #[test]
    fn defaults_apply() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Plaintext);
        assert_eq!(cfg.key_bits, 128);
        assert_eq!(cfg.scale_bits, 16);
        assert_eq!(cfg.weight_factor, 1.0);
        assert!(!cfg.rekey_per_round);
        assert!(cfg.validate().unwrap().variation_margin.is_none());
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn ordering_violation_is_reported() {
        let text = MINIMAL.replace("gamma1 = 0.3", "gamma1 = 0.9");
        let err = ScenarioConfig::from_toml_str(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("ordering"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ScenarioConfig::from_toml_str("name = \"x\"\nrounds = \"ten\"\n").unwrap_err();
        assert!(matches!(err, HarnessError::Parse(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(ScenarioConfig::from_toml_str(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn structural_validation() {
        let cases = [
            ("positions = [0.0, 1.0]", "positions = [0.0]", "positions"),
            ("rounds = 10", "rounds = 0", "rounds"),
            ("edges = [[0, 1, 1.0]]", "edges = [[0, 0, 1.0]]", "self-loop"),
        ];
        for (from, to, needle) in cases {
            let text = MINIMAL.replace(from, to);
            let err = ScenarioConfig::from_toml_str(&text).unwrap().validate().unwrap_err();
            assert!(matches!(err, HarnessError::Validation(_)));
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn inadmissible_variation_is_rejected() {
        let text = MINIMAL.replace("rounds = 10", "rounds = 10\ndelta_a = 0.9\nweight_factor = 0.95");
        let err = ScenarioConfig::from_toml_str(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("delta_a"), "{err}");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("encrypted".parse::<Mode>().unwrap(), Mode::Encrypted);
        assert!("cipher".parse::<Mode>().is_err());
    }
}
