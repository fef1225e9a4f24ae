use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::{DEFAULT_BETA_LOW, DEFAULT_EPSILON};
use crate::dynamics::{AgentState, ControlInput, ACCEL_CAP};
use crate::error::{Error, Result};
use crate::prediction::{Cov2, GaussianControlPrediction, PredictionSource};
use crate::reachability::{GridSpec, InitialSetMargins, Lattice};
use crate::safety::DEFAULT_COLLISION_RADIUS;

/// Straight lane the ego follows: a reference point and a direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub origin: [f64; 2],
    pub heading: f64,
}

impl Lane {
    /// Arc length of the projection of `p` onto the lane.
    pub fn station(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.heading.sin_cos();
        (p[0] - self.origin[0]) * c + (p[1] - self.origin[1]) * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub state: AgentState,
    pub lane: Lane,
    /// Station of the stop line along `lane`, m.
    pub stop_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSpec {
    pub state: AgentState,
    /// True `[u1, u2]` per macro-step.
    pub controls: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPrediction {
    /// Prediction step; the scenario's macro-step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<Cov2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// Zero-mean controls with fixed standard deviations.
    ConstantVelocity {
        sigma: [f64; 2],
        #[serde(default = "default_prediction_steps")]
        steps: usize,
    },
}

fn default_prediction_steps() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub beta_low: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub r_col: f64,
    pub a_max: f64,
    pub horizon: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            beta_low: DEFAULT_BETA_LOW,
            gamma: 0.1,
            epsilon: DEFAULT_EPSILON,
            r_col: DEFAULT_COLLISION_RADIUS,
            a_max: ACCEL_CAP,
            horizon: 3.0,
        }
    }
}

fn default_dt() -> f64 {
    0.5
}

/// A closed-loop run: an ego on a straight lane approaching a stop line and a
/// scripted human whose predictions come from the file or a synthetic predictor.
///
/// `grid`, `lattice` and `margins` override the solver defaults for this
/// scenario only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    pub ego: EgoSpec,
    pub human: HumanSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<ScriptedPrediction>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Lattice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<InitialSetMargins>,
}

fn format_error(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::ScenarioFormat {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

/// Deserialize JSON; errors carry a pointer to the offending value.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        format_error(pointer, e.into_inner().to_string())
    })
}

impl Scenario {
    /// Parse and validate. Errors carry a JSON pointer to the offending value.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario = parse_json(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Number of macro-steps in the run.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format_error("/dt", format!("must be positive, got {}", self.dt)));
        }
        let n = self.duration / self.dt;
        if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(format_error(
                "/duration",
                format!("must be a positive multiple of dt = {}, got {}", self.dt, self.duration),
            ));
        }
        let steps = self.steps();
        if !self.ego.state.is_finite() || self.ego.state.v < 0.0 {
            return Err(format_error("/ego/state", "needs finite values and v >= 0"));
        }
        if !self.human.state.is_finite() {
            return Err(format_error("/human/state", "needs finite values"));
        }
        if self.human.controls.len() < steps {
            return Err(format_error(
                "/human/controls",
                format!("{} entries do not cover {steps} macro-steps", self.human.controls.len()),
            ));
        }
        if let Some(i) = self
            .human
            .controls
            .iter()
            .position(|u| !(u[0].is_finite() && u[1].is_finite()))
        {
            return Err(format_error(format!("/human/controls/{i}"), "non-finite control"));
        }
        let p = &self.params;
        let checks: [(&str, bool, &str); 6] = [
            ("beta_low", p.beta_low > 0.0 && p.beta_low < 1.0, "(0, 1)"),
            ("gamma", p.gamma > 0.0 && p.gamma < 1.0, "(0, 1)"),
            ("epsilon", (0.0..=1.0).contains(&p.epsilon), "[0, 1]"),
            ("r_col", p.r_col >= 0.0 && p.r_col.is_finite(), "[0, inf)"),
            ("a_max", p.a_max > 0.0 && p.a_max <= ACCEL_CAP, "(0, 10]"),
            ("horizon", p.horizon > 0.0 && p.horizon.is_finite(), "(0, inf)"),
        ];
        for (name, ok, range) in checks {
            if !ok {
                return Err(format_error(format!("/params/{name}"), format!("must lie in {range}")));
            }
        }
        match (&self.predictions, &self.predictor) {
            (Some(_), Some(_)) => {
                return Err(format_error("/", "give either predictions or predictor, not both"));
            }
            (None, None) => return Err(format_error("/", "needs predictions or predictor")),
            (Some(list), None) => {
                if list.len() < steps {
                    return Err(format_error(
                        "/predictions",
                        format!("{} entries do not cover {steps} macro-steps", list.len()),
                    ));
                }
                for (i, sp) in list.iter().enumerate() {
                    let pred = self
                        .to_prediction(sp)
                        .map_err(|e| format_error(format!("/predictions/{i}"), e.to_string()))?;
                    if pred.steps() < 2 {
                        return Err(format_error(
                            format!("/predictions/{i}/means"),
                            "needs at least two steps",
                        ));
                    }
                }
            }
            (None, Some(PredictorSpec::ConstantVelocity { sigma, steps })) => {
                if !(sigma[0] > 0.0 && sigma[1] > 0.0) {
                    return Err(format_error("/predictor/sigma", "must be positive"));
                }
                if *steps < 2 {
                    return Err(format_error("/predictor/steps", "needs at least two steps"));
                }
            }
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| format_error("/grid", e.to_string()))?;
        }
        if let (Some(l), g) = (&self.lattice, self.grid.unwrap_or_default()) {
            l.validate(&g).map_err(|e| format_error("/lattice", e.to_string()))?;
        }
        Ok(())
    }

    fn to_prediction(&self, sp: &ScriptedPrediction) -> Result<GaussianControlPrediction> {
        GaussianControlPrediction::new(sp.dt.unwrap_or(self.dt), sp.means.clone(), sp.covariances.clone())
    }

    pub fn prediction_source(&self) -> Result<PredictionSource> {
        match (&self.predictions, &self.predictor) {
            (Some(list), _) => Ok(PredictionSource::Scripted(
                list.iter().map(|sp| self.to_prediction(sp)).collect::<Result<_>>()?,
            )),
            (None, Some(PredictorSpec::ConstantVelocity { sigma, steps })) => Ok(PredictionSource::ConstantVelocity {
                sigma: *sigma,
                steps: *steps,
                dt: self.dt,
            }),
            (None, None) => Err(format_error("/", "needs predictions or predictor")),
        }
    }

    pub fn human_control(&self, step: usize) -> ControlInput {
        let u = self.human.controls[step.min(self.human.controls.len() - 1)];
        ControlInput::new(u[0], u[1])
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.unwrap_or_default()
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice.clone().unwrap_or_default()
    }
}
