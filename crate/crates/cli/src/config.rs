//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vulab::oracle::{builtin, ProblemSpec};
use vulab::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Campaign {
    Decompose,
    TiltTest,
    Lagrangian,
    Subjet,
    Manifold,
    Appendix,
}

impl Campaign {
    pub const ALL: [Campaign; 6] = [
        Campaign::Decompose,
        Campaign::TiltTest,
        Campaign::Lagrangian,
        Campaign::Subjet,
        Campaign::Manifold,
        Campaign::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Campaign::Decompose => "decompose",
            Campaign::TiltTest => "tilt-test",
            Campaign::Lagrangian => "lagrangian",
            Campaign::Subjet => "subjet",
            Campaign::Manifold => "manifold",
            Campaign::Appendix => "appendix",
        }
    }
}

impl fmt::Display for Campaign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Radii {
    /// Ball radius `ε` around `x̄` (and of the `U`-ball).
    pub eps: f64,
    /// `V`-ball radius; defaults to `eps`.
    pub eps_v: Option<f64>,
    /// Trace radius; defaults to `eps / 4`.
    pub delta: Option<f64>,
    pub tilt_radius: f64,
    /// Box radius for the conjugacy identity grids.
    pub conjugacy: f64,
    /// Dual radius of the `z_U` grid in the conjugacy identity.
    pub conjugacy_dual: f64,
    /// Prox parameter for Moreau envelopes; defaults to a value with `Rλ < 1`.
    pub lambda: Option<f64>,
}

impl Default for Radii {
    fn default() -> Self {
        Radii {
            eps: 0.5,
            eps_v: None,
            delta: None,
            tilt_radius: 0.1,
            conjugacy: 0.2,
            conjugacy_dual: 0.1,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Trace nodes per `U`-axis.
    pub resolution: usize,
    /// Lattice points per axis for the Lagrangian checks.
    pub lagrangian_per_axis: usize,
    pub conjugacy_resolution: usize,
    pub envelope_resolution: usize,
    pub tilt_per_axis: usize,
    /// Unit directions for rank-one profiles.
    pub directions: usize,
    /// Overrides the geometric `t` schedule of the quotients.
    pub t_grid: Option<Vec<f64>>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            resolution: 31,
            lagrangian_per_axis: 9,
            conjugacy_resolution: 401,
            envelope_resolution: 201,
            tilt_per_axis: 5,
            directions: 64,
            t_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub subspace: f64,
    pub convexity: f64,
    pub little_oh: f64,
    pub conjugacy: f64,
    pub c11_refinement: f64,
    pub chain: f64,
    pub taylor: f64,
    pub consistency: f64,
    pub para_convexity: f64,
    pub moreau: f64,
    pub beta_zero: f64,
    pub duality: f64,
    pub u2_containment: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            subspace: 1e-8,
            convexity: 1e-9,
            little_oh: 1e-3,
            conjugacy: 1e-3,
            c11_refinement: 0.25,
            chain: 1e-5,
            taylor: 1e-9,
            consistency: 1e-10,
            para_convexity: 1e-9,
            moreau: 1e-5,
            beta_zero: 1e-6,
            duality: 1e-3,
            u2_containment: 1e-6,
        }
    }
}

fn default_campaign() -> Vec<Campaign> {
    Campaign::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Builtin name or path to a problem JSON file (relative to the config).
    pub problem: String,
    #[serde(default)]
    pub base_point: Option<Vec<f64>>,
    #[serde(default)]
    pub radii: Radii,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_campaign")]
    pub campaign: Vec<Campaign>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Always true: every sample set is a fixed lattice.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

/// Invalid configuration, with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.to_string(), message: message.into() }
}

impl ExperimentConfig {
    pub fn new(problem: impl Into<String>) -> Self {
        ExperimentConfig {
            problem: problem.into(),
            base_point: None,
            radii: Radii::default(),
            grids: Grids::default(),
            tolerances: Tolerances::default(),
            campaign: default_campaign(),
            output_dir: None,
            deterministic: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(if path == "." { "" } else { &path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.problem.trim().is_empty() {
            return Err(err("problem", "must name a builtin or a problem file"));
        }
        if self.campaign.is_empty() {
            return Err(err("campaign", "must list at least one campaign"));
        }
        let positive = |v: f64, path: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(err(path, format!("must be positive, got {v}")))
            }
        };
        let r = &self.radii;
        positive(r.eps, "radii.eps")?;
        positive(r.tilt_radius, "radii.tilt_radius")?;
        positive(r.conjugacy, "radii.conjugacy")?;
        positive(r.conjugacy_dual, "radii.conjugacy_dual")?;
        if let Some(v) = r.eps_v {
            positive(v, "radii.eps_v")?;
        }
        if let Some(v) = r.lambda {
            positive(v, "radii.lambda")?;
        }
        if let Some(d) = r.delta {
            positive(d, "radii.delta")?;
            if d > r.eps {
                return Err(err("radii.delta", format!("must not exceed radii.eps = {}", r.eps)));
            }
        }
        let g = &self.grids;
        for (v, path) in [
            (g.resolution, "grids.resolution"),
            (g.lagrangian_per_axis, "grids.lagrangian_per_axis"),
            (g.conjugacy_resolution, "grids.conjugacy_resolution"),
            (g.envelope_resolution, "grids.envelope_resolution"),
            (g.tilt_per_axis, "grids.tilt_per_axis"),
        ] {
            if v < 3 || v % 2 == 0 {
                return Err(err(path, format!("must be odd and at least 3, got {v}")));
            }
        }
        if g.directions < 4 {
            return Err(err("grids.directions", "must be at least 4"));
        }
        if let Some(t) = &g.t_grid {
            if t.len() < 3 || t.iter().any(|&x| !(x > 0.0)) || t.windows(2).any(|w| w[1] >= w[0]) {
                return Err(err("grids.t_grid", "must be at least 3 positive, strictly decreasing values"));
            }
        }
        if !self.deterministic {
            return Err(err("deterministic", "only deterministic mode is supported"));
        }
        Ok(())
    }

    /// Builds the model; problem files are resolved against `base_dir`.
    pub fn load_model(&self, base_dir: &Path) -> Result<Model, ConfigError> {
        let model = match builtin::<f64>(&self.problem) {
            Ok(m) => m,
            Err(_) => {
                let path = base_dir.join(&self.problem);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| err("problem", format!("not a builtin and unreadable as {}: {e}", path.display())))?;
                let spec = ProblemSpec::from_json(&text).map_err(|e| err("problem", e.to_string()))?;
                spec.build::<f64>().map_err(|e| err("problem", e.to_string()))?
            }
        };
        match &self.base_point {
            Some(x) if x.len() != model.dim() => {
                Err(err("base_point", format!("expected {} coordinates, got {}", model.dim(), x.len())))
            }
            Some(x) => Ok(model.with_base_point(x.clone())),
            None => Ok(model),
        }
    }
}
