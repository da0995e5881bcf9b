//! OCP configuration file.
//!
//! ```toml
//! horizon = 10          # N, states per horizon (inputs: N − 1)
//! dt = 0.01             # s
//! sqp_iters = 2
//! threads = 1           # stage-parallel linearisation
//!
//! [weights]
//! w_c = 500.0
//! w_l = 100.0
//! w_vs = 2.0
//! w_o = 100.0
//! w_qd = 0.002
//! w_dqd = 10.0
//! w_vds = 0.1
//! v_desired = 0.05      # 1/s
//!
//! [bounds]
//! s = [0.0, 1.0]
//! v_s = [-0.2, 0.2]
//! vd_s = [-2.0, 2.0]
//!
//! [barriers]
//! eps_sing = 0.018
//! eps_self = 0.01       # m
//! eps_env = 0.01        # m
//! delta = 0.01          # switch point of the relaxed barrier, all kinds
//! manipulability_gradient = "finite_difference"   # or "analytic"
//! self_distance = "capsule"                        # "softmin" or "mlp"
//! softmin_temperature = 0.005
//! mlp_weights = "self_distance.json"              # relative to this file
//!
//! [qp]
//! max_iter = 4000
//! ```
//!
//! Every key is optional; missing keys take the values shown.

use std::path::Path;

use serde::Deserialize;

use crate::barriers::{DEFAULT_DELTA, EPS_ENV, EPS_SELF, EPS_SINGULARITY};
use crate::distancefield::{MlpModel, SelfDistanceBackend};
use crate::kinematics::GradientMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub w_c: f64,
    pub w_l: f64,
    pub w_vs: f64,
    pub w_o: f64,
    pub w_qd: f64,
    pub w_dqd: f64,
    pub w_vds: f64,
    pub v_desired: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_c: 500.0,
            w_l: 100.0,
            w_vs: 2.0,
            w_o: 100.0,
            w_qd: 0.002,
            w_dqd: 10.0,
            w_vds: 0.1,
            v_desired: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub s: [f64; 2],
    pub v_s: [f64; 2],
    pub vd_s: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            s: [0.0, 1.0],
            v_s: [-0.2, 0.2],
            vd_s: [-2.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSettings {
    pub eps_sing: f64,
    pub eps_self: f64,
    pub eps_env: f64,
    pub delta: f64,
    pub manipulability_gradient: GradientMode,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        BarrierSettings {
            eps_sing: EPS_SINGULARITY,
            eps_self: EPS_SELF,
            eps_env: EPS_ENV,
            delta: DEFAULT_DELTA,
            manipulability_gradient: GradientMode::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpConfig {
    pub horizon: usize,
    pub dt: f64,
    pub sqp_iters: usize,
    pub threads: usize,
    pub weights: Weights,
    pub bounds: Bounds,
    pub barriers: BarrierSettings,
    pub self_distance: SelfDistanceBackend,
    pub qp_max_iter: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            horizon: 10,
            dt: 0.01,
            sqp_iters: 2,
            threads: 1,
            weights: Weights::default(),
            bounds: Bounds::default(),
            barriers: BarrierSettings::default(),
            self_distance: SelfDistanceBackend::Capsule,
            qp_max_iter: 4000,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let positive = [
            ("w_c", w.w_c),
            ("w_l", w.w_l),
            ("w_vs", w.w_vs),
            ("w_o", w.w_o),
            ("w_qd", w.w_qd),
            ("w_dqd", w.w_dqd),
            ("w_vds", w.w_vds),
            ("dt", self.dt),
            ("delta", self.barriers.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon < 2 {
            return Err(Error::Argument(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if self.sqp_iters == 0 || self.threads == 0 {
            return Err(Error::Argument("sqp_iters and threads must be >= 1".into()));
        }
        for (name, b) in [("s", self.bounds.s), ("v_s", self.bounds.v_s), ("vd_s", self.bounds.vd_s)] {
            if !(b[0] <= b[1]) {
                return Err(Error::Argument(format!("bounds.{name} = {b:?} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    horizon: Option<usize>,
    dt: Option<f64>,
    sqp_iters: Option<usize>,
    threads: Option<usize>,
    weights: Weights,
    bounds: Bounds,
    barriers: BarrierFile,
    qp: QpFile,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BarrierFile {
    eps_sing: f64,
    eps_self: f64,
    eps_env: f64,
    delta: f64,
    manipulability_gradient: GradientMode,
    self_distance: String,
    softmin_temperature: f64,
    mlp_weights: Option<String>,
}

impl Default for BarrierFile {
    fn default() -> Self {
        let b = BarrierSettings::default();
        BarrierFile {
            eps_sing: b.eps_sing,
            eps_self: b.eps_self,
            eps_env: b.eps_env,
            delta: b.delta,
            manipulability_gradient: b.manipulability_gradient,
            self_distance: "capsule".into(),
            softmin_temperature: 0.005,
            mlp_weights: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QpFile {
    max_iter: usize,
}

impl Default for QpFile {
    fn default() -> Self {
        QpFile { max_iter: 4000 }
    }
}

/// Parses a configuration; `base_dir` resolves a relative `mlp_weights` path.
pub fn parse_ocp_config(text: &str, base_dir: Option<&Path>) -> Result<OcpConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Argument(format!("OCP config: {e}")))?;
    let defaults = OcpConfig::default();
    let b = &file.barriers;
    let self_distance = match b.self_distance.as_str() {
        "capsule" => SelfDistanceBackend::Capsule,
        "softmin" => SelfDistanceBackend::CapsuleSoftmin {
            temperature: b.softmin_temperature,
        },
        "mlp" => {
            let rel = b
                .mlp_weights
                .as_ref()
                .ok_or_else(|| Error::Argument("self_distance = \"mlp\" needs mlp_weights".into()))?;
            let path = match base_dir {
                Some(dir) => dir.join(rel),
                None => rel.into(),
            };
            SelfDistanceBackend::Mlp(MlpModel::load(&path)?)
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown self_distance backend {other:?} (expected capsule, softmin or mlp)"
            )))
        }
    };
    let config = OcpConfig {
        horizon: file.horizon.unwrap_or(defaults.horizon),
        dt: file.dt.unwrap_or(defaults.dt),
        sqp_iters: file.sqp_iters.unwrap_or(defaults.sqp_iters),
        threads: file.threads.unwrap_or(defaults.threads),
        weights: file.weights,
        bounds: file.bounds,
        barriers: BarrierSettings {
            eps_sing: b.eps_sing,
            eps_self: b.eps_self,
            eps_env: b.eps_env,
            delta: b.delta,
            manipulability_gradient: b.manipulability_gradient,
        },
        self_distance,
        qp_max_iter: file.qp.max_iter,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_ocp_config(path: &Path) -> Result<OcpConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ocp_config(&text, path.parent()).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::parse(path, other),
    })
}
