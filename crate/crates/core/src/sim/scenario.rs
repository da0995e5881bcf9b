//! Scenario files and generators.
//!
//! ```toml
//! name = "lemniscate_obstacle"
//! robot = "../panda.toml"        # relative to this file; omitted: shipped Panda
//! ocp = "../ocp.toml"            # omitted: defaults
//! controller = "rmpcc"           # or "tt_mpc"
//! duration = 24.0                # s
//! dt = 0.01                      # s, must equal the OCP step
//! seed = 1
//! noise_std = 0.0                # rad, joint noise added after each plant step
//! record_timings = true          # false writes zero timing columns
//! q0 = [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785]
//!
//! [path]                         # anchored at the end-effector pose of q0
//! kind = "lemniscate"            # "lemniscate", "line" or "file"
//! scale = 0.3                    # lemniscate: half width (m)
//! n_points = 25
//! depth = 0.05                   # m, amplitude of the offset along the plane normal
//! tilt = 0.2                     # rad, lean of the tool toward the tangent
//! # line:  displacement = [0.0, 0.25, 0.0]
//! # file:  file = "path.txt"     # absolute poses, one "px py pz qw qx qy qz" per line
//!
//! [obstacle]
//! radius = 0.16
//! track = [[0.0, 0.9, 0.2, 0.5], [8.0, 0.4, 0.2, 0.5]]   # [t, x, y, z], linear in between
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::Deserialize;

use crate::kinematics::{load_robot, panda, RobotModel, PANDA_READY};
use crate::liegroup::{exp_map, RotationSO3};
use crate::ocp::{load_ocp_config, ControllerKind, OcpConfig};
use crate::pathspline::{load_via_points, PathSpline, ViaPoint};
use crate::distancefield::ObstacleSphere;
use crate::{Error, Result};

/// Sphere moving linearly between timed waypoints; held at the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    pub radius: f64,
    pub waypoints: Vec<(f64, Vector3<f64>)>,
}

impl ObstacleTrack {
    pub fn new(radius: f64, waypoints: Vec<(f64, Vector3<f64>)>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Scenario(format!("obstacle radius must be positive, got {radius}")));
        }
        if waypoints.is_empty() {
            return Err(Error::Scenario("obstacle track has no waypoints".into()));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Scenario("obstacle track times must increase strictly".into()));
        }
        if waypoints.iter().any(|(t, c)| !t.is_finite() || !c.iter().all(|v| v.is_finite())) {
            return Err(Error::Scenario("obstacle track contains a non-finite value".into()));
        }
        Ok(ObstacleTrack { radius, waypoints })
    }

    pub fn parked(radius: f64, center: Vector3<f64>) -> Result<Self> {
        Self::new(radius, vec![(0.0, center)])
    }

    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return w[0].1;
        }
        for pair in w.windows(2) {
            let (t0, c0) = pair[0];
            let (t1, c1) = pair[1];
            if t <= t1 {
                let a = (t - t0) / (t1 - t0);
                return c0 + (c1 - c0) * a;
            }
        }
        w[w.len() - 1].1
    }

    pub fn sphere_at(&self, t: f64) -> ObstacleSphere {
        ObstacleSphere::new(self.center_at(t), self.radius).expect("radius validated on construction")
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotModel,
    pub ocp: OcpConfig,
    pub via_points: Vec<ViaPoint>,
    pub q0: DVector<f64>,
    pub obstacle: Option<ObstacleTrack>,
    pub duration: f64,
    pub dt: f64,
    pub controller: ControllerKind,
    pub seed: u64,
    pub noise_std: f64,
    pub record_timings: bool,
}

impl Scenario {
    /// Number of logged ticks, `duration/dt + 1`.
    pub fn tick_count(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scenario(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return fail(format!("duration {} is not a multiple of dt {}", self.duration, self.dt));
        }
        if self.dt != self.ocp.dt {
            return fail(format!("scenario dt {} differs from the controller step {}", self.dt, self.ocp.dt));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        self.robot.validate().map_err(|e| Error::Scenario(e.to_string()))?;
        self.ocp.validate().map_err(|e| Error::Scenario(e.to_string()))?;
        if self.q0.len() != self.robot.dof() {
            return fail(format!("q0 has {} entries, the robot has {} joints", self.q0.len(), self.robot.dof()));
        }
        for i in 0..self.q0.len() {
            if !(self.q0[i] >= self.robot.q_min[i] && self.q0[i] <= self.robot.q_max[i]) {
                return fail(format!("q0[{i}] = {} is outside the joint limits", self.q0[i]));
            }
        }
        self.spline()?;
        Ok(())
    }

    pub fn spline(&self) -> Result<PathSpline> {
        PathSpline::build(&self.via_points).map_err(|e| Error::Scenario(format!("path: {e}")))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Self::load_with(path, &ScenarioOverrides::default())
    }

    pub fn load_with(path: &Path, overrides: &ScenarioOverrides) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with(&text, base, overrides).map_err(|e| match e {
            Error::Argument(m) => Error::parse(path, m),
            other => other,
        })
    }

    /// Parses a scenario; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Scenario> {
        Self::parse_with(text, base_dir, &ScenarioOverrides::default())
    }

    pub fn parse_with(text: &str, base_dir: &Path, overrides: &ScenarioOverrides) -> Result<Scenario> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Argument(e.to_string()))?;
        let resolve = |p: &str| -> PathBuf { base_dir.join(p) };
        let robot_path = overrides.robot.clone().or_else(|| file.robot.as_deref().map(resolve));
        let robot = match &robot_path {
            Some(p) => load_robot(p)?,
            None => panda(),
        };
        let ocp_path = overrides.ocp.clone().or_else(|| file.ocp.as_deref().map(resolve));
        let mut ocp = match &ocp_path {
            Some(p) => load_ocp_config(p)?,
            None => OcpConfig::default(),
        };
        if let Some(threads) = overrides.threads {
            ocp.threads = threads;
        }
        let controller = overrides.controller.unwrap_or(file.controller);
        let q0 = match &file.q0 {
            Some(v) => DVector::from_column_slice(v),
            None if robot.dof() == PANDA_READY.len() => DVector::from_column_slice(&PANDA_READY),
            None => return Err(Error::Scenario("q0 is required for this robot".into())),
        };
        let dt = file.dt.unwrap_or(ocp.dt);
        if q0.len() != robot.dof() {
            return Err(Error::Scenario(format!("q0 has {} entries, the robot has {} joints", q0.len(), robot.dof())));
        }
        let start = robot.forward_kinematics(&q0).ee;
        let via_points = match file.path {
            PathSpec::Lemniscate { scale, n_points, depth, tilt } => {
                let params = LemniscateParams { scale, n_points, depth, tilt };
                lemniscate_via_points(&params, &start.position, &start.orientation)?
            }
            PathSpec::Line { displacement } => ViaPoint::equally_spaced(&[
                (start.position, start.orientation),
                (start.position + Vector3::from(displacement), start.orientation),
            ]),
            PathSpec::File { file } => load_via_points(&resolve(&file))?,
        };
        let obstacle = file
            .obstacle
            .map(|o| {
                ObstacleTrack::new(
                    o.radius,
                    o.track.iter().map(|w| (w[0], Vector3::new(w[1], w[2], w[3]))).collect(),
                )
            })
            .transpose()?;
        let scenario = Scenario {
            name: file.name,
            robot,
            ocp,
            via_points,
            q0,
            obstacle,
            duration: file.duration,
            dt,
            controller,
            seed: file.seed,
            noise_std: file.noise_std,
            record_timings: overrides.record_timings.unwrap_or(file.record_timings),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Command-line replacements for scenario entries. Override paths are used as given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOverrides {
    pub robot: Option<PathBuf>,
    pub ocp: Option<PathBuf>,
    pub controller: Option<ControllerKind>,
    pub threads: Option<usize>,
    pub record_timings: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    robot: Option<String>,
    ocp: Option<String>,
    #[serde(default)]
    controller: ControllerKind,
    duration: f64,
    dt: Option<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise_std: f64,
    #[serde(default = "default_true")]
    record_timings: bool,
    q0: Option<Vec<f64>>,
    path: PathSpec,
    obstacle: Option<ObstacleFile>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PathSpec {
    Lemniscate {
        scale: f64,
        n_points: usize,
        #[serde(default)]
        depth: f64,
        #[serde(default)]
        tilt: f64,
    },
    Line {
        displacement: [f64; 3],
    },
    File {
        file: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    radius: f64,
    track: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemniscateParams {
    /// Half width of the figure eight (m); the height is half of it.
    pub scale: f64,
    pub n_points: usize,
    /// Amplitude of the offset along the plane normal (m).
    pub depth: f64,
    /// Peak lean of the tool toward the path tangent (rad).
    pub tilt: f64,
}

impl LemniscateParams {
    pub fn new(scale: f64, n_points: usize) -> Self {
        LemniscateParams { scale, n_points, depth: 0.0, tilt: 0.0 }
    }
}

/// Via-points on a Gerono lemniscate in the world y–z plane through `origin`:
/// `p(θ) = origin + (depth sin θ, scale sin θ, (scale/2) sin 2θ)` for `θ = 2πi/(n−1)`.
/// Orientations are `Exp(tilt sin θ · (x̂ × t̂(θ))) · base`, so the first and last via-points
/// sit at `origin` with orientation `base`.
pub fn lemniscate_via_points(
    params: &LemniscateParams,
    origin: &Vector3<f64>,
    base: &RotationSO3,
) -> Result<Vec<ViaPoint>> {
    let LemniscateParams { scale, n_points, depth, tilt } = *params;
    if n_points < 8 {
        return Err(Error::Scenario(format!("a lemniscate needs at least 8 via-points, got {n_points}")));
    }
    if !(scale > 0.0 && scale.is_finite() && depth.is_finite() && tilt.is_finite()) {
        return Err(Error::Scenario("lemniscate parameters must be finite with a positive scale".into()));
    }
    let normal = Vector3::x();
    let poses: Vec<_> = (0..n_points)
        .map(|i| {
            let theta = if i + 1 == n_points {
                std::f64::consts::TAU
            } else {
                std::f64::consts::TAU * i as f64 / (n_points - 1) as f64
            };
            let offset = Vector3::new(depth * theta.sin(), scale * theta.sin(), 0.5 * scale * (2.0 * theta).sin());
            let tangent = Vector3::new(depth * theta.cos(), scale * theta.cos(), scale * (2.0 * theta).cos()).normalize();
            let axis = normal.cross(&tangent);
            let lean = exp_map(&(axis * (tilt * theta.sin())));
            (origin + offset, lean * *base)
        })
        .collect();
    Ok(ViaPoint::equally_spaced(&poses))
}

/// Unobstructed lemniscate for the shipped Panda, anchored at the ready pose.
pub fn lemniscate_scenario(scale: f64, n_points: usize) -> Result<Scenario> {
    let robot = panda();
    let q0 = DVector::from_column_slice(&PANDA_READY);
    let start = robot.forward_kinematics(&q0).ee;
    let via_points = lemniscate_via_points(&LemniscateParams::new(scale, n_points), &start.position, &start.orientation)?;
    let ocp = OcpConfig::default();
    let duration = (1.2 / ocp.weights.v_desired / ocp.dt).round() * ocp.dt;
    let scenario = Scenario {
        name: "lemniscate".into(),
        robot,
        dt: ocp.dt,
        ocp,
        via_points,
        q0,
        obstacle: None,
        duration,
        controller: ControllerKind::Rmpcc,
        seed: 0,
        noise_std: 0.0,
        record_timings: true,
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::log_map;

    #[test]
    fn first_lemniscate_point_is_origin_with_base_orientation() {
        let s = lemniscate_scenario(0.3, 8).unwrap();
        let start = s.robot.forward_kinematics(&s.q0).ee;
        assert_eq!(s.via_points[0].position, start.position);
        assert!(log_map(&(start.orientation.transpose() * s.via_points[0].orientation)).unwrap().norm() < 1e-15);
        // Closed-form point at θ = 2π/7.
        let th = std::f64::consts::TAU / 7.0;
        let expected = start.position + Vector3::new(0.0, 0.3 * th.sin(), 0.15 * (2.0 * th).sin());
        assert!((s.via_points[1].position - expected).norm() < 1e-15);
    }

    #[test]
    fn lemniscate_closes() {
        let pts = lemniscate_via_points(
            &LemniscateParams { scale: 0.3, n_points: 25, depth: 0.05, tilt: 0.2 },
            &Vector3::new(0.3, 0.0, 0.5),
            &RotationSO3::identity(),
        )
        .unwrap();
        assert!((pts[0].position - pts[24].position).norm() < 1e-9);
        assert!(log_map(&(pts[0].orientation.transpose() * pts[24].orientation)).unwrap().norm() < 1e-9);
    }

    #[test]
    fn lemniscate_within_panda_reach() {
        let robot = panda();
        let q0 = DVector::from_column_slice(&PANDA_READY);
        let shoulder = robot.forward_kinematics(&q0).joint_origins[1];
        for n in [8, 16, 25, 64] {
            for scale in [0.1, 0.2, 0.3] {
                let s = lemniscate_scenario(scale, n).unwrap();
                let max = s.via_points.iter().map(|v| (v.position - shoulder).norm()).fold(0.0, f64::max);
                assert!(max < 0.855, "scale {scale}, n {n}: {max}");
            }
        }
    }

    #[test]
    fn too_few_lemniscate_points_rejected() {
        assert!(matches!(lemniscate_scenario(0.3, 7), Err(Error::Scenario(_))));
    }

    #[test]
    fn coincident_via_points_rejected() {
        let text = "name = \"x\"\nduration = 1.0\n[path]\nkind = \"line\"\ndisplacement = [0.0, 0.0, 0.0]\n";
        assert!(matches!(Scenario::parse(text, Path::new(".")), Err(Error::Scenario(_))));
    }

    #[test]
    fn duration_must_be_positive() {
        let text = "name = \"x\"\nduration = 0.0\n[path]\nkind = \"line\"\ndisplacement = [0.0, 0.1, 0.0]\n";
        assert!(matches!(Scenario::parse(text, Path::new(".")), Err(Error::Scenario(_))));
    }

    #[test]
    fn obstacle_track_interpolates_and_holds() {
        let track = ObstacleTrack::new(
            0.16,
            vec![(1.0, Vector3::new(0.0, 0.0, 0.0)), (3.0, Vector3::new(2.0, 0.0, 0.0))],
        )
        .unwrap();
        assert_eq!(track.center_at(0.0), Vector3::zeros());
        assert_eq!(track.center_at(2.0), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(track.center_at(9.0), Vector3::new(2.0, 0.0, 0.0));
        assert!(ObstacleTrack::new(0.16, vec![(1.0, Vector3::zeros()), (1.0, Vector3::zeros())]).is_err());
    }

    #[test]
    fn missing_robot_file_names_the_path() {
        let text = "name = \"x\"\nrobot = \"nope.toml\"\nduration = 1.0\n[path]\nkind = \"line\"\ndisplacement = [0.0, 0.1, 0.0]\n";
        let err = Scenario::parse(text, Path::new("/tmp")).unwrap_err();
        assert!(err.to_string().contains("nope.toml"), "{err}");
    }
}
