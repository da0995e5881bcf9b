//! Summary statistics of a closed-loop trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::trace::TraceLog;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let mut count = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            count += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (count > 0).then(|| Stat { min, max, mean: sum / count as f64 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ticks: usize,
    /// End-effector acceleration (m/s²) over ticks after the first.
    pub ee_acceleration: Stat,
    /// Contouring error norm (cm).
    pub e_c_cm: Stat,
    /// Orientation error norm (rad).
    pub e_o: Stat,
    pub mu_min: f64,
    pub d_self_min: f64,
    pub d_env_min: f64,
    pub s_initial: f64,
    pub s_final: f64,
    pub t_total: Stat,
    pub t_distance: Stat,
    pub t_linearization: Stat,
    pub t_qp: Stat,
    /// Tick counts per solver status, sorted by status name.
    pub status_counts: BTreeMap<String, usize>,
}

pub fn compute_metrics(trace: &TraceLog) -> Result<MetricsReport> {
    let r = &trace.records;
    if r.len() < 2 {
        return Err(Error::Argument(format!("metrics need at least 2 ticks, got {}", r.len())));
    }
    let stat = |f: &dyn Fn(usize) -> f64, from: usize| Stat::of((from..r.len()).map(f)).expect("non-empty");
    let mut status_counts = BTreeMap::new();
    for rec in r {
        *status_counts.entry(rec.status.clone()).or_insert(0) += 1;
    }
    Ok(MetricsReport {
        ticks: r.len(),
        ee_acceleration: stat(&|k| r[k].ee_acceleration, 1),
        e_c_cm: stat(&|k| r[k].e_c * 100.0, 0),
        e_o: stat(&|k| r[k].e_o, 0),
        mu_min: stat(&|k| r[k].mu, 0).min,
        d_self_min: stat(&|k| r[k].d_self, 0).min,
        d_env_min: stat(&|k| r[k].d_env, 0).min,
        s_initial: r[0].s,
        s_final: r[r.len() - 1].s,
        t_total: stat(&|k| r[k].timings.total, 0),
        t_distance: stat(&|k| r[k].timings.distance, 0),
        t_linearization: stat(&|k| r[k].timings.linearization, 0),
        t_qp: stat(&|k| r[k].timings.qp, 0),
        status_counts,
    })
}

impl MetricsReport {
    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("ticks", self.ticks.to_string());
        for (name, s) in [
            ("vdot_ee", &self.ee_acceleration),
            ("e_c_cm", &self.e_c_cm),
            ("e_o", &self.e_o),
        ] {
            put(&format!("{name}_max"), s.max.to_string());
            put(&format!("{name}_mean"), s.mean.to_string());
        }
        put("mu_min", self.mu_min.to_string());
        put("d_self_min", self.d_self_min.to_string());
        put("d_env_min", self.d_env_min.to_string());
        put("s_initial", self.s_initial.to_string());
        put("s_final", self.s_final.to_string());
        for (name, s) in [
            ("t_total", &self.t_total),
            ("t_dist", &self.t_distance),
            ("t_lin", &self.t_linearization),
            ("t_qp", &self.t_qp),
        ] {
            put(&format!("{name}_min"), s.min.to_string());
            put(&format!("{name}_max"), s.max.to_string());
            put(&format!("{name}_mean"), s.mean.to_string());
        }
        for (status, count) in &self.status_counts {
            put(&format!("status_{status}"), count.to_string());
        }
        out
    }

    /// Parses `key=value` lines into a map.
    pub fn parse_text(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: missing '='", i + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    /// Computation-time rows `phase: min max mean` in milliseconds.
    pub fn timing_table(&self) -> String {
        let mut out = format!("{:<14}{:>10}{:>10}{:>10}\n", "phase [ms]", "min", "max", "mean");
        for (name, s) in [
            ("total", &self.t_total),
            ("distance", &self.t_distance),
            ("linearize", &self.t_linearization),
            ("qp", &self.t_qp),
        ] {
            let _ = writeln!(out, "{:<14}{:>10.3}{:>10.3}{:>10.3}", name, s.min * 1e3, s.max * 1e3, s.mean * 1e3);
        }
        out
    }
}

/// Side-by-side table of two reports: one row per quantity (max and mean of `v̇_ee`, `e_c`,
/// `e_o`), one column per trace plus their difference `b − a`.
pub fn comparison_table(label_a: &str, a: &MetricsReport, label_b: &str, b: &MetricsReport) -> String {
    let mut out = format!("{:<22}{:>14}{:>14}{:>14}\n", "metric", label_a, label_b, "delta");
    for (name, va, vb) in [
        ("max(vdot_ee) [m/s^2]", a.ee_acceleration.max, b.ee_acceleration.max),
        ("mean(vdot_ee) [m/s^2]", a.ee_acceleration.mean, b.ee_acceleration.mean),
        ("max(e_c) [cm]", a.e_c_cm.max, b.e_c_cm.max),
        ("mean(e_c) [cm]", a.e_c_cm.mean, b.e_c_cm.mean),
        ("max(e_o) [rad]", a.e_o.max, b.e_o.max),
        ("mean(e_o) [rad]", a.e_o.mean, b.e_o.mean),
    ] {
        let _ = writeln!(out, "{:<22}{:>14.6}{:>14.6}{:>14.6}", name, va, vb, vb - va);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::SolveTimings;
    use crate::sim::trace::{fill_accelerations, TraceRecord};
    use nalgebra::{DVector, Vector3};

    fn trace(velocities: &[Vector3<f64>]) -> TraceLog {
        let dt = 0.01;
        let mut records: Vec<TraceRecord> = velocities
            .iter()
            .enumerate()
            .map(|(k, v)| TraceRecord {
                t: k as f64 * dt,
                q: DVector::zeros(1),
                qd: DVector::zeros(1),
                s: 0.01 * k as f64,
                v_s: 0.0,
                vd_s: 0.0,
                e_c: 0.001 * k as f64,
                e_o: 0.0,
                mu: 0.1,
                d_self: f64::INFINITY,
                d_env: f64::INFINITY,
                ee_velocity: *v,
                ee_acceleration: 0.0,
                kkt_residual: 0.0,
                status: "optimal".into(),
                timings: SolveTimings::default(),
            })
            .collect();
        fill_accelerations(&mut records, dt);
        TraceLog { dof: 1, dt, records }
    }

    #[test]
    fn constant_velocity_has_zero_acceleration() {
        let v = Vector3::new(0.1, -0.2, 0.05);
        let m = compute_metrics(&trace(&[v; 20])).unwrap();
        assert_eq!(m.ee_acceleration.max, 0.0);
        assert_eq!(m.ee_acceleration.mean, 0.0);
    }

    #[test]
    fn single_jump() {
        let mut vs = vec![Vector3::new(0.1, 0.0, 0.0); 10];
        for v in vs.iter_mut().skip(6) {
            v.x += 0.02;
        }
        let m = compute_metrics(&trace(&vs)).unwrap();
        assert!((m.ee_acceleration.max - 0.02 / 0.01).abs() < 1e-12);
        assert!(m.ee_acceleration.max >= m.ee_acceleration.mean);
    }

    #[test]
    fn contouring_error_reported_in_cm() {
        let m = compute_metrics(&trace(&[Vector3::zeros(); 5])).unwrap();
        assert!((m.e_c_cm.max - 0.4).abs() < 1e-12);
        assert!((m.e_c_cm.mean - 0.2).abs() < 1e-12);
        assert_eq!(m.d_env_min, f64::INFINITY);
        assert_eq!(m.status_counts["optimal"], 5);
    }

    #[test]
    fn single_tick_rejected() {
        assert!(compute_metrics(&trace(&[Vector3::zeros()])).is_err());
    }

    #[test]
    fn text_is_parseable() {
        let m = compute_metrics(&trace(&[Vector3::zeros(); 5])).unwrap();
        let map = MetricsReport::parse_text(&m.to_text()).unwrap();
        assert_eq!(map["ticks"], "5");
        assert_eq!(map["e_c_cm_max"].parse::<f64>().unwrap(), m.e_c_cm.max);
    }

    #[test]
    fn comparing_a_report_with_itself_gives_zero_deltas() {
        let m = compute_metrics(&trace(&[Vector3::zeros(); 5])).unwrap();
        let table = comparison_table("a", &m, "a", &m);
        for line in table.lines().skip(1) {
            let delta: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
            assert_eq!(delta, 0.0);
        }
    }
}
