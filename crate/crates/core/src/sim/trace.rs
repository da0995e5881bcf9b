//! Per-tick closed-loop records and their CSV form.
//!
//! Columns: `t, q1..qn, qd1..qdn, s, vs, vds, ec, eo, mu, dself, denv, ax, status,
//! T_total, T_dist, T_lin, T_qp`. `ec` is in metres, `ax` is the end-effector acceleration
//! `‖Δ(J_pos q̇)‖/dt` (zero on the first tick) and timings are in seconds. Distances without
//! a counterpart (no obstacle, no self-collision pairs) are written as `inf`. Floats use the
//! shortest representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Vector3};

use crate::ocp::SolveTimings;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub q: DVector<f64>,
    /// Joint rates applied from this tick to the next.
    pub qd: DVector<f64>,
    pub s: f64,
    pub v_s: f64,
    pub vd_s: f64,
    pub e_c: f64,
    pub e_o: f64,
    pub mu: f64,
    pub d_self: f64,
    pub d_env: f64,
    /// `J_pos(q) q̇`; not part of the CSV.
    pub ee_velocity: Vector3<f64>,
    pub ee_acceleration: f64,
    /// Worst QP KKT residual of the tick's solve; not part of the CSV (read back as NaN).
    pub kkt_residual: f64,
    pub status: String,
    pub timings: SolveTimings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub dof: usize,
    pub dt: f64,
    pub records: Vec<TraceRecord>,
}

pub fn csv_header(dof: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=dof).map(|i| format!("q{i}")));
    cols.extend((1..=dof).map(|i| format!("qd{i}")));
    for c in [
        "s", "vs", "vds", "ec", "eo", "mu", "dself", "denv", "ax", "status", "T_total", "T_dist", "T_lin", "T_qp",
    ] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

/// Sets `ee_acceleration` from consecutive `ee_velocity` values.
pub fn fill_accelerations(records: &mut [TraceRecord], dt: f64) {
    if let Some(first) = records.first_mut() {
        first.ee_acceleration = 0.0;
    }
    for k in 1..records.len() {
        let dv = records[k].ee_velocity - records[k - 1].ee_velocity;
        records[k].ee_acceleration = dv.norm() / dt;
    }
}

impl TraceLog {
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.dof);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.t);
            for v in r.q.iter().chain(r.qd.iter()) {
                let _ = write!(out, ",{v}");
            }
            let _ = write!(
                out,
                ",{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.s,
                r.v_s,
                r.vd_s,
                r.e_c,
                r.e_o,
                r.mu,
                r.d_self,
                r.d_env,
                r.ee_acceleration,
                r.status,
                r.timings.total,
                r.timings.distance,
                r.timings.linearization,
                r.timings.qp
            );
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<TraceLog> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|m| Error::parse(path, m))
    }

    /// Reads a trace written by [`TraceLog::to_csv`]. `ee_velocity` is not stored and comes
    /// back as zero; `dt` is the spacing of the first two ticks (zero for a single tick).
    pub fn parse_csv(text: &str) -> std::result::Result<TraceLog, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty trace")?;
        let cols = header.split(',').count();
        if cols < 15 || (cols - 15) % 2 != 0 {
            return Err(format!("unexpected header with {cols} columns"));
        }
        let dof = (cols - 15) / 2;
        if header != csv_header(dof) {
            return Err(format!("header does not match the trace schema for {dof} joints"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(format!("row {}: expected {cols} fields, found {}", i + 1, fields.len()));
            }
            let num = |j: usize| -> std::result::Result<f64, String> {
                fields[j]
                    .parse::<f64>()
                    .map_err(|e| format!("row {}, column {}: {e}", i + 1, j + 1))
            };
            let mut vals = Vec::with_capacity(cols);
            for j in 0..cols {
                if j == 1 + 2 * dof + 9 {
                    vals.push(0.0);
                } else {
                    vals.push(num(j)?);
                }
            }
            let b = 1 + 2 * dof;
            records.push(TraceRecord {
                t: vals[0],
                q: DVector::from_column_slice(&vals[1..1 + dof]),
                qd: DVector::from_column_slice(&vals[1 + dof..b]),
                s: vals[b],
                v_s: vals[b + 1],
                vd_s: vals[b + 2],
                e_c: vals[b + 3],
                e_o: vals[b + 4],
                mu: vals[b + 5],
                d_self: vals[b + 6],
                d_env: vals[b + 7],
                ee_velocity: Vector3::zeros(),
                ee_acceleration: vals[b + 8],
                kkt_residual: f64::NAN,
                status: fields[b + 9].to_string(),
                timings: SolveTimings {
                    total: vals[b + 10],
                    distance: vals[b + 11],
                    linearization: vals[b + 12],
                    qp: vals[b + 13],
                },
            });
        }
        let dt = if records.len() >= 2 { records[1].t - records[0].t } else { 0.0 };
        Ok(TraceLog { dof, dt, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64) -> TraceRecord {
        TraceRecord {
            t,
            q: DVector::from_column_slice(&[0.1, -0.2]),
            qd: DVector::from_column_slice(&[1.0 / 3.0, 1e-300]),
            s: 0.5,
            v_s: 0.05,
            vd_s: -0.0,
            e_c: 1e-4,
            e_o: 2e-3,
            mu: 0.1,
            d_self: f64::INFINITY,
            d_env: 0.3,
            ee_velocity: Vector3::zeros(),
            ee_acceleration: 0.7,
            kkt_residual: 0.0,
            status: "optimal".into(),
            timings: SolveTimings { total: 1e-3, distance: 2e-4, linearization: 3e-4, qp: 4e-4 },
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(2),
            "t,q1,q2,qd1,qd2,s,vs,vds,ec,eo,mu,dself,denv,ax,status,T_total,T_dist,T_lin,T_qp"
        );
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let log = TraceLog { dof: 2, dt: 0.01, records: vec![record(0.0), record(0.01)] };
        let text = log.to_csv();
        let mut back = TraceLog::parse_csv(&text).unwrap();
        for r in &mut back.records {
            assert!(r.kkt_residual.is_nan());
            r.kkt_residual = 0.0;
        }
        assert_eq!(back, log);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(TraceLog::parse_csv("").is_err());
        assert!(TraceLog::parse_csv("a,b,c\n").is_err());
        let log = TraceLog { dof: 2, dt: 0.01, records: vec![record(0.0)] };
        let text = log.to_csv().replace("0.5", "half");
        assert!(TraceLog::parse_csv(&text).is_err());
        let short = log.to_csv().trim_end().rsplit_once(',').unwrap().0.to_string();
        assert!(TraceLog::parse_csv(&short).is_err());
    }

    #[test]
    fn accelerations_from_velocities() {
        let mut recs = vec![record(0.0), record(0.01), record(0.02)];
        recs[1].ee_velocity = Vector3::new(0.0, 0.03, 0.04);
        recs[2].ee_velocity = Vector3::new(0.0, 0.03, 0.04);
        fill_accelerations(&mut recs, 0.01);
        assert_eq!(recs[0].ee_acceleration, 0.0);
        assert!((recs[1].ee_acceleration - 5.0).abs() < 1e-12);
        assert_eq!(recs[2].ee_acceleration, 0.0);
    }
}
