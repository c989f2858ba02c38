//! Per-step records, CSV log and JSON metadata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::Metrics;
use super::ScenarioConfig;
use crate::neural_ccm::{CertificateConstants, CertificatePair};
use crate::{ControlVec, DistVec, Error, Result, StateVec, Vec3, N_DRONES};

pub const LOG_FORMAT: &str = "slungload-log-v1";

/// One control step. States and forces are those at the start of the step;
/// `zeta` is held over the step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub x: StateVec,
    pub x_ref: StateVec,
    pub k_star: ControlVec,
    /// `zeta_nn,sat - k*`.
    pub saturated_feedback: ControlVec,
    pub f_delta: ControlVec,
    pub zeta_c: ControlVec,
    /// Realized lifts.
    pub zeta: ControlVec,
    pub delta: DistVec,
    pub delta_hat_t: Vec3,
    pub delta_hat_j: [Vec3; N_DRONES],
    pub delta_hat_perp: [Vec3; N_DRONES],
    /// Ground-truth effective payload disturbance.
    pub delta_t: Vec3,
    /// Ground-truth perpendicular drone disturbances.
    pub delta_perp: [Vec3; N_DRONES],
    pub v_e: f64,
    pub geodesic_error: [f64; N_DRONES],
    pub omega_tilde: [f64; N_DRONES],
    pub thrust: [f64; N_DRONES],
    /// Norm of the state-space perturbation `G (zeta - k) + G_delta delta`
    /// relative to the nominal closed loop under the unsaturated controller.
    pub perturbation_norm: f64,
}

impl SimRecord {
    pub fn payload_error(&self) -> Vec3 {
        (self.x.fixed_rows::<3>(0) - self.x_ref.fixed_rows::<3>(0)).into_owned()
    }

    pub fn state_error_norm(&self) -> f64 {
        (self.x - self.x_ref).norm()
    }

    pub fn delta_t_error(&self) -> f64 {
        (self.delta_hat_t - self.delta_t).norm()
    }

    pub fn delta_perp_error(&self, j: usize) -> f64 {
        (self.delta_hat_perp[j] - self.delta_perp[j]).norm()
    }

    /// `||zeta_j - zeta_c,j||`.
    pub fn lift_error(&self, j: usize) -> f64 {
        (self.zeta - self.zeta_c).fixed_rows::<3>(3 * j).norm()
    }

    pub fn columns() -> Vec<String> {
        let mut c = vec!["t".to_string()];
        let idx = |c: &mut Vec<String>, prefix: &str, n: usize| c.extend((0..n).map(|i| format!("{prefix}_{i}")));
        let xyz = |c: &mut Vec<String>, prefix: &str| c.extend(["x", "y", "z"].map(|a| format!("{prefix}_{a}")));
        idx(&mut c, "x", 18);
        idx(&mut c, "x_ref", 18);
        xyz(&mut c, "payload_err");
        c.push("payload_err_norm".into());
        c.push("state_err_norm".into());
        idx(&mut c, "k_star", 9);
        idx(&mut c, "sat_feedback", 9);
        idx(&mut c, "f_delta", 9);
        idx(&mut c, "zeta_c", 9);
        idx(&mut c, "zeta", 9);
        idx(&mut c, "delta", 12);
        xyz(&mut c, "delta_hat_t");
        for j in 1..=N_DRONES {
            xyz(&mut c, &format!("delta_hat_{j}"));
        }
        for j in 1..=N_DRONES {
            xyz(&mut c, &format!("delta_hat_perp_{j}"));
        }
        xyz(&mut c, "delta_t");
        for j in 1..=N_DRONES {
            xyz(&mut c, &format!("delta_perp_{j}"));
        }
        c.push("delta_t_err_norm".into());
        c.extend((1..=N_DRONES).map(|j| format!("delta_perp_err_norm_{j}")));
        c.push("v_e".into());
        c.extend((1..=N_DRONES).map(|j| format!("geodesic_err_{j}")));
        c.extend((1..=N_DRONES).map(|j| format!("omega_tilde_norm_{j}")));
        c.extend((1..=N_DRONES).map(|j| format!("thrust_{j}")));
        c.extend((1..=N_DRONES).map(|j| format!("lift_err_norm_{j}")));
        c.push("perturbation_norm".into());
        c
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(180);
        let e = self.payload_error();
        v.push(self.t);
        v.extend(self.x.iter());
        v.extend(self.x_ref.iter());
        v.extend(e.iter());
        v.push(e.norm());
        v.push(self.state_error_norm());
        for f in [&self.k_star, &self.saturated_feedback, &self.f_delta, &self.zeta_c, &self.zeta] {
            v.extend(f.iter());
        }
        v.extend(self.delta.iter());
        v.extend(self.delta_hat_t.iter());
        self.delta_hat_j.iter().for_each(|d| v.extend(d.iter()));
        self.delta_hat_perp.iter().for_each(|d| v.extend(d.iter()));
        v.extend(self.delta_t.iter());
        self.delta_perp.iter().for_each(|d| v.extend(d.iter()));
        v.push(self.delta_t_error());
        v.extend((0..N_DRONES).map(|j| self.delta_perp_error(j)));
        v.push(self.v_e);
        v.extend(self.geodesic_error);
        v.extend(self.omega_tilde);
        v.extend(self.thrust);
        v.extend((0..N_DRONES).map(|j| self.lift_error(j)));
        v.push(self.perturbation_norm);
        v
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub step: usize,
    pub t: f64,
    /// `guard`, `allocation`, `degenerate_lift` or `numerical`.
    pub kind: String,
    pub message: String,
}

impl AbortInfo {
    pub fn kind_of(e: &Error) -> String {
        match e {
            Error::GuardViolation { .. } => "guard",
            Error::AllocationSingular { .. } => "allocation",
            Error::DegenerateForce(_) => "degenerate_lift",
            _ => "numerical",
        }
        .to_string()
    }
}

/// Hex SHA-256 of the certificate's weight-file JSON.
pub fn certificate_hash(cert: &CertificatePair) -> Result<String> {
    Ok(hex::encode(Sha256::digest(cert.to_json()?.as_bytes())))
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub config: ScenarioConfig,
    pub certificate_sha256: String,
    pub constants: CertificateConstants,
    pub records: Vec<SimRecord>,
    pub abort: Option<AbortInfo>,
}

/// Companion JSON written next to the CSV log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub format: String,
    pub scenario: String,
    pub seed: u64,
    pub ude_enabled: bool,
    pub rows: usize,
    pub certificate_sha256: String,
    pub constants: CertificateConstants,
    pub abort: Option<AbortInfo>,
    pub metrics: Option<Metrics>,
    pub columns: Vec<String>,
    pub config: ScenarioConfig,
}

impl SimLog {
    pub(crate) fn new(config: ScenarioConfig, cert: &CertificatePair, capacity: usize) -> Result<Self> {
        Ok(Self {
            config,
            certificate_sha256: certificate_hash(cert)?,
            constants: cert.constants(),
            records: Vec::with_capacity(capacity),
            abort: None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }

    pub fn metadata(&self, metrics: Option<Metrics>) -> LogMetadata {
        LogMetadata {
            format: LOG_FORMAT.into(),
            scenario: self.config.name.clone(),
            seed: self.config.seed,
            ude_enabled: self.config.ude_enabled,
            rows: self.records.len(),
            certificate_sha256: self.certificate_sha256.clone(),
            constants: self.constants,
            abort: self.abort.clone(),
            metrics,
            columns: SimRecord::columns(),
            config: self.config.clone(),
        }
    }

    /// CSV with a leading `#` comment line, a header row and one row per
    /// record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(
            out,
            "# {LOG_FORMAT} scenario={} seed={} ude={} dt={} units=SI columns={}",
            self.config.name,
            self.config.seed,
            if self.config.ude_enabled { "on" } else { "off" },
            self.config.dt,
            SimRecord::columns().len()
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SimRecord::columns())?;
        let mut buf = ryu::Buffer::new();
        let mut row = Vec::new();
        for r in &self.records {
            row.clear();
            row.extend(r.values().iter().map(|&v| buf.format(v).to_owned()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir` (the partial log
    /// too when the run aborted).
    pub fn write_files(&self, dir: &Path, metrics: Option<Metrics>) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let stem = self.config.output_stem();
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        self.write_csv(File::create(&csv_path)?)?;
        let meta = serde_json::to_string_pretty(&self.metadata(metrics))?;
        std::fs::write(&json_path, meta + "\n")?;
        Ok((csv_path, json_path))
    }
}
