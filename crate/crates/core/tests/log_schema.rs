//! The CSV log is the interface consumed by the plotting scripts: a `#`
//! comment line, a header, then one numeric row per step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slungload_core::neural_ccm::{Architecture, CertificateConstants};
use slungload_core::simulator::{metrics, run, LogMetadata, SimRecord};
use slungload_core::{CertificatePair, ScenarioConfig};

/// Columns the plotting scripts read.
const PLOT_COLUMNS: &[&str] = &[
    "t",
    "x_0",
    "x_1",
    "x_2",
    "x_ref_0",
    "x_ref_1",
    "x_ref_2",
    "payload_err_x",
    "payload_err_y",
    "payload_err_z",
    "payload_err_norm",
    "delta_t_err_norm",
    "delta_perp_err_norm_1",
    "delta_perp_err_norm_2",
    "delta_perp_err_norm_3",
    "zeta_c_0",
    "zeta_8",
    "sat_feedback_0",
    "f_delta_0",
    "k_star_0",
    "v_e",
];

fn cert() -> CertificatePair {
    let arch = Architecture { hidden: 16, rank: 4, ..Default::default() };
    CertificatePair::init(&arch, &CertificateConstants::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn col(header: &csv::StringRecord, name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

#[test]
fn csv_log_matches_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { seed: 11, ..Default::default() }.with_duration(0.25);
    let log = run(&cfg, &cert()).unwrap();
    let (csv_path, json_path) = log.write_files(dir.path(), Some(metrics(&log).unwrap())).unwrap();
    assert_eq!(csv_path.file_name().unwrap(), "figure8_11_on.csv");
    assert_eq!(json_path.file_name().unwrap(), "figure8_11_on.json");

    let text = std::fs::read_to_string(&csv_path).unwrap();
    let comment = text.lines().next().unwrap();
    assert!(comment.starts_with("# slungload-log-v1 "));
    for field in ["scenario=figure8", "seed=11", "ude=on", "units=SI"] {
        assert!(comment.contains(field), "{comment}");
    }

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), SimRecord::columns());
    for name in PLOT_COLUMNS {
        col(&header, name);
    }
    let rows: Vec<Vec<f64>> =
        reader.records().map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 250);

    let (t, x0, r0, e0, en) = (
        col(&header, "t"),
        col(&header, "x_0"),
        col(&header, "x_ref_0"),
        col(&header, "payload_err_x"),
        col(&header, "payload_err_norm"),
    );
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), header.len());
        assert!(row.iter().all(|v| v.is_finite()));
        assert!((row[t] - k as f64 * 1e-3).abs() < 1e-12);
        assert!((row[e0] - (row[x0] - row[r0])).abs() < 1e-12);
        let norm = (0..3).map(|i| row[e0 + i].powi(2)).sum::<f64>().sqrt();
        assert!((row[en] - norm).abs() < 1e-12);
    }
    // Values are written losslessly.
    assert_eq!(rows[100], log.records[100].values());

    let meta: LogMetadata = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(meta.columns, SimRecord::columns());
    assert_eq!(meta.rows, 250);
    assert_eq!(meta.config, cfg);
    assert!(meta.abort.is_none());
}
