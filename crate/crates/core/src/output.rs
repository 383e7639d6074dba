//! CSV, packet-log and manifest files for a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::protocol::encode_packet_log;
use crate::sim::{RunArtifacts, StepRecord};

pub const PACKET_LOG: &str = "packets.bin";
pub const MANIFEST: &str = "run_manifest.json";
pub const METRICS_HISTORY: &str = "shared_vs_self_metrics_history.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: ScenarioConfig,
    /// File name to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn history_csv(shared: &[StepRecord], baseline: Option<&[StepRecord]>) -> String {
    let mut out = String::from(
        "t,shared_local_rmse,self_local_rmse,shared_overlap_rmse,self_overlap_rmse,shared_nlpd,self_nlpd\n",
    );
    for (k, rec) in shared.iter().enumerate() {
        let s = &rec.metrics;
        let b = baseline.and_then(|h| h.get(k)).map(|r| &r.metrics);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.step,
            cell(s.network_local_rmse),
            cell(b.and_then(|m| m.network_local_rmse)),
            cell(s.network_overlap_rmse),
            cell(b.and_then(|m| m.network_overlap_rmse)),
            cell(s.network_local_nlpd),
            cell(b.and_then(|m| m.network_local_nlpd)),
        );
    }
    out
}

/// File name and contents of every output, in a fixed order.
pub fn render(artifacts: &RunArtifacts) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let grid = &artifacts.grid;
    files.push((
        "truth_grid.csv".into(),
        csv(
            "x,y,z",
            grid.iter()
                .zip(&artifacts.truth)
                .map(|(x, z)| vec![x[0].to_string(), x[1].to_string(), z.to_string()]),
        )
        .into_bytes(),
    ));
    let run = &artifacts.shared;
    for map in &run.final_maps {
        files.push((
            format!("final_mean_agent_{}.csv", map.id),
            csv(
                "x,y,z",
                map.indices.iter().zip(&map.predictions).map(|(&i, p)| {
                    vec![grid[i][0].to_string(), grid[i][1].to_string(), p.mean.to_string()]
                }),
            )
            .into_bytes(),
        ));
    }
    for (id, data) in &run.final_data {
        files.push((
            format!("measurements_agent_{id}.csv"),
            csv(
                "x,y",
                data.raw()
                    .iter()
                    .map(|m| vec![m.location[0].to_string(), m.location[1].to_string()]),
            )
            .into_bytes(),
        ));
    }
    for (id, kept) in run.retained() {
        files.push((
            format!("retained_packets_agent_{id}.csv"),
            csv(
                "x,y,time,mean,variance",
                kept.iter().map(|(t, p)| {
                    vec![
                        p.location[0].to_string(),
                        p.location[1].to_string(),
                        t.to_string(),
                        p.mean.to_string(),
                        p.variance.to_string(),
                    ]
                }),
            )
            .into_bytes(),
        ));
    }
    files.push((
        METRICS_HISTORY.into(),
        history_csv(&run.history, artifacts.baseline.as_ref().map(|b| b.history.as_slice())).into_bytes(),
    ));
    files.push((PACKET_LOG.into(), encode_packet_log(run.sent_packets())));
    files
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_outputs(artifacts: &RunArtifacts, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut checksums = BTreeMap::new();
    for (name, bytes) in render(artifacts) {
        let path = dir.join(&name);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        checksums.insert(name, sha256_hex(&bytes));
    }
    let manifest = Manifest {
        seed: artifacts.config.run.seed,
        config: artifacts.config.clone(),
        files: checksums,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_scenario;

    fn small_run() -> RunArtifacts {
        let mut c = ScenarioConfig::preset("paper_sec6").unwrap();
        c.run.steps = 3;
        c.domain.grid_resolution = 11;
        c.protocol.quadrature_resolution = 12;
        run_scenario(&c).unwrap()
    }

    #[test]
    fn history_has_one_row_per_step() {
        let a = small_run();
        let files = render(&a);
        let (_, hist) = files.iter().find(|(n, _)| n == METRICS_HISTORY).unwrap();
        let text = std::str::from_utf8(hist).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').count(), 7);
            assert!(line.split(',').all(|c| !c.is_empty()));
        }
    }

    #[test]
    fn floats_round_trip_through_csv() {
        let a = small_run();
        let files = render(&a);
        let (_, truth) = files.iter().find(|(n, _)| n == "truth_grid.csv").unwrap();
        let text = std::str::from_utf8(truth).unwrap();
        for (line, z) in text.lines().skip(1).zip(&a.truth) {
            let back: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(back.to_bits(), z.to_bits());
        }
    }

    #[test]
    fn missing_baseline_leaves_empty_cells() {
        let mut a = small_run();
        a.baseline = None;
        let text = history_csv(&a.shared.history, None);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert!(row[2].is_empty() && row[4].is_empty() && row[6].is_empty());
        assert!(!row[1].is_empty());
    }
}
