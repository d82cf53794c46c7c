use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::train::EpochLog;
use crate::error::{GrapeError, Result};

/// One evaluated run, tagged with its grid coordinates (empty for a plain
/// train run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub labels: BTreeMap<String, String>,
    pub report: EvalReport,
}

fn csv_err(path: &Path, e: csv::Error) -> GrapeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GrapeError::io(path, io),
        other => GrapeError::Ingestion(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `report.csv` (one row per run and cutoff) and `report.json`.
///
/// CSV columns: `run`, one column per label, `split`, `seed`, `epoch`,
/// `cutoff`, `hr`, `ndcg`, `mean_<indicator>` (raw scale),
/// `green_<indicator>` (normalized greener-is-higher), `greenness` (mean of
/// the normalized columns), `config_hash`.
pub fn emit_report(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(GrapeError::Contract("no reports to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| GrapeError::io(dir, e))?;
    let labels: BTreeSet<&String> = rows.iter().flat_map(|r| r.labels.keys()).collect();
    let names = &rows[0].report.indicators;

    let path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header = vec!["run".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    header.extend(["split", "seed", "epoch", "cutoff", "hr", "ndcg"].map(String::from));
    header.extend(names.iter().map(|n| format!("mean_{n}")));
    header.extend(names.iter().map(|n| format!("green_{n}")));
    header.extend(["greenness", "config_hash"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for (run, row) in rows.iter().enumerate() {
        let r = &row.report;
        for c in &r.cutoffs {
            let mut rec = vec![run.to_string()];
            rec.extend(labels.iter().map(|l| row.labels.get(*l).cloned().unwrap_or_default()));
            rec.extend([
                r.split.name().to_string(),
                r.meta.seed.to_string(),
                r.meta.epoch.to_string(),
                c.n.to_string(),
                c.hr.to_string(),
                c.ndcg.to_string(),
            ]);
            rec.extend(c.mean_raw.iter().map(f64::to_string));
            rec.extend(c.mean_green.iter().map(f64::to_string));
            rec.push(c.greenness().to_string());
            rec.push(r.meta.config_hash.clone());
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| GrapeError::io(&path, e))?;

    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(rows)?).map_err(|e| GrapeError::io(&path, e))
}

pub fn read_report_json(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| GrapeError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `training_log.csv`: epoch, losses and validation metrics.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for e in log {
        w.serialize(e).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| GrapeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunMeta;
    use crate::traineval::{CutoffMetrics, Split};

    fn report() -> EvalReport {
        EvalReport {
            split: Split::Test,
            indicators: vec!["eis".into(), "nis".into()],
            users: 3,
            cutoffs: [5, 10, 20]
                .iter()
                .map(|&n| CutoffMetrics {
                    n,
                    hr: 0.1 * n as f64 / 20.0,
                    ndcg: 0.05,
                    mean_raw: vec![80.0 + 1.0 / 3.0, 40.0],
                    mean_green: vec![0.25, 0.5],
                })
                .collect(),
            meta: RunMeta {
                seed: 7,
                epoch: 3,
                config_hash: "ff".into(),
            },
        }
    }

    #[test]
    fn single_report_shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ReportRow {
            labels: BTreeMap::new(),
            report: report(),
        }];
        emit_report(dir.path(), &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "run,split,seed,epoch,cutoff,hr,ndcg,mean_eis,mean_nis,green_eis,green_nis,greenness,config_hash"
        );
        assert!(lines[2].starts_with("0,test,7,3,10,"));
        assert_eq!(read_report_json(&dir.path().join("report.json")).unwrap(), rows);
        assert!(emit_report(dir.path(), &[]).is_err());
    }

    #[test]
    fn training_log_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("training_log.csv");
        let e = EpochLog {
            epoch: 1,
            loss: 0.5,
            normal_loss: 0.6,
            green_loss: 0.2,
            valid_hr10: 0.1,
            valid_ndcg10: 0.05,
        };
        write_training_log(&p, &[e]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch,loss,normal_loss,green_loss,valid_hr10,valid_ndcg10");
    }
}
