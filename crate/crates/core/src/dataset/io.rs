use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use log::info;

use super::{Direction, IndicatorSpec, IndicatorTable, Interaction, InteractionLog};
use crate::error::{GrapeError, Result};

/// Sidecar naming indicator columns and directions: `indicators.csv` ->
/// `indicators.spec.json`.
pub fn sidecar_path(indicators: &Path) -> PathBuf {
    indicators.with_extension("spec.json")
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| GrapeError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> GrapeError {
    GrapeError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn read_header(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect::<Vec<_>>();
    if headers.iter().all(String::is_empty) {
        return Err(GrapeError::Ingestion(format!("{}: empty file", path.display())));
    }
    Ok(headers)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line_of(rec), format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line_of(rec), format!("bad {name} value {raw:?}")))
}

/// Reads `user_id,item_id,timestamp` rows in file order.
pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let mut rdr = reader(path)?;
    let headers = read_header(path, &mut rdr)?;
    if headers != ["user_id", "item_id", "timestamp"] {
        return Err(parse_err(
            path,
            1,
            format!("expected header user_id,item_id,timestamp, got {}", headers.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        if rec.len() != 3 {
            return Err(parse_err(path, line_of(&rec), format!("expected 3 fields, got {}", rec.len())));
        }
        out.push(Interaction {
            user: field(path, &rec, 0, "user_id")?,
            item: field(path, &rec, 1, "item_id")?,
            timestamp: field(path, &rec, 2, "timestamp")?,
        });
    }
    if out.is_empty() {
        return Err(GrapeError::Ingestion(format!("{}: no interactions", path.display())));
    }
    Ok(out)
}

/// Reads the indicator table. Column names and directions come from the
/// sidecar spec when present, otherwise the header must be `item_id,eis,nis,hmi`.
pub fn read_indicators(path: &Path) -> Result<IndicatorTable> {
    let mut rdr = reader(path)?;
    let headers = read_header(path, &mut rdr)?;
    if headers.first().map(String::as_str) != Some("item_id") || headers.len() < 2 {
        return Err(parse_err(path, 1, "header must start with item_id and name at least one indicator"));
    }
    let columns = &headers[1..];
    let side = sidecar_path(path);
    let specs: Vec<IndicatorSpec> = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| GrapeError::io(&side, e))?;
        let specs: Vec<IndicatorSpec> = serde_json::from_str(&text)?;
        let names: Vec<String> = specs.iter().map(|s| s.name.to_ascii_lowercase()).collect();
        if names != columns {
            return Err(GrapeError::Ingestion(format!(
                "{} names {:?} but {} has columns {:?}",
                side.display(),
                names,
                path.display(),
                columns
            )));
        }
        specs
    } else if columns == ["eis", "nis", "hmi"] {
        IndicatorSpec::food_defaults()
    } else {
        return Err(GrapeError::Ingestion(format!(
            "{}: generic indicator columns need a sidecar spec at {}",
            path.display(),
            side.display()
        )));
    };

    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        if rec.len() != headers.len() {
            return Err(parse_err(
                path,
                line_of(&rec),
                format!("expected {} fields, got {}", headers.len(), rec.len()),
            ));
        }
        let id: u64 = field(path, &rec, 0, "item_id")?;
        let mut vals = Vec::with_capacity(columns.len());
        for (k, name) in columns.iter().enumerate() {
            let v: f64 = field(path, &rec, k + 1, name)?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(
                    path,
                    line_of(&rec),
                    format!("indicator {name} must be finite and non-negative, got {v}"),
                ));
            }
            vals.push(v);
        }
        if rows.insert(id, vals).is_some() {
            return Err(parse_err(path, line_of(&rec), format!("duplicate item_id {id}")));
        }
    }
    if rows.is_empty() {
        return Err(GrapeError::Ingestion(format!("{}: no indicator rows", path.display())));
    }
    Ok(IndicatorTable { specs, rows })
}

/// Drops users and items with fewer than `min` interactions until stable.
fn k_core(mut rows: Vec<Interaction>, min: usize) -> Vec<Interaction> {
    loop {
        let mut by_user: HashMap<u64, usize> = HashMap::new();
        let mut by_item: HashMap<u64, usize> = HashMap::new();
        for r in &rows {
            *by_user.entry(r.user).or_default() += 1;
            *by_item.entry(r.item).or_default() += 1;
        }
        let before = rows.len();
        rows.retain(|r| by_user[&r.user] >= min && by_item[&r.item] >= min);
        if rows.len() == before {
            return rows;
        }
    }
}

/// Loads both corpus files and applies iterative `min_interactions` filtering.
pub fn load_corpus(
    interactions: &Path,
    indicators: &Path,
    min_interactions: usize,
) -> Result<(InteractionLog, IndicatorTable)> {
    let rows = read_interactions(interactions)?;
    let table = read_indicators(indicators)?;

    let missing: BTreeSet<u64> = rows
        .iter()
        .map(|r| r.item)
        .filter(|id| !table.rows.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(GrapeError::MissingIndicators(missing.into_iter().collect()));
    }

    let rows = k_core(rows, min_interactions.max(1));
    if rows.is_empty() {
        return Err(GrapeError::Ingestion(format!(
            "no interactions survive filtering at threshold {min_interactions}"
        )));
    }
    let log = InteractionLog::from_rows(rows);
    info!(
        "loaded {} users, {} items, {} interactions",
        log.users,
        log.items,
        log.interactions.len()
    );
    Ok((log, table))
}

pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| wrap_csv(path, e))?;
    w.write_record(["user_id", "item_id", "timestamp"])?;
    for r in rows {
        w.write_record([r.user.to_string(), r.item.to_string(), r.timestamp.to_string()])?;
    }
    w.flush().map_err(|e| GrapeError::io(path, e))
}

/// Writes the indicator table plus its sidecar spec.
pub fn write_indicators(path: &Path, table: &IndicatorTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| wrap_csv(path, e))?;
    let mut header = vec!["item_id".to_string()];
    header.extend(table.specs.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (id, vals) in &table.rows {
        let mut rec = vec![id.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| GrapeError::io(path, e))?;

    let specs: Vec<SpecOut> = table
        .specs
        .iter()
        .map(|s| SpecOut {
            name: &s.name,
            direction: s.direction,
        })
        .collect();
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&specs)?).map_err(|e| GrapeError::io(&side, e))
}

#[derive(serde::Serialize)]
struct SpecOut<'a> {
    name: &'a str,
    direction: Direction,
}

/// Writes `interactions.csv` and `indicators.csv` (+ sidecar) into `dir`.
pub fn write_corpus_files(dir: &Path, rows: &[Interaction], table: &IndicatorTable) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| GrapeError::io(dir, e))?;
    let ip = dir.join("interactions.csv");
    let gp = dir.join("indicators.csv");
    write_interactions(&ip, rows)?;
    write_indicators(&gp, table)?;
    Ok((ip, gp))
}

fn wrap_csv(path: &Path, e: csv::Error) -> GrapeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GrapeError::io(path, io),
        other => GrapeError::Ingestion(format!("{}: {other:?}", path.display())),
    }
}
