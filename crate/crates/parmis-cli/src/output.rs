//! Run-directory layout and (de)serialization of results.
//!
//! ```text
//! <out_dir>/
//!   summary.csv              strategy, seed, phv, evals, wall seconds
//!   seed_<N>/
//!     summary.json           run metadata, config hash, final PHV
//!     iterations.jsonl       meta line, then one record per evaluation
//!     front.csv              id + objective columns, one row per member
//!     policies/policy_<id>.bin
//! ```

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use parmis::optimizer::{IterationRecord, RunRecord};
use parmis::pareto::ObjectiveVector;
use parmis::policy::{save_policy, PolicyArchitecture, PolicyParams};
use parmis::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub config_hash: String,
    pub objectives: Vec<String>,
    pub apps: Vec<String>,
    pub budget: usize,
    pub eval_count: usize,
    pub phv: f64,
    pub reference: Vec<f64>,
    pub front_size: usize,
    pub wall_seconds_total: f64,
    pub wall_seconds_fit: f64,
    pub wall_seconds_select: f64,
    pub wall_seconds_eval: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogMeta {
    pub config_hash: String,
    pub seed: u64,
    pub strategy: String,
    pub objectives: Vec<String>,
}

fn ser<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Serde(e.to_string()))
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Writes one run's artifacts under `out_dir/seed_<seed>/`.
pub fn write_run(
    out_dir: &Path,
    record: &RunRecord,
    config_hash: &str,
    objectives: &[String],
    apps: &[String],
    budget: usize,
    arch: Option<&PolicyArchitecture>,
) -> Result<PathBuf> {
    let dir = seed_dir(out_dir, record.seed);
    std::fs::create_dir_all(&dir)?;

    let meta = LogMeta {
        config_hash: config_hash.to_string(),
        seed: record.seed,
        strategy: record.strategy.clone(),
        objectives: objectives.to_vec(),
    };
    let mut log = std::fs::File::create(dir.join("iterations.jsonl"))?;
    writeln!(log, "{}", ser(&meta)?)?;
    for rec in &record.iterations {
        writeln!(log, "{}", ser(rec)?)?;
    }

    let summary = RunSummary {
        strategy: record.strategy.clone(),
        seed: record.seed,
        config_hash: config_hash.to_string(),
        objectives: objectives.to_vec(),
        apps: apps.to_vec(),
        budget,
        eval_count: record.eval_count,
        phv: record.final_phv(),
        reference: record.reference.clone(),
        front_size: record.front_ids.len(),
        wall_seconds_total: record.wall_seconds_total,
        wall_seconds_fit: record.wall_seconds_fit,
        wall_seconds_select: record.wall_seconds_select,
        wall_seconds_eval: record.wall_seconds_eval,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))? + "\n",
    )?;

    write_front_csv(&dir.join("front.csv"), record, config_hash, objectives)?;

    if let Some(arch) = arch {
        let policies = dir.join("policies");
        std::fs::create_dir_all(&policies)?;
        for (id, theta) in record.front_ids.iter().zip(&record.front_thetas) {
            let params = PolicyParams::new(arch, theta.clone())?;
            save_policy(&policies.join(format!("policy_{id}.bin")), arch, &params)?;
        }
    }
    Ok(dir)
}

fn write_front_csv(
    path: &Path,
    record: &RunRecord,
    config_hash: &str,
    objectives: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "# config_hash={config_hash} seed={} strategy={}",
        record.seed, record.strategy
    )?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string()];
    header.extend(objectives.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for (id, point) in record.front_ids.iter().zip(&record.front_points) {
        let mut row = vec![id.to_string()];
        row.extend(point.iter().map(|v| format_f64(*v)));
        w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; going through it keeps one canonical
    // float formatter across every output file
    serde_json::to_string(&v).unwrap_or_else(|_| format!("{v:?}"))
}

/// A parsed front file: ids, objective names, and points.
#[derive(Debug, Clone)]
pub struct FrontFile {
    pub objective_names: Vec<String>,
    pub ids: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub dir: PathBuf,
}

pub fn read_front_csv(path: &Path) -> Result<FrontFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read front file {}: {e}", path.display())))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Serde(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "id" {
        return Err(Error::input(format!(
            "{} is not a front file (expected id + >=2 objective columns)",
            path.display()
        )));
    }
    let objective_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Serde(e.to_string()))?;
        ids.push(
            row[0]
                .parse::<usize>()
                .map_err(|e| Error::input(format!("bad id in front file: {e}")))?,
        );
        let point = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::input(format!("bad value: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        points.push(point);
    }
    Ok(FrontFile {
        objective_names,
        ids,
        points,
        dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

/// One seed's artifacts reloaded for comparison.
pub struct LoadedRun {
    pub summary: RunSummary,
    pub evals: Vec<ObjectiveVector>,
    pub front: Vec<ObjectiveVector>,
}

pub fn read_run(dir: &Path) -> Result<LoadedRun> {
    let summary_text = std::fs::read_to_string(dir.join("summary.json"))
        .map_err(|e| Error::input(format!("cannot read {}/summary.json: {e}", dir.display())))?;
    let summary: RunSummary =
        serde_json::from_str(&summary_text).map_err(|e| Error::Serde(e.to_string()))?;

    let log = std::fs::File::open(dir.join("iterations.jsonl"))?;
    let mut lines = std::io::BufReader::new(log).lines();
    let _meta = lines.next().transpose()?;
    let mut evals = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IterationRecord =
            serde_json::from_str(&line).map_err(|e| Error::Serde(e.to_string()))?;
        if let Some(obj) = rec.objectives {
            evals.push(ObjectiveVector::new(obj)?);
        }
    }

    let front_file = read_front_csv(&dir.join("front.csv"))?;
    let front = front_file
        .points
        .into_iter()
        .map(ObjectiveVector::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun { summary, evals, front })
}

/// All seed subdirectories of a run directory, sorted by seed.
pub fn seed_dirs(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(out_dir)
        .map_err(|e| Error::input(format!("cannot read run dir {}: {e}", out_dir.display())))?
    {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) {
            if entry.path().is_dir() {
                dirs.push((seed, entry.path()));
            }
        }
    }
    if dirs.is_empty() {
        return Err(Error::input(format!(
            "{} contains no seed_<N> subdirectories",
            out_dir.display()
        )));
    }
    dirs.sort_by_key(|(s, _)| *s);
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}
