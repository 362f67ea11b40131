//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use parmis::optimizer::{
    run_governors, run_nsga2_direct, run_parmis, run_random_search, run_scalarized, RunRecord,
    ScalarizationWeights,
};
use parmis::pareto::{
    hypervolume, normalized_phv, pareto_front, reference_point, ObjectiveVector, ParetoFront,
    PARMIS_METHOD,
};
use parmis::policy::{load_policy, param_count, PolicyParams};
use parmis::socsim::{evaluate_app, Calibration, Governor, PolicyDecider};
use parmis::{workloads, Error, Result};

use crate::config::{ExperimentConfig, ResolvedExperiment, Strategy};
use crate::output::{
    format_f64, read_front_csv, read_run, seed_dirs, write_run, LoadedRun,
};

pub fn cmd_run(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut resolved = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        resolved.config.seeds = vec![seed];
    }
    if let Some(out) = out {
        resolved.config.out_dir = out.to_string_lossy().to_string();
    }
    run_experiment(&resolved)
}

pub fn run_experiment(resolved: &ResolvedExperiment) -> Result<()> {
    let config = &resolved.config;
    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let records: Vec<RunRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| run_one_seed(resolved, seed))
        .collect::<Result<Vec<_>>>()?;

    let arch_for_files = match config.strategy {
        Strategy::Governors => None,
        _ => Some(&resolved.arch),
    };
    for record in &records {
        let dir = write_run(
            &out_dir,
            record,
            &resolved.config_hash,
            &config.objectives,
            &config.apps,
            config.budget,
            arch_for_files,
        )?;
        eprintln!(
            "{} seed {}: {} evals, front {} points, PHV {:.6} -> {}",
            record.strategy,
            record.seed,
            record.eval_count,
            record.front_ids.len(),
            record.final_phv(),
            dir.display()
        );
    }

    let mut table = std::fs::File::create(out_dir.join("summary.csv"))?;
    writeln!(table, "# config_hash={}", resolved.config_hash)?;
    writeln!(table, "strategy,seed,phv,evals,front_size,wall_seconds")?;
    for r in &records {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            r.strategy,
            r.seed,
            format_f64(r.final_phv()),
            r.eval_count,
            r.front_ids.len(),
            format_f64(r.wall_seconds_total),
        )?;
    }
    Ok(())
}

fn run_one_seed(resolved: &ResolvedExperiment, seed: u64) -> Result<RunRecord> {
    let config = &resolved.config;
    let arch = &resolved.arch;
    let cal = &config.simulator;
    let apps = &resolved.apps;
    let objectives = &resolved.objectives;
    let d = param_count(arch);

    let mut eval = |theta: &[f64]| -> Result<ObjectiveVector> {
        let params = PolicyParams::new(arch, theta.to_vec())?;
        parmis::socsim::evaluate(arch, &params, apps, objectives, cal)
    };

    match config.strategy {
        Strategy::Parmis => {
            let mut pc = config.parmis.clone();
            pc.seed = seed;
            if config.budget <= pc.init_samples {
                return Err(Error::input(format!(
                    "budget {} must exceed init_samples {}",
                    config.budget, pc.init_samples
                )));
            }
            pc.max_iters = config.budget - pc.init_samples;
            run_parmis(&mut eval, d, &pc)
        }
        Strategy::Random => run_random_search(&mut eval, d, config.budget, seed),
        Strategy::Scalarized => {
            let sc = &config.scalarized;
            if objectives.len() != 2 {
                return Err(Error::input(
                    "the scalarized strategy's uniform weight grid needs exactly 2 objectives",
                ));
            }
            let points = sc.weights_points;
            let per_weight = match sc.per_weight_budget {
                Some(b) => b,
                None => {
                    if config.budget % points != 0 {
                        return Err(Error::input(format!(
                            "budget {} is not divisible by weights_points {points}",
                            config.budget
                        )));
                    }
                    config.budget / points
                }
            };
            let grid = ScalarizationWeights::uniform_grid_2d(points)?;
            run_scalarized(&mut eval, d, &grid, per_weight, seed, &sc.inner)
        }
        Strategy::Nsga2 => {
            let pop = config.nsga2.population;
            if config.budget % pop != 0 {
                return Err(Error::input(format!(
                    "budget {} is not divisible by the population size {pop}",
                    config.budget
                )));
            }
            run_nsga2_direct(&mut eval, d, pop, config.budget, seed)
        }
        Strategy::Governors => {
            let mut record = run_governors(apps, objectives, cal)?;
            record.seed = seed;
            Ok(record)
        }
    }
}

struct MethodRuns {
    dir: PathBuf,
    strategy: String,
    seeds: Vec<u64>,
    total_evals: usize,
    evals: Vec<ObjectiveVector>,
}

fn load_method(dir: &Path) -> Result<MethodRuns> {
    let mut runs: Vec<LoadedRun> = Vec::new();
    for seed_dir in seed_dirs(dir)? {
        let run = read_run(&seed_dir)?;
        // replay integrity: the stored front must equal the front recomputed
        // from the evaluation log
        let recomputed = pareto_front(&run.evals)?;
        if recomputed.points != run.front {
            return Err(Error::input(format!(
                "{}: front.csv does not match the front recomputed from iterations.jsonl",
                seed_dir.display()
            )));
        }
        runs.push(run);
    }
    let first = &runs[0].summary;
    for r in &runs[1..] {
        if r.summary.config_hash != first.config_hash {
            return Err(Error::input(format!(
                "{}: seeds were produced by different configs",
                dir.display()
            )));
        }
    }
    Ok(MethodRuns {
        dir: dir.to_path_buf(),
        strategy: first.strategy.clone(),
        seeds: runs.iter().map(|r| r.summary.seed).collect(),
        total_evals: runs.iter().map(|r| r.summary.eval_count).sum(),
        evals: runs.iter().flat_map(|r| r.evals.iter().cloned()).collect(),
    })
}

pub fn cmd_compare(
    dirs: &[PathBuf],
    reference: &str,
    out: Option<PathBuf>,
    allow_uneven_budget: bool,
) -> Result<()> {
    if dirs.is_empty() {
        return Err(Error::input("compare needs at least one run directory"));
    }
    let methods: Vec<MethodRuns> = dirs.iter().map(|d| load_method(d)).collect::<Result<_>>()?;

    // refuse to mix incompatible objective sets
    let mut names: Option<Vec<String>> = None;
    for (dir, m) in dirs.iter().zip(&methods) {
        let run = read_run(&seed_dirs(dir)?[0])?;
        match &names {
            None => names = Some(run.summary.objectives.clone()),
            Some(n) if *n != run.summary.objectives => {
                return Err(Error::input(format!(
                    "{} uses objectives {:?}, others use {:?}",
                    m.dir.display(),
                    run.summary.objectives,
                    n
                )));
            }
            Some(_) => {}
        }
    }

    if !allow_uneven_budget {
        let counts: Vec<usize> = methods.iter().map(|m| m.total_evals).collect();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::input(format!(
                "evaluation budgets differ across methods ({counts:?}); \
                 rerun with --allow-uneven-budget to compare anyway"
            )));
        }
    }

    let mut fronts: BTreeMap<String, ParetoFront> = BTreeMap::new();
    for m in &methods {
        if fronts.contains_key(&m.strategy) {
            return Err(Error::input(format!(
                "two directories use strategy '{}'; pass one directory per strategy",
                m.strategy
            )));
        }
        fronts.insert(m.strategy.clone(), pareto_front(&m.evals)?);
    }
    if !fronts.contains_key(PARMIS_METHOD) {
        return Err(Error::input("compare needs one directory produced by the parmis strategy"));
    }

    let union: Vec<ObjectiveVector> =
        methods.iter().flat_map(|m| m.evals.iter().cloned()).collect();
    let reference = match reference {
        "auto" => reference_point(&union)?,
        explicit => {
            let values = explicit
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::input(format!("bad reference: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            ObjectiveVector::new(values)?
        }
    };

    let normalized = normalized_phv(&fronts, &reference)?;

    let mut csv_text = String::new();
    csv_text.push_str("method,dir,seeds,evals,phv,normalized_phv\n");
    for m in &methods {
        let phv = hypervolume(&fronts[&m.strategy], &reference)?;
        csv_text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.strategy,
            m.dir.display(),
            m.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            m.total_evals,
            format_f64(phv),
            format_f64(normalized[&m.strategy]),
        ));
    }
    print!("{csv_text}");
    if let Some(out) = out {
        std::fs::write(out, csv_text)?;
    }
    Ok(())
}

pub fn cmd_select(
    front_path: &Path,
    weights: Option<String>,
    lexicographic: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let front = read_front_csv(front_path)?;
    if front.ids.is_empty() {
        return Err(Error::input(format!("{} holds an empty front", front_path.display())));
    }
    let k = front.objective_names.len();

    let chosen = match (weights, lexicographic) {
        (Some(w), None) => {
            let values = w
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::input(format!("bad weight: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let weights = ScalarizationWeights::new(values)?;
            if weights.values().len() != k {
                return Err(Error::input(format!(
                    "{} weights given but the front has {k} objectives",
                    weights.values().len()
                )));
            }
            let score = |p: &[f64]| -> f64 {
                p.iter().zip(weights.values()).map(|(v, w)| v * w).sum()
            };
            let mut best = 0;
            for i in 1..front.points.len() {
                if score(&front.points[i]) < score(&front.points[best]) {
                    best = i;
                }
            }
            best
        }
        (None, Some(lex)) => {
            let order: Vec<usize> = lex
                .split(',')
                .map(|name| {
                    front
                        .objective_names
                        .iter()
                        .position(|n| n == name.trim())
                        .ok_or_else(|| {
                            Error::input(format!(
                                "objective '{name}' not in front ({:?})",
                                front.objective_names
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            let mut best = 0;
            for i in 1..front.points.len() {
                let cmp = order.iter().find_map(|&j| {
                    let a = front.points[i][j];
                    let b = front.points[best][j];
                    if a < b {
                        Some(std::cmp::Ordering::Less)
                    } else if a > b {
                        Some(std::cmp::Ordering::Greater)
                    } else {
                        None
                    }
                });
                if cmp == Some(std::cmp::Ordering::Less) {
                    best = i;
                }
            }
            best
        }
        _ => {
            return Err(Error::input(
                "select needs exactly one of --weights or --lexicographic",
            ))
        }
    };

    let id = front.ids[chosen];
    let point = &front.points[chosen];
    let policy_path = front.dir.join("policies").join(format!("policy_{id}.bin"));
    println!(
        "selected id={id} objectives=({}) policy={}",
        point
            .iter()
            .zip(&front.objective_names)
            .map(|(v, n)| format!("{n}={}", format_f64(*v)))
            .collect::<Vec<_>>()
            .join(", "),
        policy_path.display()
    );
    if let Some(out) = out {
        if !policy_path.exists() {
            return Err(Error::input(format!(
                "no stored policy for front member {id} ({})",
                policy_path.display()
            )));
        }
        std::fs::copy(&policy_path, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn cmd_eval(
    policy: &str,
    apps: &[String],
    config: Option<PathBuf>,
    trace: bool,
) -> Result<()> {
    if apps.is_empty() {
        return Err(Error::input("eval needs at least one app"));
    }
    let cal = match config {
        Some(path) => ExperimentConfig::load(&path)?.config.simulator,
        None => Calibration::default(),
    };
    let specs = apps.iter().map(|a| workloads::resolve(a)).collect::<Result<Vec<_>>>()?;

    enum Chosen {
        Gov(Governor),
        Policy(parmis::policy::PolicyArchitecture, PolicyParams),
    }
    let chosen = match Governor::from_name(policy) {
        Some(g) => Chosen::Gov(g),
        None => {
            let (arch, params) = load_policy(Path::new(policy))?;
            Chosen::Policy(arch, params)
        }
    };

    let mut total_time = 0.0;
    let mut total_energy = 0.0;
    let mut total_work = 0.0;
    for spec in &specs {
        let result = match &chosen {
            Chosen::Gov(g) => evaluate_app(&mut g.decider(), spec, &cal)?,
            Chosen::Policy(arch, params) => {
                let mut decider = PolicyDecider { arch, params };
                evaluate_app(&mut decider, spec, &cal)?
            }
        };
        println!(
            "{}: time={} energy={} ppw={}",
            spec.name,
            format_f64(result.exec_time),
            format_f64(result.energy),
            format_f64(result.ppw),
        );
        if trace {
            for t in &result.trace {
                println!("{}", serde_json::to_string(t).map_err(|e| Error::Serde(e.to_string()))?);
            }
        }
        total_time += result.exec_time;
        total_energy += result.energy;
        total_work += spec.total_work();
    }
    println!(
        "total: time={} energy={} ppw={}",
        format_f64(total_time),
        format_f64(total_energy),
        format_f64(total_work / total_energy),
    );
    Ok(())
}
