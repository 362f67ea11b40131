//! Search-strategy orchestration: the information-gain loop plus the
//! random-search, scalarized-BO, direct NSGA-II, and governor baselines.
//! Every strategy produces a [`RunRecord`]: the full evaluation log, the
//! PHV-versus-iteration curve, and the final front with policy ids.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{sample_pareto_front, select_next, AcquisitionContext};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, pairwise_sqdist, GaussianProcess, KernelSpec};
use crate::nsga2::{self, Nsga2Config};
use crate::pareto::{pareto_front, reference_point, ObjectiveVector, ParetoFront};
use crate::socsim::{evaluate_with, Calibration, Governor, ObjectiveId, WorkloadSpec};

/// Black-box evaluation of a parameter vector into a k-objective vector
/// (minimization convention).
pub type EvalFn<'a> = dyn FnMut(&[f64]) -> Result<ObjectiveVector> + 'a;

/// Ordered, append-only training data accumulated by a run.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    thetas: Vec<Vec<f64>>,
    objectives: Vec<ObjectiveVector>,
    iteration_stamps: Vec<usize>,
}

impl TrainingSet {
    pub fn push(&mut self, theta: Vec<f64>, objectives: ObjectiveVector, iteration: usize) -> Result<()> {
        if let Some(first) = self.thetas.first() {
            if first.len() != theta.len() {
                return Err(Error::input("theta dimension mismatch in training set"));
            }
        }
        if let Some(first) = self.objectives.first() {
            if first.len() != objectives.len() {
                return Err(Error::input("objective dimension mismatch in training set"));
            }
        }
        self.thetas.push(theta);
        self.objectives.push(objectives);
        self.iteration_stamps.push(iteration);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn objectives(&self) -> &[ObjectiveVector] {
        &self.objectives
    }

    pub fn iteration_stamps(&self) -> &[usize] {
        &self.iteration_stamps
    }

    pub fn num_objectives(&self) -> Option<usize> {
        self.objectives.first().map(|o| o.len())
    }

    /// Targets of one objective across the set.
    pub fn targets(&self, objective: usize) -> Vec<f64> {
        self.objectives.iter().map(|o| o[objective]).collect()
    }
}

/// One evaluation in a run log. `objectives` is `None` when the evaluation
/// failed and the candidate was quarantined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub objectives: Option<Vec<f64>>,
    /// Hypervolume of the front over everything evaluated up to and
    /// including this iteration, measured against the run's final reference
    /// point (non-decreasing by construction).
    pub phv: f64,
    #[serde(default)]
    pub label: Option<String>,
}

/// Full record of one strategy run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub iterations: Vec<IterationRecord>,
    /// Reference point used for the PHV curve and the summary PHV.
    pub reference: Vec<f64>,
    pub front_ids: Vec<usize>,
    pub front_points: Vec<Vec<f64>>,
    pub front_thetas: Vec<Vec<f64>>,
    pub eval_count: usize,
    pub wall_seconds_total: f64,
    pub wall_seconds_fit: f64,
    pub wall_seconds_select: f64,
    pub wall_seconds_eval: f64,
}

impl RunRecord {
    /// Final PHV (last point of the curve); 0.0 for an empty run.
    pub fn final_phv(&self) -> f64 {
        self.iterations.last().map(|i| i.phv).unwrap_or(0.0)
    }

    /// Objective vectors of every successful evaluation, with their
    /// iteration ids.
    pub fn successful_evals(&self) -> (Vec<usize>, Vec<ObjectiveVector>) {
        let mut ids = Vec::new();
        let mut points = Vec::new();
        for rec in &self.iterations {
            if let Some(obj) = &rec.objectives {
                if let Ok(v) = ObjectiveVector::new(obj.clone()) {
                    ids.push(rec.iteration);
                    points.push(v);
                }
            }
        }
        (ids, points)
    }

    /// Recomputes the front from the evaluation log; used to check replay
    /// integrity.
    pub fn front_from_log(&self) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let (ids, points) = self.successful_evals();
        let front = pareto_front(&points)?;
        Ok((
            front.member_ids.iter().map(|&i| ids[i]).collect(),
            front.points.iter().map(|p| p.values().to_vec()).collect(),
        ))
    }

    pub fn front(&self) -> Result<ParetoFront> {
        let points = self
            .front_points
            .iter()
            .map(|p| ObjectiveVector::new(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParetoFront { points, member_ids: self.front_ids.clone() })
    }
}

/// Simplex weights for linear scalarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizationWeights(Vec<f64>);

impl ScalarizationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::input("scalarization weights need k >= 2 entries"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::input("scalarization weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("scalarization weights sum to {sum}, not 1")));
        }
        Ok(ScalarizationWeights(weights))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Evenly spaced two-objective grid, endpoints included.
    pub fn uniform_grid_2d(points: usize) -> Result<Vec<ScalarizationWeights>> {
        if points < 2 {
            return Err(Error::input("a scalarization grid needs at least 2 points"));
        }
        Ok((0..points)
            .map(|i| {
                let a = i as f64 / (points - 1) as f64;
                ScalarizationWeights(vec![1.0 - a, a])
            })
            .collect())
    }
}

/// Configuration of the information-gain loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParmisConfig {
    /// Size of the initial uniform-random design.
    pub init_samples: usize,
    /// Loop iterations after the initial design (one evaluation each).
    pub max_iters: usize,
    /// Uniform box bounds for every parameter.
    pub bound_lo: f64,
    pub bound_hi: f64,
    /// Pareto front samples per iteration (S).
    pub num_front_samples: usize,
    pub num_rff_features: usize,
    /// Uniform candidates scored by the acquisition maximizer.
    pub candidate_budget: usize,
    /// Observation noise assumed by the objective models.
    pub noise_variance: f64,
    /// Refit kernel hyperparameters every this many loop iterations.
    pub hyperfit_every: usize,
    /// Most recent points used when refitting hyperparameters.
    pub hyperfit_subset: usize,
    /// NSGA-II size for Pareto-front sampling over the posterior draws.
    pub front_population: usize,
    pub front_generations: usize,
    /// Stop when relative PHV improvement over this many consecutive
    /// iterations falls below the tolerance.
    pub convergence_window: usize,
    pub convergence_rel_tol: f64,
    pub stop_on_convergence: bool,
    pub seed: u64,
}

impl Default for ParmisConfig {
    fn default() -> Self {
        ParmisConfig {
            init_samples: 10,
            max_iters: 290,
            bound_lo: -5.0,
            bound_hi: 5.0,
            num_front_samples: 1,
            num_rff_features: 256,
            candidate_budget: 512,
            noise_variance: 1e-6,
            hyperfit_every: 10,
            hyperfit_subset: 200,
            front_population: 32,
            front_generations: 12,
            convergence_window: 50,
            convergence_rel_tol: 1e-4,
            stop_on_convergence: true,
            seed: 0,
        }
    }
}

impl ParmisConfig {
    /// Splits a total evaluation budget into the default initial design plus
    /// loop iterations.
    pub fn with_total_budget(budget: usize, seed: u64) -> Self {
        let mut c = ParmisConfig::default();
        c.init_samples = c.init_samples.min(budget.saturating_sub(1).max(2));
        c.max_iters = budget.saturating_sub(c.init_samples);
        c.seed = seed;
        c
    }

    fn validate(&self) -> Result<()> {
        if self.init_samples < 2 {
            return Err(Error::input("init_samples must be >= 2"));
        }
        if !(self.bound_lo < self.bound_hi) {
            return Err(Error::input("bound_lo must be < bound_hi"));
        }
        if self.num_front_samples == 0 {
            return Err(Error::input("num_front_samples must be >= 1 (S >= 1)"));
        }
        if self.candidate_budget == 0 {
            return Err(Error::input("candidate_budget must be >= 1"));
        }
        Ok(())
    }
}

const MAX_CONSECUTIVE_FAILURES: usize = 10;

/// Internal log shared by the strategies: evaluations in order, with
/// failures recorded and quarantined.
struct RunLog {
    iterations: Vec<IterationRecord>,
    data: TrainingSet,
    consecutive_failures: usize,
    eval_count: usize,
    wall_eval: f64,
}

impl RunLog {
    fn new() -> Self {
        RunLog {
            iterations: Vec::new(),
            data: TrainingSet::default(),
            consecutive_failures: 0,
            eval_count: 0,
            wall_eval: 0.0,
        }
    }

    fn record(
        &mut self,
        eval: &mut EvalFn,
        theta: Vec<f64>,
        label: Option<String>,
    ) -> Result<Option<ObjectiveVector>> {
        let iteration = self.iterations.len();
        let t0 = Instant::now();
        let outcome = eval(&theta);
        self.wall_eval += t0.elapsed().as_secs_f64();
        self.eval_count += 1;
        let objectives = match outcome {
            Ok(v) if v.values().iter().all(|x| x.is_finite()) => {
                self.consecutive_failures = 0;
                Some(v)
            }
            _ => {
                self.consecutive_failures += 1;
                None
            }
        };
        if let Some(v) = &objectives {
            self.data.push(theta.clone(), v.clone(), iteration)?;
        }
        self.iterations.push(IterationRecord {
            iteration,
            theta,
            objectives: objectives.as_ref().map(|v| v.values().to_vec()),
            phv: 0.0,
            label,
        });
        if self.consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
            return Err(Error::Aborted(format!(
                "{MAX_CONSECUTIVE_FAILURES} consecutive evaluation failures (last at iteration {iteration})"
            )));
        }
        Ok(objectives)
    }

    /// Fills the per-iteration PHV curve against the final reference and
    /// assembles the record.
    fn finish(
        mut self,
        strategy: &str,
        seed: u64,
        config: serde_json::Value,
        wall_total: f64,
        wall_fit: f64,
        wall_select: f64,
    ) -> Result<RunRecord> {
        if self.data.is_empty() {
            return Err(Error::Aborted(format!("{strategy}: no successful evaluations")));
        }
        let reference = reference_point(self.data.objectives())?;
        let mut so_far: Vec<ObjectiveVector> = Vec::with_capacity(self.data.len());
        let mut phv = 0.0;
        for rec in self.iterations.iter_mut() {
            if let Some(obj) = &rec.objectives {
                so_far.push(ObjectiveVector::new(obj.clone())?);
                let front = pareto_front(&so_far)?;
                phv = crate::pareto::hypervolume(&front, &reference)?;
            }
            rec.phv = phv;
        }
        let (ids, points) = self.data_front()?;
        let front_thetas = ids
            .iter()
            .map(|&id| self.iterations[id].theta.clone())
            .collect();
        Ok(RunRecord {
            strategy: strategy.to_string(),
            seed,
            config,
            reference: reference.values().to_vec(),
            front_ids: ids,
            front_points: points,
            front_thetas,
            eval_count: self.eval_count,
            wall_seconds_total: wall_total,
            wall_seconds_fit: wall_fit,
            wall_seconds_select: wall_select,
            wall_seconds_eval: self.wall_eval,
            iterations: self.iterations,
        })
    }

    fn data_front(&self) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let front = pareto_front(self.data.objectives())?;
        let ids = front
            .member_ids
            .iter()
            .map(|&i| self.data.iteration_stamps()[i])
            .collect();
        let points = front.points.iter().map(|p| p.values().to_vec()).collect();
        Ok((ids, points))
    }
}

/// Pairwise squared distances maintained incrementally as the design grows.
struct GrowingDesign {
    x: DMatrix<f64>,
    sqdist: DMatrix<f64>,
}

impl GrowingDesign {
    fn from_thetas(thetas: &[Vec<f64>]) -> Self {
        let n = thetas.len();
        let d = thetas[0].len();
        let x = DMatrix::from_fn(n, d, |i, j| thetas[i][j]);
        let sqdist = pairwise_sqdist(&x);
        GrowingDesign { x, sqdist }
    }

    fn push(&mut self, theta: &[f64]) {
        let n = self.x.nrows();
        let d = self.x.ncols();
        let row = DMatrix::from_fn(1, d, |_, j| theta[j]);
        let cross = &self.x * row.transpose(); // n x 1
        let new_norm: f64 = theta.iter().map(|v| v * v).sum();
        self.x = {
            let mut grown = self.x.clone().resize(n + 1, d, 0.0);
            grown.row_mut(n).copy_from(&row.row(0));
            grown
        };
        let mut grown = self.sqdist.clone().resize(n + 1, n + 1, 0.0);
        for i in 0..n {
            let norm_i = self.x.row(i).norm_squared();
            let v = (norm_i + new_norm - 2.0 * cross[(i, 0)]).max(0.0);
            grown[(i, n)] = v;
            grown[(n, i)] = v;
        }
        self.sqdist = grown;
    }
}

fn uniform_theta(d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

fn fit_objective_models(
    design: &GrowingDesign,
    data: &TrainingSet,
    kernels: &[KernelSpec],
    noise: f64,
) -> Result<Vec<GaussianProcess>> {
    let k = data.num_objectives().expect("non-empty training set");
    (0..k)
        .map(|j| {
            let targets = data.targets(j);
            let kernel = kernels[j].clone();
            if kernel.is_isotropic() {
                GaussianProcess::fit_cached(design.x.clone(), &design.sqdist, &targets, kernel, noise)
            } else {
                GaussianProcess::fit(data.thetas(), &targets, kernel, noise)
            }
        })
        .collect()
}

/// The information-gain policy-search loop.
///
/// Seeds the training set with `init_samples` uniform evaluations, then
/// repeatedly: fit one GP per objective, sample S Pareto fronts from
/// posterior draws, pick the candidate maximizing the information-gain
/// utility, evaluate it, and aggregate. Stops at `max_iters` or on PHV
/// convergence. Failed evaluations are quarantined; ten in a row abort.
pub fn run_parmis(eval: &mut EvalFn, d: usize, config: &ParmisConfig) -> Result<RunRecord> {
    config.validate()?;
    let t_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = RunLog::new();
    let bounds = vec![(config.bound_lo, config.bound_hi); d];

    for _ in 0..config.init_samples {
        let theta = uniform_theta(d, config.bound_lo, config.bound_hi, &mut rng);
        log.record(eval, theta, None)?;
    }

    let mut wall_fit = 0.0;
    let mut wall_select = 0.0;
    let mut design: Option<GrowingDesign> = None;
    let mut kernels: Option<Vec<KernelSpec>> = None;
    let mut design_len = 0usize;
    let mut phv_history: Vec<f64> = Vec::new();

    let front_nsga2 = {
        let mut c = Nsga2Config::defaults(bounds.clone(), 0);
        c.population_size = config.front_population.max(4) / 2 * 2;
        c.generations = config.front_generations;
        c
    };

    for iter in 0..config.max_iters {
        // keep deterministic RNG consumption regardless of failures
        let front_seeds: Vec<u64> = (0..config.num_front_samples).map(|_| rng.random()).collect();
        let select_seed: u64 = rng.random();

        if log.data.is_empty() {
            // nothing to model yet; fall back to uniform exploration
            let theta = uniform_theta(d, config.bound_lo, config.bound_hi, &mut rng);
            log.record(eval, theta, None)?;
            continue;
        }

        let t_fit = Instant::now();
        // rebuild the distance cache if new points arrived
        match &mut design {
            Some(dsg) if design_len < log.data.len() => {
                for i in design_len..log.data.len() {
                    dsg.push(&log.data.thetas()[i]);
                }
                design_len = log.data.len();
            }
            Some(_) => {}
            None => {
                design = Some(GrowingDesign::from_thetas(log.data.thetas()));
                design_len = log.data.len();
            }
        }
        let dsg = design.as_ref().expect("design built above");

        let k = log.data.num_objectives().expect("non-empty");
        if kernels.is_none() || iter % config.hyperfit_every == 0 {
            // bootstrap the isotropic lengthscale from the median pairwise
            // distance: the marginal likelihood is flat in the lengthscale
            // until the design contains close pairs, and a quarter of the
            // median keeps perturbation-scale candidates correlated with
            // their anchors
            let median_quarter = || -> f64 {
                let n = dsg.sqdist.nrows();
                let mut dists: Vec<f64> = (0..n)
                    .flat_map(|i| (0..i).map(move |j| (i, j)))
                    .map(|(i, j)| dsg.sqdist[(i, j)].sqrt())
                    .filter(|v| *v > 0.0)
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                dists.get(dists.len() / 2).map(|m| (m / 4.0).max(1e-3)).unwrap_or(1.0)
            };
            let init_kernel = |j: usize| -> KernelSpec {
                match &kernels {
                    Some(ks) => ks[j].clone(),
                    None if d > 50 => {
                        KernelSpec::isotropic(median_quarter(), 1.0).expect("valid")
                    }
                    None => KernelSpec::ard(vec![1.0; d], 1.0).expect("valid"),
                }
            };
            let take = log.data.len().min(config.hyperfit_subset);
            let offset = log.data.len() - take;
            let sub_thetas: Vec<Vec<f64>> = log.data.thetas()[offset..].to_vec();
            let mut tuned = Vec::with_capacity(k);
            for j in 0..k {
                let targets = &log.data.targets(j)[offset..];
                tuned.push(fit_hyperparameters(
                    &sub_thetas,
                    targets,
                    &init_kernel(j),
                    config.noise_variance,
                )?);
            }
            kernels = Some(tuned);
        }
        let models = fit_objective_models(
            dsg,
            &log.data,
            kernels.as_ref().expect("set above"),
            config.noise_variance,
        )?;
        wall_fit += t_fit.elapsed().as_secs_f64();

        let t_select = Instant::now();
        // warm-start the front-sampling search from the incumbent front so
        // the sampled fronts stay calibrated against real evaluations
        let mut front_config = front_nsga2.clone();
        front_config.initial_population = {
            let incumbent = pareto_front(log.data.objectives())?;
            let cap = front_config.population_size / 2;
            let mut seeds: Vec<Vec<f64>> = incumbent
                .member_ids
                .iter()
                .take(cap)
                .map(|&i| log.data.thetas()[i].clone())
                .collect();
            for theta in log.data.thetas().iter().rev() {
                if seeds.len() >= cap {
                    break;
                }
                seeds.push(theta.clone());
            }
            seeds
        };
        let samples = front_seeds
            .iter()
            .map(|&s| sample_pareto_front(&models, &front_config, config.num_rff_features, s))
            .collect::<Result<Vec<_>>>()?;
        let context = AcquisitionContext::for_minimization(&models, samples, bounds.clone())?;
        let theta = select_next(&context, config.candidate_budget, select_seed)?;
        wall_select += t_select.elapsed().as_secs_f64();

        log.record(eval, theta, None)?;

        // convergence detection over the running PHV (running reference)
        if config.stop_on_convergence {
            let front = pareto_front(log.data.objectives())?;
            let reference = reference_point(log.data.objectives())?;
            let phv = crate::pareto::hypervolume(&front, &reference)?;
            phv_history.push(phv);
            let w = config.convergence_window;
            if phv_history.len() > w {
                let before = phv_history[phv_history.len() - 1 - w];
                let improvement = (phv - before) / before.abs().max(1e-12);
                if improvement < config.convergence_rel_tol {
                    break;
                }
            }
        }
    }

    log.finish(
        "parmis",
        config.seed,
        serde_json::to_value(config).map_err(|e| Error::Serde(e.to_string()))?,
        t_start.elapsed().as_secs_f64(),
        wall_fit,
        wall_select,
    )
}

/// Uniform random search: the baseline floor.
pub fn run_random_search(eval: &mut EvalFn, d: usize, budget: usize, seed: u64) -> Result<RunRecord> {
    if budget == 0 {
        return Err(Error::input("budget must be >= 1"));
    }
    let t_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = RunLog::new();
    for _ in 0..budget {
        let theta = uniform_theta(d, -5.0, 5.0, &mut rng);
        log.record(eval, theta, None)?;
    }
    log.finish(
        "random",
        seed,
        serde_json::json!({ "budget": budget }),
        t_start.elapsed().as_secs_f64(),
        0.0,
        0.0,
    )
}

/// Configuration of the per-weight single-objective BO used by
/// [`run_scalarized`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarizedConfig {
    pub init_samples: usize,
    pub candidate_budget: usize,
    pub noise_variance: f64,
    pub hyperfit_every: usize,
    pub bound_lo: f64,
    pub bound_hi: f64,
}

impl Default for ScalarizedConfig {
    fn default() -> Self {
        ScalarizedConfig {
            init_samples: 5,
            candidate_budget: 256,
            noise_variance: 1e-6,
            hyperfit_every: 10,
            bound_lo: -5.0,
            bound_hi: 5.0,
        }
    }
}

/// Linear-scalarization baseline: one single-objective BO run per weight
/// vector (expected-improvement pool selection over a GP of the weighted,
/// min-max-normalized objectives), with the front taken over the union of
/// all evaluations.
pub fn run_scalarized(
    eval: &mut EvalFn,
    d: usize,
    weights_grid: &[ScalarizationWeights],
    per_weight_budget: usize,
    seed: u64,
    sc: &ScalarizedConfig,
) -> Result<RunRecord> {
    if weights_grid.len() < 2 {
        return Err(Error::input("scalarization grid needs at least 2 weight vectors"));
    }
    if per_weight_budget < 3 {
        return Err(Error::input("per_weight_budget must be >= 3"));
    }
    let t_start = Instant::now();
    let mut wall_fit = 0.0;
    let mut wall_select = 0.0;
    let mut log = RunLog::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for weights in weights_grid {
        let init_count = sc.init_samples.min(per_weight_budget - 1).max(2);
        // scalar history local to this weight vector
        let mut thetas: Vec<Vec<f64>> = Vec::new();
        let mut raw: Vec<Vec<f64>> = Vec::new();
        for _ in 0..init_count {
            let theta = uniform_theta(d, sc.bound_lo, sc.bound_hi, &mut rng);
            if let Some(v) = log.record(eval, theta.clone(), None)? {
                thetas.push(theta);
                raw.push(v.values().to_vec());
            }
        }
        if raw.is_empty() {
            continue;
        }
        let k = raw[0].len();
        if weights.values().len() != k {
            return Err(Error::input(format!(
                "weights have {} entries but objectives have {k}",
                weights.values().len()
            )));
        }
        // min-max normalization frozen from this weight's initial sample
        let mut lo = vec![f64::INFINITY; k];
        let mut hi = vec![f64::NEG_INFINITY; k];
        for row in &raw {
            for j in 0..k {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let ranges: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h - l > 0.0 { h - l } else { 1.0 })
            .collect();
        let scalarize = |row: &[f64]| -> f64 {
            row.iter()
                .zip(weights.values())
                .zip(lo.iter().zip(&ranges))
                .map(|((v, w), (l, r))| w * (v - l) / r)
                .sum()
        };
        let mut scalars: Vec<f64> = raw.iter().map(|r| scalarize(r)).collect();

        let mut kernel: Option<KernelSpec> = None;
        for step in 0..per_weight_budget - init_count {
            let select_seed: u64 = rng.random();
            let t_fit = Instant::now();
            if kernel.is_none() || step % sc.hyperfit_every == 0 {
                let init_kernel = match &kernel {
                    Some(kk) => kk.clone(),
                    None if d > 50 => KernelSpec::isotropic(1.0, 1.0).expect("valid"),
                    None => KernelSpec::ard(vec![1.0; d], 1.0).expect("valid"),
                };
                kernel = Some(fit_hyperparameters(&thetas, &scalars, &init_kernel, sc.noise_variance)?);
            }
            let model = GaussianProcess::fit(
                &thetas,
                &scalars,
                kernel.clone().expect("set above"),
                sc.noise_variance,
            )?;
            wall_fit += t_fit.elapsed().as_secs_f64();

            let t_select = Instant::now();
            let mut pool_rng = ChaCha8Rng::seed_from_u64(select_seed);
            let pool = DMatrix::from_fn(sc.candidate_budget, d, |_, _| {
                pool_rng.random_range(sc.bound_lo..sc.bound_hi)
            });
            let (means, stds) = model.predict_batch(&pool)?;
            let best = scalars.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut best_idx = 0;
            let mut best_ei = f64::NEG_INFINITY;
            for i in 0..pool.nrows() {
                let sigma = stds[i];
                let ei = if sigma > 1e-12 {
                    let z = (best - means[i]) / sigma;
                    (best - means[i]) * crate::acquisition::norm_cdf(z)
                        + sigma * crate::acquisition::norm_pdf(z)
                } else {
                    0.0
                };
                if ei > best_ei {
                    best_ei = ei;
                    best_idx = i;
                }
            }
            let theta: Vec<f64> = pool.row(best_idx).iter().copied().collect();
            wall_select += t_select.elapsed().as_secs_f64();

            if let Some(v) = log.record(eval, theta.clone(), None)? {
                thetas.push(theta);
                scalars.push(scalarize(v.values()));
                raw.push(v.values().to_vec());
            }
        }
    }

    log.finish(
        "scalarized",
        seed,
        serde_json::json!({
            "weights": weights_grid.iter().map(|w| w.values().to_vec()).collect::<Vec<_>>(),
            "per_weight_budget": per_weight_budget,
            "inner": serde_json::to_value(sc).map_err(|e| Error::Serde(e.to_string()))?,
        }),
        t_start.elapsed().as_secs_f64(),
        wall_fit,
        wall_select,
    )
}

/// Direct NSGA-II over the true evaluator, budget-matched by counting every
/// evaluation.
pub fn run_nsga2_direct(
    eval: &mut EvalFn,
    d: usize,
    population: usize,
    budget: usize,
    seed: u64,
) -> Result<RunRecord> {
    if population < 4 || population % 2 != 0 {
        return Err(Error::input("population must be even and >= 4"));
    }
    if budget < population {
        return Err(Error::input("budget must cover at least one population"));
    }
    let t_start = Instant::now();
    let generations = budget / population - 1;
    let mut config = Nsga2Config::defaults(vec![(-5.0, 5.0); d], seed);
    config.population_size = population;
    config.generations = generations;

    let log = std::cell::RefCell::new(RunLog::new());
    let abort = std::cell::RefCell::new(None::<Error>);
    {
        let mut batch = |thetas: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut log = log.borrow_mut();
            thetas
                .iter()
                .map(|theta| {
                    if abort.borrow().is_some() {
                        return vec![f64::INFINITY; 2];
                    }
                    match log.record(eval, theta.clone(), None) {
                        Ok(Some(v)) => v.values().to_vec(),
                        Ok(None) => vec![f64::INFINITY; 2],
                        Err(e) => {
                            *abort.borrow_mut() = Some(e);
                            vec![f64::INFINITY; 2]
                        }
                    }
                })
                .collect()
        };
        nsga2::run_evolution(&mut batch, &config, |_, _| {})?;
    }
    if let Some(e) = abort.into_inner() {
        return Err(e);
    }
    log.into_inner().finish(
        "nsga2",
        seed,
        serde_json::json!({ "population": population, "budget": budget }),
        t_start.elapsed().as_secs_f64(),
        0.0,
        0.0,
    )
}

/// Evaluates the four built-in governors; each contributes one point.
pub fn governor_points(
    apps: &[WorkloadSpec],
    objectives: &[ObjectiveId],
    cal: &Calibration,
) -> Result<Vec<(String, ObjectiveVector)>> {
    Governor::ALL
        .iter()
        .map(|g| {
            let mut decider = g.decider();
            let v = evaluate_with(&mut decider, apps, objectives, cal)?;
            Ok((g.name().to_string(), v))
        })
        .collect()
}

/// Governor baseline packaged as a run record (four labelled evaluations).
pub fn run_governors(
    apps: &[WorkloadSpec],
    objectives: &[ObjectiveId],
    cal: &Calibration,
) -> Result<RunRecord> {
    let t_start = Instant::now();
    let points = governor_points(apps, objectives, cal)?;
    let mut log = RunLog::new();
    for (name, v) in points {
        let mut eval = |_theta: &[f64]| -> Result<ObjectiveVector> { Ok(v.clone()) };
        log.record(&mut eval, Vec::new(), Some(name))?;
    }
    log.finish(
        "governors",
        0,
        serde_json::json!({}),
        t_start.elapsed().as_secs_f64(),
        0.0,
        0.0,
    )
}
