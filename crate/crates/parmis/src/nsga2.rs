//! NSGA-II: fast non-dominated sorting, crowding distance, and the
//! evolutionary loop with simulated binary crossover and polynomial
//! mutation. Used both to extract Pareto-front samples from posterior
//! function draws and as a direct-search baseline.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pareto::{dominates_slices, pareto_front, ObjectiveVector};

/// A real-valued objective over parameter vectors. `evaluate_rows` exists so
/// implementations backed by matrix algebra (posterior function samples) can
/// batch a whole population in one pass.
pub trait VectorObjective: Sync {
    fn evaluate(&self, theta: &[f64]) -> f64;

    fn evaluate_rows(&self, thetas: &DMatrix<f64>) -> DVector<f64> {
        let mut buf = vec![0.0; thetas.ncols()];
        DVector::from_iterator(
            thetas.nrows(),
            thetas.row_iter().map(|row| {
                buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
                self.evaluate(&buf)
            }),
        )
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> VectorObjective for F {
    fn evaluate(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

impl VectorObjective for crate::rff::RffSample {
    fn evaluate(&self, theta: &[f64]) -> f64 {
        RffSample::evaluate(self, theta)
    }

    fn evaluate_rows(&self, thetas: &DMatrix<f64>) -> DVector<f64> {
        self.evaluate_batch(thetas)
    }
}

use crate::rff::RffSample;

#[derive(Debug, Clone)]
pub struct Nsga2Config {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    pub mutation_prob: f64,
    pub mutation_eta: f64,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    /// Warm-start individuals injected into the initial population (clamped
    /// to bounds, capped at population_size); the rest is uniform random.
    pub initial_population: Vec<Vec<f64>>,
}

impl Nsga2Config {
    /// Standard Deb settings; mutation probability 1/d.
    pub fn defaults(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        let d = bounds.len().max(1);
        Nsga2Config {
            population_size: 100,
            generations: 100,
            crossover_prob: 0.9,
            crossover_eta: 15.0,
            mutation_prob: 1.0 / d as f64,
            mutation_eta: 20.0,
            bounds,
            seed,
            initial_population: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(Error::input("population_size must be even and >= 4"));
        }
        if self.bounds.is_empty() {
            return Err(Error::input("bounds must not be empty"));
        }
        if self.bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::input("each bound must satisfy lo < hi"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob)
        {
            return Err(Error::input("probabilities must lie in [0, 1]"));
        }
        if !(self.crossover_eta > 0.0) || !(self.mutation_eta > 0.0) {
            return Err(Error::input("distribution indices must be positive"));
        }
        if self.initial_population.iter().any(|t| t.len() != self.bounds.len()) {
            return Err(Error::input("warm-start individuals must match the bounds dimension"));
        }
        Ok(())
    }
}

/// Fast non-dominated sort (Deb et al.). Returns index sets per rank; rank 0
/// is the non-dominated front of the whole set.
pub fn non_dominated_sort(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_slices(&points[i], &points[j]) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates_slices(&points[j], &points[i]) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut ranks: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        ranks.push(std::mem::take(&mut current));
        current = next;
    }
    ranks
}

/// Crowding distance within one front. Boundary points per objective get
/// +inf; interior points accumulate normalized neighbor gaps. Objectives
/// with zero range contribute nothing.
pub fn crowding_distance(front_points: &[Vec<f64>]) -> Vec<f64> {
    let n = front_points.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let k = front_points[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..k {
        order.sort_by(|&a, &b| front_points[a][j].partial_cmp(&front_points[b][j]).unwrap());
        let lo = front_points[order[0]][j];
        let hi = front_points[order[n - 1]][j];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 || !range.is_finite() {
            continue;
        }
        for w in 1..(n - 1) {
            let gap = front_points[order[w + 1]][j] - front_points[order[w - 1]][j];
            dist[order[w]] += gap / range;
        }
    }
    dist
}

/// One member of the returned non-dominated set.
#[derive(Debug, Clone)]
pub struct FrontMember {
    pub theta: Vec<f64>,
    pub objectives: ObjectiveVector,
}

struct Population {
    thetas: Vec<Vec<f64>>,
    objectives: Vec<Vec<f64>>,
    rank: Vec<usize>,
    crowding: Vec<f64>,
}

fn evaluate_all(objectives: &[&dyn VectorObjective], thetas: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = thetas.len();
    let d = thetas[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| thetas[i][j]);
    let per_obj: Vec<DVector<f64>> = objectives.iter().map(|o| o.evaluate_rows(&x)).collect();
    (0..n)
        .map(|i| per_obj.iter().map(|col| col[i]).collect())
        .collect()
}

/// Quarantine: a non-finite evaluation loses on every objective.
fn quarantine(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|row| {
            if row.iter().all(|v| v.is_finite()) {
                row
            } else {
                vec![f64::INFINITY; row.len()]
            }
        })
        .collect()
}

fn rank_population(pop: &mut Population) {
    let ranks = non_dominated_sort(&pop.objectives);
    pop.rank = vec![0; pop.thetas.len()];
    pop.crowding = vec![0.0; pop.thetas.len()];
    for (r, members) in ranks.iter().enumerate() {
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| pop.objectives[i].clone()).collect();
        let cd = crowding_distance(&pts);
        for (slot, &i) in members.iter().enumerate() {
            pop.rank[i] = r;
            pop.crowding[i] = cd[slot];
        }
    }
}

fn tournament(pop: &Population, rng: &mut ChaCha8Rng) -> usize {
    let n = pop.thetas.len();
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    if pop.rank[a] < pop.rank[b] {
        a
    } else if pop.rank[b] < pop.rank[a] {
        b
    } else if pop.crowding[a] >= pop.crowding[b] {
        a
    } else {
        b
    }
}

fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    config: &Nsga2Config,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.random_range(0.0..1.0) > config.crossover_prob {
        return (c1, c2);
    }
    for j in 0..p1.len() {
        if rng.random_range(0.0..1.0) > 0.5 {
            continue;
        }
        let u: f64 = rng.random_range(0.0..1.0);
        let beta = if u <= 0.5 {
            (2.0 * u).powf(1.0 / (config.crossover_eta + 1.0))
        } else {
            (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (config.crossover_eta + 1.0))
        };
        let (lo, hi) = config.bounds[j];
        c1[j] = (0.5 * ((1.0 + beta) * p1[j] + (1.0 - beta) * p2[j])).clamp(lo, hi);
        c2[j] = (0.5 * ((1.0 - beta) * p1[j] + (1.0 + beta) * p2[j])).clamp(lo, hi);
    }
    (c1, c2)
}

fn polynomial_mutation(theta: &mut [f64], config: &Nsga2Config, rng: &mut ChaCha8Rng) {
    for j in 0..theta.len() {
        if rng.random_range(0.0..1.0) > config.mutation_prob {
            continue;
        }
        let u: f64 = rng.random_range(0.0..1.0);
        let delta = if u < 0.5 {
            (2.0 * u).powf(1.0 / (config.mutation_eta + 1.0)) - 1.0
        } else {
            1.0 - (2.0 * (1.0 - u)).powf(1.0 / (config.mutation_eta + 1.0))
        };
        let (lo, hi) = config.bounds[j];
        theta[j] = (theta[j] + delta * (hi - lo)).clamp(lo, hi);
    }
}

/// Runs NSGA-II to minimize `objectives` over the box in `config.bounds` and
/// returns the final non-dominated set. Deterministic given `config.seed`.
pub fn optimize(
    objectives: &[&dyn VectorObjective],
    config: &Nsga2Config,
) -> Result<Vec<FrontMember>> {
    optimize_traced(objectives, config, |_, _| {})
}

/// `optimize` with a per-generation observer: called with the generation
/// index and the freshly evaluated individuals of that generation (the
/// initial population counts as generation 0).
pub fn optimize_traced(
    objectives: &[&dyn VectorObjective],
    config: &Nsga2Config,
    observer: impl FnMut(usize, &[(Vec<f64>, Vec<f64>)]),
) -> Result<Vec<FrontMember>> {
    if objectives.len() < 2 {
        return Err(Error::input("need at least 2 objectives"));
    }
    let mut batch = |thetas: &[Vec<f64>]| evaluate_all(objectives, thetas);
    run_evolution(&mut batch, config, observer)
}

/// Core evolutionary loop over a batch evaluator that maps a set of
/// parameter vectors to their objective rows (non-finite rows are treated as
/// quarantined). Shared by `optimize` and the direct-search baseline, which
/// must account one true evaluation per individual.
pub(crate) fn run_evolution(
    batch_eval: &mut dyn FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>,
    config: &Nsga2Config,
    mut observer: impl FnMut(usize, &[(Vec<f64>, Vec<f64>)]),
) -> Result<Vec<FrontMember>> {
    config.validate()?;
    let d = config.bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pop_size = config.population_size;

    let mut init: Vec<Vec<f64>> = config
        .initial_population
        .iter()
        .take(pop_size)
        .map(|t| {
            t.iter()
                .zip(&config.bounds)
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect()
        })
        .collect();
    while init.len() < pop_size {
        init.push(
            config
                .bounds
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect(),
        );
    }
    let init_obj = quarantine(batch_eval(&init));
    observer(
        0,
        &init
            .iter()
            .cloned()
            .zip(init_obj.iter().cloned())
            .collect::<Vec<_>>(),
    );

    let mut pop = Population {
        thetas: init,
        objectives: init_obj,
        rank: Vec::new(),
        crowding: Vec::new(),
    };
    rank_population(&mut pop);

    for gen in 1..=config.generations {
        let mut children: Vec<Vec<f64>> = Vec::with_capacity(pop_size);
        while children.len() < pop_size {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let (mut c1, mut c2) = sbx_crossover(&pop.thetas[a], &pop.thetas[b], config, &mut rng);
            polynomial_mutation(&mut c1, config, &mut rng);
            polynomial_mutation(&mut c2, config, &mut rng);
            children.push(c1);
            if children.len() < pop_size {
                children.push(c2);
            }
        }
        let child_obj = quarantine(batch_eval(&children));
        observer(
            gen,
            &children
                .iter()
                .cloned()
                .zip(child_obj.iter().cloned())
                .collect::<Vec<_>>(),
        );

        // elitist (mu + lambda) survival over parents and children
        let mut combined = Population {
            thetas: pop.thetas.drain(..).chain(children).collect(),
            objectives: pop.objectives.drain(..).chain(child_obj).collect(),
            rank: Vec::new(),
            crowding: Vec::new(),
        };
        rank_population(&mut combined);

        let mut order: Vec<usize> = (0..combined.thetas.len()).collect();
        order.sort_by(|&a, &b| {
            combined.rank[a].cmp(&combined.rank[b]).then(
                combined.crowding[b]
                    .partial_cmp(&combined.crowding[a])
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
        });
        order.truncate(pop_size);

        pop = Population {
            thetas: order.iter().map(|&i| combined.thetas[i].clone()).collect(),
            objectives: order.iter().map(|&i| combined.objectives[i].clone()).collect(),
            rank: Vec::new(),
            crowding: Vec::new(),
        };
        rank_population(&mut pop);
    }

    // final non-dominated set, quarantined individuals excluded
    let finite: Vec<(Vec<f64>, Vec<f64>)> = pop
        .thetas
        .iter()
        .zip(&pop.objectives)
        .filter(|(_, o)| o.iter().all(|v| v.is_finite()))
        .map(|(t, o)| (t.clone(), o.clone()))
        .collect();
    if finite.is_empty() {
        return Err(Error::numerical(
            "every individual was quarantined; objectives never returned finite values",
        ));
    }
    let vectors: Vec<ObjectiveVector> = finite
        .iter()
        .map(|(_, o)| ObjectiveVector::new(o.clone()))
        .collect::<Result<_>>()?;
    let front = pareto_front(&vectors)?;
    assert_eq!(d, finite[0].0.len());
    Ok(front
        .member_ids
        .iter()
        .zip(&front.points)
        .map(|(&id, obj)| FrontMember {
            theta: finite[id].0.clone(),
            objectives: obj.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sort_chain() {
        let pts = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let ranks = non_dominated_sort(&pts);
        assert_eq!(ranks, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn sort_incomparable_single_rank() {
        let pts = vec![vec![1.0, 4.0], vec![2.0, 3.0], vec![3.0, 2.0], vec![4.0, 1.0]];
        let ranks = non_dominated_sort(&pts);
        assert_eq!(ranks.len(), 1);
        assert_eq!(ranks[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn sort_ranks_partition_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let ranks = non_dominated_sort(&pts);
        let mut seen: Vec<usize> = ranks.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
        // every rank-r point is dominated by someone in rank r-1
        for r in 1..ranks.len() {
            for &i in &ranks[r] {
                assert!(ranks[r - 1]
                    .iter()
                    .any(|&j| dominates_slices(&pts[j], &pts[i])));
            }
        }
    }

    #[test]
    fn crowding_two_points_infinite() {
        let cd = crowding_distance(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(cd.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn crowding_three_evenly_spaced() {
        let cd = crowding_distance(&[vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]]);
        assert!(cd[0].is_infinite());
        assert!(cd[2].is_infinite());
        assert!((cd[1] - 2.0).abs() < 1e-12, "middle {}", cd[1]);
    }

    #[test]
    fn crowding_constant_objective_contributes_zero() {
        let cd = crowding_distance(&[vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 5.0]]);
        assert!((cd[1] - 1.0).abs() < 1e-12, "middle {}", cd[1]);
    }

    fn toy_config(seed: u64) -> Nsga2Config {
        let mut c = Nsga2Config::defaults(vec![(-5.0, 5.0)], seed);
        c.population_size = 40;
        c.generations = 50;
        c
    }

    #[test]
    fn optimize_convex_biobjective() {
        let f1 = |x: &[f64]| x[0] * x[0];
        let f2 = |x: &[f64]| (x[0] - 2.0) * (x[0] - 2.0);
        let front = optimize(&[&f1, &f2], &toy_config(3)).unwrap();
        for m in &front {
            assert!(
                m.theta[0] >= -0.05 && m.theta[0] <= 2.05,
                "theta {} outside the Pareto set",
                m.theta[0]
            );
        }
    }

    #[test]
    fn optimize_twin_objectives_collapse() {
        let f1 = |x: &[f64]| x[0] * x[0];
        let f2 = |x: &[f64]| x[0] * x[0];
        let front = optimize(&[&f1, &f2], &toy_config(5)).unwrap();
        for a in &front {
            for b in &front {
                let da = (a.objectives[0] - b.objectives[0]).abs();
                assert!(da <= 1e-2, "front spread {da}");
            }
        }
    }

    #[test]
    fn optimize_is_deterministic() {
        let f1 = |x: &[f64]| x[0] * x[0] + x[1] * x[1];
        let f2 = |x: &[f64]| (x[0] - 1.0) * (x[0] - 1.0) + (x[1] + 1.0) * (x[1] + 1.0);
        let mut config = Nsga2Config::defaults(vec![(-5.0, 5.0), (-5.0, 5.0)], 11);
        config.population_size = 24;
        config.generations = 20;
        let a = optimize(&[&f1, &f2], &config).unwrap();
        let b = optimize(&[&f1, &f2], &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.theta, y.theta);
            assert_eq!(x.objectives.values(), y.objectives.values());
        }
    }

    #[test]
    fn optimize_quarantines_non_finite() {
        // f1 explodes on half the domain; the optimizer must survive and
        // only return finite members
        let f1 = |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { x[0] * x[0] };
        let f2 = |x: &[f64]| (x[0] + 1.0) * (x[0] + 1.0);
        let front = optimize(&[&f1, &f2], &toy_config(9)).unwrap();
        assert!(!front.is_empty());
        for m in &front {
            assert!(m.theta[0] <= 0.0);
            assert!(m.objectives.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn emitted_thetas_respect_bounds() {
        let f1 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let f2 = |x: &[f64]| x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>();
        let mut config = Nsga2Config::defaults(vec![(-0.5, 0.25), (0.1, 0.3)], 2);
        config.population_size = 16;
        config.generations = 15;
        let front = optimize(&[&f1, &f2], &config).unwrap();
        for m in &front {
            assert!(m.theta[0] >= -0.5 && m.theta[0] <= 0.25);
            assert!(m.theta[1] >= 0.1 && m.theta[1] <= 0.3);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = Nsga2Config::defaults(vec![(-1.0, 1.0)], 0);
        c.population_size = 7;
        assert!(c.validate().is_err());
        let mut c = Nsga2Config::defaults(vec![(1.0, -1.0)], 0);
        c.population_size = 8;
        assert!(c.validate().is_err());
    }
}
