//! Temporary probe for loop quality/timing; not part of the final suite.

use std::time::Instant;

use parmis::acquisition::{sample_pareto_front, utility_batch, AcquisitionContext};
use parmis::gp::{fit_hyperparameters, GaussianProcess, KernelSpec};
use parmis::nsga2::Nsga2Config;
use parmis::optimizer::{run_parmis, run_random_search, ParmisConfig};
use parmis::pareto::{hypervolume, pareto_front, reference_point, ObjectiveVector};
use parmis::policy::{param_count, PolicyArchitecture, PolicyParams};
use parmis::socsim::{evaluate, Calibration, ObjectiveId};
use parmis::workloads;
use parmis::Result;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn shared_phv(records: &[(&str, &parmis::optimizer::RunRecord)]) -> Vec<(String, f64)> {
    let mut all: Vec<ObjectiveVector> = Vec::new();
    for (_, r) in records {
        all.extend(r.successful_evals().1);
    }
    let reference = reference_point(&all).unwrap();
    records
        .iter()
        .map(|(name, r)| {
            let front = r.front().unwrap();
            (name.to_string(), hypervolume(&front, &reference).unwrap())
        })
        .collect()
}

#[test]
#[ignore]
fn probe_toy() {
    // d=2 analytic biobjective
    for seed in 0..5u64 {
        let mut eval = |theta: &[f64]| -> Result<ObjectiveVector> {
            let f1 = theta.iter().map(|v| v * v).sum::<f64>();
            let f2 = theta.iter().map(|v| (v - 2.0) * (v - 2.0)).sum::<f64>();
            ObjectiveVector::new(vec![f1, f2])
        };
        let mut config = ParmisConfig::with_total_budget(60, seed);
        config.stop_on_convergence = false;
        let t0 = Instant::now();
        let parmis = run_parmis(&mut eval, 2, &config).unwrap();
        let t_parmis = t0.elapsed().as_secs_f64();
        let random = run_random_search(&mut eval, 2, 60, seed + 1000).unwrap();
        let phv = shared_phv(&[("parmis", &parmis), ("random", &random)]);
        println!(
            "toy seed {seed}: parmis {:.4} vs random {:.4} ({}s)",
            phv[0].1, phv[1].1, t_parmis
        );
    }
}

fn quartiles(mut v: Vec<f64>) -> (f64, f64, f64) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    (v[n / 4], v[n / 2], v[3 * n / 4])
}

#[test]
#[ignore]
fn probe_diag() {
    let arch = PolicyArchitecture::default();
    let d = param_count(&arch);
    let cal = Calibration::default();
    let apps = workloads::default_suite();
    let objectives = [ObjectiveId::Time, ObjectiveId::Energy];
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // 300-point uniform design, like a random-search history
    let mut thetas: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for _ in 0..300 {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let params = PolicyParams::new(&arch, theta.clone()).unwrap();
        let v = evaluate(&arch, &params, &apps, &objectives, &cal).unwrap();
        values.push(v.values().to_vec());
        thetas.push(theta);
    }

    // hyperfit + fit per objective
    let sub = &thetas[100..];
    let mut models = Vec::new();
    for j in 0..2 {
        let targets_sub: Vec<f64> = values[100..].iter().map(|v| v[j]).collect();
        // mirrors the loop's median-quarter bootstrap at d = 1073
        let init = KernelSpec::isotropic(33.0, 1.0).unwrap();
        let t0 = Instant::now();
        let kernel = fit_hyperparameters(&sub.to_vec(), &targets_sub, &init, 1e-6).unwrap();
        println!(
            "obj {j}: tuned lengthscale {:.2} signal_var {:.4} ({:.1}s)",
            kernel.lengthscales()[0],
            kernel.signal_variance(),
            t0.elapsed().as_secs_f64()
        );
        let targets: Vec<f64> = values.iter().map(|v| v[j]).collect();
        let model = GaussianProcess::fit(&thetas, &targets, kernel, 1e-6).unwrap();
        println!(
            "obj {j}: lml {:.1}, y range [{:.3}, {:.3}]",
            model.log_marginal_likelihood(),
            targets.iter().cloned().fold(f64::INFINITY, f64::min),
            targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        models.push(model);
    }

    // front sample, warm-started from the incumbent front
    let bounds = vec![(-5.0, 5.0); d];
    let mut nsga = Nsga2Config::defaults(bounds.clone(), 0);
    nsga.population_size = 32;
    nsga.generations = 12;
    nsga.initial_population = {
        let objs: Vec<ObjectiveVector> = values
            .iter()
            .map(|v| ObjectiveVector::new(v.clone()).unwrap())
            .collect();
        let front = pareto_front(&objs).unwrap();
        front.member_ids.iter().take(16).map(|&i| thetas[i].clone()).collect()
    };
    let sample = sample_pareto_front(&models, &nsga, 256, 99).unwrap();
    println!("front sample size {} y* (max conv) = {:?}", sample.size(), sample.componentwise_max());
    for j in 0..2 {
        let best_data = values.iter().map(|v| -v[j]).fold(f64::NEG_INFINITY, f64::max);
        println!("  obj {j}: data best (max conv) {:.4} vs y* {:.4}", best_data, sample.componentwise_max()[j]);
    }

    // pools
    let uniform = DMatrix::from_fn(400, d, |_, _| rng.random_range(-5.0..5.0));
    let mut perturbed = DMatrix::zeros(300, d);
    for i in 0..300 {
        for j in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            perturbed[(i, j)] = (thetas[i][j] + 1.0 * g).clamp(-5.0, 5.0);
        }
    }
    let ctx = AcquisitionContext::for_minimization(&models, vec![sample], bounds).unwrap();
    for (name, pool) in [("uniform", &uniform), ("perturbed", &perturbed)] {
        for j in 0..2 {
            let (means, stds) = models[j].predict_batch(pool).unwrap();
            let mq = quartiles(means.iter().copied().collect());
            let sq = quartiles(stds.iter().copied().collect());
            println!(
                "{name} obj {j}: mean q {:.4}/{:.4}/{:.4} std q {:.4}/{:.4}/{:.4}",
                mq.0, mq.1, mq.2, sq.0, sq.1, sq.2
            );
        }
        let u = utility_batch(pool, &ctx).unwrap();
        let uq = quartiles(u.clone());
        let umax = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("{name}: utility q {:.5}/{:.5}/{:.5} max {:.5}", uq.0, uq.1, uq.2, umax);
    }

    // where does the true objective correlate with predictions?
    for j in 0..2 {
        let (means, _) = models[j].predict_batch(&perturbed).unwrap();
        let mut actual = Vec::new();
        for i in 0..40 {
            let theta: Vec<f64> = perturbed.row(i).iter().copied().collect();
            let params = PolicyParams::new(&arch, theta).unwrap();
            let v = evaluate(&arch, &params, &apps, &objectives, &cal).unwrap();
            actual.push(v[j]);
        }
        let pred: Vec<f64> = means.iter().take(40).copied().collect();
        let mp = pred.iter().sum::<f64>() / 40.0;
        let ma = actual.iter().sum::<f64>() / 40.0;
        let cov: f64 = pred.iter().zip(&actual).map(|(p, a)| (p - mp) * (a - ma)).sum::<f64>();
        let vp: f64 = pred.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>();
        let va: f64 = actual.iter().map(|a| (a - ma) * (a - ma)).sum::<f64>();
        println!("obj {j}: corr(pred, actual) on perturbed = {:.3}", cov / (vp * va).sqrt());
    }
}

#[test]
#[ignore]
fn probe_moves() {
    let arch = PolicyArchitecture::default();
    let d = param_count(&arch);
    let cal = Calibration::default();
    let apps = workloads::default_suite();
    let objectives = [ObjectiveId::Time, ObjectiveId::Energy];
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // find a decent anchor: best time among 200 random policies
    let mut best_theta: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let params = PolicyParams::new(&arch, theta.clone()).unwrap();
        let v = evaluate(&arch, &params, &apps, &objectives, &cal).unwrap();
        if v[0] < best {
            best = v[0];
            best_theta = theta;
        }
    }
    println!("anchor time {best:.4}");
    for sigma in [1.0, 0.3, 0.1, 0.03] {
        let mut rel = Vec::new();
        let mut improved = 0;
        for _ in 0..60 {
            let theta: Vec<f64> = best_theta
                .iter()
                .map(|v| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (v + sigma * g).clamp(-5.0, 5.0)
                })
                .collect();
            let params = PolicyParams::new(&arch, theta).unwrap();
            let v = evaluate(&arch, &params, &apps, &objectives, &cal).unwrap();
            rel.push((v[0] - best).abs() / best);
            if v[0] < best {
                improved += 1;
            }
        }
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let max = rel.iter().cloned().fold(0.0, f64::max);
        println!("sigma {sigma}: mean |dtime|/t {mean:.4} max {max:.4} improved {improved}/60");
    }
}

#[test]
#[ignore]
fn probe_soc() {
    let arch = PolicyArchitecture::default();
    let d = param_count(&arch);
    let cal = Calibration::default();
    let apps = workloads::default_suite();
    let objectives = [ObjectiveId::Time, ObjectiveId::Energy];

    for seed in 0..3u64 {
        let mut eval = |theta: &[f64]| -> Result<ObjectiveVector> {
            let params = PolicyParams::new(&arch, theta.to_vec())?;
            evaluate(&arch, &params, &apps, &objectives, &cal)
        };
        let mut config = ParmisConfig::with_total_budget(300, seed);
        config.stop_on_convergence = false;
        let t0 = Instant::now();
        let parmis = run_parmis(&mut eval, d, &config).unwrap();
        let t_parmis = t0.elapsed().as_secs_f64();
        let random = run_random_search(&mut eval, d, 300, seed + 1000).unwrap();
        let phv = shared_phv(&[("parmis", &parmis), ("random", &random)]);
        println!(
            "suite seed {seed}: parmis {:.6} vs random {:.6} | wall {:.1}s (fit {:.1} select {:.1} eval {:.1})",
            phv[0].1, phv[1].1, t_parmis, parmis.wall_seconds_fit,
            parmis.wall_seconds_select, parmis.wall_seconds_eval
        );
    }
}
