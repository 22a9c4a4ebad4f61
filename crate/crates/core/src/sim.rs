//! Monte Carlo evaluation of a policy on the fractional plant.
//!
//! Path `i` draws its noise from a ChaCha8 generator seeded with `seed` and
//! switched to stream `i`, so every path sees the same numbers regardless of
//! how paths are spread over threads. Path costs are collected in path order
//! and reduced with pairwise summation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{scale, Policy, ProblemSpec, Trajectory};

/// Distribution of `ξ_k`; both choices have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    Normal,
    Rademacher,
}

impl NoiseModel {
    pub fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            NoiseModel::Normal => rng.sample(StandardNormal),
            NoiseModel::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n_paths)`.
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Number of leading paths whose trajectories are returned.
    pub keep: usize,
}

/// Generator for path `path` under `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Noise sequence `ξ_0 .. ξ_{N-1}` of one path.
pub fn path_noises(noise: NoiseModel, seed: u64, path: usize, horizon: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, path);
    (0..horizon).map(|_| noise.sample(&mut rng)).collect()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Mean and standard error, computed relative to the first sample so that
/// identical samples give exactly that value and zero spread.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let shift = samples[0];
    let centered: Vec<f64> = samples.iter().map(|c| c - shift).collect();
    let offset = pairwise_sum(&centered) / n as f64;
    let squares: Vec<f64> = centered
        .iter()
        .map(|c| (c - offset) * (c - offset))
        .collect();
    let var = pairwise_sum(&squares) / (n as f64 - 1.0);
    (shift + offset, (var / n as f64).sqrt())
}

/// Estimates the expected cost of `policy` from `n_paths` independent paths.
pub fn simulate(
    spec: &ProblemSpec,
    policy: &Policy,
    noise: NoiseModel,
    seed: u64,
    n_paths: usize,
    options: &SimOptions,
) -> Result<(CostEstimate, Vec<Trajectory>)> {
    if n_paths < 2 {
        return Err(Error::invalid(
            "paths",
            format!("need at least 2 paths, got {n_paths}"),
        ));
    }
    let sys = scale(spec)?;
    if policy.horizon() != sys.horizon {
        return Err(Error::dim("policy horizon", sys.horizon, policy.horizon()));
    }
    let run = |i: usize| -> Result<(f64, Option<Trajectory>)> {
        let noises = path_noises(noise, seed, i, sys.horizon);
        let t = Trajectory::rollout(spec, &sys, policy, &noises)?;
        Ok((t.realized_cost, (i < options.keep).then_some(t)))
    };
    let results: Result<Vec<_>> = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?
            .install(|| (0..n_paths).into_par_iter().map(run).collect()),
        None => (0..n_paths).into_par_iter().map(run).collect(),
    };
    let (costs, kept): (Vec<f64>, Vec<Option<Trajectory>>) = results?.into_iter().unzip();
    let (mean, stderr) = mean_and_stderr(&costs);
    Ok((
        CostEstimate {
            mean,
            stderr,
            n_paths,
            seed,
            noise,
        },
        kept.into_iter().flatten().collect(),
    ))
}

/// Writes trajectories as CSV, one row per `(path, k)`. The row `k = N`
/// has empty control and noise fields and carries the terminal cost.
pub fn write_trajectories_csv(
    mut out: impl Write,
    spec: &ProblemSpec,
    paths: &[Trajectory],
) -> std::io::Result<()> {
    let (d, m) = (spec.state_dim(), spec.input_dim());
    let mut header = vec!["path".to_string(), "k".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend(["xi".to_string(), "stage_cost".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for (p, t) in paths.iter().enumerate() {
        for (k, x) in t.states.iter().enumerate() {
            let mut row = vec![p.to_string(), k.to_string()];
            row.extend(x.iter().map(f64::to_string));
            match t.controls.get(k) {
                Some(u) => {
                    row.extend(u.iter().map(f64::to_string));
                    row.push(t.noises[k].to_string());
                    row.push(spec.stage_cost(x, u).to_string());
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), m + 1));
                    row.push(spec.terminal_cost(x).to_string());
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::example1;

    #[test]
    fn noise_moments() {
        let n = 100_000;
        for model in [NoiseModel::Normal, NoiseModel::Rademacher] {
            let mut rng = path_rng(11, 0);
            let xs: Vec<f64> = (0..n).map(|_| model.sample(&mut rng)).collect();
            let mean = pairwise_sum(&xs) / n as f64;
            let var = pairwise_sum(
                &xs.iter()
                    .map(|x| (x - mean) * (x - mean))
                    .collect::<Vec<_>>(),
            ) / (n - 1) as f64;
            assert!(
                mean.abs() < 4.0 / (n as f64).sqrt(),
                "{model:?} mean {mean}"
            );
            assert!((var - 1.0).abs() < 0.05, "{model:?} var {var}");
        }
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a = path_noises(NoiseModel::Normal, 5, 0, 8);
        let b = path_noises(NoiseModel::Normal, 5, 1, 8);
        assert_ne!(a, b);
        assert_eq!(a, path_noises(NoiseModel::Normal, 5, 0, 8));
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let (m, s) = mean_and_stderr(&[0.1; 7]);
        assert_eq!(m, 0.1);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn thread_count_is_irrelevant() {
        let spec = example1();
        let policy = Policy::zeros(4, 2, 1);
        let one = SimOptions {
            threads: Some(1),
            keep: 0,
        };
        let four = SimOptions {
            threads: Some(4),
            keep: 0,
        };
        let (a, _) = simulate(&spec, &policy, NoiseModel::Normal, 3, 2000, &one).unwrap();
        let (b, _) = simulate(&spec, &policy, NoiseModel::Normal, 3, 2000, &four).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_path() {
        let spec = example1();
        let r = simulate(
            &spec,
            &Policy::zeros(4, 2, 1),
            NoiseModel::Normal,
            0,
            1,
            &SimOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_layout() {
        let spec = example1();
        let opts = SimOptions {
            threads: None,
            keep: 2,
        };
        let (_, paths) = simulate(
            &spec,
            &Policy::zeros(4, 2, 1),
            NoiseModel::Rademacher,
            1,
            10,
            &opts,
        )
        .unwrap();
        assert_eq!(paths.len(), 2);
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &spec, &paths).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,k,x_1,x_2,u_1,xi,stage_cost");
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
        assert!(lines[5].starts_with("0,4,") && lines[5].contains(",,"));
        // per-path stage costs add up to the realized cost
        let total: f64 = lines[1..6]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - paths[0].realized_cost).abs() < 1e-12 * total.max(1.0));
    }
}
