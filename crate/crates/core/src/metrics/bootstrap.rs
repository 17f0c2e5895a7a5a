use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{quantile_sorted, MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Undefined resamples are redrawn; more than this fraction of
    /// `replicates` in total is an error.
    pub max_undefined_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            alpha: 0.05,
            seed: 0,
            max_undefined_fraction: 0.1,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(MetricsError::Invalid("at least one replicate required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MetricsError::Invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }

    fn undefined_cap(&self) -> usize {
        (self.max_undefined_fraction * self.replicates as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// RNG of replicate `r`: the run seed selects the key, the replicate the
/// stream, so replicates are independent of scheduling.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// `n` row indices drawn uniformly with replacement.
pub fn draw_resample<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap distribution of a vector-valued statistic over `n` rows.
///
/// Replicate `r` draws resamples from [`replicate_rng`]`(seed, r)` until the
/// statistic is defined. Returns the statistics in replicate order plus the
/// total number of redraws.
pub fn bootstrap_distribution<F>(
    n: usize,
    statistic: F,
    config: &BootstrapConfig,
) -> Result<(Vec<Vec<f64>>, usize)>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let cap = config.undefined_cap();
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.seed, r);
            let mut failures = 0;
            loop {
                let sample = draw_resample(&mut rng, n);
                match statistic(&sample) {
                    Ok(v) => return Ok((v, failures)),
                    Err(MetricsError::Undefined(_)) | Err(MetricsError::SingleClass) => {
                        failures += 1;
                        if failures > cap {
                            return Err(MetricsError::TooManyUndefined { failures, cap });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut stats = Vec::with_capacity(config.replicates);
    let mut failures = 0;
    for r in results {
        let (v, f) = r?;
        stats.push(v);
        failures += f;
    }
    if failures > cap {
        return Err(MetricsError::TooManyUndefined { failures, cap });
    }
    Ok((stats, failures))
}

/// `[2θ̂ − q(1−α/2), 2θ̂ − q(α/2)]` from the replicate statistics.
pub fn basic_interval(point: f64, replicates: &[f64], alpha: f64) -> Result<Interval> {
    if replicates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Interval {
        point,
        lower: 2.0 * point - quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        upper: 2.0 * point - quantile_sorted(&sorted, alpha / 2.0),
    })
}

/// Basic bootstrap intervals for each component of a vector statistic.
pub fn bootstrap_ci_vec<F>(n: usize, statistic: F, config: &BootstrapConfig) -> Result<Vec<Interval>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let all: Vec<usize> = (0..n).collect();
    let point = statistic(&all)?;
    let (stats, _) = bootstrap_distribution(n, &statistic, config)?;
    if stats.iter().any(|s| s.len() != point.len()) {
        return Err(MetricsError::Invalid("statistic changed length between resamples".into()));
    }
    (0..point.len())
        .map(|j| {
            let column: Vec<f64> = stats.iter().map(|s| s[j]).collect();
            basic_interval(point[j], &column, config.alpha)
        })
        .collect()
}

/// Basic bootstrap interval for a scalar statistic of row indices.
pub fn bootstrap_ci<F>(n: usize, statistic: F, config: &BootstrapConfig) -> Result<Interval>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    let wrapped = |idx: &[usize]| statistic(idx).map(|v| vec![v]);
    Ok(bootstrap_ci_vec(n, wrapped, config)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(data: &[f64]) -> impl Fn(&[usize]) -> Result<f64> + Sync + '_ {
        move |idx: &[usize]| Ok(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64)
    }

    #[test]
    fn constant_statistic_zero_width() {
        let ci = bootstrap_ci(10, |_| Ok(4.2), &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.point, ci.lower, ci.upper), (4.2, 4.2, 4.2));
    }

    #[test]
    fn replayed_resamples_match_hand_formula() {
        let data = [1.0, 2.0, 3.0];
        let config = BootstrapConfig {
            replicates: 2,
            seed: 7,
            ..Default::default()
        };
        let ci = bootstrap_ci(3, mean_of(&data), &config).unwrap();
        let means: Vec<f64> = (0..2)
            .map(|r| {
                let idx = draw_resample(&mut replicate_rng(7, r), 3);
                idx.iter().map(|&i| data[i]).sum::<f64>() / 3.0
            })
            .collect();
        let (lo, hi) = (means[0].min(means[1]), means[0].max(means[1]));
        // with two replicates the 2.5% / 97.5% quantiles interpolate at 0.025 / 0.975
        let q_lo = lo + 0.025 * (hi - lo);
        let q_hi = lo + 0.975 * (hi - lo);
        assert_eq!(ci.lower, 2.0 * 2.0 - q_hi);
        assert_eq!(ci.upper, 2.0 * 2.0 - q_lo);
        assert!(ci.lower <= ci.upper);
    }

    #[test]
    fn two_replicate_worked_example() {
        // seed 63 resamples (1,2,3) to means 2.0 and 4/3
        let data = [1.0, 2.0, 3.0];
        let config = BootstrapConfig {
            replicates: 2,
            seed: 63,
            ..Default::default()
        };
        let (stats, _) =
            bootstrap_distribution(3, |idx: &[usize]| mean_of(&data)(idx).map(|m| vec![m]), &config)
                .unwrap();
        assert_eq!(stats, vec![vec![2.0], vec![4.0 / 3.0]]);
        let ci = bootstrap_ci(3, mean_of(&data), &config).unwrap();
        // q(0.975) = 4/3 + 0.975·2/3 = 1.98333…, q(0.025) = 1.35
        assert!((ci.lower - 2.0166666666666666).abs() < 1e-12);
        assert!((ci.upper - 2.65).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let data: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_ci(50, mean_of(&data), &BootstrapConfig::default().with_seed(3)))
                .unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn undefined_resamples_redrawn_then_capped() {
        let data: Vec<f64> = (0..5).map(f64::from).collect();
        // undefined whenever row 0 is missing from the resample (≈ 1/3 of draws)
        let picky = |idx: &[usize]| {
            if idx.contains(&0) {
                Ok(idx.len() as f64)
            } else {
                Err(MetricsError::Undefined("row 0 absent".into()))
            }
        };
        let config = BootstrapConfig {
            replicates: 200,
            ..Default::default()
        };
        assert!(matches!(
            bootstrap_ci(5, picky, &config),
            Err(MetricsError::TooManyUndefined { .. })
        ));
        let lenient = BootstrapConfig {
            max_undefined_fraction: 1.0,
            ..config
        };
        let (stats, redraws) = bootstrap_distribution(
            5,
            |idx: &[usize]| picky(idx).map(|v| vec![v + data[0]]),
            &lenient,
        )
        .unwrap();
        assert_eq!(stats.len(), 200);
        assert!(redraws > 20);
    }

    #[test]
    fn vector_statistic_components() {
        let data: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let config = BootstrapConfig::default().with_seed(1);
        let both = bootstrap_ci_vec(
            30,
            |idx: &[usize]| {
                let m = idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64;
                Ok(vec![m, 2.0 * m])
            },
            &config,
        )
        .unwrap();
        let single = bootstrap_ci(30, mean_of(&data), &config).unwrap();
        assert_eq!(both[0], single);
        assert!((both[1].lower - 2.0 * single.lower).abs() < 1e-12);
    }
}
