//! Independent oracles used to check the analytic engine: seeded Monte
//! Carlo with standard errors, exhaustive enumeration over Bernoulli
//! outcomes, and central finite differences.
//!
//! Nothing here calls into `analytic`; the oracles only ever see samples or
//! outcomes and the user-supplied function.

pub mod instances;
pub mod registry;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{BernoulliVec, LatentDistribution};
use crate::ndcore::{DenseVector, RngStream};

/// Sample mean and standard error per output coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
    /// Seed and stream id of the stream the samples came from.
    pub seed: u64,
    pub stream: u64,
    pub shards: usize,
}

impl McEstimate {
    /// Largest `|mean - target| / se` over coordinates. A coordinate whose SE
    /// is zero counts as infinitely far unless it matches exactly.
    pub fn max_z_score(&self, target: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .zip(target)
            .map(|((m, se), t)| {
                let diff = (m - t).abs();
                if diff == 0.0 {
                    0.0
                } else if *se == 0.0 {
                    f64::INFINITY
                } else {
                    diff / se
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn within(&self, target: &[f64], n_se: f64) -> bool {
        self.mean.len() == target.len() && self.max_z_score(target) <= n_se
    }
}

/// Welford accumulator over vectors.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Chan et al. pairwise combination.
    fn merge(mut self, other: &Moments) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        self
    }

    fn finish(self, rng: &RngStream, shards: usize) -> McEstimate {
        let n = self.n as f64;
        let std_error = self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
        McEstimate {
            mean: self.mean,
            std_error,
            n_samples: self.n,
            seed: rng.seed(),
            stream: rng.stream_id(),
            shards,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::InvalidParameter(format!("Monte Carlo needs n >= 2, got {n}")))
    } else {
        Ok(())
    }
}

/// Sample mean and SE of `f(z)` over `n` i.i.d. draws of `dist`, consuming
/// `rng` sequentially.
pub fn mc_expect<F>(mut f: F, dist: &LatentDistribution, n: usize, rng: &mut RngStream) -> Result<McEstimate>
where
    F: FnMut(&DenseVector) -> Vec<f64>,
{
    check_n(n)?;
    let origin = rng.clone();
    let first = f(&dist.sample(rng));
    let mut acc = Moments::new(first.len());
    acc.push(&first);
    for _ in 1..n {
        acc.push(&f(&dist.sample(rng)));
    }
    Ok(acc.finish(&origin, 1))
}

/// Like [`mc_expect`] but spreads the draws over `shards` split streams of
/// `rng` evaluated in parallel. The result depends only on
/// `(rng identity, n, shards)`.
pub fn mc_expect_sharded<F>(
    f: F,
    dist: &LatentDistribution,
    n: usize,
    rng: &RngStream,
    shards: usize,
) -> Result<McEstimate>
where
    F: Fn(&DenseVector) -> Vec<f64> + Sync,
{
    check_n(n)?;
    let shards = shards.clamp(1, n);
    let parts: Vec<Moments> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count = n / shards + usize::from(s < n % shards);
            let mut stream = rng.split(s as u64);
            let mut acc: Option<Moments> = None;
            for _ in 0..count {
                let v = f(&dist.sample(&mut stream));
                acc.get_or_insert_with(|| Moments::new(v.len())).push(&v);
            }
            acc.unwrap_or_else(|| Moments::new(0))
        })
        .collect();
    let dim = parts.iter().map(|p| p.mean.len()).max().unwrap_or(0);
    let total = parts
        .iter()
        .fold(Moments::new(dim), |acc, p| acc.merge(p));
    Ok(total.finish(rng, shards))
}

/// Per-coordinate `Cov(f(z)_j, g(z)_j)` with standard errors, where `fg`
/// returns both vectors for one draw. Two passes over the same stream: the
/// first fixes the sample means, the second averages centred products.
pub fn mc_covariance<F>(
    fg: F,
    dist: &LatentDistribution,
    n: usize,
    rng: &RngStream,
    shards: usize,
) -> Result<McEstimate>
where
    F: Fn(&DenseVector) -> (Vec<f64>, Vec<f64>) + Sync,
{
    let means = mc_expect_sharded(
        |z| {
            let (mut a, b) = fg(z);
            a.extend(b);
            a
        },
        dist,
        n,
        rng,
        shards,
    )?;
    let half = means.mean.len() / 2;
    let (ma, mb) = means.mean.split_at(half);
    mc_expect_sharded(
        |z| {
            let (a, b) = fg(z);
            a.iter()
                .zip(&b)
                .zip(ma.iter().zip(mb))
                .map(|((x, y), (mx, my))| (x - mx) * (y - my))
                .collect()
        },
        dist,
        n,
        rng,
        shards,
    )
}

/// Exact `E[f(z)]` by summing over all `2^d` outcomes.
pub fn enumerate_bernoulli<F>(mut f: F, dist: &BernoulliVec) -> Result<Vec<f64>>
where
    F: FnMut(&DenseVector) -> Vec<f64>,
{
    let d = dist.dim();
    if d > 20 {
        return Err(Error::EnumerationTooLarge(d));
    }
    let p = dist.p().as_slice();
    let mut total: Vec<f64> = Vec::new();
    let mut z = vec![0.0; d];
    for mask in 0u32..(1u32 << d) {
        let mut w = 1.0;
        for i in 0..d {
            let bit = (mask >> i) & 1 == 1;
            z[i] = if bit { 1.0 } else { 0.0 };
            w *= if bit { p[i] } else { 1.0 - p[i] };
        }
        if w == 0.0 {
            continue;
        }
        let v = f(&DenseVector::new(z.clone())?);
        if total.is_empty() {
            total = vec![0.0; v.len()];
        }
        for (t, x) in total.iter_mut().zip(&v) {
            *t += w * x;
        }
    }
    Ok(total)
}

/// Central differences `(g(p + h e_i) - g(p - h e_i)) / 2h`.
pub fn fd_gradient<G>(mut g: G, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = g(&p);
            p[i] = orig - h;
            let down = g(&p);
            p[i] = orig;
            let d = (up - down) / (2.0 * h);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite("fd_gradient"))
            }
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::DiagGaussian;

    fn gauss(mean: Vec<f64>, var: Vec<f64>) -> LatentDistribution {
        DiagGaussian::from_vecs(mean, var).unwrap().into()
    }

    #[test]
    fn constant_function_has_zero_error() {
        let d = gauss(vec![0.0, 1.0], vec![1.0, 2.0]);
        let est = mc_expect(|_| vec![2.5], &d, 1000, &mut RngStream::new(1)).unwrap();
        assert_eq!(est.mean, vec![2.5]);
        assert_eq!(est.std_error, vec![0.0]);
    }

    #[test]
    fn se_shrinks_with_sqrt_n() {
        let d = gauss(vec![0.0], vec![1.0]);
        let f = |z: &DenseVector| vec![z[0]];
        let small = mc_expect(f, &d, 10, &mut RngStream::new(3)).unwrap();
        let big = mc_expect(f, &d, 1_000_000, &mut RngStream::new(3)).unwrap();
        let ratio = small.std_error[0] / big.std_error[0];
        let ideal = (1e5f64).sqrt();
        assert!(ratio > ideal / 3.0 && ratio < ideal * 3.0, "ratio {ratio}");
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let d = gauss(vec![0.3], vec![0.7]);
        let f = |z: &DenseVector| vec![z[0] * z[0]];
        let a = mc_expect_sharded(f, &d, 10_000, &RngStream::new(8), 4).unwrap();
        let b = mc_expect_sharded(f, &d, 10_000, &RngStream::new(8), 4).unwrap();
        assert_eq!(a, b);
        assert!(mc_expect(f, &d, 1, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn sharded_mean_matches_truth() {
        let d = gauss(vec![1.0], vec![4.0]);
        let est = mc_expect_sharded(|z| vec![z[0] * z[0]], &d, 200_000, &RngStream::new(5), 8).unwrap();
        assert!(est.within(&[5.0], 5.0));
    }

    #[test]
    fn covariance_of_gaussian_with_its_square() {
        // Cov(z, z^2) = 2 mu var for z ~ N(mu, var)
        let d = gauss(vec![0.5], vec![2.0]);
        let est = mc_covariance(|z| (vec![z[0]], vec![z[0] * z[0]]), &d, 400_000, &RngStream::new(6), 4).unwrap();
        assert!(est.within(&[2.0], 5.0), "{:?}", est);
    }

    #[test]
    fn enumeration_basics() {
        let b = BernoulliVec::from_vec(vec![0.3, 0.6, 0.9]).unwrap();
        let first = enumerate_bernoulli(|z| vec![z[0]], &b).unwrap();
        assert!((first[0] - 0.3).abs() < 1e-15);
        let total = enumerate_bernoulli(|_| vec![1.0], &b).unwrap();
        assert!((total[0] - 1.0).abs() < 1e-12);
        let p: f64 = 0.3;
        let m3 = enumerate_bernoulli(|z| vec![(z[0] - p).powi(3)], &b).unwrap();
        assert!((m3[0] - p * (1.0 - p) * (1.0 - 2.0 * p)).abs() < 1e-15);
        let big = BernoulliVec::from_vec(vec![0.5; 21]).unwrap();
        assert!(matches!(enumerate_bernoulli(|_| vec![0.0], &big), Err(Error::EnumerationTooLarge(21))));
    }

    #[test]
    fn finite_differences() {
        let quad = |p: &[f64]| 3.0 * p[0] * p[0] - 2.0 * p[0] * p[1] + 0.5 * p[1] * p[1] + p[0];
        let g = fd_gradient(quad, &[1.5, -0.5], 1e-3).unwrap();
        assert!((g[0] - (6.0 * 1.5 + 1.0 + 1.0)).abs() < 1e-10);
        assert!((g[1] - (-3.0 - 0.5)).abs() < 1e-10);
        assert_eq!(fd_gradient(|_| 4.0, &[1.0, 2.0], 1e-5).unwrap(), vec![0.0, 0.0]);
        assert!(fd_gradient(|_| 0.0, &[1.0], 0.0).is_err());
    }

    #[test]
    fn mc_error_shrinks_against_exact_truth() {
        // average over seeds: |MC - exact| at n=100 exceeds that at n=10_000
        let b = BernoulliVec::from_vec(vec![0.2, 0.7, 0.4]).unwrap();
        let f = |z: &DenseVector| vec![(z[0] + 2.0 * z[1] - z[2]).powi(2)];
        let exact = enumerate_bernoulli(f, &b).unwrap()[0];
        let dist: LatentDistribution = b.into();
        let avg_err = |n: usize| -> f64 {
            (0..20)
                .map(|s| (mc_expect(f, &dist, n, &mut RngStream::new(s)).unwrap().mean[0] - exact).abs())
                .sum::<f64>()
                / 20.0
        };
        assert!(avg_err(10_000) < avg_err(100));
    }
}
