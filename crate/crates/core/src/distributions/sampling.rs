//! Reproducible random walks.
//!
//! Samples are produced in fixed-size chunks; chunk `c` draws from its own
//! ChaCha stream `(seed, c)`, and chunk results are combined in chunk order,
//! so the output does not depend on how many threads ran the chunks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Backend, ContinuousLaw, StepDistribution};
use crate::error::{invalid, Result};
use crate::MAX_DIM;

pub(crate) const CHUNK: usize = 4096;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Chunks handed to the thread pool at a time; results inside a batch are
/// merged in chunk order before the next batch starts.
const BATCH: usize = 32;

/// Runs `work(rng, len)` on consecutive chunks of `total` samples and folds
/// the per-chunk results with `merge` in chunk order.
pub(crate) fn fold_chunks<T, W, M>(seed: u64, total: usize, init: T, work: W, merge: M) -> T
where
    T: Send,
    W: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let chunks = total.div_ceil(CHUNK);
    let mut acc = init;
    let mut start = 0;
    while start < chunks {
        let end = (start + BATCH).min(chunks);
        let parts: Vec<T> = (start..end)
            .into_par_iter()
            .map(|c| {
                let len = CHUNK.min(total - c * CHUNK);
                let mut rng = stream_rng(seed, c as u64);
                work(&mut rng, len)
            })
            .collect();
        acc = parts.into_iter().fold(acc, &merge);
        start = end;
    }
    acc
}

/// Draws single steps, or exact Gaussian increments of several steps.
pub(crate) struct StepSampler<'a> {
    dist: &'a StepDistribution,
    cumulative: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl<'a> StepSampler<'a> {
    pub fn new(dist: &'a StepDistribution) -> Self {
        let (cumulative, points) = match dist.backend() {
            Backend::Lattice(pmf) => {
                let mut acc = 0.0;
                let cumulative = pmf
                    .masses()
                    .iter()
                    .map(|m| {
                        acc += m;
                        acc
                    })
                    .collect();
                (cumulative, pmf.support())
            }
            Backend::Continuous(_) => (Vec::new(), Vec::new()),
        };
        Self {
            dist,
            cumulative,
            points,
        }
    }

    /// Adds `S_{start+steps} - S_start` to `pos`.
    pub fn advance<R: Rng>(&self, rng: &mut R, steps: usize, pos: &mut [f64]) {
        if steps == 0 {
            return;
        }
        match self.dist.backend() {
            Backend::Continuous(ContinuousLaw::Gaussian) => {
                // the sum of `steps` iid N(0, Σ) draws is exactly N(0, steps Σ)
                let d = self.dist.dim();
                let mut z = [0.0; MAX_DIM];
                let mut y = [0.0; MAX_DIM];
                for v in z.iter_mut().take(d) {
                    *v = rng.sample(StandardNormal);
                }
                self.dist.covariance().transform(&z[..d], &mut y[..d]);
                let s = (steps as f64).sqrt();
                for a in 0..d {
                    pos[a] += s * y[a];
                }
            }
            _ => {
                for _ in 0..steps {
                    self.step(rng, pos);
                }
            }
        }
    }

    fn step<R: Rng>(&self, rng: &mut R, pos: &mut [f64]) {
        match self.dist.backend() {
            Backend::Lattice(_) => {
                let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
                let i = self
                    .cumulative
                    .partition_point(|&c| c <= u)
                    .min(self.points.len() - 1);
                for (p, v) in pos.iter_mut().zip(&self.points[i]) {
                    *p += v;
                }
            }
            Backend::Continuous(law) => {
                pos[0] += match *law {
                    ContinuousLaw::Uniform { half_width } => {
                        half_width * (2.0 * rng.random::<f64>() - 1.0)
                    }
                    ContinuousLaw::Laplace { scale } => {
                        let u: f64 = rng.random::<f64>() - 0.5;
                        -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
                    }
                    ContinuousLaw::ParetoSym { alpha, x0 } => {
                        // 1 - U lies in (0, 1], so the power stays finite
                        let u = 1.0 - rng.random::<f64>();
                        let r = x0 * (-u.ln() / alpha).exp();
                        if rng.random::<bool>() {
                            r
                        } else {
                            -r
                        }
                    }
                    ContinuousLaw::Gaussian => unreachable!("Gaussian steps are drawn in blocks"),
                }
            }
        }
    }
}

/// Visits, for each of `total` independent walks, the positions `S_k` at the
/// sorted `checkpoints`; per-chunk accumulators are merged in chunk order.
pub(crate) fn fold_walks<A, I, V, M>(
    dist: &StepDistribution,
    checkpoints: &[usize],
    total: usize,
    seed: u64,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, usize, &[f64]) + Sync,
    M: Fn(A, A) -> A,
{
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("walk checkpoints must be sorted"));
    }
    let sampler = StepSampler::new(dist);
    let d = dist.dim();
    let out = fold_chunks(
        seed,
        total,
        init(),
        |rng, len| {
            let mut acc = init();
            let mut pos = [0.0; MAX_DIM];
            for _ in 0..len {
                pos[..d].iter_mut().for_each(|p| *p = 0.0);
                let mut at = 0usize;
                for (c, &k) in checkpoints.iter().enumerate() {
                    sampler.advance(rng, k - at, &mut pos[..d]);
                    at = k;
                    visit(&mut acc, c, &pos[..d]);
                }
            }
            acc
        },
        merge,
    );
    Ok(out)
}

/// `samples` independent realisations of `S_k`, reproducible from `seed`.
pub fn sample_walk(
    dist: &StepDistribution,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if samples == 0 {
        return Err(invalid("sample_walk needs at least one sample"));
    }
    fold_walks(
        dist,
        &[k],
        samples,
        seed,
        Vec::new,
        |acc: &mut Vec<Vec<f64>>, _, pos| acc.push(pos.to_vec()),
        |mut a, mut b| {
            a.append(&mut b);
            a
        },
    )
}
