//! Seeded, counter-based point sampling and the optional worker pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metric::MetricDefinition;

/// Draws sample `index` uniformly from the box `bounds`. The stream is keyed
/// by `(seed, index)`, so the result does not depend on evaluation order.
pub fn sample_point(bounds: &[(f64, f64)], seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    bounds
        .iter()
        .map(|&(lo, hi)| {
            // Stay a hair inside open intervals.
            let u: f64 = rng.gen_range(0.0..1.0);
            let w = hi - lo;
            lo + w * (0.001 + 0.998 * u)
        })
        .collect()
}

/// Seeded sampler over the domain hints of a metric (`(-1, 1)` where no hint
/// is declared).
#[derive(Debug, Clone)]
pub struct Sampler {
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Sampler {
    pub fn for_metric(def: &MetricDefinition, seed: u64) -> Self {
        Sampler {
            bounds: def.sampling_box(),
            seed,
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        sample_point(&self.bounds, self.seed, index as u64)
    }

    /// Shrinks every interval by `margin` on both sides so finite-difference
    /// stencils stay inside the domain.
    pub fn with_margin(mut self, margin: f64) -> Self {
        for b in &mut self.bounds {
            let m = margin.min(0.25 * (b.1 - b.0));
            b.0 += m;
            b.1 -= m;
        }
        self
    }
}

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is on.
/// Results keep index order. `WEYLSCOPE_THREADS` caps the worker count.
pub fn map_indices<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let threads = std::env::var("WEYLSCOPE_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&t| t > 0);
        let run = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
        match threads.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
