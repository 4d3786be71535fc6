//! Deterministic chunked Monte Carlo driver.
//!
//! Samples are split into fixed-size chunks. Chunk `i` draws from the ChaCha8
//! stream `i` of the generator seeded by the master seed, so every chunk is
//! reproducible on its own. Chunk statistics are merged in chunk order, which
//! makes the result independent of how many workers ran the chunks.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK: u64 = 1 << 14;

/// Fraction of the total above which a single sample flags an estimate.
pub const HEAVY_TAIL_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n: u64,
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_size: u64,
}

fn default_chunk() -> u64 {
    DEFAULT_CHUNK
}

impl McConfig {
    pub fn new(n: u64, seed: u64) -> Self {
        McConfig { n, seed, chunk_size: DEFAULT_CHUNK }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        McConfig { seed, ..self }
    }

    pub fn with_n(self, n: u64) -> Self {
        McConfig { n, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("Monte Carlo needs at least two samples"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk size must be positive"));
        }
        Ok(())
    }

    pub fn chunking(&self) -> Chunking {
        Chunking { chunk_size: self.chunk_size, chunks: self.n.div_ceil(self.chunk_size) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunking {
    pub chunk_size: u64,
    pub chunks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub chunking: Chunking,
    /// samples whose contribution was NaN or infinite
    pub nonfinite: u64,
    /// samples discarded by the estimator (contributing zero)
    pub rejected: u64,
    /// largest single |contribution| over |sum of contributions|
    pub max_share: f64,
    pub unstable: bool,
}

impl McEstimate {
    /// |value - target| <= k * stderr.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    pub fn is_trustworthy(&self) -> bool {
        self.nonfinite == 0 && !self.unstable
    }
}

/// Per-chunk random source.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Stream { rng }
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * self.uniform())
    }

    pub fn normals(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = self.normal());
    }

    pub fn gamma(&mut self, dist: &Gamma<f64>) -> f64 {
        dist.sample(&mut self.rng)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    n: u64,
    mean: f64,
    m2: f64,
    sum: f64,
    comp: f64,
    max_abs: f64,
    nonfinite: u64,
    rejected: u64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        if !x.is_finite() {
            self.nonfinite += 1;
            return;
        }
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        // Neumaier summation
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.max_abs = self.max_abs.max(x.abs());
    }

    fn merge(&mut self, o: &Acc) {
        if o.n > 0 {
            let n = self.n + o.n;
            let delta = o.mean - self.mean;
            self.mean += delta * o.n as f64 / n as f64;
            self.m2 += o.m2 + delta * delta * (self.n as f64 * o.n as f64) / n as f64;
            self.n = n;
        }
        let t = self.sum + o.sum;
        if self.sum.abs() >= o.sum.abs() {
            self.comp += (self.sum - t) + o.sum;
        } else {
            self.comp += (o.sum - t) + self.sum;
        }
        self.comp += o.comp;
        self.sum = t;
        self.max_abs = self.max_abs.max(o.max_abs);
        self.nonfinite += o.nonfinite;
        self.rejected += o.rejected;
    }

    fn finish(&self, cfg: &McConfig) -> McEstimate {
        let n = self.n.max(1) as f64;
        let total = self.sum + self.comp;
        let value = total / n;
        let var = if self.n > 1 { self.m2 / (n - 1.0) } else { 0.0 };
        let max_share = if total != 0.0 {
            self.max_abs / total.abs()
        } else if self.max_abs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        McEstimate {
            value,
            stderr: (var / n).sqrt(),
            n: self.n,
            seed: cfg.seed,
            chunking: cfg.chunking(),
            nonfinite: self.nonfinite,
            rejected: self.rejected,
            max_share,
            unstable: self.nonfinite > 0 || max_share > HEAVY_TAIL_FRACTION,
        }
    }
}

/// Runs `sample` once per draw and estimates the mean of each output slot.
///
/// `sample` fills the output slots and returns false when the draw is
/// rejected, in which case every slot contributes zero.
pub fn run<S, I, F>(cfg: &McConfig, outputs: usize, init: I, sample: F) -> Result<Vec<McEstimate>>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut Stream, &mut [f64]) -> bool + Sync,
{
    cfg.validate()?;
    let chunking = cfg.chunking();
    let chunks: Vec<Vec<Acc>> = (0..chunking.chunks)
        .into_par_iter()
        .map(|c| {
            let mut state = init();
            let mut stream = Stream::new(cfg.seed, c);
            let mut accs = vec![Acc::default(); outputs];
            let mut out = vec![0.0; outputs];
            let start = c * cfg.chunk_size;
            let end = (start + cfg.chunk_size).min(cfg.n);
            for _ in start..end {
                let ok = sample(&mut state, &mut stream, &mut out);
                for (a, &v) in accs.iter_mut().zip(&out) {
                    if ok {
                        a.push(v);
                    } else {
                        a.push(0.0);
                        a.rejected += 1;
                    }
                }
            }
            accs
        })
        .collect();
    let mut total = vec![Acc::default(); outputs];
    for chunk in &chunks {
        for (t, a) in total.iter_mut().zip(chunk) {
            t.merge(a);
        }
    }
    Ok(total.iter().map(|a| a.finish(cfg)).collect())
}
