//! Seeded synthetic datasets (example-major: columns are examples).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::SparseColumnMatrix;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub examples: usize,
    pub features: usize,
    /// Probability that an entry is nonzero.
    pub density: f64,
    /// Standard deviation of the noise added before thresholding or as
    /// regression noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(examples: usize, features: usize, density: f64, seed: u64) -> Self {
        Self { examples, features, density, noise: 0.1, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.examples == 0 || self.features == 0 {
            return Err(Error::invalid("synthetic data needs at least one example and one feature"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid("density must lie in (0, 1]"));
        }
        Ok(())
    }
}

struct Draw {
    x: SparseColumnMatrix<f64>,
    scores: Vec<f64>,
    rng: ChaCha8Rng,
}

fn draw(spec: &SynthSpec) -> Result<Draw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth: Vec<f64> = (0..spec.features).map(|_| rng.sample(StandardNormal)).collect();
    let scale = 1.0 / (spec.density * spec.features as f64).sqrt();
    let mut columns = Vec::with_capacity(spec.examples);
    let mut scores = Vec::with_capacity(spec.examples);
    for _ in 0..spec.examples {
        let mut col = Vec::new();
        for f in 0..spec.features {
            if spec.density >= 1.0 || rng.random_bool(spec.density) {
                let v: f64 = rng.sample(StandardNormal);
                col.push((f as u32, v * scale));
            }
        }
        if col.is_empty() {
            let f = rng.random_range(0..spec.features);
            col.push((f as u32, scale));
        }
        scores.push(col.iter().map(|&(f, v)| truth[f as usize] * v).sum());
        columns.push(col);
    }
    let x = SparseColumnMatrix::from_columns(spec.features, columns)?;
    Ok(Draw { x, scores, rng })
}

/// Binary classification data with ±1 labels from a noisy linear model.
pub fn classification(spec: &SynthSpec) -> Result<(SparseColumnMatrix<f64>, Vec<f64>)> {
    let Draw { x, scores, mut rng } = draw(spec)?;
    let labels = scores
        .into_iter()
        .map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            if s + spec.noise * z >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok((x, labels))
}

/// Regression targets `wᵀx + noise`.
pub fn regression(spec: &SynthSpec) -> Result<(SparseColumnMatrix<f64>, Vec<f64>)> {
    let Draw { x, scores, mut rng } = draw(spec)?;
    let targets = scores
        .into_iter()
        .map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            s + spec.noise * z
        })
        .collect();
    Ok((x, targets))
}
