//! Seeded Gaussian perturbations for the two noise scenarios: pixel noise on
//! normalized images and angle noise on resolved rotation gates. Both draw
//! from keyed ChaCha streams so runs reproduce regardless of scheduling.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::preprocess::{minmax_normalize, Image};
use crate::rng;

fn check_sigma(sigma: f64, what: &str) -> Result<()> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::config(format!(
            "{what} must be a finite non-negative number, got {sigma}"
        )));
    }
    Ok(())
}

/// The noise configuration of a run. Zero sigmas mean the clean pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub image_sigma: f64,
    pub gate_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(image_sigma: f64, gate_sigma: f64, seed: u64) -> Result<Self> {
        check_sigma(image_sigma, "image noise sigma")?;
        check_sigma(gate_sigma, "gate noise sigma")?;
        Ok(Self { image_sigma, gate_sigma, seed })
    }

    pub fn clean(seed: u64) -> Self {
        Self { image_sigma: 0.0, gate_sigma: 0.0, seed }
    }

    /// Stream for pixel noise; callers key the path with `rng::tag` plus
    /// per-slice coordinates so draw order is independent of iteration order.
    pub fn image_rng(&self, path: &[u64]) -> ChaCha12Rng {
        rng::stream(self.seed, path)
    }

    /// Angle perturber on a keyed stream; `None` when gate noise is off, so
    /// the clean path is bit-identical to never constructing one.
    pub fn angle_noise(&self, path: &[u64]) -> Result<Option<AngleNoise>> {
        AngleNoise::new(self.gate_sigma, rng::stream(self.seed, path))
    }
}

/// Adds an independent Gaussian(0, sigma) to each angle it is handed, in
/// call order.
#[derive(Clone, Debug)]
pub struct AngleNoise {
    dist: Normal<f64>,
    rng: ChaCha12Rng,
}

impl AngleNoise {
    /// Zero sigma normalizes to `None`: no draws, bit-identical clean path.
    pub fn new(sigma: f64, rng: ChaCha12Rng) -> Result<Option<Self>> {
        check_sigma(sigma, "gate noise sigma")?;
        if sigma == 0.0 {
            return Ok(None);
        }
        Ok(Some(Self {
            dist: Normal::new(0.0, sigma).expect("sigma validated"),
            rng,
        }))
    }

    pub fn perturb(&mut self, angle: f64) -> f64 {
        angle + self.dist.sample(&mut self.rng)
    }
}

/// Add Gaussian(0, sigma) to every pixel in place, no rescale. Extracted
/// from `add_image_noise` so the perturbation statistics are testable before
/// renormalization hides them.
pub fn perturb_pixels<R: Rng>(pixels: &mut [f64], sigma: f64, rng: &mut R) -> Result<()> {
    check_sigma(sigma, "image noise sigma")?;
    if sigma == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, sigma).expect("sigma validated");
    for p in pixels.iter_mut() {
        *p += dist.sample(rng);
    }
    Ok(())
}

/// Pixel-wise Gaussian perturbation followed by min-max rescale back to
/// [0, 1]. The pipeline calls this only when sigma > 0; at sigma = 0 the
/// rescale alone would still change images that do not span [0, 1].
pub fn add_image_noise<R: Rng>(image: &Image, sigma: f64, rng: &mut R) -> Result<Image> {
    let mut noisy = image.clone();
    perturb_pixels(noisy.pixels_mut(), sigma, rng)?;
    minmax_normalize(&noisy)
}
