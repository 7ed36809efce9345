//! Ground-truth generative model for the synthetic morphometry benchmark:
//! a shifted-gamma thickness root, an intensity node with a saturating
//! response to thickness, and a small image surrogate driven by both.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::mechanisms::{logit, AffineFlow, Conditioner, Mechanism, LN_2PI};

pub const MORPHO_GAMMA_SHAPE: f64 = 10.0;
pub const MORPHO_GAMMA_RATE: f64 = 5.0;
pub const MORPHO_THICKNESS_OFFSET: f64 = 0.5;
pub const MORPHO_INTENSITY_A: f64 = 191.0;
pub const MORPHO_INTENSITY_B: f64 = 0.5;
pub const MORPHO_INTENSITY_C: f64 = 2.0;
pub const MORPHO_INTENSITY_D: f64 = -5.0;
pub const MORPHO_INTENSITY_E: f64 = 64.0;
pub const MORPHO_IMAGE_DIM: usize = 4;

pub const THICKNESS: &str = "thickness";
pub const INTENSITY: &str = "intensity";
pub const IMAGE: &str = "image";

/// Population anchors used to feed normalized (thickness, intensity) values
/// into the image conditioner so its seeded weights act on O(1) inputs.
const THICKNESS_CENTER: f64 = 2.5;
const THICKNESS_SPREAD: f64 = 0.65;
const INTENSITY_CENTER: f64 = 159.5;
const INTENSITY_SPREAD: f64 = 40.0;

/// ln Γ(x) for x ≥ 1: exact factorial sum at integer arguments; otherwise the
/// recurrence shifts the argument above 12 where a short Stirling series is
/// accurate to ~1e-11.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    if x >= 1.0 && x.fract() == 0.0 && x <= 24.0 {
        let mut acc = 0.0;
        let mut k = 2.0;
        while k < x {
            acc += k.ln();
            k += 1.0;
        }
        return acc;
    }
    let mut shift = 0.0;
    let mut y = x;
    while y < 12.0 {
        shift += y.ln();
        y += 1.0;
    }
    (y - 0.5) * y.ln() - y + 0.5 * LN_2PI + 1.0 / (12.0 * y) - 1.0 / (360.0 * y.powi(3))
        + 1.0 / (1260.0 * y.powi(5))
        - shift
}

#[derive(Debug, Clone)]
pub struct GroundTruthMorpho {
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub thickness_offset: f64,
    pub intensity_a: f64,
    pub intensity_b: f64,
    pub intensity_c: f64,
    pub intensity_d: f64,
    pub intensity_e: f64,
    pub image_dim: usize,
    pub seed: u64,
    image: Mechanism,
}

impl GroundTruthMorpho {
    pub fn new(seed: u64) -> Self {
        Self::with_image_dim(MORPHO_IMAGE_DIM, seed)
    }

    pub fn with_image_dim(image_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        };
        let mut w_loc = vec![vec![0.0; 2]; image_dim];
        let mut b_loc = vec![0.0; image_dim];
        let mut w_scale = vec![vec![0.0; 2]; image_dim];
        let mut b_scale = vec![0.0; image_dim];
        for row in w_loc.iter_mut() {
            row[0] = draw(1.0);
            row[1] = draw(1.0);
        }
        for b in b_loc.iter_mut() {
            *b = draw(0.5);
        }
        for row in w_scale.iter_mut() {
            row[0] = draw(0.2);
            row[1] = draw(0.2);
        }
        for b in b_scale.iter_mut() {
            *b = draw(0.2);
        }
        // The conditioner sees raw (t, i); fold the normalization
        // (t - tc)/ts, (i - ic)/is into the linear weights.
        let fold = |w: &mut Vec<Vec<f64>>, b: &mut Vec<f64>| {
            for (row, bias) in w.iter_mut().zip(b.iter_mut()) {
                *bias -= row[0] * THICKNESS_CENTER / THICKNESS_SPREAD
                    + row[1] * INTENSITY_CENTER / INTENSITY_SPREAD;
                row[0] /= THICKNESS_SPREAD;
                row[1] /= INTENSITY_SPREAD;
            }
        };
        fold(&mut w_loc, &mut b_loc);
        fold(&mut w_scale, &mut b_scale);
        let image = Mechanism::Affine(AffineFlow {
            loc: Conditioner::Linear { weight: w_loc, bias: b_loc },
            log_scale: Conditioner::Linear { weight: w_scale, bias: b_scale },
        });
        Self {
            gamma_shape: MORPHO_GAMMA_SHAPE,
            gamma_rate: MORPHO_GAMMA_RATE,
            thickness_offset: MORPHO_THICKNESS_OFFSET,
            intensity_a: MORPHO_INTENSITY_A,
            intensity_b: MORPHO_INTENSITY_B,
            intensity_c: MORPHO_INTENSITY_C,
            intensity_d: MORPHO_INTENSITY_D,
            intensity_e: MORPHO_INTENSITY_E,
            image_dim,
            seed,
            image,
        }
    }

    pub fn image_mechanism(&self) -> &Mechanism {
        &self.image
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec![format!("{THICKNESS}[0]"), format!("{INTENSITY}[0]")];
        for k in 0..self.image_dim {
            cols.push(format!("{IMAGE}[{k}]"));
        }
        cols
    }

    pub fn intensity_from(&self, t: f64, u: f64) -> f64 {
        let z = self.intensity_b * u + self.intensity_c * t + self.intensity_d;
        self.intensity_a * crate::mechanisms::sigmoid(z) + self.intensity_e
    }

    /// One row `[t, i, image...]`, consuming a fixed number of draws so row
    /// streams stay aligned.
    pub fn sample_row(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let gamma = Gamma::new(self.gamma_shape, 1.0 / self.gamma_rate)
            .map_err(|e| Error::NumericalFailure(format!("gamma parameters: {e}")))?;
        let t = self.thickness_offset + gamma.sample(rng);
        let u_i: f64 = StandardNormal.sample(rng);
        let i = self.intensity_from(t, u_i);
        let u_img: Vec<f64> = (0..self.image_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let img = self.image.forward(&[t, i], &u_img)?;
        let mut row = Vec::with_capacity(2 + self.image_dim);
        row.push(t);
        row.push(i);
        row.extend(img);
        Ok(row)
    }

    pub fn sample_rows(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_row(&mut rng)).collect()
    }

    /// Negative log density of the thickness marginal at `t`, in nats.
    pub fn thickness_nll(&self, t: f64) -> f64 {
        let g = t - self.thickness_offset;
        if g <= 0.0 {
            return f64::INFINITY;
        }
        -self.gamma_shape * self.gamma_rate.ln() + ln_gamma(self.gamma_shape)
            - (self.gamma_shape - 1.0) * g.ln()
            + self.gamma_rate * g
    }

    /// Negative log density of intensity given thickness, in nats.
    pub fn intensity_nll(&self, t: f64, i: f64) -> f64 {
        let y = (i - self.intensity_e) / self.intensity_a;
        if !(y > 0.0 && y < 1.0) {
            return f64::INFINITY;
        }
        let z = logit(y);
        let u = (z - self.intensity_c * t - self.intensity_d) / self.intensity_b;
        0.5 * u * u
            + 0.5 * LN_2PI
            + (self.intensity_a * self.intensity_b * y * (1.0 - y)).ln()
    }

    pub fn image_nll(&self, t: f64, i: f64, img: &[f64]) -> Result<f64> {
        self.image.nll(&[t, i], img)
    }

    /// Per-node NLL `[thickness, intensity, image]` of one dataset row.
    pub fn row_nll(&self, row: &[f64]) -> Result<[f64; 3]> {
        if row.len() != 2 + self.image_dim {
            return Err(Error::DimensionMismatch {
                context: "ground-truth row".to_string(),
                expected: 2 + self.image_dim,
                actual: row.len(),
            });
        }
        Ok([
            self.thickness_nll(row[0]),
            self.intensity_nll(row[0], row[1]),
            self.image_nll(row[0], row[1], &row[2..])?,
        ])
    }
}
