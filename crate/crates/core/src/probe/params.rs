use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed::derived_rng;

/// Counts events that the similarity function resolves by convention rather
/// than arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Pairs where a projected vector had zero norm; their similarity is 0.
    pub zero_norm: u64,
}

/// The pair of projections into the shared space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// `d × d1`, applied to text vectors.
    pub w_text: DMatrix<f64>,
    /// `d × d2`, applied to audio vectors.
    pub w_audio: DMatrix<f64>,
    /// Apply `max(0, ·)` after projecting.
    pub nonlinear: bool,
    pub tau: f64,
}

impl ProbeParams {
    pub fn new(
        w_text: DMatrix<f64>,
        w_audio: DMatrix<f64>,
        nonlinear: bool,
        tau: f64,
    ) -> Result<Self> {
        if w_text.nrows() == 0 || w_text.nrows() != w_audio.nrows() {
            return Err(Error::invalid(format!(
                "projection dims must agree and be >= 1 (got {} and {})",
                w_text.nrows(),
                w_audio.nrows()
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        if w_text.iter().chain(w_audio.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("projection has non-finite entries"));
        }
        Ok(Self {
            w_text,
            w_audio,
            nonlinear,
            tau,
        })
    }

    pub fn proj_dim(&self) -> usize {
        self.w_text.nrows()
    }

    pub fn text_dim(&self) -> usize {
        self.w_text.ncols()
    }

    pub fn audio_dim(&self) -> usize {
        self.w_audio.ncols()
    }

    fn project(&self, w: &DMatrix<f64>, x: &[f64], context: &'static str) -> Result<Vec<f64>> {
        if x.len() != w.ncols() {
            return Err(Error::DimensionMismatch {
                context,
                expected: w.ncols(),
                actual: x.len(),
            });
        }
        let mut z = w * DVector::from_column_slice(x);
        if self.nonlinear {
            z.apply(|v| *v = v.max(0.0));
        }
        Ok(z.as_slice().to_vec())
    }

    /// `φ(W1 t)`.
    pub fn project_text(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_text, t, "text projection")
    }

    /// `φ(W2 u)`.
    pub fn project_audio(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_audio, u, "audio projection")
    }

    /// Cosine similarity in the shared space. A zero-norm projection yields 0
    /// and bumps `diag.zero_norm`.
    pub fn sim(&self, t: &[f64], u: &[f64], diag: &mut Diagnostics) -> Result<f64> {
        let zt = self.project_text(t)?;
        let zu = self.project_audio(u)?;
        match linalg::cosine(&zt, &zu) {
            Ok(s) => Ok(s),
            Err(Error::ZeroNorm(_)) => {
                diag.zero_norm += 1;
                Ok(0.0)
            }
            Err(e) => Err(e),
        }
    }
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialisation from the config seed.
pub fn init_params(cfg: &TrainConfig, d1: usize, d2: usize) -> Result<ProbeParams> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("input dims must be >= 1"));
    }
    cfg.validate()?;
    let mut rng = derived_rng(cfg.seed, "init");
    let mut fill = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        // Column-major fill order keeps the stream layout fixed.
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
    };
    let w_text = fill(cfg.proj_dim, d1);
    let w_audio = fill(cfg.proj_dim, d2);
    ProbeParams::new(w_text, w_audio, cfg.nonlinear, cfg.tau)
}
