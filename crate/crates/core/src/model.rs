use crate::error::{check_len, Result};
use crate::roll::PitchBand;
use crate::vae::{LatentCode, ModelDims, ModelParameters};
use crate::window::WindowSpec;

/// Trained parameters together with the window geometry they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicModel {
    pub params: ModelParameters,
    pub window: WindowSpec,
    pub band: PitchBand,
}

impl MusicModel {
    pub fn new(params: ModelParameters, window: WindowSpec, band: PitchBand) -> Result<Self> {
        window.validate()?;
        check_len(
            "model input (pitches x window columns)",
            window.input_dim(band.n_pitches()),
            params.dims().input_dim,
        )?;
        Ok(Self {
            params,
            window,
            band,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.params.dims()
    }

    pub fn n_pitches(&self) -> usize {
        self.band.n_pitches()
    }

    pub fn width(&self) -> usize {
        self.window.width()
    }

    pub fn stride(&self) -> usize {
        self.window.stride()
    }

    pub fn encode<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<LatentCode> {
        self.params.encode(x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.params.decode(z)
    }

    /// Output probabilities for a window, decoding the posterior mean.
    pub fn predict<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<Vec<f64>> {
        let code = self.encode(x)?;
        self.decode(&code.mu)
    }
}
