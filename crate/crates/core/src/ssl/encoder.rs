//! Multilayer perceptron encoder with a final L2 normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SslError;
use crate::imaging::Image;
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            channels: 3,
            hidden: vec![64],
            embed_dim: 128,
            activation: Activation::Tanh,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        if self.width == 0 || self.height == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(SslError::Config(format!(
                "input dims {}x{}x{} invalid",
                self.width, self.height, self.channels
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(SslError::Config(
                "need at least one hidden layer, all widths positive".into(),
            ));
        }
        if self.embed_dim < 2 {
            return Err(SslError::Config(format!(
                "embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// `(fan_in, fan_out)` of every linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim();
        for &h in self.hidden.iter().chain(std::iter::once(&self.embed_dim)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn layout(&self) -> ParamLayout {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            entries.push(ParamEntry {
                name: format!("layer{l}.weight"),
                rows: fan_in,
                cols: fan_out,
                offset,
            });
            offset += fan_in * fan_out;
            entries.push(ParamEntry {
                name: format!("layer{l}.bias"),
                rows: 1,
                cols: fan_out,
                offset,
            });
            offset += fan_out;
        }
        ParamLayout {
            entries,
            len: offset,
        }
    }

    /// Uniform in `±1/√fan_in` per layer, weights and biases alike.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.len);
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            // weight then bias, matching the layout order
            values.extend((0..(fan_in + 1) * fan_out).map(|_| rng.random_range(-bound..=bound)));
        }
        ParamVector { values, layout }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Ordered manifest of the tensors packed into a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub len: usize,
}

/// Flat vector of all encoder parameters; the unit exchanged between
/// vehicles and the roadside unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self, SslError> {
        if values.len() != layout.len {
            return Err(SslError::ParamLength {
                expected: layout.len,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SslError::NonFinite("parameters"));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, SslError> {
        Self::new(values, self.layout.clone())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn entry(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.offset..e.offset + e.rows * e.cols])
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout.entries.iter().find(|e| e.name == name)?;
        Some(&mut self.values[e.offset..e.offset + e.rows * e.cols])
    }
}

/// Registers every parameter tensor on `g`, as trainable leaves or as
/// constants.
pub fn bind_params(
    g: &mut Graph,
    params: &ParamVector,
    trainable: bool,
) -> Result<Vec<Var>, SslError> {
    params
        .layout
        .entries
        .iter()
        .map(|e| {
            let t = Tensor::matrix(
                e.rows,
                e.cols,
                params.values[e.offset..e.offset + e.rows * e.cols].to_vec(),
            )?;
            Ok(if trainable {
                g.param(t)?
            } else {
                g.constant(t)?
            })
        })
        .collect()
}

/// Flattens images into a `batch × input_dim` matrix, centered at 0.
pub fn image_batch(cfg: &EncoderConfig, images: &[&Image]) -> Result<Tensor, SslError> {
    let want = (cfg.width, cfg.height, cfg.channels);
    let mut data = Vec::with_capacity(images.len() * cfg.input_dim());
    for (i, img) in images.iter().enumerate() {
        if img.dims() != want {
            return Err(SslError::InputShape {
                index: i,
                expected: want,
                got: img.dims(),
            });
        }
        data.extend(img.pixels().iter().map(|p| p - 0.5));
    }
    if images.is_empty() {
        return Err(SslError::EmptyBatch);
    }
    Ok(Tensor::matrix(images.len(), cfg.input_dim(), data)?)
}

/// Encoder forward pass on `g`, returning the `batch × embed_dim` matrix of
/// unit-norm embeddings.
pub fn forward(
    g: &mut Graph,
    cfg: &EncoderConfig,
    params: &[Var],
    input: Var,
) -> Result<Var, SslError> {
    let layers = cfg.layer_dims().len();
    debug_assert_eq!(params.len(), 2 * layers);
    let mut h = input;
    for l in 0..layers {
        h = g.matmul(h, params[2 * l])?;
        h = g.add_row(h, params[2 * l + 1])?;
        if l + 1 < layers {
            h = match cfg.activation {
                Activation::Tanh => g.tanh(h)?,
                Activation::Relu => g.relu(h)?,
            };
        }
    }
    Ok(g.l2_normalize_rows(h)?)
}

/// Unit-norm embeddings of `images`, one row per image.
pub fn encode(
    params: &ParamVector,
    cfg: &EncoderConfig,
    images: &[&Image],
) -> Result<Vec<Vec<f64>>, SslError> {
    if params.layout != cfg.layout() {
        return Err(SslError::Config(
            "parameter layout does not match encoder config".into(),
        ));
    }
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, false)?;
    let x = g.constant(image_batch(cfg, images)?)?;
    let out = forward(&mut g, cfg, &vars, x)?;
    let t = g.value(out);
    Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            width: 4,
            height: 4,
            channels: 3,
            hidden: vec![16, 12],
            embed_dim: 8,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn layout_matches_config() {
        let cfg = small_cfg();
        let p = cfg.init_params(1);
        let expected = 48 * 16 + 16 + 16 * 12 + 12 + 12 * 8 + 8;
        assert_eq!(p.len(), expected);
        assert_eq!(p.layout().entries.len(), 6);
        assert_eq!(p.entry("layer2.bias").unwrap().len(), 8);
        for (name, fan_in) in [("layer0", 48.0), ("layer1", 16.0), ("layer2", 12.0)] {
            let bound = 1.0 / f64::sqrt(fan_in);
            for part in ["weight", "bias"] {
                let vals = p.entry(&format!("{name}.{part}")).unwrap();
                assert!(vals.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small_cfg();
        assert_eq!(cfg.init_params(4), cfg.init_params(4));
        assert_ne!(cfg.init_params(4), cfg.init_params(5));
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = small_cfg();
        let p = cfg.init_params(2);
        let d = gen_synthetic(3, 4, 4, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let e = encode(&p, &cfg, &imgs).unwrap();
        assert_eq!(e.len(), 12);
        for v in &e {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let twice = encode(&p, &cfg, &[imgs[0], imgs[0]]).unwrap();
        assert_eq!(twice[0], twice[1]);
        assert_eq!(twice[0], e[0]);
    }

    #[test]
    fn zero_final_layer_cannot_normalize() {
        let cfg = small_cfg();
        let mut p = cfg.init_params(2);
        p.entry_mut("layer2.weight").unwrap().fill(0.0);
        p.entry_mut("layer2.bias").unwrap().fill(0.0);
        let d = gen_synthetic(2, 1, 4, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let err = encode(&p, &cfg, &imgs).unwrap_err();
        assert!(matches!(
            err,
            SslError::Numerics(crate::numerics::NumericsError::ZeroNorm { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = small_cfg();
        let p = cfg.init_params(2);
        let d = gen_synthetic(2, 1, 5, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        assert!(matches!(
            encode(&p, &cfg, &imgs).unwrap_err(),
            SslError::InputShape { index: 0, .. }
        ));
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg().validate().is_ok());
        let mut c = small_cfg();
        c.hidden.clear();
        assert!(c.validate().is_err());
        let mut c = small_cfg();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
    }
}
