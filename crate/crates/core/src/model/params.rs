use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::Architecture;
use crate::error::{Error, Result};

/// Weight and bias of one named layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// All trainable tensors, in the layer order of [`Architecture::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    layers: Vec<LayerParams<T>>,
}

impl<T: Float> ModelParameters<T> {
    pub fn from_layers(layers: Vec<LayerParams<T>>) -> Self {
        Self { layers }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::filled(arch, T::zero())
    }

    pub fn filled(arch: &Architecture, value: T) -> Self {
        let layers = arch
            .layers()
            .map(|spec| {
                let weight_shape = spec.weight_shape();
                LayerParams {
                    name: spec.name.clone(),
                    weight: vec![value; weight_shape.iter().product()],
                    weight_shape,
                    bias: vec![value; spec.bias_len()],
                }
            })
            .collect();
        Self { layers }
    }

    /// He-style uniform initialization: weights in `+-sqrt(6 / fan_in)`,
    /// biases zero. Deterministic in `seed`.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for (spec, layer) in arch.layers().zip(&mut params.layers) {
            let bound = Float::sqrt(6.0 / spec.fan_in() as f64);
            for w in &mut layer.weight {
                *w = T::from(rng.gen_range(-bound..bound)).unwrap();
            }
        }
        params
    }

    /// Random weights and biases in `[-scale, scale)`; test fixtures.
    pub fn random(arch: &Architecture, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for layer in &mut params.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = T::from(rng.gen_range(-scale..scale)).unwrap();
            }
        }
        params
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Every tensor as a flat slice: weight then bias per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(<[T]>::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().for_each(|t| t.iter_mut().for_each(|v| *v = T::zero()));
        out
    }

    /// `self += alpha * other`; shapes must already agree.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        for (dst, src) in self.tensors_mut().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.tensors_mut().for_each(|t| t.iter_mut().for_each(|v| *v = *v * alpha));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Float>(&self) -> ModelParameters<U> {
        ModelParameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    weight_shape: l.weight_shape.clone(),
                    weight: l.weight.iter().map(|&v| U::from(v).unwrap()).collect(),
                    bias: l.bias.iter().map(|&v| U::from(v).unwrap()).collect(),
                })
                .collect(),
        }
    }

    /// Checks names, shapes and payload lengths against the architecture.
    pub fn audit(&self, arch: &Architecture) -> Result<()> {
        let expected: Vec<_> = arch.layers().collect();
        if expected.len() != self.layers.len() {
            return Err(Error::ShapeAudit(format!(
                "architecture has {} layers, parameters have {}",
                expected.len(),
                self.layers.len()
            )));
        }
        for (spec, layer) in expected.into_iter().zip(&self.layers) {
            let shape = spec.weight_shape();
            if spec.name != layer.name {
                return Err(Error::ShapeAudit(format!("expected layer {}, found {}", spec.name, layer.name)));
            }
            if shape != layer.weight_shape || layer.weight.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeAudit(format!(
                    "{}: expected weight shape {:?}, found {:?} with {} values",
                    spec.name,
                    shape,
                    layer.weight_shape,
                    layer.weight.len()
                )));
            }
            if layer.bias.len() != spec.bias_len() {
                return Err(Error::ShapeAudit(format!(
                    "{}: expected {} biases, found {}",
                    spec.name,
                    spec.bias_len(),
                    layer.bias.len()
                )));
            }
        }
        Ok(())
    }
}
