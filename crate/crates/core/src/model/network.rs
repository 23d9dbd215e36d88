use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;
use rand::{Rng, RngCore};

use super::arch::{Activation, Architecture, LayerKind, LayerSpec};
use super::config::ModelConfig;
use super::ops;
use super::params::{LayerParams, ModelParameters};
use crate::error::{Error, Result};
use crate::frame::{Frame, TemporalDisplacement};

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Inference,
    /// Dropout masks are drawn from the given generator.
    Train(&'a mut dyn RngCore),
}

/// Snapshot of how often each part of the network has run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub image_encoder: usize,
    pub time_encoder: usize,
    pub decoder: usize,
}

#[derive(Debug, Default)]
struct PassCounters {
    image_encoder: AtomicUsize,
    time_encoder: AtomicUsize,
    decoder: AtomicUsize,
}

impl PassCounters {
    fn snapshot(&self) -> PassCounts {
        PassCounts {
            image_encoder: self.image_encoder.load(Ordering::Relaxed),
            time_encoder: self.time_encoder.load(Ordering::Relaxed),
            decoder: self.decoder.load(Ordering::Relaxed),
        }
    }
}

fn bump(counter: &AtomicUsize) {
    counter.fetch_add(1, Ordering::Relaxed);
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 converts to any float type")
}

/// Activations recorded for one layer during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    activated: Vec<T>,
    /// Per-unit dropout multipliers (`0` or `1 / keep`).
    mask: Option<Vec<T>>,
    dropped: Option<Vec<T>>,
}

impl<T> LayerTrace<T> {
    fn output(&self) -> &[T] {
        self.dropped.as_deref().unwrap_or(&self.activated)
    }

    fn into_output(self) -> Vec<T> {
        self.dropped.unwrap_or(self.activated)
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    image_input: Vec<T>,
    image: Vec<LayerTrace<T>>,
    time_input: Option<T>,
    time: Vec<LayerTrace<T>>,
    embedding: Vec<T>,
    decoder: Vec<LayerTrace<T>>,
}

impl<T: Float> ForwardTrace<T> {
    /// Network output before conversion to a [`Frame`].
    pub fn output(&self) -> &[T] {
        self.decoder.last().map(LayerTrace::output).unwrap_or(&[])
    }

    pub fn embedding(&self) -> &[T] {
        &self.embedding
    }
}

/// The two-branch encoder and the decoder, with parameters that have passed
/// the shape audit against the configuration.
#[derive(Debug)]
pub struct Network<T> {
    config: ModelConfig,
    arch: Architecture,
    params: ModelParameters<T>,
    counters: PassCounters,
}

impl<T: Float> Clone for Network<T> {
    /// Clones configuration and parameters; pass counters start at zero.
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params: self.params.clone(),
            counters: PassCounters::default(),
        }
    }
}

impl<T: Float> Network<T> {
    pub fn new(config: ModelConfig, params: ModelParameters<T>) -> Result<Self> {
        let arch = Architecture::from_config(&config)?;
        params.audit(&arch)?;
        Ok(Self { config, arch, params, counters: PassCounters::default() })
    }

    /// Fresh network with seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::from_config(&config)?;
        let params = ModelParameters::init(&arch, seed);
        Self::new(config, params)
    }

    /// Sets every output-layer bias to the logit of `mean_intensity`, so an
    /// untrained network predicts the average pixel instead of 0.5. With
    /// sparse foregrounds this keeps the first updates from driving the
    /// decoder into the all-background solution.
    pub fn set_output_prior(&mut self, mean_intensity: f64) -> Result<()> {
        if !(mean_intensity > 0.0 && mean_intensity < 1.0) {
            return Err(Error::Domain(format!("output prior must lie in (0, 1), got {mean_intensity}")));
        }
        let logit: T = T::from(Float::ln(mean_intensity / (1.0 - mean_intensity))).expect("finite logit");
        let last = self.params.layers_mut().last_mut().expect("decoder has layers");
        last.bias.iter_mut().for_each(|b| *b = logit);
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ModelParameters<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParameters<T> {
        self.params
    }

    /// Shapes are fixed by the audit; callers may only change values.
    pub(crate) fn params_mut(&mut self) -> &mut ModelParameters<T> {
        &mut self.params
    }

    pub fn pass_counts(&self) -> PassCounts {
        self.counters.snapshot()
    }

    pub fn has_time_branch(&self) -> bool {
        self.config.has_time_branch()
    }

    fn layer_ranges(&self) -> (core::ops::Range<usize>, core::ops::Range<usize>, core::ops::Range<usize>) {
        let ni = self.arch.image.len();
        let nt = self.arch.time.len();
        let nd = self.arch.decoder.len();
        (0..ni, ni..ni + nt, ni + nt..ni + nt + nd)
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.resolution() != self.config.input_resolution {
            return Err(Error::Config(format!(
                "frame is {}x{} but the model expects {}x{}",
                frame.height(),
                frame.width(),
                self.config.input_resolution.0,
                self.config.input_resolution.1
            )));
        }
        Ok(())
    }

    fn require_time_branch(&self, wanted: bool) -> Result<()> {
        match (self.has_time_branch(), wanted) {
            (true, false) => Err(Error::ModelKind("time-conditioned model used without a displacement".into())),
            (false, true) => Err(Error::ModelKind("baseline model has no time branch".into())),
            _ => Ok(()),
        }
    }

    fn image_trace(&self, frame: &Frame, mode: &mut Mode<'_>) -> Result<(Vec<T>, Vec<LayerTrace<T>>)> {
        self.check_frame(frame)?;
        let input: Vec<T> = frame.pixels().iter().map(|&p| T::from(p).unwrap()).collect();
        let (range, _, _) = self.layer_ranges();
        let traces = self.run_chain(&self.arch.image, &self.params.layers()[range], &input, mode);
        bump(&self.counters.image_encoder);
        Ok((input, traces))
    }

    fn time_trace(&self, dt: TemporalDisplacement) -> Result<(T, Vec<LayerTrace<T>>)> {
        self.require_time_branch(true)?;
        let scaled: T = cast(dt.millis() * self.config.time_input_scale);
        let (_, range, _) = self.layer_ranges();
        let traces = self.run_chain(&self.arch.time, &self.params.layers()[range], &[scaled], &mut Mode::Inference);
        bump(&self.counters.time_encoder);
        Ok((scaled, traces))
    }

    fn decoder_trace(&self, embedding: &[T], mode: &mut Mode<'_>) -> Result<Vec<LayerTrace<T>>> {
        if embedding.len() != self.config.embedding_size() {
            return Err(Error::Shape(format!(
                "decoder expects an embedding of length {}, got {}",
                self.config.embedding_size(),
                embedding.len()
            )));
        }
        let (_, _, range) = self.layer_ranges();
        let traces = self.run_chain(&self.arch.decoder, &self.params.layers()[range], embedding, mode);
        bump(&self.counters.decoder);
        Ok(traces)
    }

    /// Image branch: convolutions, strided-convolution pooling and FC layers.
    /// Dropout on the FC layers is active only in [`Mode::Train`].
    pub fn encode_image(&self, frame: &Frame, mut mode: Mode<'_>) -> Result<Vec<T>> {
        let (_, traces) = self.image_trace(frame, &mut mode)?;
        Ok(traces.into_iter().last().map(LayerTrace::into_output).unwrap_or_default())
    }

    /// Time branch applied to `dt` scaled by `config.time_input_scale`.
    pub fn encode_time(&self, dt: TemporalDisplacement) -> Result<Vec<T>> {
        let (_, traces) = self.time_trace(dt)?;
        Ok(traces.into_iter().last().map(LayerTrace::into_output).unwrap_or_default())
    }

    /// Decoder from an embedding of length `config.embedding_size()`.
    pub fn decode(&self, embedding: &[T]) -> Result<Frame> {
        let traces = self.decoder_trace(embedding, &mut Mode::Inference)?;
        self.to_frame(traces.last().map(LayerTrace::output).unwrap_or(&[]))
    }

    /// Image embedding first, time embedding second.
    pub fn concat_embedding(&self, image: &[T], time: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(image.len() + time.len());
        out.extend_from_slice(image);
        out.extend_from_slice(time);
        out
    }

    /// Inverse of [`Network::concat_embedding`].
    pub fn split_embedding<'e>(&self, embedding: &'e [T]) -> (&'e [T], &'e [T]) {
        embedding.split_at(self.config.image_embedding_size().min(embedding.len()))
    }

    /// One encoder pass and one decoder pass, whatever the size of `dt`.
    pub fn predict(&self, frame: &Frame, dt: TemporalDisplacement) -> Result<Frame> {
        self.require_time_branch(true)?;
        let trace = self.forward(frame, Some(dt), Mode::Inference)?;
        self.to_frame(trace.output())
    }

    /// Single forward pass of a network without a time branch.
    pub fn predict_untimed(&self, frame: &Frame) -> Result<Frame> {
        self.require_time_branch(false)?;
        let trace = self.forward(frame, None, Mode::Inference)?;
        self.to_frame(trace.output())
    }

    /// Full forward pass keeping the activations needed by [`Network::backward`].
    pub fn forward(&self, frame: &Frame, dt: Option<TemporalDisplacement>, mut mode: Mode<'_>) -> Result<ForwardTrace<T>> {
        self.require_time_branch(dt.is_some())?;
        let (image_input, image) = self.image_trace(frame, &mut mode)?;
        let (time_input, time) = match dt {
            Some(dt) => {
                let (input, traces) = self.time_trace(dt)?;
                (Some(input), traces)
            }
            None => (None, Vec::new()),
        };
        let image_out = image.last().map(LayerTrace::output).unwrap_or(&[]);
        let time_out = time.last().map(LayerTrace::output).unwrap_or(&[]);
        let embedding = self.concat_embedding(image_out, time_out);
        let decoder = self.decoder_trace(&embedding, &mut mode)?;
        Ok(ForwardTrace { image_input, image, time_input, time, embedding, decoder })
    }

    fn to_frame(&self, output: &[T]) -> Result<Frame> {
        let (h, w) = self.config.input_resolution;
        let pixels = output.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        Frame::new(h, w, pixels)
    }

    /// Mean squared error against `target` and its gradient with respect to
    /// every parameter.
    pub fn backward(&self, trace: &ForwardTrace<T>, target: &Frame) -> Result<(T, ModelParameters<T>)> {
        self.check_frame(target)?;
        let output = trace.output();
        let n: T = cast(output.len() as f64);
        let two: T = cast(2.0);
        let mut loss = T::zero();
        let mut grad_output = Vec::with_capacity(output.len());
        for (&y, &t) in output.iter().zip(target.pixels()) {
            let diff = y - T::from(t).unwrap();
            loss = loss + diff * diff;
            grad_output.push(two * diff / n);
        }
        loss = loss / n;

        let mut grads = self.params.zeros_like();
        let (ri, rt, rd) = self.layer_ranges();
        let params = self.params.layers();
        let layers = grads.layers_mut();
        let (image_grads, rest) = layers.split_at_mut(rt.start);
        let (time_grads, decoder_grads) = rest.split_at_mut(rd.start - rt.start);

        let grad_embedding = backward_chain(
            &self.arch.decoder,
            &params[rd],
            decoder_grads,
            &trace.embedding,
            &trace.decoder,
            grad_output,
            true,
        )
        .expect("input gradient requested");
        let (grad_image, grad_time) = self.split_embedding(&grad_embedding);
        backward_chain(
            &self.arch.image,
            &params[ri],
            image_grads,
            &trace.image_input,
            &trace.image,
            grad_image.to_vec(),
            false,
        );
        if let Some(time_input) = trace.time_input {
            backward_chain(&self.arch.time, &params[rt], time_grads, &[time_input], &trace.time, grad_time.to_vec(), false);
        }
        Ok((loss, grads))
    }

    /// Forward with the given mode followed by [`Network::backward`].
    pub fn loss_and_gradient(
        &self,
        input: &Frame,
        dt: Option<TemporalDisplacement>,
        target: &Frame,
        mode: Mode<'_>,
    ) -> Result<(T, ModelParameters<T>)> {
        let trace = self.forward(input, dt, mode)?;
        self.backward(&trace, target)
    }

    fn run_chain(&self, specs: &[LayerSpec], params: &[LayerParams<T>], input: &[T], mode: &mut Mode<'_>) -> Vec<LayerTrace<T>> {
        let keep: T = cast(self.config.dropout_keep_probability);
        let mut traces: Vec<LayerTrace<T>> = Vec::with_capacity(specs.len());
        for (spec, layer) in specs.iter().zip(params) {
            let x = traces.last().map(LayerTrace::output).unwrap_or(input);
            let trace = apply_layer(spec, layer, x, keep, mode);
            traces.push(trace);
        }
        traces
    }
}

fn apply_layer<T: Float>(spec: &LayerSpec, layer: &LayerParams<T>, input: &[T], keep: T, mode: &mut Mode<'_>) -> LayerTrace<T> {
    let mut out = vec![T::zero(); spec.output_len()];
    match spec.kind {
        LayerKind::Conv(g) => ops::conv_forward(&g, input, &layer.weight, &layer.bias, &mut out),
        LayerKind::TransposeConv(g) => ops::tconv_forward(&g, input, &layer.weight, &layer.bias, &mut out),
        LayerKind::Dense { inputs, .. } => ops::dense_forward(inputs, input, &layer.weight, &layer.bias, &mut out),
    }
    match spec.activation {
        Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Activation::Sigmoid => out.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp())),
    }
    flush_subnormal(&mut out);
    let mut trace = LayerTrace { activated: out, mask: None, dropped: None };
    if let (true, Mode::Train(rng)) = (spec.dropout, mode) {
        if keep < T::one() {
            let keep_f64 = keep.to_f64().unwrap();
            let scale = T::one() / keep;
            let mask: Vec<T> = (0..trace.activated.len())
                .map(|_| if rng.gen::<f64>() < keep_f64 { scale } else { T::zero() })
                .collect();
            trace.dropped = Some(trace.activated.iter().zip(&mask).map(|(&a, &m)| a * m).collect());
            trace.mask = Some(mask);
        }
    }
    trace
}

/// Zeroes subnormal values. Saturated sigmoids otherwise fill the backward
/// pass with subnormals, which many CPUs process orders of magnitude slower.
pub(crate) fn flush_subnormal<T: Float>(values: &mut [T]) {
    let tiny = T::min_positive_value();
    values.iter_mut().for_each(|v| {
        if v.abs() < tiny {
            *v = T::zero()
        }
    });
}

/// Backpropagates `grad` (with respect to the chain's final output) through
/// `specs`, accumulating parameter gradients. Returns the gradient with
/// respect to `input` when `want_input_grad` is set.
fn backward_chain<T: Float>(
    specs: &[LayerSpec],
    params: &[LayerParams<T>],
    grads: &mut [LayerParams<T>],
    input: &[T],
    traces: &[LayerTrace<T>],
    mut grad: Vec<T>,
    want_input_grad: bool,
) -> Option<Vec<T>> {
    for i in (0..specs.len()).rev() {
        let (spec, layer, trace) = (&specs[i], &params[i], &traces[i]);
        if let Some(mask) = &trace.mask {
            grad.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
        }
        match spec.activation {
            Activation::Relu => grad
                .iter_mut()
                .zip(&trace.activated)
                .for_each(|(g, &a)| if a <= T::zero() { *g = T::zero() }),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(&trace.activated)
                .for_each(|(g, &a)| *g = *g * a * (T::one() - a)),
        }
        flush_subnormal(&mut grad);
        let x = if i == 0 { input } else { traces[i - 1].output() };
        let need_input = i > 0 || want_input_grad;
        let mut grad_in = need_input.then(|| vec![T::zero(); spec.input_len()]);
        let g = &mut grads[i];
        match spec.kind {
            LayerKind::Conv(geom) => {
                ops::conv_backward(&geom, x, &layer.weight, &grad, grad_in.as_deref_mut(), &mut g.weight, &mut g.bias)
            }
            LayerKind::TransposeConv(geom) => {
                ops::tconv_backward(&geom, x, &layer.weight, &grad, grad_in.as_deref_mut(), &mut g.weight, &mut g.bias)
            }
            LayerKind::Dense { inputs, .. } => {
                ops::dense_backward(inputs, x, &layer.weight, &grad, grad_in.as_deref_mut(), &mut g.weight, &mut g.bias)
            }
        }
        match grad_in {
            Some(next) => grad = next,
            None => return None,
        }
    }
    want_input_grad.then_some(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ms(v: f64) -> TemporalDisplacement {
        TemporalDisplacement::from_millis(v).unwrap()
    }

    fn zero_network(config: ModelConfig) -> Network<f32> {
        let arch = Architecture::from_config(&config).unwrap();
        Network::new(config, ModelParameters::zeros(&arch)).unwrap()
    }

    #[test]
    fn output_prior_sets_the_untrained_prediction() {
        let mut net = zero_network(ModelConfig::miniature());
        net.set_output_prior(0.125).unwrap();
        let out = net.predict(&Frame::filled(16, 16, 0.3).unwrap(), ms(40.0)).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 0.125).abs() < 1e-6));
        assert!(net.set_output_prior(0.0).is_err());
        assert!(net.set_output_prior(1.0).is_err());
    }

    #[test]
    fn default_encoder_and_decoder_widths() {
        let net = zero_network(ModelConfig::default());
        let frame = Frame::filled(120, 120, 0.0).unwrap();
        let image = net.encode_image(&frame, Mode::Inference).unwrap();
        assert_eq!(image.len(), 4096);
        assert!(image.iter().all(|&v| v == 0.0));
        let time = net.encode_time(ms(40.0)).unwrap();
        assert_eq!(time.len(), 64);
        assert!(time.iter().all(|&v| v == 0.0));
        let out = net.decode(&vec![0.0; 4160]).unwrap();
        assert_eq!(out.resolution(), (120, 120));
        assert!(out.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn half_resolution_embedding_width() {
        let net = Network::<f32>::init(ModelConfig::half_resolution(), 1).unwrap();
        let frame = Frame::filled(60, 60, 0.3).unwrap();
        assert_eq!(net.encode_image(&frame, Mode::Inference).unwrap().len(), 1024);
    }

    #[test]
    fn shape_errors() {
        let net = zero_network(ModelConfig::miniature());
        let wrong = Frame::filled(8, 8, 0.0).unwrap();
        assert!(matches!(net.encode_image(&wrong, Mode::Inference), Err(Error::Config(_))));
        assert!(matches!(net.decode(&[0.0; 3]), Err(Error::Shape(_))));
        let frame = Frame::filled(16, 16, 0.0).unwrap();
        assert!(matches!(net.predict_untimed(&frame), Err(Error::ModelKind(_))));

        let baseline = zero_network(ModelConfig::miniature().without_time_branch());
        assert!(matches!(baseline.predict(&frame, ms(40.0)), Err(Error::ModelKind(_))));
        assert!(matches!(baseline.encode_time(ms(40.0)), Err(Error::ModelKind(_))));
    }

    #[test]
    fn predict_is_composition_and_counts_one_pass() {
        let net = Network::<f32>::init(ModelConfig::miniature(), 5).unwrap();
        let frame = Frame::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f32 / 10.0).unwrap();
        let image = net.encode_image(&frame, Mode::Inference).unwrap();
        let time = net.encode_time(ms(120.0)).unwrap();
        let embedding = net.concat_embedding(&image, &time);
        let (a, b) = net.split_embedding(&embedding);
        assert_eq!((a, b), (image.as_slice(), time.as_slice()));
        let composed = net.decode(&embedding).unwrap();

        let before = net.pass_counts();
        let direct = net.predict(&frame, ms(120.0)).unwrap();
        let after = net.pass_counts();
        assert_eq!(composed, direct);
        assert_eq!(after.image_encoder - before.image_encoder, 1);
        assert_eq!(after.time_encoder - before.time_encoder, 1);
        assert_eq!(after.decoder - before.decoder, 1);
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let net = Network::<f64>::init(ModelConfig::miniature(), 9).unwrap();
        let frame = Frame::from_fn(16, 16, |r, c| if (r + c) % 3 == 0 { 1.0 } else { 0.2 }).unwrap();
        let a = net.encode_image(&frame, Mode::Inference).unwrap();
        let b = net.encode_image(&frame, Mode::Inference).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trained = net.encode_image(&frame, Mode::Train(&mut rng)).unwrap();
        assert_ne!(a, trained);
        // surviving units are rescaled by 1 / keep
        for (x, y) in a.iter().zip(&trained) {
            assert!(*y == 0.0 || (y - x / 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_zero_loss_is_zero() {
        let net = zero_network(ModelConfig::miniature());
        let frame = Frame::filled(16, 16, 0.5).unwrap();
        let (loss, grads) = net.loss_and_gradient(&frame, Some(ms(40.0)), &frame, Mode::Inference).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().all(|t| t.iter().all(|&g| g == 0.0)));
    }
}
