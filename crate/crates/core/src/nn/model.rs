//! The super-resolving denoiser: a U-Net backbone whose widened output
//! feeds a 2x transposed convolution and two 1x1 convolutions, mapping an
//! `h x w` input to a `2h x 2w` output.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    max_pool2, max_pool2_backward, upsample2, upsample2_backward, Activation, Conv2d, ConvTranspose2x2, Param,
};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::seed;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of 2x pooling levels in the U-Net.
    pub unet_depth: usize,
    /// Encoder width; decoder levels use twice this.
    pub base_channels: usize,
    /// Width of the U-Net output fed to the upsampling head.
    pub unet_out_channels: usize,
    /// Width between the two 1x1 convolutions of the head.
    pub head_channels: usize,
    /// Fixed at 2, the sub-sampler's cell size.
    pub upscale_factor: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            unet_depth: 5,
            base_channels: 48,
            unet_out_channels: 256,
            head_channels: 64,
            upscale_factor: 2,
            activation: Activation::LeakyRelu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU-scale experiments.
    pub fn desk() -> Self {
        ModelConfig {
            unet_depth: 3,
            base_channels: 16,
            unet_out_channels: 32,
            head_channels: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upscale_factor != 2 {
            return Err(Error::Config(format!(
                "upscale_factor must be 2, got {}",
                self.upscale_factor
            )));
        }
        if self.unet_depth == 0 || self.unet_depth > 8 {
            return Err(Error::Config(format!(
                "unet_depth must be in 1..=8, got {}",
                self.unet_depth
            )));
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("unet_out_channels", self.unet_out_channels),
            ("head_channels", self.head_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.unet_depth
    }

    /// `(name, in, out, kernel)` for every convolution in forward order;
    /// kernel 2 marks the stride-2 transposed convolution.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let c = self.base_channels;
        let mut specs = vec![("enc0".to_string(), 1, c, 3)];
        for l in 1..=self.unet_depth {
            specs.push((format!("enc{l}"), c, c, 3));
        }
        specs.push(("bottleneck".to_string(), c, c, 3));
        for l in (1..=self.unet_depth).rev() {
            let up = if l == self.unet_depth { c } else { 2 * c };
            let skip = if l == 1 { 1 } else { c };
            specs.push((format!("dec{l}a"), up + skip, 2 * c, 3));
            specs.push((format!("dec{l}b"), 2 * c, 2 * c, 3));
        }
        specs.push(("proj".to_string(), 2 * c, self.unet_out_channels, 3));
        specs.push(("up".to_string(), self.unet_out_channels, self.unet_out_channels, 2));
        specs.push(("head1".to_string(), self.unet_out_channels, self.head_channels, 1));
        specs.push(("head2".to_string(), self.head_channels, 1, 1));
        specs
    }
}

/// Activations kept from a forward pass for the backward pass.
pub struct Trace<T> {
    input: Tensor<T>,
    enc0: Tensor<T>,
    /// Pre-pool activation of each encoder level.
    enc: Vec<Tensor<T>>,
    /// Pooled tensor of each encoder level.
    pooled: Vec<Tensor<T>>,
    bottleneck: Tensor<T>,
    /// Per decoder level, in forward order: (concat input, conv a out, conv b out).
    dec: Vec<(Tensor<T>, Tensor<T>, Tensor<T>)>,
    features: Tensor<T>,
    upsampled: Tensor<T>,
    hidden: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T> Trace<T> {
    /// The U-Net output that feeds the upsampling head.
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrDenoiser<T> {
    config: ModelConfig,
    enc: Vec<Conv2d<T>>,
    bottleneck: Conv2d<T>,
    dec: Vec<(Conv2d<T>, Conv2d<T>)>,
    proj: Conv2d<T>,
    up: ConvTranspose2x2<T>,
    head1: Conv2d<T>,
    head2: Conv2d<T>,
}

impl<T: Scalar> SrDenoiser<T> {
    /// Builds the network with He-normal weights drawn from `config.seed`
    /// and zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_at(config.seed, &[0x005e_ed0f_7e7a]);
        let gain = match config.activation {
            Activation::LeakyRelu => 2.0 / (1.0 + 0.1 * 0.1),
            Activation::Relu => 2.0,
        };
        let mut specs = config.layer_specs().into_iter();
        let mut next = || specs.next().unwrap();
        let mut conv = |rng: &mut seed::Rng, gain: f64| {
            let (name, cin, cout, k) = next();
            if k == 2 {
                let w = he_normal(rng, cin, cout * 4 * cin, gain);
                return Layer::Up(ConvTranspose2x2::new(&name, cin, cout, w));
            }
            Layer::Conv(Conv2d::new(
                &name,
                cin,
                cout,
                k,
                he_normal(rng, cin * k * k, cout * cin * k * k, gain),
            ))
        };
        let enc = (0..=config.unet_depth)
            .map(|_| conv(&mut rng, gain).into_conv())
            .collect();
        let bottleneck = conv(&mut rng, gain).into_conv();
        let dec = (0..config.unet_depth)
            .map(|_| {
                let a = conv(&mut rng, gain).into_conv();
                (a, conv(&mut rng, gain).into_conv())
            })
            .collect();
        let proj = conv(&mut rng, gain).into_conv();
        let up = match conv(&mut rng, gain) {
            Layer::Up(u) => u,
            Layer::Conv(_) => unreachable!("layer order"),
        };
        let head1 = conv(&mut rng, gain).into_conv();
        // linear output layer
        let head2 = conv(&mut rng, 1.0).into_conv();
        Ok(SrDenoiser {
            config,
            enc,
            bottleneck,
            dec,
            proj,
            up,
            head1,
            head2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        let convs = self
            .enc
            .iter()
            .chain(std::iter::once(&self.bottleneck))
            .chain(self.dec.iter().flat_map(|(a, b)| [a, b]))
            .chain(std::iter::once(&self.proj));
        for c in convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.up.weight);
        out.push(&self.up.bias);
        for c in [&self.head1, &self.head2] {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        let convs = self
            .enc
            .iter_mut()
            .chain(std::iter::once(&mut self.bottleneck))
            .chain(self.dec.iter_mut().flat_map(|(a, b)| [a, b]))
            .chain(std::iter::once(&mut self.proj));
        for c in convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.up.weight);
        out.push(&mut self.up.bias);
        for c in [&mut self.head1, &mut self.head2] {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        let d = self.config.divisor();
        if height == 0 || width == 0 || height % d != 0 || width % d != 0 {
            return Err(shape_err!(
                "input {height}x{width} must be divisible by {d} (2^unet_depth)"
            ));
        }
        Ok(())
    }

    fn conv_act(&self, conv: &Conv2d<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut y = conv.forward(x);
        self.config.activation.forward_inplace(&mut y.data);
        y
    }

    /// Runs the network on a one-channel batch, keeping every activation
    /// needed by [`backward`](Self::backward).
    pub fn forward_trace(&self, input: Tensor<T>) -> Result<Trace<T>> {
        if input.channels != 1 {
            return Err(shape_err!("expected 1 input channel, got {}", input.channels));
        }
        self.check_input_dims(input.height, input.width)?;
        let depth = self.config.unet_depth;
        let enc0 = self.conv_act(&self.enc[0], &input);
        let mut enc = Vec::with_capacity(depth);
        let mut pooled = Vec::with_capacity(depth);
        for l in 1..=depth {
            let src = pooled.last().unwrap_or(&enc0);
            let a = self.conv_act(&self.enc[l], src);
            pooled.push(max_pool2(&a));
            enc.push(a);
        }
        let bottleneck = self.conv_act(&self.bottleneck, pooled.last().unwrap());
        let mut dec: Vec<(Tensor<T>, Tensor<T>, Tensor<T>)> = Vec::with_capacity(depth);
        for (i, l) in (1..=depth).rev().enumerate() {
            let prev = dec.last().map(|d| &d.2).unwrap_or(&bottleneck);
            let skip = if l == 1 { &input } else { &pooled[l - 2] };
            let cat = upsample2(prev).concat_channels(skip);
            let a = self.conv_act(&self.dec[i].0, &cat);
            let b = self.conv_act(&self.dec[i].1, &a);
            dec.push((cat, a, b));
        }
        let features = self.conv_act(&self.proj, &dec.last().unwrap().2);
        let mut upsampled = self.up.forward(&features);
        self.config.activation.forward_inplace(&mut upsampled.data);
        let hidden = self.conv_act(&self.head1, &upsampled);
        let output = self.head2.forward(&hidden);
        Ok(Trace {
            input,
            enc0,
            enc,
            pooled,
            bottleneck,
            dec,
            features,
            upsampled,
            hidden,
            output,
        })
    }

    pub fn forward_tensor(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(input)?.output)
    }

    /// Accumulates parameter gradients of a scalar loss given its gradient
    /// with respect to the network output.
    pub fn backward(&mut self, trace: &Trace<T>, grad_output: Tensor<T>) {
        let act = self.config.activation;
        let depth = self.config.unet_depth;
        assert_eq!(grad_output.shape(), trace.output.shape(), "output gradient shape");

        let mut g = self.head2.backward(&trace.hidden, &grad_output, true).unwrap();
        act.backward_inplace(&trace.hidden.data, &mut g.data);
        let mut g = self.head1.backward(&trace.upsampled, &g, true).unwrap();
        act.backward_inplace(&trace.upsampled.data, &mut g.data);
        let mut g = self.up.backward(&trace.features, &g);
        act.backward_inplace(&trace.features.data, &mut g.data);
        let mut g = self.proj.backward(&trace.dec[depth - 1].2, &g, true).unwrap();

        // Gradients flowing into each skip tensor, indexed like `pooled`.
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; depth];
        for (i, l) in (1..=depth).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let (cat, a, b) = &trace.dec[i];
            act.backward_inplace(&b.data, &mut g.data);
            let mut ga = self.dec[i].1.backward(a, &g, true).unwrap();
            act.backward_inplace(&a.data, &mut ga.data);
            let gcat = self.dec[i].0.backward(cat, &ga, true).unwrap();
            let up_channels = cat.channels - if l == 1 { 1 } else { self.config.base_channels };
            let (gup, gskip) = gcat.split_channels(up_channels);
            if l > 1 {
                skip_grads[l - 2] = Some(gskip);
            }
            g = upsample2_backward(&gup);
        }

        act.backward_inplace(&trace.bottleneck.data, &mut g.data);
        let mut g = self.bottleneck.backward(&trace.pooled[depth - 1], &g, true).unwrap();
        for l in (1..=depth).rev() {
            if let Some(extra) = skip_grads[l - 1].take() {
                for (a, b) in g.data.iter_mut().zip(&extra.data) {
                    *a += *b;
                }
            }
            let mut ga = max_pool2_backward(&trace.enc[l - 1], &g);
            act.backward_inplace(&trace.enc[l - 1].data, &mut ga.data);
            let src = if l == 1 { &trace.enc0 } else { &trace.pooled[l - 2] };
            g = self.enc[l].backward(src, &ga, true).unwrap();
        }
        act.backward_inplace(&trace.enc0.data, &mut g.data);
        self.enc[0].backward(&trace.input, &g, false);
    }

    /// Packs same-size images into a one-channel batch tensor.
    pub fn batch_tensor(images: &[Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| shape_err!("empty batch"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.dims() != (h, w) {
                return Err(shape_err!("batch images differ in size"));
            }
            data.extend(img.data().iter().map(|&v| T::from_f64(v)));
        }
        Ok(Tensor::from_data(1, images.len(), h, w, data))
    }

    /// Splits a one-channel batch tensor into images.
    pub fn unbatch(t: &Tensor<T>) -> Result<Vec<Image>> {
        (0..t.batch)
            .map(|b| {
                Image::new(t.height, t.width, t.image(0, b).iter().map(|v| v.to_f64()).collect())
                    .map_err(|_| Error::Domain("network produced non-finite output".into()))
            })
            .collect()
    }

    /// `f(y)` for each image: `h x w` in, `2h x 2w` out.
    pub fn forward(&self, images: &[Image]) -> Result<Vec<Image>> {
        let out = self.forward_tensor(Self::batch_tensor(images)?)?;
        Self::unbatch(&out)
    }

    pub fn cast<U: Scalar>(&self) -> SrDenoiser<U> {
        let conv = |c: &Conv2d<T>| {
            let mut n = Conv2d::new("", c.in_channels, c.out_channels, c.kernel, cast_vec(&c.weight.value));
            n.weight.name = c.weight.name.clone();
            n.bias = Param::new(c.bias.name.clone(), c.bias.shape.clone(), cast_vec(&c.bias.value));
            n
        };
        let mut up = ConvTranspose2x2::new(
            "",
            self.up.in_channels,
            self.up.out_channels,
            cast_vec(&self.up.weight.value),
        );
        up.weight.name = self.up.weight.name.clone();
        up.bias = Param::new(
            self.up.bias.name.clone(),
            self.up.bias.shape.clone(),
            cast_vec(&self.up.bias.value),
        );
        SrDenoiser {
            config: self.config.clone(),
            enc: self.enc.iter().map(conv).collect(),
            bottleneck: conv(&self.bottleneck),
            dec: self.dec.iter().map(|(a, b)| (conv(a), conv(b))).collect(),
            proj: conv(&self.proj),
            up,
            head1: conv(&self.head1),
            head2: conv(&self.head2),
        }
    }
}

enum Layer<T> {
    Conv(Conv2d<T>),
    Up(ConvTranspose2x2<T>),
}

impl<T> Layer<T> {
    fn into_conv(self) -> Conv2d<T> {
        match self {
            Layer::Conv(c) => c,
            Layer::Up(_) => unreachable!("layer order"),
        }
    }
}

fn he_normal<T: Scalar>(rng: &mut seed::Rng, fan_in: usize, len: usize, gain: f64) -> Vec<T> {
    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
    (0..len).map(|_| T::from_f64(normal.sample(rng))).collect()
}

fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.to_f64())).collect()
}

/// The network in its training precision.
pub type Model = SrDenoiser<f32>;

pub fn build_model(config: ModelConfig) -> Result<Model> {
    SrDenoiser::new(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            unet_depth: 2,
            base_channels: 3,
            unet_out_channels: 5,
            head_channels: 4,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        // Closed form for the default network, written out level by level:
        // conv params = in*out*k*k + out.
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let c = 48;
        let mut expected = conv(1, c, 3) + 5 * conv(c, c, 3) + conv(c, c, 3);
        expected += conv(c + c, 2 * c, 3) + conv(2 * c, 2 * c, 3); // level 5
        expected += 3 * (conv(2 * c + c, 2 * c, 3) + conv(2 * c, 2 * c, 3)); // levels 4..2
        expected += conv(2 * c + 1, 2 * c, 3) + conv(2 * c, 2 * c, 3); // level 1
        expected += conv(2 * c, 256, 3);
        expected += 256 * 256 * 4 + 256;
        expected += conv(256, 64, 1) + conv(64, 1, 1);
        let model = build_model(ModelConfig::default()).unwrap();
        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn equal_seeds_equal_weights() {
        let a = build_model(tiny()).unwrap();
        let b = build_model(tiny()).unwrap();
        assert_eq!(a, b);
        let c = build_model(ModelConfig { seed: 43, ..tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_law_and_batch() {
        let model = build_model(tiny()).unwrap();
        for (h, w) in [(4, 4), (8, 12), (16, 4)] {
            let imgs = vec![Image::zeros(h, w); 3];
            let out = model.forward(&imgs).unwrap();
            assert_eq!(out.len(), 3);
            assert!(out.iter().all(|o| o.dims() == (2 * h, 2 * w)));
        }
        let err = model.forward(&[Image::zeros(6, 8)]).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn default_model_maps_64_to_128_with_wide_features() {
        let model = build_model(ModelConfig::default()).unwrap();
        let trace = model
            .forward_trace(SrDenoiser::<f32>::batch_tensor(&[Image::zeros(64, 64)]).unwrap())
            .unwrap();
        assert_eq!(trace.features().shape(), [256, 1, 64, 64]);
        assert_eq!(trace.output.shape(), [1, 1, 128, 128]);
        assert!(trace.output.all_finite());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(build_model(ModelConfig {
            upscale_factor: 3,
            ..tiny()
        })
        .is_err());
        assert!(build_model(ModelConfig {
            unet_out_channels: 0,
            ..tiny()
        })
        .is_err());
    }
}
