//! A compact fully convolutional descriptor network with reverse-mode
//! gradients and an Adam optimizer.
//!
//! The network maps a `W x H x 3` image to a `W x H x D` descriptor image.
//! Strided 3x3 convolutions shrink the feature map and a final bilinear
//! upsampling restores full resolution.

mod adam;
mod checkpoint;
mod kernels;

pub use adam::{lr_schedule, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Dense CHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn get_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Network input: colors shifted to be centered on zero.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width, img.height);
        let mut t = Tensor::zeros(3, h, w);
        for (i, px) in img.data.iter().enumerate() {
            for (c, &v) in px.iter().enumerate() {
                t.data[c * h * w + i] = v as f64 - 0.5;
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }
}

/// Per-pixel descriptor image stored pixel-major (`[y][x][d]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorImage {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DescriptorImage {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        DescriptorImage {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let mut out = DescriptorImage::zeros(t.w, t.h, t.c);
        let plane = t.h * t.w;
        for p in 0..plane {
            for c in 0..t.c {
                out.data[p * t.c + c] = t.data[c * plane + p];
            }
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(self.dim, self.height, self.width);
        let plane = self.height * self.width;
        for p in 0..plane {
            for c in 0..self.dim {
                t.data[c * plane + p] = self.data[p * self.dim + c];
            }
        }
        t
    }

    /// Image turned by 180 degrees.
    pub fn rotated_180(&self) -> Self {
        let mut out = DescriptorImage::zeros(self.width, self.height, self.dim);
        let n = self.width * self.height;
        for p in 0..n {
            let q = n - 1 - p;
            out.data[q * self.dim..(q + 1) * self.dim].copy_from_slice(&self.data[p * self.dim..(p + 1) * self.dim]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution with zero padding 1.
    Conv {
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
    Relu,
    BilinearUpsample {
        factor: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArchitecture {
    pub layers: Vec<LayerSpec>,
    pub descriptor_dim: usize,
}

impl NetArchitecture {
    /// conv(3->16,s2) relu conv(16->32,s2) relu conv(32->32) relu
    /// conv(32->D) upsample(4).
    pub fn desk(descriptor_dim: usize) -> Self {
        use LayerSpec::*;
        NetArchitecture {
            layers: vec![
                Conv {
                    in_ch: 3,
                    out_ch: 16,
                    stride: 2,
                },
                Relu,
                Conv {
                    in_ch: 16,
                    out_ch: 32,
                    stride: 2,
                },
                Relu,
                Conv {
                    in_ch: 32,
                    out_ch: 32,
                    stride: 1,
                },
                Relu,
                Conv {
                    in_ch: 32,
                    out_ch: descriptor_dim,
                    stride: 1,
                },
                BilinearUpsample { factor: 4 },
            ],
            descriptor_dim,
        }
    }

    /// Channel chain must run 3 -> D, strides must cancel the upsampling.
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_dim < 2 {
            return Err(Error::Shape("descriptor dimension must be at least 2".into()));
        }
        let mut ch = 3;
        let mut down = 1;
        let mut up = 1;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, stride } => {
                    if in_ch != ch {
                        return Err(Error::Shape(format!("conv expects {in_ch} channels, gets {ch}")));
                    }
                    if stride != 1 && stride != 2 {
                        return Err(Error::Shape(format!("unsupported stride {stride}")));
                    }
                    ch = out_ch;
                    down *= stride;
                }
                LayerSpec::Relu => {}
                LayerSpec::BilinearUpsample { factor } => {
                    if factor == 0 {
                        return Err(Error::Shape("upsample factor 0".into()));
                    }
                    up *= factor;
                }
            }
        }
        if ch != self.descriptor_dim {
            return Err(Error::Shape(format!(
                "network ends with {ch} channels, descriptor dimension is {}",
                self.descriptor_dim
            )));
        }
        if down != up {
            return Err(Error::Shape(format!("total stride {down} vs upsampling {up}")));
        }
        Ok(())
    }

    /// Output `(channels, height, width)` for an input of `height x width`,
    /// or a shape error if the network is not full-resolution for it.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let (mut h, mut w, mut c) = (height, width, 3);
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv { out_ch, stride, .. } => {
                    h = kernels::conv_out_dim(h, stride);
                    w = kernels::conv_out_dim(w, stride);
                    c = out_ch;
                }
                LayerSpec::Relu => {}
                LayerSpec::BilinearUpsample { factor } => {
                    h *= factor;
                    w *= factor;
                }
            }
        }
        if (h, w) != (height, width) {
            return Err(Error::Shape(format!("{width}x{height} input yields {w}x{h} output")));
        }
        Ok((c, h, w))
    }

    /// `(weight_len, bias_len)` for every conv layer, in order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv { in_ch, out_ch, .. } => Some((out_ch * in_ch * 9, out_ch)),
                _ => None,
            })
            .collect()
    }
}

/// Conv weights and biases as a flat list `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub tensors: Vec<Vec<f64>>,
}

impl NetParams {
    pub fn zeros(arch: &NetArchitecture) -> Self {
        NetParams {
            tensors: arch
                .param_shapes()
                .iter()
                .flat_map(|&(w, b)| [vec![0.0; w], vec![0.0; b]])
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &NetParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`, `fan_in = 9 * in_ch`), zero biases.
pub fn init_params<R: Rng>(arch: &NetArchitecture, rng: &mut R) -> NetParams {
    let mut tensors = Vec::new();
    for layer in &arch.layers {
        if let LayerSpec::Conv { in_ch, out_ch, .. } = *layer {
            let std = (2.0 / (9 * in_ch) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            tensors.push((0..out_ch * in_ch * 9).map(|_| normal.sample(rng)).collect());
            tensors.push(vec![0.0; out_ch]);
        }
    }
    NetParams { tensors }
}

/// Activations saved by [`forward`]: the input of every layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
}

impl ForwardCache {
    /// Smallest `|x|` over all ReLU inputs: the distance of this forward
    /// pass from the nearest kink.
    pub fn relu_margin(&self, arch: &NetArchitecture) -> f64 {
        arch.layers
            .iter()
            .zip(&self.inputs)
            .filter(|(l, _)| matches!(l, LayerSpec::Relu))
            .flat_map(|(_, t)| t.data.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn forward(params: &NetParams, arch: &NetArchitecture, image: &Tensor) -> Result<(Tensor, ForwardCache)> {
    if image.c != 3 {
        return Err(Error::Shape(format!("expected 3 input channels, got {}", image.c)));
    }
    arch.output_shape(image.h, image.w)?;
    let mut inputs = Vec::with_capacity(arch.layers.len());
    let mut x = image.clone();
    let mut p = 0;
    for layer in &arch.layers {
        let y = match *layer {
            LayerSpec::Conv { out_ch, stride, .. } => {
                let y = kernels::conv_forward(&x, &params.tensors[p], &params.tensors[p + 1], out_ch, stride);
                p += 2;
                y
            }
            LayerSpec::Relu => Tensor {
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                ..x
            },
            LayerSpec::BilinearUpsample { factor } => kernels::upsample_forward(&x, factor),
        };
        inputs.push(std::mem::replace(&mut x, y));
    }
    Ok((x, ForwardCache { inputs }))
}

/// Exact reverse-mode gradients of the forward pass for the upstream
/// gradient `grad_out`. Returns parameter gradients and the input gradient.
pub fn backward(
    params: &NetParams,
    arch: &NetArchitecture,
    cache: &ForwardCache,
    grad_out: &Tensor,
) -> (NetParams, Tensor) {
    let mut grads = params.zeros_like();
    let mut p = params.tensors.len();
    let mut g = grad_out.clone();
    for (layer, input) in arch.layers.iter().zip(&cache.inputs).rev() {
        g = match *layer {
            LayerSpec::Conv { stride, .. } => {
                p -= 2;
                let (gi, gw, gb) = kernels::conv_backward(input, &params.tensors[p], &g, stride, true);
                grads.tensors[p] = gw;
                grads.tensors[p + 1] = gb;
                gi.expect("requested")
            }
            LayerSpec::Relu => Tensor {
                data: g
                    .data
                    .iter()
                    .zip(&input.data)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
                ..g
            },
            LayerSpec::BilinearUpsample { factor } => kernels::upsample_backward(&g, input.h, input.w, factor),
        };
    }
    (grads, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = rng.random_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn desk_arch_is_full_resolution() {
        let arch = NetArchitecture::desk(3);
        assert_eq!(arch.output_shape(72, 96).unwrap(), (3, 72, 96));
        assert_eq!(arch.output_shape(12, 16).unwrap(), (3, 12, 16));
        assert!(arch.output_shape(70, 96).is_err());
        let mut bad = NetArchitecture::desk(3);
        bad.layers.pop();
        assert!(bad.validate().is_err());
        assert!(NetArchitecture::desk(1).validate().is_err());
    }

    #[test]
    fn zero_params_give_zero_descriptors() {
        let arch = NetArchitecture::desk(3);
        let params = NetParams::zeros(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_tensor(3, 72, 96, &mut rng);
        let (out, _) = forward(&params, &arch, &img).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let arch = NetArchitecture {
            layers: vec![LayerSpec::Conv {
                in_ch: 3,
                out_ch: 3,
                stride: 1,
            }],
            descriptor_dim: 3,
        };
        let mut params = NetParams::zeros(&arch);
        for c in 0..3 {
            params.tensors[0][(c * 3 + c) * 9 + 4] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_tensor(3, 12, 16, &mut rng);
        let (out, _) = forward(&params, &arch, &img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn random_net_output_is_finite_and_full_size() {
        let arch = NetArchitecture::desk(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = init_params(&arch, &mut rng);
        let img = random_tensor(3, 72, 96, &mut rng);
        let (out, _) = forward(&params, &arch, &img).unwrap();
        assert_eq!((out.c, out.h, out.w), (3, 72, 96));
        assert!(out.data.iter().all(|v| v.is_finite()));
        assert!(matches!(
            forward(&params, &arch, &random_tensor(3, 70, 96, &mut rng)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_zero_and_linearity() {
        let arch = NetArchitecture::desk(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_params(&arch, &mut rng);
        let img = random_tensor(3, 12, 16, &mut rng);
        let (out, cache) = forward(&params, &arch, &img).unwrap();

        let (zero, _) = backward(&params, &arch, &cache, &Tensor::zeros(out.c, out.h, out.w));
        assert!(zero.tensors.iter().flatten().all(|&v| v == 0.0));

        let g = random_tensor(out.c, out.h, out.w, &mut rng);
        let (g1, i1) = backward(&params, &arch, &cache, &g);
        let (g2, i2) = backward(&params, &arch, &cache, &g.scale(2.0));
        for (a, b) in g1.tensors.iter().flatten().zip(g2.tensors.iter().flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in i1.data.iter().zip(&i2.data) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    fn small_arch() -> NetArchitecture {
        use LayerSpec::*;
        NetArchitecture {
            layers: vec![
                Conv {
                    in_ch: 3,
                    out_ch: 4,
                    stride: 2,
                },
                Relu,
                Conv {
                    in_ch: 4,
                    out_ch: 5,
                    stride: 2,
                },
                Relu,
                Conv {
                    in_ch: 5,
                    out_ch: 3,
                    stride: 1,
                },
                BilinearUpsample { factor: 4 },
            ],
            descriptor_dim: 3,
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Objective <f(x), g> for a fixed random cotangent g.
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (params, img) = loop {
            let params = init_params(&arch, &mut rng);
            let img = random_tensor(3, 12, 16, &mut rng);
            let (_, cache) = forward(&params, &arch, &img).unwrap();
            if cache.relu_margin(&arch) > 1e-3 {
                break (params, img);
            }
        };
        let (out, cache) = forward(&params, &arch, &img).unwrap();
        let g = random_tensor(out.c, out.h, out.w, &mut rng);
        let objective = |p: &NetParams| -> f64 {
            let (o, _) = forward(p, &arch, &img).unwrap();
            o.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
        };
        let (grads, grad_in) = backward(&params, &arch, &cache, &g);
        let h = 1e-4;
        for t in 0..params.tensors.len() {
            for i in 0..params.tensors[t].len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.tensors[t][i] += h;
                minus.tensors[t][i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grads.tensors[t][i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-3, "tensor {t} entry {i}: fd {fd} analytic {an}");
            }
        }
        // Input gradient on a sample of entries.
        for i in (0..img.data.len()).step_by(7) {
            let mut plus = img.clone();
            let mut minus = img.clone();
            plus.data[i] += h;
            minus.data[i] -= h;
            let f = |x: &Tensor| -> f64 {
                let (o, _) = forward(&params, &arch, x).unwrap();
                o.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = grad_in.data[i];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-3);
        }
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let arch = NetArchitecture {
            layers: vec![
                LayerSpec::Conv {
                    in_ch: 3,
                    out_ch: 16,
                    stride: 1,
                },
                LayerSpec::Conv {
                    in_ch: 16,
                    out_ch: 16,
                    stride: 1,
                },
            ],
            descriptor_dim: 16,
        };
        let a = init_params(&arch, &mut ChaCha8Rng::seed_from_u64(5));
        let b = init_params(&arch, &mut ChaCha8Rng::seed_from_u64(5));
        let c = init_params(&arch, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.tensors[1].iter().all(|&v| v == 0.0));

        // 16*16*9 = 2304 weights per draw; pool draws until >= 1e4 samples.
        let mut samples = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        while samples.len() < 10_000 {
            samples.extend(init_params(&arch, &mut rng).tensors[2].clone());
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        let expected = (2.0f64 / 144.0).sqrt();
        assert!((var.sqrt() - expected).abs() < 0.2 * expected);
    }

    #[test]
    fn descriptor_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_tensor(4, 5, 6, &mut rng);
        let d = DescriptorImage::from_tensor(&t);
        assert_eq!(d.at(2, 3)[1], t.get(1, 3, 2));
        assert_eq!(d.to_tensor(), t);
        assert_eq!(d.rotated_180().at(5, 4), d.at(0, 0));
    }
}
