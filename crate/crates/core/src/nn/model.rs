//! ResNet-style spectrogram network: convolutional feature extractor with
//! residual skips, global average pooling, two dense layers producing the
//! embedding `z`, and a dense classifier head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub channels: usize,
    pub stride: usize,
}

impl ConvStage {
    pub const fn new(kernel_h: usize, kernel_w: usize, channels: usize, stride: usize) -> Self {
        ConvStage {
            kernel_h,
            kernel_w,
            channels,
            stride,
        }
    }
}

/// Network topology. Conv stages are numbered from 1; a skip `(from, to)`
/// adds the activation of stage `from` (0 is the input) to the
/// pre-activation of stage `to`, through a 1x1 projection when shapes differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub conv_stages: Vec<ConvStage>,
    pub skip_connections: Vec<(usize, usize)>,
    pub dense_sizes: [usize; 2],
    pub num_classes: usize,
    pub width_scale: f64,
    /// Expected input grid `[freq_bins, frames]`.
    pub input_dims: [usize; 2],
}

impl ArchitectureSpec {
    /// Nine convolutions (32 x 7x7, four 32 x 3x3, four 64 x 3x3), residual
    /// skips over each pair of 3x3 convs, average pool, dense 512 and 256.
    pub fn resnet9(num_classes: usize, input_dims: [usize; 2]) -> Self {
        let mut conv_stages = vec![ConvStage::new(7, 7, 32, 2)];
        conv_stages.extend([ConvStage::new(3, 3, 32, 1); 4]);
        conv_stages.push(ConvStage::new(3, 3, 64, 2));
        conv_stages.extend([ConvStage::new(3, 3, 64, 1); 3]);
        ArchitectureSpec {
            conv_stages,
            skip_connections: vec![(1, 3), (3, 5), (5, 7), (7, 9)],
            dense_sizes: [512, 256],
            num_classes,
            width_scale: 1.0,
            input_dims,
        }
    }

    pub fn with_width_scale(mut self, width_scale: f64) -> Self {
        self.width_scale = width_scale;
        self
    }

    pub fn scaled_channels(&self, stage: usize) -> usize {
        let c = self.conv_stages[stage].channels as f64 * self.width_scale;
        (c.round() as usize).max(1)
    }

    pub fn embedding_dim(&self) -> usize {
        self.dense_sizes[1]
    }
}

#[derive(Debug, Clone)]
struct Projection {
    from: usize,
    to: usize,
    /// `None` for identity skips.
    geom: Option<ConvGeom>,
    /// Index of this projection among parameterized projections.
    param_slot: usize,
}

/// Shape trace of an architecture.
#[derive(Debug, Clone)]
pub struct Layout {
    convs: Vec<ConvGeom>,
    skips: Vec<Projection>,
    n_proj: usize,
    pooled: usize,
}

impl Layout {
    pub fn build(arch: &ArchitectureSpec) -> Result<Layout> {
        if arch.conv_stages.is_empty() {
            return Err(Error::config("architecture needs at least one conv stage"));
        }
        if !(arch.width_scale > 0.0 && arch.width_scale <= 1.0) {
            return Err(Error::config(format!(
                "width_scale must lie in (0, 1], got {}",
                arch.width_scale
            )));
        }
        if arch.dense_sizes.contains(&0) || arch.num_classes == 0 {
            return Err(Error::config("dense sizes and num_classes must be positive"));
        }
        let [h, w] = arch.input_dims;
        if h == 0 || w == 0 {
            return Err(Error::config("input dims must be positive"));
        }
        let mut convs = Vec::new();
        let (mut c, mut h, mut w) = (1usize, h, w);
        for (i, st) in arch.conv_stages.iter().enumerate() {
            if st.kernel_h == 0 || st.kernel_w == 0 || st.stride == 0 || st.channels == 0 {
                return Err(Error::config(format!("conv stage {} has a zero dimension", i + 1)));
            }
            let g = ConvGeom::new(c, h, w, arch.scaled_channels(i), st.kernel_h, st.kernel_w, st.stride);
            (c, h, w) = (g.out_c, g.out_h, g.out_w);
            convs.push(g);
        }
        let shape_of = |k: usize| -> (usize, usize, usize) {
            if k == 0 {
                (1, arch.input_dims[0], arch.input_dims[1])
            } else {
                let g = &convs[k - 1];
                (g.out_c, g.out_h, g.out_w)
            }
        };
        let mut skips = Vec::new();
        let mut n_proj = 0;
        for &(from, to) in &arch.skip_connections {
            if from >= to || to > convs.len() {
                return Err(Error::config(format!(
                    "skip ({from}, {to}) must satisfy from < to <= {}",
                    convs.len()
                )));
            }
            let (fc, fh, fw) = shape_of(from);
            let (tc, th, tw) = shape_of(to);
            let geom = if (fc, fh, fw) == (tc, th, tw) {
                None
            } else {
                let stride: usize = arch.conv_stages[from..to].iter().map(|s| s.stride).product();
                let g = ConvGeom::new(fc, fh, fw, tc, 1, 1, stride);
                if (g.out_h, g.out_w) != (th, tw) {
                    return Err(Error::config(format!(
                        "skip ({from}, {to}): cannot project {fh}x{fw} onto {th}x{tw}"
                    )));
                }
                Some(g)
            };
            let param_slot = n_proj;
            if geom.is_some() {
                n_proj += 1;
            }
            skips.push(Projection {
                from,
                to,
                geom,
                param_slot,
            });
        }
        Ok(Layout {
            pooled: c,
            convs,
            skips,
            n_proj,
        })
    }

    /// `(channels, height, width)` after the last conv.
    pub fn final_feature_shape(&self) -> (usize, usize, usize) {
        let g = self.convs.last().expect("non-empty");
        (g.out_c, g.out_h, g.out_w)
    }

    fn extractor_shapes(&self, arch: &ArchitectureSpec) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for g in &self.convs {
            shapes.push(vec![g.out_c, g.in_c, g.kh, g.kw]);
            shapes.push(vec![g.out_c]);
        }
        for p in &self.skips {
            if let Some(g) = &p.geom {
                shapes.push(vec![g.out_c, g.in_c, 1, 1]);
                shapes.push(vec![g.out_c]);
            }
        }
        let [d1, d2] = arch.dense_sizes;
        shapes.push(vec![self.pooled, d1]);
        shapes.push(vec![d1]);
        shapes.push(vec![d1, d2]);
        shapes.push(vec![d2]);
        shapes
    }

    fn conv_slot(&self, i: usize) -> usize {
        2 * i
    }

    fn proj_slot(&self, j: usize) -> usize {
        2 * self.convs.len() + 2 * j
    }

    fn dense_slot(&self, j: usize) -> usize {
        2 * self.convs.len() + 2 * self.n_proj + 2 * j
    }
}

/// Learnable tensors: `extractor` holds conv weights/biases (in stage order),
/// projection weights/biases, then the two dense layers; `classifier` holds
/// the head weight `[d2, K]` and bias `[K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchitectureSpec,
    pub extractor: Vec<Tensor<T>>,
    pub classifier: Vec<Tensor<T>>,
}

/// Gradients laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub extractor: Vec<Tensor<T>>,
    pub classifier: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        let z = |ts: &[Tensor<T>]| ts.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Gradients {
            extractor: z(&params.extractor),
            classifier: z(&params.classifier),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.extractor.iter().chain(&self.classifier)
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|t| t.data.iter().all(|v| *v == T::zero()))
    }
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled uniform initialization, `U(-sqrt(3/fan_in), sqrt(3/fan_in))`
    /// for weights, zero biases.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let layout = Layout::build(arch)?;
        let mut rng = seed::rng(seed);
        let mut init = |shape: &[usize]| -> Tensor<T> {
            if shape.len() == 1 {
                return Tensor::zeros(shape);
            }
            let fan_in: usize = if shape.len() == 4 {
                shape[1..].iter().product()
            } else {
                shape[0]
            };
            let bound = (3.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            Tensor::from_vec(shape, data)
        };
        let extractor = layout
            .extractor_shapes(arch)
            .iter()
            .map(|s| init(s))
            .collect();
        let d2 = arch.dense_sizes[1];
        let classifier = vec![init(&[d2, arch.num_classes]), init(&[arch.num_classes])];
        Ok(ModelParams {
            arch: arch.clone(),
            extractor,
            classifier,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.extractor.iter().chain(&self.classifier)
    }

    pub fn parameter_count(&self) -> usize {
        self.iter().map(Tensor::len).sum()
    }

    /// Checks tensor count and shapes against the architecture.
    pub fn validate(&self) -> Result<()> {
        let layout = Layout::build(&self.arch)?;
        let expected = layout.extractor_shapes(&self.arch);
        if expected.len() != self.extractor.len()
            || expected.iter().zip(&self.extractor).any(|(s, t)| *s != t.shape)
        {
            return Err(Error::config("extractor tensors do not match the architecture"));
        }
        let d2 = self.arch.dense_sizes[1];
        let k = self.arch.num_classes;
        if self.classifier.len() != 2
            || self.classifier[0].shape != [d2, k]
            || self.classifier[1].shape != [k]
        {
            return Err(Error::config("classifier tensors do not match the architecture"));
        }
        if !self.iter().all(Tensor::is_finite) {
            return Err(Error::config("parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            extractor: self.extractor.iter().map(Tensor::cast).collect(),
            classifier: self.classifier.iter().map(Tensor::cast).collect(),
        }
    }
}

/// A batch of single-channel input grids, `[batch, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<T> {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> InputBatch<T> {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(Error::input(format!(
                "input batch holds {} values, expected {batch}x{height}x{width}",
                data.len()
            )));
        }
        Ok(InputBatch {
            batch,
            height,
            width,
            data,
        })
    }
}

struct Cache<T> {
    batch: usize,
    /// `acts[0]` is the input, `acts[i]` the post-ReLU output of conv `i`.
    acts: Vec<Vec<T>>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    z: Vec<T>,
}

/// Model parameters plus the activation cache of the last forward pass.
pub struct Network<T: Real> {
    layout: Layout,
    pub params: ModelParams<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> Network<T> {
    pub fn new(params: ModelParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Network {
            layout: Layout::build(&params.arch)?,
            params,
            cache: None,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.params.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn conv_forward_sample(&self, acts: &mut [Vec<T>], b: usize, scratch: &mut Vec<T>) {
        let ex = &self.params.extractor;
        for (i, g) in self.layout.convs.iter().enumerate() {
            let stage = i + 1;
            let (before, after) = acts.split_at_mut(stage);
            let input = &before[i][b * g.in_len()..(b + 1) * g.in_len()];
            let out = &mut after[0][b * g.out_len()..(b + 1) * g.out_len()];
            let slot = self.layout.conv_slot(i);
            layers::conv2d_forward(g, input, &ex[slot].data, &ex[slot + 1].data, out, scratch);
            for p in self.layout.skips.iter().filter(|p| p.to == stage) {
                let src_len = if p.from == 0 {
                    self.layout.convs[0].in_len()
                } else {
                    self.layout.convs[p.from - 1].out_len()
                };
                let src = &before[p.from][b * src_len..(b + 1) * src_len];
                match &p.geom {
                    None => {
                        for (o, s) in out.iter_mut().zip(src) {
                            *o += *s;
                        }
                    }
                    Some(pg) => {
                        let mut tmp = vec![T::zero(); pg.out_len()];
                        let ps = self.layout.proj_slot(p.param_slot);
                        layers::conv2d_forward(pg, src, &ex[ps].data, &ex[ps + 1].data, &mut tmp, scratch);
                        for (o, s) in out.iter_mut().zip(&tmp) {
                            *o += *s;
                        }
                    }
                }
            }
            layers::relu_inplace(out);
        }
    }

    /// Embeddings `z` for every input, `[batch, d2]` row-major. Caches the
    /// activations for [`Network::backward`].
    pub fn forward_extract(&mut self, input: &InputBatch<T>) -> Result<Vec<T>> {
        let [h, w] = self.params.arch.input_dims;
        if (input.height, input.width) != (h, w) {
            return Err(Error::input(format!(
                "input grid is {}x{}, architecture expects {h}x{w}",
                input.height, input.width
            )));
        }
        let batch = input.batch;
        let mut acts = Vec::with_capacity(self.layout.convs.len() + 1);
        acts.push(input.data.clone());
        for g in &self.layout.convs {
            acts.push(vec![T::zero(); batch * g.out_len()]);
        }
        let mut scratch = Vec::new();
        for b in 0..batch {
            self.conv_forward_sample(&mut acts, b, &mut scratch);
        }
        let channels = self.layout.pooled;
        let last = acts.last().expect("non-empty");
        let per = last.len() / batch.max(1);
        let mut pooled = vec![T::zero(); batch * channels];
        for b in 0..batch {
            layers::global_avg_pool(
                &last[b * per..(b + 1) * per],
                channels,
                &mut pooled[b * channels..(b + 1) * channels],
            );
        }
        let ex = &self.params.extractor;
        let [d1, d2] = self.params.arch.dense_sizes;
        let s1 = self.layout.dense_slot(0);
        let mut hidden = vec![T::zero(); batch * d1];
        layers::dense_forward(&pooled, batch, &ex[s1].data, &ex[s1 + 1].data, &mut hidden);
        layers::relu_inplace(&mut hidden);
        let s2 = self.layout.dense_slot(1);
        let mut z = vec![T::zero(); batch * d2];
        layers::dense_forward(&hidden, batch, &ex[s2].data, &ex[s2 + 1].data, &mut z);
        self.cache = Some(Cache {
            batch,
            acts,
            pooled,
            hidden,
            z: z.clone(),
        });
        Ok(z)
    }

    /// Classifier logits for embeddings `z` (`[batch, d2]`), in f64.
    pub fn classifier_logits(&self, z: &[T]) -> Result<Vec<f64>> {
        let d2 = self.params.arch.dense_sizes[1];
        if z.len() % d2 != 0 {
            return Err(Error::input(format!(
                "embedding buffer of {} values is not a multiple of {d2}",
                z.len()
            )));
        }
        let batch = z.len() / d2;
        let k = self.params.arch.num_classes;
        let mut logits = vec![T::zero(); batch * k];
        layers::dense_forward(
            z,
            batch,
            &self.params.classifier[0].data,
            &self.params.classifier[1].data,
            &mut logits,
        );
        Ok(logits.into_iter().map(T::as_f64).collect())
    }

    /// Softmax class probabilities `[batch, K]`.
    pub fn forward_classify(&self, z: &[T]) -> Result<Vec<f64>> {
        let logits = self.classifier_logits(z)?;
        Ok(layers::softmax_rows(&logits, self.params.arch.num_classes))
    }

    /// Exact gradients of a loss whose derivative w.r.t. the embeddings is
    /// `grad_z` and w.r.t. the classifier logits (of the cached embeddings)
    /// is `grad_logits`. Consumes the forward cache; parameters are not
    /// modified.
    pub fn backward(&mut self, grad_z: Option<&[f64]>, grad_logits: Option<&[f64]>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward pass".into()))?;
        let batch = cache.batch;
        let [d1, d2] = self.params.arch.dense_sizes;
        let k = self.params.arch.num_classes;
        let mut grads = Gradients::zeros_like(&self.params);
        let mut dz = vec![T::zero(); batch * d2];
        if let Some(gz) = grad_z {
            if gz.len() != batch * d2 {
                return Err(Error::input("grad_z does not match the cached batch"));
            }
            for (d, &g) in dz.iter_mut().zip(gz) {
                *d += T::from_f64_lossy(g);
            }
        }
        if let Some(gl) = grad_logits {
            if gl.len() != batch * k {
                return Err(Error::input("grad_logits does not match the cached batch"));
            }
            let gl: Vec<T> = gl.iter().map(|&v| T::from_f64_lossy(v)).collect();
            let (w, b) = grads.classifier.split_at_mut(1);
            layers::dense_backward(
                &cache.z,
                batch,
                &self.params.classifier[0].data,
                &gl,
                &mut w[0].data,
                &mut b[0].data,
                Some(&mut dz),
            );
        }

        let ex = &self.params.extractor;
        let s2 = self.layout.dense_slot(1);
        let mut dhidden = vec![T::zero(); batch * d1];
        {
            let (w, b) = grads.extractor[s2..s2 + 2].split_at_mut(1);
            layers::dense_backward(&cache.hidden, batch, &ex[s2].data, &dz, &mut w[0].data, &mut b[0].data, Some(&mut dhidden));
        }
        layers::relu_backward(&cache.hidden, &mut dhidden);
        let s1 = self.layout.dense_slot(0);
        let channels = self.layout.pooled;
        let mut dpooled = vec![T::zero(); batch * channels];
        {
            let (w, b) = grads.extractor[s1..s1 + 2].split_at_mut(1);
            layers::dense_backward(&cache.pooled, batch, &ex[s1].data, &dhidden, &mut w[0].data, &mut b[0].data, Some(&mut dpooled));
        }

        let n = self.layout.convs.len();
        let mut dacts: Vec<Vec<T>> = (0..=n)
            .map(|i| {
                if i == 0 {
                    Vec::new()
                } else {
                    vec![T::zero(); batch * self.layout.convs[i - 1].out_len()]
                }
            })
            .collect();
        let last_len = self.layout.convs[n - 1].out_len();
        let spatial = self.layout.convs[n - 1].out_spatial();
        for b in 0..batch {
            layers::global_avg_pool_backward(
                &dpooled[b * channels..(b + 1) * channels],
                spatial,
                &mut dacts[n][b * last_len..(b + 1) * last_len],
            );
        }

        let mut scratch = Vec::new();
        for i in (0..n).rev() {
            let stage = i + 1;
            let g = self.layout.convs[i];
            let slot = self.layout.conv_slot(i);
            let (lower, upper) = dacts.split_at_mut(stage);
            let dpre = &mut upper[0];
            layers::relu_backward(&cache.acts[stage], dpre);
            for b in 0..batch {
                let dout = &dpre[b * g.out_len()..(b + 1) * g.out_len()];
                let input = &cache.acts[i][b * g.in_len()..(b + 1) * g.in_len()];
                let (w, bias) = grads.extractor[slot..slot + 2].split_at_mut(1);
                let dinput = if i == 0 {
                    None
                } else {
                    Some(&mut lower[i][b * g.in_len()..(b + 1) * g.in_len()])
                };
                layers::conv2d_backward(&g, input, &ex[slot].data, dout, &mut w[0].data, &mut bias[0].data, dinput, &mut scratch);
            }
            for p in self.layout.skips.iter().filter(|p| p.to == stage) {
                if p.from == 0 {
                    // gradients w.r.t. the network input are not needed
                    if let Some(pg) = &p.geom {
                        let ps = self.layout.proj_slot(p.param_slot);
                        for b in 0..batch {
                            let dout = &dpre[b * g.out_len()..(b + 1) * g.out_len()];
                            let src = &cache.acts[0][b * pg.in_len()..(b + 1) * pg.in_len()];
                            let (w, bias) = grads.extractor[ps..ps + 2].split_at_mut(1);
                            layers::conv2d_backward(pg, src, &ex[ps].data, dout, &mut w[0].data, &mut bias[0].data, None, &mut scratch);
                        }
                    }
                    continue;
                }
                let src_len = self.layout.convs[p.from - 1].out_len();
                match &p.geom {
                    None => {
                        for (d, s) in lower[p.from].iter_mut().zip(dpre.iter()) {
                            *d += *s;
                        }
                    }
                    Some(pg) => {
                        let ps = self.layout.proj_slot(p.param_slot);
                        for b in 0..batch {
                            let dout = &dpre[b * g.out_len()..(b + 1) * g.out_len()];
                            let src = &cache.acts[p.from][b * src_len..(b + 1) * src_len];
                            let (w, bias) = grads.extractor[ps..ps + 2].split_at_mut(1);
                            let dsrc = &mut lower[p.from][b * src_len..(b + 1) * src_len];
                            layers::conv2d_backward(pg, src, &ex[ps].data, dout, &mut w[0].data, &mut bias[0].data, Some(dsrc), &mut scratch);
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Drops any cached activations.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
