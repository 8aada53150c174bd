//! End-to-end encoder–decoder.
//!
//! ```text
//! scene (H×W) ─encode─▶ N measurements ─expand─▶ 1×(H/2)×(W/2)
//!   ─feature_extract─▶ 1×H×W ─segment_head─▶ C×H×W class scores
//! ```
//!
//! The encoder is a bank of full-frame filters, so encoding is exactly the
//! single-pixel forward model and the trained filters are the illumination
//! patterns. Everything after `encode` only ever sees the measurement vector.

mod fsrcnn;
mod unetpp;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Ix2, NdFloat};
use serde::{Deserialize, Serialize};

use crate::nn::{Grads, Linear, ParamGroup, ParamId, ParamRole, ParamStore};
use crate::sensing::{MeasurementDomain, MeasurementVector, SceneImage};
use crate::{Error, Result};

pub use fsrcnn::{FeatureExtractor, FeatureTrace, FsrcnnConfig};
pub use unetpp::{HeadTrace, NestedUNet, SegHeadConfig};

pub fn wbc_class_names() -> Vec<String> {
    ["background", "cytoplasm", "nucleus"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_measurements: usize,
    pub scene_dims: (usize, usize),
    pub fc_width: usize,
    pub fsrcnn: FsrcnnConfig,
    pub seg_head: SegHeadConfig,
    pub n_classes: usize,
    pub class_names: Vec<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::wbc(40)
    }
}

impl NetworkConfig {
    /// 64×64 scenes, three WBC classes, `n_measurements` patterns.
    pub fn wbc(n_measurements: usize) -> Self {
        Self {
            n_measurements,
            scene_dims: (64, 64),
            fc_width: 32 * 32,
            fsrcnn: FsrcnnConfig::default(),
            seg_head: SegHeadConfig::default(),
            n_classes: 3,
            class_names: wbc_class_names(),
        }
    }

    /// Scaled-down configuration used by gradient checks: 8×8 scenes,
    /// 4 measurements, 2 classes, channel widths divided by 8.
    pub fn miniature() -> Self {
        Self {
            n_measurements: 4,
            scene_dims: (8, 8),
            fc_width: 16,
            fsrcnn: FsrcnnConfig { d: 7, s: 2, m: 4, kernel_sizes: [5, 1, 3, 1, 9] },
            seg_head: SegHeadConfig { depth: 2, base_channels: 4, convs_per_node: 2 },
            n_classes: 2,
            class_names: vec!["background".into(), "foreground".into()],
        }
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        (self.scene_dims.0 / 2, self.scene_dims.1 / 2)
    }

    /// Number of scalar parameters the configuration builds.
    pub fn param_count(&self) -> u64 {
        let conv = |cin: usize, cout: usize, k: usize| (cin as u64) * (cout as u64) * (k as u64).pow(2) + cout as u64;
        let (h, w) = self.scene_dims;
        let n = self.n_measurements as u64;
        let f = &self.fsrcnn;
        let [k0, k1, k2, k3, k4] = f.kernel_sizes;
        let mut total = n * (h * w) as u64 + n * self.fc_width as u64 + self.fc_width as u64;
        total += conv(1, f.d, k0) + f.d as u64;
        total += conv(f.d, f.s, k1) + f.s as u64;
        total += f.m as u64 * (conv(f.s, f.s, k2) + f.s as u64);
        total += conv(f.s, f.d, k3) + f.d as u64;
        total += conv(f.d, 1, k4);
        let hd = &self.seg_head;
        let ch: Vec<usize> = (0..=hd.depth).map(|i| hd.base_channels << i).collect();
        for j in 0..=hd.depth {
            for i in 0..=hd.depth - j {
                let node_in = match (i, j) {
                    (0, 0) => 1,
                    (_, 0) => ch[i - 1],
                    _ => j * ch[i] + ch[i + 1],
                };
                total += conv(node_in, ch[i], 3);
                total += (hd.convs_per_node as u64 - 1) * conv(ch[i], ch[i], 3);
            }
        }
        total + conv(ch[0], self.n_classes, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.scene_dims;
        if self.n_measurements == 0 {
            return Err(Error::Config("n_measurements must be at least 1".into()));
        }
        if h > 4096 || w > 4096 || self.n_measurements > h * w {
            return Err(Error::Config(format!(
                "{} measurements on a {h}×{w} scene is outside the supported range",
                self.n_measurements
            )));
        }
        let f = &self.fsrcnn;
        let hd = &self.seg_head;
        if f.d == 0 || f.s == 0 || f.d > 4096 || f.s > 4096 || f.m > 64 || f.kernel_sizes.iter().any(|&k| k > 31) {
            return Err(Error::Config("feature block sizes out of range".into()));
        }
        if hd.depth > 8 || hd.base_channels > 4096 || hd.convs_per_node > 16 || self.n_classes > 256 {
            return Err(Error::Config("segmentation head sizes out of range".into()));
        }
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("scene dims {h}×{w} must be even and non-zero")));
        }
        let (fh, fw) = self.feature_dims();
        if self.fc_width != fh * fw {
            return Err(Error::Config(format!(
                "fc_width {} must equal the {fh}×{fw} feature map",
                self.fc_width
            )));
        }
        let levels = 1usize << self.seg_head.depth;
        if h % levels != 0 || w % levels != 0 {
            return Err(Error::Config(format!("scene dims not divisible by 2^{}", self.seg_head.depth)));
        }
        if self.n_classes < 2 || self.class_names.len() != self.n_classes {
            return Err(Error::Config("need at least two classes with one name each".into()));
        }
        if self.fsrcnn.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.seg_head.base_channels == 0 || self.seg_head.convs_per_node == 0 {
            return Err(Error::Config("segmentation head needs channels and convolutions".into()));
        }
        Ok(())
    }
}

/// Learnable full-frame encoder filters, `N × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    filters: Array3<T>,
}

impl<T: NdFloat> EncoderWeights<T> {
    pub fn new(filters: Array3<T>) -> Result<Self> {
        if filters.dim().0 == 0 {
            return Err(Error::Shape("encoder needs at least one filter".into()));
        }
        Ok(Self { filters })
    }

    pub fn filters(&self) -> ArrayView3<'_, T> {
        self.filters.view()
    }

    pub fn len(&self) -> usize {
        self.filters.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-index affine normalization applied to measurements before the
/// expansion layer: `(m_i - mean_i) / std_i`. Fixed (not trained); for fixed
/// pattern banks it holds the training-set measurement statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MeasurementNorm {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Sample statistics per index; tiny deviations are floored to 1.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.first().map(Vec::len).ok_or_else(|| Error::Domain("no samples".into()))?;
        let count = samples.len() as f64;
        let mut mean = vec![0.0; n];
        for s in samples {
            if s.len() != n {
                return Err(Error::Shape("measurement lengths differ".into()));
            }
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / count);
        }
        let mut var = vec![0.0; n];
        for s in samples {
            var.iter_mut().zip(s).zip(&mean).for_each(|((acc, v), m)| *acc += (v - m).powi(2) / count);
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub values: Array3<T>,
}

impl<T> FeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationLogits {
    pub scores: Array3<f64>,
    pub class_names: Vec<String>,
}

impl SegmentationLogits {
    /// Per-pixel argmax; exact ties resolve to the lowest class index.
    pub fn argmax(&self) -> SegmentationMap {
        argmax_map(self.scores.view())
    }
}

pub fn argmax_map<T: NdFloat>(scores: ArrayView3<'_, T>) -> SegmentationMap {
    let (c, h, w) = scores.dim();
    let labels = Array2::from_shape_fn((h, w), |(r, col)| {
        let mut best = 0usize;
        for k in 1..c {
            if scores[[k, r, col]] > scores[[best, r, col]] {
                best = k;
            }
        }
        best as u8
    });
    SegmentationMap { labels, n_classes: c }
}

/// Per-pixel class labels in `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub labels: Array2<u8>,
    pub n_classes: usize,
}

impl SegmentationMap {
    pub fn new(labels: Array2<u8>, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Domain(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }
}

/// How far a training forward pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardDepth {
    /// Stop at the 1×H×W feature map (stage-1 objective).
    FeatureMap,
    /// Run through the segmentation head.
    Scores,
}

/// Activations of one training forward pass.
pub struct Trace<T> {
    scene: Array1<T>,
    normalized: Array1<T>,
    fe_trace: FeatureTrace<T>,
    pub feature_map: Array3<T>,
    head: Option<HeadTrace<T>>,
    pub scores: Option<Array3<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    params: ParamStore<T>,
    encoder: ParamId,
    expansion: Linear,
    features: FeatureExtractor,
    head: NestedUNet,
    input_norm: MeasurementNorm,
}

impl<T: NdFloat> Network<T> {
    /// Builds the network with freshly initialized weights.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::uninitialized(config)?;
        net.params.initialize(seed);
        Ok(net)
    }

    /// Builds the layer graph with zero weights (for checkpoint loading).
    pub fn uninitialized(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let (h, w) = config.scene_dims;
        let encoder = ps.add(
            "encoder.filters",
            ParamGroup::Encoder,
            ParamRole::Weight { fan_in: h * w },
            &[config.n_measurements, h, w],
        );
        let expansion = Linear::new(&mut ps, "expansion", ParamGroup::Expansion, config.n_measurements, config.fc_width);
        let features = FeatureExtractor::new(&mut ps, &config.fsrcnn, config.scene_dims);
        if features.input_size() != config.feature_dims() {
            return Err(Error::Config(format!(
                "deconvolution maps {:?} to {:?}, expected input {:?}",
                features.input_size(),
                config.scene_dims,
                config.feature_dims()
            )));
        }
        let head = NestedUNet::new(&mut ps, "head", ParamGroup::SegmentationHead, &config.seg_head, 1, config.n_classes);
        let input_norm = MeasurementNorm::identity(config.n_measurements);
        Ok(Self { config, params: ps, encoder, expansion, features, head, input_norm })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn head(&self) -> &NestedUNet {
        &self.head
    }

    pub fn input_norm(&self) -> &MeasurementNorm {
        &self.input_norm
    }

    pub fn set_input_norm(&mut self, norm: MeasurementNorm) -> Result<()> {
        if norm.len() != self.config.n_measurements {
            return Err(Error::Shape(format!(
                "normalization has {} entries, network expects {}",
                norm.len(),
                self.config.n_measurements
            )));
        }
        self.input_norm = norm;
        Ok(())
    }

    /// Switches to new measurement statistics while compensating in the
    /// expansion layer so the decoder computes the same function.
    pub fn fold_input_norm(&mut self, norm: MeasurementNorm) -> Result<()> {
        if norm.len() != self.config.n_measurements {
            return Err(Error::Shape("normalization length mismatch".into()));
        }
        let old = self.input_norm.clone();
        let n = self.config.n_measurements;
        let w: Array2<f64> = self.expansion.weight_matrix(&self.params).mapv(|v| v.to_f64().unwrap());
        let b: Vec<f64> = self.params.get(self.expansion.bias).iter().map(|v| v.to_f64().unwrap()).collect();
        let ratio: Vec<f64> = (0..n).map(|i| norm.std[i] / old.std[i]).collect();
        let shift: Vec<f64> = (0..n).map(|i| (norm.mean[i] - old.mean[i]) / old.std[i]).collect();
        let new_w = Array2::from_shape_fn(w.dim(), |(o, i)| w[[o, i]] * ratio[i]);
        let new_b: Vec<f64> = (0..w.nrows())
            .map(|o| b[o] + (0..n).map(|i| w[[o, i]] * shift[i]).sum::<f64>())
            .collect();
        self.params
            .get_mut(self.expansion.weight)
            .iter_mut()
            .zip(new_w.iter())
            .for_each(|(d, s)| *d = T::from(*s).unwrap());
        self.params
            .get_mut(self.expansion.bias)
            .iter_mut()
            .zip(new_b)
            .for_each(|(d, s)| *d = T::from(s).unwrap());
        self.input_norm = norm;
        Ok(())
    }

    pub fn encoder_weights(&self) -> EncoderWeights<T> {
        let f = self.params.get(self.encoder).view().into_dimensionality().expect("3-D encoder");
        EncoderWeights { filters: f.to_owned() }
    }

    pub fn set_encoder_weights(&mut self, w: &EncoderWeights<T>) -> Result<()> {
        let target = self.params.get_mut(self.encoder);
        if target.shape() != w.filters.shape() {
            return Err(Error::Shape(format!(
                "encoder filters {:?} do not match network {:?}",
                w.filters.shape(),
                target.shape()
            )));
        }
        target.assign(&w.filters.view().into_dyn());
        Ok(())
    }

    /// Same network at another precision.
    pub fn cast<U: NdFloat>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder,
            expansion: self.expansion.clone(),
            features: self.features.clone(),
            head: self.head.clone(),
            input_norm: self.input_norm.clone(),
        }
    }

    fn encoder_matrix(&self) -> ArrayView2<'_, T> {
        let (h, w) = self.config.scene_dims;
        self.params
            .get(self.encoder)
            .view()
            .into_shape_with_order((self.config.n_measurements, h * w))
            .expect("contiguous encoder")
    }

    fn flatten_scene(&self, scene: ArrayView2<'_, f64>) -> Result<Array1<T>> {
        if scene.dim() != self.config.scene_dims {
            return Err(Error::Shape(format!(
                "scene dims {:?} do not match network {:?}",
                scene.dim(),
                self.config.scene_dims
            )));
        }
        Ok(scene.iter().map(|&v| T::from(v).unwrap()).collect())
    }

    /// Differentiable forward model: one inner product per encoder filter.
    pub fn encode(&self, scene: &SceneImage) -> Result<MeasurementVector> {
        let x = self.flatten_scene(scene.pixels())?;
        let m = self.encoder_matrix().dot(&x);
        Ok(MeasurementVector::raw(m.iter().map(|v| v.to_f64().unwrap()).collect()))
    }

    fn normalized_input(&self, m: &MeasurementVector) -> Result<Array1<T>> {
        if m.len() != self.config.n_measurements {
            return Err(Error::Shape(format!(
                "expected {} measurements, got {}",
                self.config.n_measurements,
                m.len()
            )));
        }
        if let Some(bad) = m.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite measurement {bad}")));
        }
        let values = match m.domain {
            MeasurementDomain::Raw => self.input_norm.apply(&m.values),
            MeasurementDomain::Standardized => m.values.clone(),
        };
        Ok(values.into_iter().map(|v| T::from(v).unwrap()).collect())
    }

    fn expand_array(&self, normalized: &Array1<T>) -> Array3<T> {
        let (fh, fw) = self.config.feature_dims();
        self.expansion
            .forward(&self.params, normalized)
            .into_shape_with_order((1, fh, fw))
            .expect("fc width matches feature map")
    }

    /// Affine map of the measurements to the `1 × H/2 × W/2` feature map;
    /// unit `fw·r + k` lands at `(0, r, k)`.
    pub fn expand(&self, m: &MeasurementVector) -> Result<FeatureMap<T>> {
        Ok(FeatureMap { values: self.expand_array(&self.normalized_input(m)?) })
    }

    pub fn feature_extract(&self, f: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let (fh, fw) = self.config.feature_dims();
        if f.values.dim() != (1, fh, fw) {
            return Err(Error::Shape(format!("feature block expects 1×{fh}×{fw}, got {:?}", f.values.dim())));
        }
        Ok(FeatureMap { values: self.features.forward(&self.params, &f.values) })
    }

    pub fn segment_head(&self, f: &FeatureMap<T>) -> Result<SegmentationLogits> {
        let (h, w) = self.config.scene_dims;
        if f.values.dim() != (1, h, w) {
            return Err(Error::Shape(format!("segmentation head expects 1×{h}×{w}, got {:?}", f.values.dim())));
        }
        let scores = self.head.forward(&self.params, &f.values);
        Ok(SegmentationLogits {
            scores: scores.mapv(|v| v.to_f64().unwrap()),
            class_names: self.config.class_names.clone(),
        })
    }

    pub fn forward(&self, scene: &SceneImage) -> Result<SegmentationLogits> {
        let m = self.encode(scene)?;
        self.segment_head(&self.feature_extract(&self.expand(&m)?)?)
    }

    /// Deployment path: measurements straight to a label map.
    pub fn infer_from_measurements(&self, m: &MeasurementVector) -> Result<SegmentationMap> {
        let logits = self.segment_head(&self.feature_extract(&self.expand(m)?)?)?;
        Ok(logits.argmax())
    }

    /// Training forward pass on a raw scene array (values need not be
    /// clamped), keeping activations for [`Network::backward`].
    pub fn forward_trace(&self, scene: ArrayView2<'_, f64>, depth: ForwardDepth) -> Result<Trace<T>> {
        let x = self.flatten_scene(scene)?;
        let raw = self.encoder_matrix().dot(&x);
        let normalized: Array1<T> = raw
            .iter()
            .zip(self.input_norm.mean.iter().zip(&self.input_norm.std))
            .map(|(&v, (&m, &s))| (v - T::from(m).unwrap()) / T::from(s).unwrap())
            .collect();
        self.trace_from_normalized(x, normalized, depth)
    }

    fn trace_from_normalized(&self, scene: Array1<T>, normalized: Array1<T>, depth: ForwardDepth) -> Result<Trace<T>> {
        let fe_in = self.expand_array(&normalized);
        let (feature_map, fe_trace) = self.features.forward_trace(&self.params, &fe_in);
        let (scores, head) = match depth {
            ForwardDepth::FeatureMap => (None, None),
            ForwardDepth::Scores => {
                let (s, t) = self.head.forward_trace(&self.params, &feature_map);
                (Some(s), Some(t))
            }
        };
        Ok(Trace { scene, normalized, fe_trace, feature_map, head, scores })
    }

    /// Accumulates parameter gradients for upstream gradients on the feature
    /// map and/or the scores. Encoder gradients are skipped unless
    /// `encoder_grad`, which is how fixed pattern banks are trained.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        d_feature_map: Option<&Array3<T>>,
        d_scores: Option<&Array3<T>>,
        grads: &mut Grads<T>,
        encoder_grad: bool,
    ) {
        let mut d_fm = match d_feature_map {
            Some(d) => d.clone(),
            None => Array3::zeros(trace.feature_map.raw_dim()),
        };
        if let (Some(ds), Some(head_tr)) = (d_scores, trace.head.as_ref()) {
            let dh = self.head.backward(&self.params, trace.feature_map.dim(), head_tr, ds, grads);
            d_fm += &dh;
        }
        let d_fe_in = self.features.backward(&self.params, &trace.fe_trace, &d_fm, grads);
        let d_fc_out: Array1<T> = d_fe_in.iter().copied().collect();
        let d_norm = self
            .expansion
            .backward(&self.params, &trace.normalized, &d_fc_out, grads, encoder_grad);
        if let Some(d_norm) = d_norm {
            let d_raw: Array1<T> = d_norm
                .iter()
                .zip(&self.input_norm.std)
                .map(|(&g, &s)| g / T::from(s).unwrap())
                .collect();
            let ge = grads.get_mut(self.encoder);
            let mut ge2 = ge
                .view_mut()
                .into_shape_with_order((self.config.n_measurements, trace.scene.len()))
                .expect("contiguous grad");
            let outer = d_raw.view().insert_axis(Axis(1));
            let row = trace.scene.view().insert_axis(Axis(0));
            ndarray::linalg::general_mat_mul(T::one(), &outer, &row, T::one(), &mut ge2);
        }
    }

    pub fn expansion_weight(&self) -> ArrayView2<'_, T> {
        self.params.get(self.expansion.weight).view().into_dimensionality::<Ix2>().expect("2-D")
    }
}

/// Mean-square error and its gradient.
pub fn mse<T: NdFloat>(pred: &Array3<T>, target: &Array3<T>) -> (f64, Array3<T>) {
    let n = T::from(pred.len()).unwrap();
    let diff = pred - target;
    let loss = diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>() / pred.len() as f64;
    let two = T::from(2.0).unwrap();
    (loss, diff.mapv(|d| two * d / n))
}

/// One-hot `C × H × W` target for a label map.
pub fn one_hot<T: NdFloat>(labels: &Array2<u8>, n_classes: usize) -> Array3<T> {
    let (h, w) = labels.dim();
    Array3::from_shape_fn((n_classes, h, w), |(c, r, k)| if labels[[r, k]] as usize == c { T::one() } else { T::zero() })
}

#[cfg(test)]
mod tests;
