//! FSRCNN-style feature block: extraction, shrinking, mapping, expanding and
//! a strided transposed convolution that doubles the spatial size.

use ndarray::{Array3, NdFloat};
use serde::{Deserialize, Serialize};

use crate::nn::{Conv2d, ConvTranspose2d, Grads, PRelu, ParamGroup, ParamStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsrcnnConfig {
    /// Feature dimension after extraction and expansion.
    pub d: usize,
    /// Shrunk dimension used by the mapping layers.
    pub s: usize,
    /// Number of mapping layers.
    pub m: usize,
    /// Kernel sizes: extraction, shrink, mapping, expand, deconvolution.
    pub kernel_sizes: [usize; 5],
}

impl Default for FsrcnnConfig {
    fn default() -> Self {
        Self { d: 56, s: 12, m: 4, kernel_sizes: [5, 1, 3, 1, 9] }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    stages: Vec<(Conv2d, PRelu)>,
    deconv: ConvTranspose2d,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FeatureTrace<T> {
    /// Input of each convolution (the last entry feeds the deconvolution).
    inputs: Vec<Array3<T>>,
    /// Pre-activation output of each convolution.
    pre: Vec<Array3<T>>,
}

impl FeatureExtractor {
    pub fn new<T: NdFloat>(ps: &mut ParamStore<T>, cfg: &FsrcnnConfig, out_size: (usize, usize)) -> Self {
        let g = ParamGroup::FeatureExtraction;
        let [k_ext, k_shrink, k_map, k_expand, k_deconv] = cfg.kernel_sizes;
        let mut stages = Vec::with_capacity(cfg.m + 3);
        stages.push((Conv2d::new(ps, "fe.extract", g, 1, cfg.d, k_ext), PRelu::new(ps, "fe.extract.act", g, cfg.d)));
        stages.push((Conv2d::new(ps, "fe.shrink", g, cfg.d, cfg.s, k_shrink), PRelu::new(ps, "fe.shrink.act", g, cfg.s)));
        for i in 0..cfg.m {
            stages.push((
                Conv2d::new(ps, &format!("fe.map{i}"), g, cfg.s, cfg.s, k_map),
                PRelu::new(ps, &format!("fe.map{i}.act"), g, cfg.s),
            ));
        }
        stages.push((Conv2d::new(ps, "fe.expand", g, cfg.s, cfg.d, k_expand), PRelu::new(ps, "fe.expand.act", g, cfg.d)));
        // stride 2 with padding k/2 maps n -> 2n when output_padding fills the last row
        let deconv = ConvTranspose2d::new(ps, "fe.deconv", g, cfg.d, 1, k_deconv, 2, k_deconv / 2, out_size);
        Self { stages, deconv }
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.deconv.in_size()
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> Array3<T> {
        let mut h = x.clone();
        for (conv, act) in &self.stages {
            h = act.forward(ps, &conv.forward(ps, h.view()));
        }
        self.deconv.forward(ps, h.view())
    }

    pub fn forward_trace<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> (Array3<T>, FeatureTrace<T>) {
        let mut inputs = Vec::with_capacity(self.stages.len() + 1);
        let mut pre = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (conv, act) in &self.stages {
            let z = conv.forward(ps, h.view());
            let a = act.forward(ps, &z);
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(z);
        }
        let y = self.deconv.forward(ps, h.view());
        inputs.push(h);
        (y, FeatureTrace { inputs, pre })
    }

    /// Returns the gradient with respect to the block input.
    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        trace: &FeatureTrace<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
    ) -> Array3<T> {
        let last = trace.inputs.last().expect("trace has deconv input");
        let mut d = self.deconv.backward(ps, last.view(), dy.view(), grads, true).expect("dx requested");
        for (i, (conv, act)) in self.stages.iter().enumerate().rev() {
            d = act.backward(ps, &trace.pre[i], &d, grads);
            d = conv.backward(ps, trace.inputs[i].view(), d.view(), grads, true).expect("dx requested");
        }
        d
    }
}
