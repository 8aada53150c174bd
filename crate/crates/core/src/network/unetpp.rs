//! Nested dense-skip encoder–decoder segmentation head.
//!
//! Node `X[i][j]` sits at scale level `i` (resolution halved per level) and
//! column `j`. Column 0 is the down path (`X[i][0] = block(pool(X[i-1][0]))`);
//! every later node aggregates all same-level predecessors plus the upsampled
//! node below: `X[i][j] = block([X[i][0], …, X[i][j-1], up(X[i+1][j-1])])`.
//! Scores come from a 1×1 convolution on `X[0][depth]` with no activation.

use ndarray::{Array3, NdFloat};
use serde::{Deserialize, Serialize};

use crate::nn::layers::{concat, maxpool2, maxpool2_backward, relu, relu_backward, split_channels, upsample2, upsample2_backward};
use crate::nn::{Conv2d, Grads, ParamGroup, ParamStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegHeadConfig {
    /// Number of 2× downsampling levels.
    pub depth: usize,
    /// Channels at full resolution; doubled per level.
    pub base_channels: usize,
    /// 3×3 convolution + rectifier pairs per node.
    pub convs_per_node: usize,
}

impl Default for SegHeadConfig {
    fn default() -> Self {
        Self { depth: 2, base_channels: 32, convs_per_node: 2 }
    }
}

#[derive(Clone, Debug)]
struct Node {
    convs: Vec<Conv2d>,
}

#[derive(Clone, Debug)]
struct NodeTrace<T> {
    /// `acts[0]` is the node input, `acts[k + 1]` the rectified output of conv `k`.
    acts: Vec<Array3<T>>,
}

impl<T> NodeTrace<T> {
    fn output(&self) -> &Array3<T> {
        self.acts.last().expect("node has output")
    }
}

impl Node {
    fn forward_trace<T: NdFloat>(&self, ps: &ParamStore<T>, x: Array3<T>) -> NodeTrace<T> {
        let mut acts = Vec::with_capacity(self.convs.len() + 1);
        acts.push(x);
        for conv in &self.convs {
            let y = relu(&conv.forward(ps, acts.last().unwrap().view()));
            acts.push(y);
        }
        NodeTrace { acts }
    }

    fn backward<T: NdFloat>(&self, ps: &ParamStore<T>, tr: &NodeTrace<T>, dy: Array3<T>, grads: &mut Grads<T>) -> Array3<T> {
        let mut d = dy;
        for (k, conv) in self.convs.iter().enumerate().rev() {
            d = relu_backward(&tr.acts[k + 1], &d);
            d = conv.backward(ps, tr.acts[k].view(), d.view(), grads, true).expect("dx requested");
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct NestedUNet {
    depth: usize,
    channels: Vec<usize>,
    /// `nodes[i][j]`, `i + j <= depth`.
    nodes: Vec<Vec<Node>>,
    score: Conv2d,
}

pub struct HeadTrace<T> {
    nodes: Vec<Vec<NodeTrace<T>>>,
    pool_args: Vec<Vec<u32>>,
}

impl NestedUNet {
    pub fn new<T: NdFloat>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        cfg: &SegHeadConfig,
        in_ch: usize,
        n_classes: usize,
    ) -> Self {
        let depth = cfg.depth;
        let channels: Vec<usize> = (0..=depth).map(|i| cfg.base_channels << i).collect();
        let mut nodes: Vec<Vec<Node>> = (0..=depth).map(|_| Vec::new()).collect();
        // allocate in forward order so parameter layout follows execution
        for j in 0..=depth {
            for i in 0..=depth - j {
                let node_in = match (i, j) {
                    (0, 0) => in_ch,
                    (_, 0) => channels[i - 1],
                    _ => j * channels[i] + channels[i + 1],
                };
                let mut convs = Vec::with_capacity(cfg.convs_per_node);
                for k in 0..cfg.convs_per_node {
                    let cin = if k == 0 { node_in } else { channels[i] };
                    convs.push(Conv2d::new(ps, &format!("{prefix}.x{i}{j}.conv{k}"), group, cin, channels[i], 3));
                }
                nodes[i].push(Node { convs });
            }
        }
        let score = Conv2d::new(ps, &format!("{prefix}.score"), group, channels[0], n_classes, 1);
        Self { depth, channels, nodes, score }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> Array3<T> {
        self.forward_trace(ps, x).0
    }

    pub fn forward_trace<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> (Array3<T>, HeadTrace<T>) {
        let d = self.depth;
        let mut traces: Vec<Vec<NodeTrace<T>>> = (0..=d).map(|_| Vec::new()).collect();
        let mut pool_args = Vec::with_capacity(d);
        for j in 0..=d {
            for i in 0..=d - j {
                let input = if j == 0 {
                    if i == 0 {
                        x.clone()
                    } else {
                        let (p, arg) = maxpool2(traces[i - 1][0].output());
                        pool_args.push(arg);
                        p
                    }
                } else {
                    let up = upsample2(traces[i + 1][j - 1].output());
                    let mut parts: Vec<&Array3<T>> = traces[i][..j].iter().map(|t| t.output()).collect();
                    parts.push(&up);
                    concat(&parts)
                };
                let tr = self.nodes[i][j].forward_trace(ps, input);
                traces[i].push(tr);
            }
        }
        let y = self.score.forward(ps, traces[0][d].output().view());
        (y, HeadTrace { nodes: traces, pool_args })
    }

    /// Gradient with respect to the head input.
    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        x_shape: (usize, usize, usize),
        tr: &HeadTrace<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
    ) -> Array3<T> {
        let d = self.depth;
        let mut dnode: Vec<Vec<Option<Array3<T>>>> = (0..=d).map(|i| vec![None; d + 1 - i]).collect();
        let top = tr.nodes[0][d].output();
        dnode[0][d] = self.score.backward(ps, top.view(), dy.view(), grads, true);
        let mut dx = Array3::zeros(x_shape);

        fn add_into<T: NdFloat>(slot: &mut Option<Array3<T>>, g: Array3<T>) {
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }

        for j in (0..=d).rev() {
            for i in (0..=d - j).rev() {
                let Some(g) = dnode[i][j].take() else { continue };
                let din = self.nodes[i][j].backward(ps, &tr.nodes[i][j], g, grads);
                if j == 0 {
                    if i == 0 {
                        dx = din;
                    } else {
                        let src = tr.nodes[i - 1][0].output();
                        let back = maxpool2_backward(&din, &tr.pool_args[i - 1], src.dim());
                        add_into(&mut dnode[i - 1][0], back);
                    }
                } else {
                    let mut sizes = vec![self.channels[i]; j];
                    sizes.push(self.channels[i + 1]);
                    let mut parts = split_channels(&din, &sizes);
                    let up = parts.pop().expect("upsampled part");
                    add_into(&mut dnode[i + 1][j - 1], upsample2_backward(&up));
                    for (k, part) in parts.into_iter().enumerate() {
                        add_into(&mut dnode[i][k], part);
                    }
                }
            }
        }
        dx
    }
}
