//! Minimal reverse-mode autodiff over flat `f32` buffers.
//!
//! Each training step builds a fresh `Tape` (Wengert list). Nodes hold their
//! forward value; `backward` walks the list in reverse and accumulates
//! gradients. Reductions accumulate in f64 so logged losses and gradient
//! checks are stable. Everything is single-threaded and deterministic.

use super::stft;
use super::store::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tid(pub usize);

pub(crate) enum Op {
    Leaf,
    Add(Tid, Tid),
    Sub(Tid, Tid),
    Mul(Tid, Tid),
    Scale(Tid, f32),
    AddN(Vec<Tid>),
    /// [B,C,T] + bias[C]
    BiasChannels { x: Tid, b: Tid },
    /// [..,D] + bias[D]
    BiasLast { x: Tid, b: Tid },
    /// x viewed as [M,K] times w [K,N]
    Linear { x: Tid, w: Tid },
    /// a [G,M,K] x b [G,K,N] (or b [G,N,K] when trans_b)
    Bmm { a: Tid, b: Tid, trans_b: bool },
    Conv1d { x: Tid, w: Tid, stride: usize, pad: usize },
    ConvT1d { x: Tid, w: Tid, stride: usize, pad: usize },
    /// x + sin^2(alpha x)/alpha with per-channel alpha, x is [B,C,T]
    Snake { x: Tid, alpha: Tid },
    Elu(Tid),
    LeakyRelu(Tid, f32),
    Tanh(Tid),
    Abs(Tid),
    /// ln(x + eps)
    LogEps(Tid, f32),
    MeanAll(Tid),
    SoftmaxLast { x: Tid, row: usize },
    /// FiLM: x[B,C,T] * scale[C] + bias[C]
    ChannelAffine { x: Tid, scale: Tid, bias: Tid },
    /// LayerNorm over contiguous blocks of `block` features in the last dim.
    BlockLayerNorm { x: Tid, gamma: Tid, beta: Tid, block: usize, mean: Vec<f32>, rstd: Vec<f32> },
    /// Multiply by a constant mask broadcast over the last dimension.
    MaskLast { x: Tid, mask: Vec<f32> },
    ConcatLast { parts: Vec<Tid> },
    /// [B,T,G*dh] -> [B*G, T, dh]
    SplitGroups { x: Tid, groups: usize },
    /// inverse of SplitGroups
    MergeGroups { x: Tid, groups: usize },
    /// select one row of a [R,D] table
    GatherRow { table: Tid, row: usize },
    /// select many rows of a [R,D] table -> [N,D]
    IndexRows { table: Tid, indices: Vec<u32> },
    /// take element `index` along the first axis
    SliceFirst { x: Tid, index: usize },
    /// [B,C,T] <-> [B,T,C]
    Transpose12 { x: Tid },
    Reshape { x: Tid },
    /// magnitude STFT of [B,T] -> [B, frames, bins]; saves re/im for backward
    StftMag { x: Tid, n_fft: usize, hop: usize, re: Vec<f32>, im: Vec<f32> },
}

pub(crate) struct Node {
    pub value: Vec<f32>,
    pub shape: Vec<usize>,
    pub op: Op,
    pub needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Vec<f32>>,
    params: Vec<(String, Tid)>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Vec<f32>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Tid {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node { value, shape, op, needs_grad });
        self.grads.push(Vec::new());
        Tid(self.nodes.len() - 1)
    }

    pub fn value(&self, id: Tid) -> &[f32] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: Tid) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: Tid) -> f32 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn grad(&self, id: Tid) -> Option<&[f32]> {
        let g = &self.grads[id.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    /// Gradients of every registered parameter, by name.
    pub fn param_grads(&self) -> Vec<(String, Vec<f32>)> {
        self.params
            .iter()
            .filter_map(|(name, id)| self.grad(*id).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }

    pub fn constant(&mut self, value: Vec<f32>, shape: Vec<usize>) -> Tid {
        self.push(value, shape, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Vec<f32>, shape: Vec<usize>) -> Tid {
        self.push(value, shape, Op::Leaf, true)
    }

    /// Inject a named parameter from the store as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Tid {
        let p = store.get(name).unwrap_or_else(|| panic!("unknown param {name}"));
        let id = self.push(p.value.clone(), p.shape.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), id));
        id
    }

    /// Copy of `x`'s value that blocks gradient flow.
    pub fn detach(&mut self, x: Tid) -> Tid {
        let value = self.nodes[x.0].value.clone();
        let shape = self.nodes[x.0].shape.clone();
        self.push(value, shape, Op::Leaf, false)
    }

    fn need(&self, ids: &[Tid]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Tid {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v: Vec<f32> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.need(&[a, b]);
        self.push(v, shape, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Tid {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v: Vec<f32> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.need(&[a, b]);
        self.push(v, shape, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Tid {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v: Vec<f32> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.need(&[a, b]);
        self.push(v, shape, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Tid, c: f32) -> Tid {
        let v: Vec<f32> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.need(&[a]);
        self.push(v, shape, Op::Scale(a, c), ng)
    }

    pub fn add_n(&mut self, parts: &[Tid]) -> Tid {
        assert!(!parts.is_empty());
        let shape = self.nodes[parts[0].0].shape.clone();
        let mut v = vec![0.0f32; numel(&shape)];
        for &p in parts {
            assert_eq!(self.shape(p), &shape[..], "add_n shape mismatch");
            for (slot, x) in v.iter_mut().zip(self.value(p)) {
                *slot += x;
            }
        }
        let ng = self.need(parts);
        self.push(v, shape, Op::AddN(parts.to_vec()), ng)
    }

    pub fn bias_channels(&mut self, x: Tid, b: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (bs, c, t) = (shape[0], shape[1], shape[2]);
        assert_eq!(self.shape(b), &[c], "bias_channels width mismatch");
        let mut v = self.value(x).to_vec();
        let bias = self.value(b).to_vec();
        for bi in 0..bs {
            for ci in 0..c {
                let base = (bi * c + ci) * t;
                let add = bias[ci];
                for slot in &mut v[base..base + t] {
                    *slot += add;
                }
            }
        }
        let ng = self.need(&[x, b]);
        self.push(v, shape, Op::BiasChannels { x, b }, ng)
    }

    pub fn bias_last(&mut self, x: Tid, b: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().expect("bias_last on scalar");
        assert_eq!(self.shape(b), &[d], "bias_last width mismatch");
        let mut v = self.value(x).to_vec();
        let bias = self.value(b).to_vec();
        for (i, slot) in v.iter_mut().enumerate() {
            *slot += bias[i % d];
        }
        let ng = self.need(&[x, b]);
        self.push(v, shape, Op::BiasLast { x, b }, ng)
    }

    pub fn linear(&mut self, x: Tid, w: Tid) -> Tid {
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(ws.len(), 2, "weights must be [K,N]");
        let (k, n) = (ws[0], ws[1]);
        let xs = self.nodes[x.0].shape.clone();
        let m = numel(&xs) / k;
        assert_eq!(m * k, numel(&xs), "linear input not divisible by K");
        let mut v = vec![0.0f32; m * n];
        matmul(self.value(x), self.value(w), m, k, n, &mut v);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = n;
        let ng = self.need(&[x, w]);
        self.push(v, out_shape, Op::Linear { x, w }, ng)
    }

    pub fn bmm(&mut self, a: Tid, b: Tid, trans_b: bool) -> Tid {
        let asx = self.nodes[a.0].shape.clone();
        let bsx = self.nodes[b.0].shape.clone();
        assert_eq!(asx.len(), 3);
        assert_eq!(bsx.len(), 3);
        let (g, m, k) = (asx[0], asx[1], asx[2]);
        assert_eq!(bsx[0], g, "bmm group mismatch");
        let n = if trans_b {
            assert_eq!(bsx[2], k, "bmm inner mismatch");
            bsx[1]
        } else {
            assert_eq!(bsx[1], k, "bmm inner mismatch");
            bsx[2]
        };
        let mut v = vec![0.0f32; g * m * n];
        for gi in 0..g {
            let av = &self.value(a)[gi * m * k..(gi + 1) * m * k];
            let bv = &self.value(b)[gi * bsx[1] * bsx[2]..(gi + 1) * bsx[1] * bsx[2]];
            let out = &mut v[gi * m * n..(gi + 1) * m * n];
            if trans_b {
                matmul_nt(av, bv, m, k, n, out);
            } else {
                matmul(av, bv, m, k, n, out);
            }
        }
        let ng = self.need(&[a, b]);
        self.push(v, vec![g, m, n], Op::Bmm { a, b, trans_b }, ng)
    }

    pub fn conv1d(&mut self, x: Tid, w: Tid, stride: usize, pad: usize) -> Tid {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(xs.len(), 3, "conv1d input must be [B,Cin,T]");
        assert_eq!(ws.len(), 3, "conv1d weight must be [Cout,Cin,K]");
        let (b, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        assert!(t + 2 * pad >= k, "conv1d input shorter than kernel");
        let t_out = (t + 2 * pad - k) / stride + 1;
        let mut v = vec![0.0f32; b * cout * t_out];
        conv1d_fwd(
            self.value(x),
            self.value(w),
            &mut v,
            b,
            cin,
            t,
            cout,
            k,
            stride,
            pad,
            t_out,
        );
        let ng = self.need(&[x, w]);
        self.push(v, vec![b, cout, t_out], Op::Conv1d { x, w, stride, pad }, ng)
    }

    pub fn conv_transpose1d(&mut self, x: Tid, w: Tid, stride: usize, pad: usize) -> Tid {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(xs.len(), 3, "conv_transpose1d input must be [B,Cin,T]");
        assert_eq!(ws.len(), 3, "conv_transpose1d weight must be [Cin,Cout,K]");
        let (b, cin, t) = (xs[0], xs[1], xs[2]);
        let (wcin, cout, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, wcin, "conv_transpose1d channel mismatch");
        let t_out = (t - 1) * stride + k - 2 * pad;
        let mut v = vec![0.0f32; b * cout * t_out];
        convt1d_fwd(
            self.value(x),
            self.value(w),
            &mut v,
            b,
            cin,
            t,
            cout,
            k,
            stride,
            pad,
            t_out,
        );
        let ng = self.need(&[x, w]);
        self.push(v, vec![b, cout, t_out], Op::ConvT1d { x, w, stride, pad }, ng)
    }

    pub fn snake(&mut self, x: Tid, alpha: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        assert_eq!(self.shape(alpha), &[c], "snake alpha width mismatch");
        let al = self.value(alpha).to_vec();
        let mut v = self.value(x).to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let a = guard_alpha(al[ci]);
                let base = (bi * c + ci) * t;
                for slot in &mut v[base..base + t] {
                    let s = (a * *slot).sin();
                    *slot += s * s / a;
                }
            }
        }
        let ng = self.need(&[x, alpha]);
        self.push(v, shape, Op::Snake { x, alpha }, ng)
    }

    pub fn elu(&mut self, x: Tid) -> Tid {
        let v: Vec<f32> = self
            .value(x)
            .iter()
            .map(|&t| if t > 0.0 { t } else { t.exp() - 1.0 })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::Elu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Tid, slope: f32) -> Tid {
        let v: Vec<f32> = self
            .value(x)
            .iter()
            .map(|&t| if t > 0.0 { t } else { slope * t })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::LeakyRelu(x, slope), ng)
    }

    pub fn tanh(&mut self, x: Tid) -> Tid {
        let v: Vec<f32> = self.value(x).iter().map(|&t| t.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::Tanh(x), ng)
    }

    pub fn abs(&mut self, x: Tid) -> Tid {
        let v: Vec<f32> = self.value(x).iter().map(|&t| t.abs()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::Abs(x), ng)
    }

    pub fn log_eps(&mut self, x: Tid, eps: f32) -> Tid {
        let v: Vec<f32> = self.value(x).iter().map(|&t| (t + eps).ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::LogEps(x, eps), ng)
    }

    pub fn mean_all(&mut self, x: Tid) -> Tid {
        let sum: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let v = vec![(sum / self.value(x).len() as f64) as f32];
        let ng = self.need(&[x]);
        self.push(v, vec![1], Op::MeanAll(x), ng)
    }

    pub fn softmax_last(&mut self, x: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        let row = *shape.last().expect("softmax on scalar");
        let mut v = self.value(x).to_vec();
        for chunk in v.chunks_exact_mut(row) {
            let max = chunk.iter().fold(f32::NEG_INFINITY, |m, &t| m.max(t));
            let mut sum = 0.0f64;
            for slot in chunk.iter_mut() {
                *slot = (*slot - max).exp();
                sum += *slot as f64;
            }
            let inv = (1.0 / sum) as f32;
            for slot in chunk.iter_mut() {
                *slot *= inv;
            }
        }
        let ng = self.need(&[x]);
        self.push(v, shape, Op::SoftmaxLast { x, row }, ng)
    }

    pub fn channel_affine(&mut self, x: Tid, scale: Tid, bias: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        assert_eq!(self.shape(scale), &[c]);
        assert_eq!(self.shape(bias), &[c]);
        let s = self.value(scale).to_vec();
        let bv = self.value(bias).to_vec();
        let mut v = self.value(x).to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * t;
                for slot in &mut v[base..base + t] {
                    *slot = *slot * s[ci] + bv[ci];
                }
            }
        }
        let ng = self.need(&[x, scale, bias]);
        self.push(v, shape, Op::ChannelAffine { x, scale, bias }, ng)
    }

    pub fn block_layer_norm(&mut self, x: Tid, gamma: Tid, beta: Tid, block: usize) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        let w = *shape.last().unwrap();
        assert_eq!(w % block, 0, "layer-norm width not divisible by block");
        assert_eq!(self.shape(gamma), &[w]);
        assert_eq!(self.shape(beta), &[w]);
        let rows = numel(&shape) / w;
        let nb = w / block;
        let g = self.value(gamma).to_vec();
        let be = self.value(beta).to_vec();
        let mut v = self.value(x).to_vec();
        let mut means = vec![0.0f32; rows * nb];
        let mut rstds = vec![0.0f32; rows * nb];
        const EPS: f64 = 1e-5;
        for r in 0..rows {
            for s in 0..nb {
                let base = r * w + s * block;
                let chunk = &mut v[base..base + block];
                let mean = chunk.iter().map(|&t| t as f64).sum::<f64>() / block as f64;
                let var = chunk
                    .iter()
                    .map(|&t| (t as f64 - mean).powi(2))
                    .sum::<f64>()
                    / block as f64;
                let rstd = 1.0 / (var + EPS).sqrt();
                means[r * nb + s] = mean as f32;
                rstds[r * nb + s] = rstd as f32;
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let norm = ((*slot as f64 - mean) * rstd) as f32;
                    *slot = norm * g[s * block + i] + be[s * block + i];
                }
            }
        }
        let ng = self.need(&[x, gamma, beta]);
        self.push(
            v,
            shape,
            Op::BlockLayerNorm { x, gamma, beta, block, mean: means, rstd: rstds },
            ng,
        )
    }

    pub fn mask_last(&mut self, x: Tid, mask: Vec<f32>) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        let w = *shape.last().unwrap();
        assert_eq!(mask.len(), w, "mask width mismatch");
        let mut v = self.value(x).to_vec();
        for (i, slot) in v.iter_mut().enumerate() {
            *slot *= mask[i % w];
        }
        let ng = self.need(&[x]);
        self.push(v, shape, Op::MaskLast { x, mask }, ng)
    }

    /// Concatenate along the last dimension; all other dims must match.
    pub fn concat_last(&mut self, parts: &[Tid]) -> Tid {
        assert!(!parts.is_empty());
        let lead = self.nodes[parts[0].0].shape[..self.nodes[parts[0].0].shape.len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last leading dims differ");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut v = vec![0.0f32; rows * total];
        for r in 0..rows {
            let mut off = 0usize;
            for (pi, &p) in parts.iter().enumerate() {
                let w = widths[pi];
                let src = &self.value(p)[r * w..(r + 1) * w];
                v[r * total + off..r * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = self.need(parts);
        self.push(v, shape, Op::ConcatLast { parts: parts.to_vec() }, ng)
    }

    /// [B,T,G*dh] -> [B*G,T,dh]
    pub fn split_groups(&mut self, x: Tid, groups: usize) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (b, t, w) = (shape[0], shape[1], shape[2]);
        assert_eq!(w % groups, 0);
        let dh = w / groups;
        let xv = self.value(x);
        let mut v = vec![0.0f32; b * t * w];
        for bi in 0..b {
            for g in 0..groups {
                for ti in 0..t {
                    let src = (bi * t + ti) * w + g * dh;
                    let dst = ((bi * groups + g) * t + ti) * dh;
                    v[dst..dst + dh].copy_from_slice(&xv[src..src + dh]);
                }
            }
        }
        let ng = self.need(&[x]);
        self.push(v, vec![b * groups, t, dh], Op::SplitGroups { x, groups }, ng)
    }

    /// [B*G,T,dh] -> [B,T,G*dh]
    pub fn merge_groups(&mut self, x: Tid, groups: usize) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (bg, t, dh) = (shape[0], shape[1], shape[2]);
        assert_eq!(bg % groups, 0);
        let b = bg / groups;
        let xv = self.value(x);
        let mut v = vec![0.0f32; b * t * groups * dh];
        let w = groups * dh;
        for bi in 0..b {
            for g in 0..groups {
                for ti in 0..t {
                    let src = ((bi * groups + g) * t + ti) * dh;
                    let dst = (bi * t + ti) * w + g * dh;
                    v[dst..dst + dh].copy_from_slice(&xv[src..src + dh]);
                }
            }
        }
        let ng = self.need(&[x]);
        self.push(v, vec![b, t, w], Op::MergeGroups { x, groups }, ng)
    }

    pub fn gather_row(&mut self, table: Tid, row: usize) -> Tid {
        let shape = self.nodes[table.0].shape.clone();
        assert_eq!(shape.len(), 2);
        let (r, d) = (shape[0], shape[1]);
        assert!(row < r, "gather_row out of range");
        let v = self.value(table)[row * d..(row + 1) * d].to_vec();
        let ng = self.need(&[table]);
        self.push(v, vec![d], Op::GatherRow { table, row }, ng)
    }

    pub fn index_rows(&mut self, table: Tid, indices: &[u32]) -> Tid {
        let shape = self.nodes[table.0].shape.clone();
        assert_eq!(shape.len(), 2);
        let (r, d) = (shape[0], shape[1]);
        let tv = self.value(table);
        let mut v = vec![0.0f32; indices.len() * d];
        for (n, &idx) in indices.iter().enumerate() {
            assert!((idx as usize) < r, "index_rows out of range");
            v[n * d..(n + 1) * d].copy_from_slice(&tv[idx as usize * d..(idx as usize + 1) * d]);
        }
        let ng = self.need(&[table]);
        self.push(
            v,
            vec![indices.len(), d],
            Op::IndexRows { table, indices: indices.to_vec() },
            ng,
        )
    }

    /// `[B, ...] -> [1, ...]` picking one batch element.
    pub fn slice_first(&mut self, x: Tid, index: usize) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert!(!shape.is_empty() && index < shape[0], "slice_first out of range");
        let chunk = numel(&shape) / shape[0];
        let v = self.value(x)[index * chunk..(index + 1) * chunk].to_vec();
        let mut out_shape = shape;
        out_shape[0] = 1;
        let ng = self.need(&[x]);
        self.push(v, out_shape, Op::SliceFirst { x, index }, ng)
    }

    /// Stack `[1, ...]` parts into `[N, ...]` (reshape + concat + reshape).
    pub fn stack_first(&mut self, parts: &[Tid]) -> Tid {
        assert!(!parts.is_empty());
        let inner = self.nodes[parts[0].0].shape[1..].to_vec();
        let chunk: usize = inner.iter().product();
        let flat: Vec<Tid> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.nodes[p.0].shape[0], 1, "stack_first wants [1,..] parts");
                self.reshape(p, vec![1, chunk])
            })
            .collect();
        let cat = self.concat_last(&flat);
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        self.reshape(cat, shape)
    }

    pub fn transpose12(&mut self, x: Tid) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 3);
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let mut v = vec![0.0f32; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    v[(bi * t + ti) * c + ci] = xv[(bi * c + ci) * t + ti];
                }
            }
        }
        let ng = self.need(&[x]);
        self.push(v, vec![b, t, c], Op::Transpose12 { x }, ng)
    }

    pub fn reshape(&mut self, x: Tid, shape: Vec<usize>) -> Tid {
        assert_eq!(numel(&shape), self.value(x).len(), "reshape numel mismatch");
        let v = self.value(x).to_vec();
        let ng = self.need(&[x]);
        self.push(v, shape, Op::Reshape { x }, ng)
    }

    /// Magnitude STFT (periodic Hann, no padding) of a [B,T] batch.
    pub fn stft_mag(&mut self, x: Tid, n_fft: usize, hop: usize) -> Tid {
        let shape = self.nodes[x.0].shape.clone();
        assert_eq!(shape.len(), 2, "stft input must be [B,T]");
        let (b, t) = (shape[0], shape[1]);
        assert!(t >= n_fft, "signal shorter than stft window");
        let frames = (t - n_fft) / hop + 1;
        let bins = n_fft / 2 + 1;
        let mut re = vec![0.0f32; b * frames * bins];
        let mut im = vec![0.0f32; b * frames * bins];
        let mut v = vec![0.0f32; b * frames * bins];
        let window = stft::hann32(n_fft);
        for bi in 0..b {
            let sig = &self.value(x)[bi * t..(bi + 1) * t];
            for f in 0..frames {
                let base = (bi * frames + f) * bins;
                stft::frame_fft(
                    &sig[f * hop..f * hop + n_fft],
                    &window,
                    &mut re[base..base + bins],
                    &mut im[base..base + bins],
                );
            }
        }
        for i in 0..v.len() {
            v[i] = (re[i] * re[i] + im[i] * im[i]).sqrt();
        }
        let ng = self.need(&[x]);
        self.push(v, vec![b, frames, bins], Op::StftMag { x, n_fft, hop, re, im }, ng)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&mut self, loss: Tid) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        for g in self.grads.iter_mut() {
            g.clear();
        }
        self.ensure_grad(loss);
        self.grads[loss.0][0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || self.grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            self.accumulate(i, &g);
            self.grads[i] = g;
        }
    }

    fn ensure_grad(&mut self, id: Tid) {
        if self.grads[id.0].is_empty() {
            self.grads[id.0] = vec![0.0f32; self.nodes[id.0].value.len()];
        }
    }

    fn grad_mut(&mut self, id: Tid) -> &mut [f32] {
        self.ensure_grad(id);
        &mut self.grads[id.0]
    }

    fn accumulate(&mut self, node_idx: usize, g: &[f32]) {
        // Ops that need mutable access take the op out and put it back.
        let op = std::mem::replace(&mut self.nodes[node_idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (slot, &gi) in self.grad_mut(*a).iter_mut().zip(g) {
                    *slot += gi;
                }
                for (slot, &gi) in self.grad_mut(*b).iter_mut().zip(g) {
                    *slot += gi;
                }
            }
            Op::Sub(a, b) => {
                for (slot, &gi) in self.grad_mut(*a).iter_mut().zip(g) {
                    *slot += gi;
                }
                for (slot, &gi) in self.grad_mut(*b).iter_mut().zip(g) {
                    *slot -= gi;
                }
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                for ((slot, &gi), &y) in self.grad_mut(*a).iter_mut().zip(g).zip(&bv) {
                    *slot += gi * y;
                }
                let av = self.nodes[a.0].value.clone();
                for ((slot, &gi), &x) in self.grad_mut(*b).iter_mut().zip(g).zip(&av) {
                    *slot += gi * x;
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                for (slot, &gi) in self.grad_mut(*a).iter_mut().zip(g) {
                    *slot += gi * c;
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    for (slot, &gi) in self.grad_mut(p).iter_mut().zip(g) {
                        *slot += gi;
                    }
                }
            }
            Op::BiasChannels { x, b } => {
                let shape = self.nodes[node_idx].shape.clone();
                let (bs, c, t) = (shape[0], shape[1], shape[2]);
                for (slot, &gi) in self.grad_mut(*x).iter_mut().zip(g) {
                    *slot += gi;
                }
                let gb = self.grad_mut(*b);
                for bi in 0..bs {
                    for ci in 0..c {
                        let base = (bi * c + ci) * t;
                        let mut acc = 0.0f64;
                        for &gi in &g[base..base + t] {
                            acc += gi as f64;
                        }
                        gb[ci] += acc as f32;
                    }
                }
            }
            Op::BiasLast { x, b } => {
                let d = *self.nodes[node_idx].shape.last().unwrap();
                for (slot, &gi) in self.grad_mut(*x).iter_mut().zip(g) {
                    *slot += gi;
                }
                let gb = self.grad_mut(*b);
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % d] += gi;
                }
            }
            Op::Linear { x, w } => {
                let (k, n) = {
                    let ws = self.shape(*w);
                    (ws[0], ws[1])
                };
                let m = self.nodes[x.0].value.len() / k;
                // dx = g @ w^T
                if self.nodes[x.0].needs_grad {
                    let wv = self.nodes[w.0].value.clone();
                    let gx = self.grad_mut(*x);
                    for mi in 0..m {
                        let grow = &g[mi * n..(mi + 1) * n];
                        for ki in 0..k {
                            let mut acc = 0.0f32;
                            let wrow = &wv[ki * n..(ki + 1) * n];
                            for (gi, wi) in grow.iter().zip(wrow) {
                                acc += gi * wi;
                            }
                            gx[mi * k + ki] += acc;
                        }
                    }
                }
                // dw = x^T @ g
                if self.nodes[w.0].needs_grad {
                    let xv = self.nodes[x.0].value.clone();
                    let gw = self.grad_mut(*w);
                    for mi in 0..m {
                        let xrow = &xv[mi * k..(mi + 1) * k];
                        let grow = &g[mi * n..(mi + 1) * n];
                        for (ki, &xval) in xrow.iter().enumerate() {
                            if xval == 0.0 {
                                continue;
                            }
                            let dst = &mut gw[ki * n..(ki + 1) * n];
                            for (slot, &gi) in dst.iter_mut().zip(grow) {
                                *slot += xval * gi;
                            }
                        }
                    }
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let asx = self.nodes[a.0].shape.clone();
                let bsx = self.nodes[b.0].shape.clone();
                let (gn, m, k) = (asx[0], asx[1], asx[2]);
                let n = self.nodes[node_idx].shape[2];
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let bstride = bsx[1] * bsx[2];
                if self.nodes[a.0].needs_grad {
                    let ga = self.grad_mut(*a);
                    for gi in 0..gn {
                        let gout = &g[gi * m * n..(gi + 1) * m * n];
                        let bmat = &bv[gi * bstride..(gi + 1) * bstride];
                        let dst = &mut ga[gi * m * k..(gi + 1) * m * k];
                        if *trans_b {
                            // C = A B^T -> dA = G B   (B is [n,k])
                            matmul_acc(gout, bmat, m, n, k, dst);
                        } else {
                            // dA = G B^T (B is [k,n])
                            matmul_nt_acc(gout, bmat, m, n, k, dst);
                        }
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.grad_mut(*b);
                    for gi in 0..gn {
                        let gout = &g[gi * m * n..(gi + 1) * m * n];
                        let amat = &av[gi * m * k..(gi + 1) * m * k];
                        let dst = &mut gb[gi * bstride..(gi + 1) * bstride];
                        if *trans_b {
                            // dB = G^T A  (dB is [n,k])
                            matmul_tn_acc(gout, amat, n, m, k, dst);
                        } else {
                            // dB = A^T G  (dB is [k,n])
                            matmul_tn_acc(amat, gout, k, m, n, dst);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, stride, pad } => {
                let xs = self.nodes[x.0].shape.clone();
                let ws = self.nodes[w.0].shape.clone();
                let (b, cin, t) = (xs[0], xs[1], xs[2]);
                let (cout, _, k) = (ws[0], ws[1], ws[2]);
                let t_out = self.nodes[node_idx].shape[2];
                if self.nodes[x.0].needs_grad {
                    let wv = self.nodes[w.0].value.clone();
                    conv1d_bwd_input(
                        g, &wv, self.grad_mut(*x), b, cin, t, cout, k, *stride, *pad, t_out,
                    );
                }
                if self.nodes[w.0].needs_grad {
                    let xv = self.nodes[x.0].value.clone();
                    conv1d_bwd_weight(
                        g, &xv, self.grad_mut(*w), b, cin, t, cout, k, *stride, *pad, t_out,
                    );
                }
            }
            Op::ConvT1d { x, w, stride, pad } => {
                let xs = self.nodes[x.0].shape.clone();
                let ws = self.nodes[w.0].shape.clone();
                let (b, cin, t) = (xs[0], xs[1], xs[2]);
                let (_, cout, k) = (ws[0], ws[1], ws[2]);
                let t_out = self.nodes[node_idx].shape[2];
                if self.nodes[x.0].needs_grad {
                    let wv = self.nodes[w.0].value.clone();
                    convt1d_bwd_input(
                        g, &wv, self.grad_mut(*x), b, cin, t, cout, k, *stride, *pad, t_out,
                    );
                }
                if self.nodes[w.0].needs_grad {
                    let xv = self.nodes[x.0].value.clone();
                    convt1d_bwd_weight(
                        g, &xv, self.grad_mut(*w), b, cin, t, cout, k, *stride, *pad, t_out,
                    );
                }
            }
            Op::Snake { x, alpha } => {
                let shape = self.nodes[node_idx].shape.clone();
                let (b, c, t) = (shape[0], shape[1], shape[2]);
                let al = self.nodes[alpha.0].value.clone();
                let xv = self.nodes[x.0].value.clone();
                {
                    let gx = self.grad_mut(*x);
                    for bi in 0..b {
                        for ci in 0..c {
                            let a = guard_alpha(al[ci]);
                            let base = (bi * c + ci) * t;
                            for i in base..base + t {
                                gx[i] += g[i] * (1.0 + (2.0 * a * xv[i]).sin());
                            }
                        }
                    }
                }
                {
                    let ga = self.grad_mut(*alpha);
                    for bi in 0..b {
                        for ci in 0..c {
                            let a = guard_alpha(al[ci]);
                            let base = (bi * c + ci) * t;
                            let mut acc = 0.0f64;
                            for i in base..base + t {
                                let ax = a * xv[i];
                                let s = ax.sin();
                                acc += (g[i] * ((ax * (2.0 * ax).sin() - s * s) / (a * a))) as f64;
                            }
                            ga[ci] += acc as f32;
                        }
                    }
                }
            }
            Op::Elu(x) => {
                let yv = self.nodes[node_idx].value.clone();
                let xv = self.nodes[x.0].value.clone();
                let gx = self.grad_mut(*x);
                for i in 0..g.len() {
                    gx[i] += if xv[i] > 0.0 { g[i] } else { g[i] * (yv[i] + 1.0) };
                }
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let xv = self.nodes[x.0].value.clone();
                let gx = self.grad_mut(*x);
                for i in 0..g.len() {
                    gx[i] += if xv[i] > 0.0 { g[i] } else { g[i] * slope };
                }
            }
            Op::Tanh(x) => {
                let yv = self.nodes[node_idx].value.clone();
                let gx = self.grad_mut(*x);
                for i in 0..g.len() {
                    gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
                }
            }
            Op::Abs(x) => {
                let xv = self.nodes[x.0].value.clone();
                let gx = self.grad_mut(*x);
                for i in 0..g.len() {
                    gx[i] += g[i] * if xv[i] > 0.0 { 1.0 } else if xv[i] < 0.0 { -1.0 } else { 0.0 };
                }
            }
            Op::LogEps(x, eps) => {
                let eps = *eps;
                let xv = self.nodes[x.0].value.clone();
                let gx = self.grad_mut(*x);
                for i in 0..g.len() {
                    gx[i] += g[i] / (xv[i] + eps);
                }
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.0].value.len();
                let gi = g[0] / n as f32;
                for slot in self.grad_mut(*x).iter_mut() {
                    *slot += gi;
                }
            }
            Op::SoftmaxLast { x, row } => {
                let row = *row;
                let yv = self.nodes[node_idx].value.clone();
                let gx = self.grad_mut(*x);
                for (chunk_idx, ychunk) in yv.chunks_exact(row).enumerate() {
                    let gchunk = &g[chunk_idx * row..(chunk_idx + 1) * row];
                    let dot: f64 = ychunk
                        .iter()
                        .zip(gchunk)
                        .map(|(&y, &gi)| (y * gi) as f64)
                        .sum();
                    let dst = &mut gx[chunk_idx * row..(chunk_idx + 1) * row];
                    for i in 0..row {
                        dst[i] += ychunk[i] * (gchunk[i] - dot as f32);
                    }
                }
            }
            Op::ChannelAffine { x, scale, bias } => {
                let shape = self.nodes[node_idx].shape.clone();
                let (b, c, t) = (shape[0], shape[1], shape[2]);
                let sv = self.nodes[scale.0].value.clone();
                let xv = self.nodes[x.0].value.clone();
                {
                    let gx = self.grad_mut(*x);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * t;
                            for i in base..base + t {
                                gx[i] += g[i] * sv[ci];
                            }
                        }
                    }
                }
                {
                    let gs = self.grad_mut(*scale);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * t;
                            let mut acc = 0.0f64;
                            for i in base..base + t {
                                acc += (g[i] * xv[i]) as f64;
                            }
                            gs[ci] += acc as f32;
                        }
                    }
                }
                {
                    let gb = self.grad_mut(*bias);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * t;
                            let mut acc = 0.0f64;
                            for i in base..base + t {
                                acc += g[i] as f64;
                            }
                            gb[ci] += acc as f32;
                        }
                    }
                }
            }
            Op::BlockLayerNorm { x, gamma, beta, block, mean, rstd } => {
                let block = *block;
                let w = *self.nodes[node_idx].shape.last().unwrap();
                let rows = self.nodes[node_idx].value.len() / w;
                let nb = w / block;
                let gv = self.nodes[gamma.0].value.clone();
                let xv = self.nodes[x.0].value.clone();
                {
                    let gx = self.grad_mut(*x);
                    for r in 0..rows {
                        for s in 0..nb {
                            let base = r * w + s * block;
                            let mu = mean[r * nb + s];
                            let rs = rstd[r * nb + s];
                            let mut sum_dxhat = 0.0f64;
                            let mut sum_dxhat_xhat = 0.0f64;
                            for i in 0..block {
                                let xhat = (xv[base + i] - mu) * rs;
                                let dxhat = g[base + i] * gv[s * block + i];
                                sum_dxhat += dxhat as f64;
                                sum_dxhat_xhat += (dxhat * xhat) as f64;
                            }
                            let nbf = block as f64;
                            for i in 0..block {
                                let xhat = ((xv[base + i] - mu) * rs) as f64;
                                let dxhat = (g[base + i] * gv[s * block + i]) as f64;
                                gx[base + i] += (rs as f64
                                    * (dxhat - sum_dxhat / nbf - xhat * sum_dxhat_xhat / nbf))
                                    as f32;
                            }
                        }
                    }
                }
                {
                    let gg = self.grad_mut(*gamma);
                    for r in 0..rows {
                        for s in 0..nb {
                            let base = r * w + s * block;
                            let mu = mean[r * nb + s];
                            let rs = rstd[r * nb + s];
                            for i in 0..block {
                                let xhat = (xv[base + i] - mu) * rs;
                                gg[s * block + i] += g[base + i] * xhat;
                            }
                        }
                    }
                }
                {
                    let gb = self.grad_mut(*beta);
                    for r in 0..rows {
                        for i in 0..w {
                            gb[i] += g[r * w + i];
                        }
                    }
                }
            }
            Op::MaskLast { x, mask } => {
                let w = mask.len();
                let gx = self.grad_mut(*x);
                for (i, &gi) in g.iter().enumerate() {
                    gx[i] += gi * mask[i % w];
                }
            }
            Op::ConcatLast { parts } => {
                let total = *self.nodes[node_idx].shape.last().unwrap();
                let rows = self.nodes[node_idx].value.len() / total;
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|&p| *self.nodes[p.0].shape.last().unwrap())
                    .collect();
                let mut off = 0usize;
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    if self.nodes[p.0].needs_grad {
                        let gp = self.grad_mut(p);
                        for r in 0..rows {
                            for i in 0..w {
                                gp[r * w + i] += g[r * total + off + i];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SplitGroups { x, groups } => {
                let groups = *groups;
                let out_shape = self.nodes[node_idx].shape.clone();
                let (bg, t, dh) = (out_shape[0], out_shape[1], out_shape[2]);
                let b = bg / groups;
                let w = groups * dh;
                let gx = self.grad_mut(*x);
                for bi in 0..b {
                    for gidx in 0..groups {
                        for ti in 0..t {
                            let src = ((bi * groups + gidx) * t + ti) * dh;
                            let dst = (bi * t + ti) * w + gidx * dh;
                            for i in 0..dh {
                                gx[dst + i] += g[src + i];
                            }
                        }
                    }
                }
            }
            Op::MergeGroups { x, groups } => {
                let groups = *groups;
                let out_shape = self.nodes[node_idx].shape.clone();
                let (b, t, w) = (out_shape[0], out_shape[1], out_shape[2]);
                let dh = w / groups;
                let gx = self.grad_mut(*x);
                for bi in 0..b {
                    for gidx in 0..groups {
                        for ti in 0..t {
                            let dst = ((bi * groups + gidx) * t + ti) * dh;
                            let src = (bi * t + ti) * w + gidx * dh;
                            for i in 0..dh {
                                gx[dst + i] += g[src + i];
                            }
                        }
                    }
                }
            }
            Op::GatherRow { table, row } => {
                let d = self.nodes[node_idx].value.len();
                let gt = self.grad_mut(*table);
                for i in 0..d {
                    gt[row * d + i] += g[i];
                }
            }
            Op::IndexRows { table, indices } => {
                let d = self.nodes[node_idx].shape[1];
                let idxs = indices.clone();
                let gt = self.grad_mut(*table);
                for (n, &idx) in idxs.iter().enumerate() {
                    let dst = &mut gt[idx as usize * d..(idx as usize + 1) * d];
                    for (slot, &gi) in dst.iter_mut().zip(&g[n * d..(n + 1) * d]) {
                        *slot += gi;
                    }
                }
            }
            Op::SliceFirst { x, index } => {
                let chunk = self.nodes[node_idx].value.len();
                let index = *index;
                let gx = self.grad_mut(*x);
                for (i, &gi) in g.iter().enumerate() {
                    gx[index * chunk + i] += gi;
                }
            }
            Op::Transpose12 { x } => {
                let out_shape = self.nodes[node_idx].shape.clone();
                let (b, t, c) = (out_shape[0], out_shape[1], out_shape[2]);
                let gx = self.grad_mut(*x);
                for bi in 0..b {
                    for ti in 0..t {
                        for ci in 0..c {
                            gx[(bi * c + ci) * t + ti] += g[(bi * t + ti) * c + ci];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                for (slot, &gi) in self.grad_mut(*x).iter_mut().zip(g) {
                    *slot += gi;
                }
            }
            Op::StftMag { x, n_fft, hop, re, im } => {
                let (n_fft, hop) = (*n_fft, *hop);
                let out_shape = self.nodes[node_idx].shape.clone();
                let (b, frames, bins) = (out_shape[0], out_shape[1], out_shape[2]);
                let mag = self.nodes[node_idx].value.clone();
                let window = stft::hann32(n_fft);
                let t = self.nodes[x.0].value.len() / b;
                let gx = self.grad_mut(*x);
                let mut gre = vec![0.0f32; bins];
                let mut gim = vec![0.0f32; bins];
                let mut frame_grad = vec![0.0f32; n_fft];
                for bi in 0..b {
                    for f in 0..frames {
                        let base = (bi * frames + f) * bins;
                        for k in 0..bins {
                            let m = mag[base + k].max(1e-12);
                            gre[k] = g[base + k] * re[base + k] / m;
                            gim[k] = g[base + k] * im[base + k] / m;
                        }
                        stft::frame_fft_adjoint(&gre, &gim, &window, &mut frame_grad);
                        let dst = &mut gx[bi * t + f * hop..bi * t + f * hop + n_fft];
                        for (slot, &fg) in dst.iter_mut().zip(&frame_grad) {
                            *slot += fg;
                        }
                    }
                }
            }
        }
        self.nodes[node_idx].op = op;
    }
}

fn guard_alpha(a: f32) -> f32 {
    if a.abs() < 1e-4 {
        if a < 0.0 {
            -1e-4
        } else {
            1e-4
        }
    } else {
        a
    }
}

/// out = a[m,k] @ b[k,n], overwriting out.
fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    out.fill(0.0);
    matmul_acc(a, b, m, k, n, out);
}

/// out += a[m,k] @ b[k,n]
fn matmul_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for mi in 0..m {
        let arow = &a[mi * k..(mi + 1) * k];
        let orow = &mut out[mi * n..(mi + 1) * n];
        for (ki, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[ki * n..(ki + 1) * n];
            for (slot, &bv) in orow.iter_mut().zip(brow) {
                *slot += av * bv;
            }
        }
    }
}

/// out = a[m,k] @ b[n,k]^T, overwriting out.
fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    out.fill(0.0);
    matmul_nt_acc(a, b, m, k, n, out);
}

/// out += a[m,k] @ b[n,k]^T
fn matmul_nt_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for mi in 0..m {
        let arow = &a[mi * k..(mi + 1) * k];
        let orow = &mut out[mi * n..(mi + 1) * n];
        for (ni, slot) in orow.iter_mut().enumerate() {
            let brow = &b[ni * k..(ni + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *slot += acc;
        }
    }
}

/// out += a[s,m]^T @ b[s,n]  (out is [m,n]); `s` is the summed dimension.
fn matmul_tn_acc(a: &[f32], b: &[f32], m: usize, s: usize, n: usize, out: &mut [f32]) {
    for si in 0..s {
        let arow = &a[si * m..(si + 1) * m];
        let brow = &b[si * n..(si + 1) * n];
        for (mi, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[mi * n..(mi + 1) * n];
            for (slot, &bv) in orow.iter_mut().zip(brow) {
                *slot += av * bv;
            }
        }
    }
}

/// Valid output-index range for `t*stride + j - pad` to land in `[0, limit)`.
fn stride_range(j: usize, pad: usize, stride: usize, limit: usize, t_len: usize) -> (usize, usize) {
    let d = j as isize - pad as isize;
    let lo = if d >= 0 {
        0usize
    } else {
        ((-d) as usize).div_ceil(stride)
    };
    let max_idx = limit as isize - 1 - d;
    if max_idx < 0 {
        return (0, 0);
    }
    let hi = ((max_idx as usize) / stride + 1).min(t_len);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_fwd(
    x: &[f32],
    w: &[f32],
    out: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for co in 0..cout {
            let orow = &mut out[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
            for ci in 0..cin {
                let xrow = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                let wrow = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                for (j, &wj) in wrow.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    let (lo, hi) = stride_range(j, pad, stride, t, t_out);
                    let d = j as isize - pad as isize;
                    for ti in lo..hi {
                        let xi = (ti * stride) as isize + d;
                        orow[ti] += wj * xrow[xi as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_bwd_input(
    g: &[f32],
    w: &[f32],
    gx: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for co in 0..cout {
            let grow = &g[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
            for ci in 0..cin {
                let gxrow = &mut gx[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                let wrow = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                for (j, &wj) in wrow.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    let (lo, hi) = stride_range(j, pad, stride, t, t_out);
                    let d = j as isize - pad as isize;
                    for ti in lo..hi {
                        let xi = (ti * stride) as isize + d;
                        gxrow[xi as usize] += wj * grow[ti];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_bwd_weight(
    g: &[f32],
    x: &[f32],
    gw: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for co in 0..cout {
            let grow = &g[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
            for ci in 0..cin {
                let xrow = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                let gwrow = &mut gw[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                for (j, slot) in gwrow.iter_mut().enumerate() {
                    let (lo, hi) = stride_range(j, pad, stride, t, t_out);
                    let d = j as isize - pad as isize;
                    let mut acc = 0.0f64;
                    for ti in lo..hi {
                        let xi = (ti * stride) as isize + d;
                        acc += (grow[ti] * xrow[xi as usize]) as f64;
                    }
                    *slot += acc as f32;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt1d_fwd(
    x: &[f32],
    w: &[f32],
    out: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for ci in 0..cin {
            let xrow = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
            for co in 0..cout {
                let orow = &mut out[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
                let wrow = &w[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                for (j, &wj) in wrow.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    let (lo, hi) = stride_range(j, pad, stride, t_out, t);
                    let d = j as isize - pad as isize;
                    for ti in lo..hi {
                        let oi = (ti * stride) as isize + d;
                        orow[oi as usize] += wj * xrow[ti];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt1d_bwd_input(
    g: &[f32],
    w: &[f32],
    gx: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for ci in 0..cin {
            let gxrow = &mut gx[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
            for co in 0..cout {
                let grow = &g[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
                let wrow = &w[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                for (j, &wj) in wrow.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    let (lo, hi) = stride_range(j, pad, stride, t_out, t);
                    let d = j as isize - pad as isize;
                    for ti in lo..hi {
                        let oi = (ti * stride) as isize + d;
                        gxrow[ti] += wj * grow[oi as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt1d_bwd_weight(
    g: &[f32],
    x: &[f32],
    gw: &mut [f32],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for bi in 0..b {
        for ci in 0..cin {
            let xrow = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
            for co in 0..cout {
                let grow = &g[(bi * cout + co) * t_out..(bi * cout + co + 1) * t_out];
                let gwrow = &mut gw[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                for (j, slot) in gwrow.iter_mut().enumerate() {
                    let (lo, hi) = stride_range(j, pad, stride, t_out, t);
                    let d = j as isize - pad as isize;
                    let mut acc = 0.0f64;
                    for ti in lo..hi {
                        let oi = (ti * stride) as isize + d;
                        acc += (xrow[ti] * grow[oi as usize]) as f64;
                    }
                    *slot += acc as f32;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect()
    }

    fn fd_input(
        shape: &[usize],
        seed: u64,
        build: &mut dyn FnMut(&mut Tape, Tid) -> Tid,
    ) -> gradcheck::GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = randn(&mut rng, shape.iter().product());
        gradcheck::check_input(&mut x, shape, 24, 1e-2, 5e-4, build)
    }

    #[test]
    fn grad_add_sub_mul_scale() {
        let check = fd_input(&[2, 6], 1, &mut |t, x| {
            let a = t.scale(x, 1.7);
            let b = t.mul(x, a);
            let c = t.sub(b, x);
            let d = t.add(c, b);
            t.mean_all(d)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_same_operand_twice() {
        let check = fd_input(&[8], 2, &mut |t, x| {
            let y = t.mul(x, x);
            t.mean_all(y)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_activations() {
        let check = fd_input(&[2, 9], 3, &mut |t, x| {
            let a = t.tanh(x);
            let b = t.elu(a);
            let c = t.leaky_relu(b, 0.1);
            let d = t.abs(c);
            let e = t.log_eps(d, 1e-3);
            t.mean_all(e)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_snake() {
        let check = fd_input(&[2, 3, 5], 4, &mut |t, x| {
            let alpha = t.leaf(vec![0.8, 1.2, 1.0], vec![3]);
            let y = t.snake(x, alpha);
            t.mean_all(y)
        });
        assert!(check.passed(), "{:?}", check.failures);
        // alpha gradient via params
        let mut store = crate::nn::ParamStore::new();
        store.insert("alpha", vec![0.9, 1.1, 1.3], vec![3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xv = randn(&mut rng, 2 * 3 * 7);
        let check = gradcheck::check_params(
            &mut store,
            &["alpha".to_string()],
            8,
            1e-2,
            5e-4,
            &mut |t, s| {
                let x = t.constant(xv.clone(), vec![2, 3, 7]);
                let alpha = t.param(s, "alpha");
                let y = t.snake(x, alpha);
                t.mean_all(y)
            },
        );
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_linear_and_bias() {
        let mut store = crate::nn::ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        store.insert("w", randn(&mut rng, 4 * 3), vec![4, 3]);
        store.insert("b", randn(&mut rng, 3), vec![3]);
        let xv = randn(&mut rng, 5 * 4);
        let names: Vec<String> = vec!["w".into(), "b".into()];
        let check = gradcheck::check_params(&mut store, &names, 16, 1e-2, 5e-4, &mut |t, s| {
            let x = t.leaf(xv.clone(), vec![5, 4]);
            let w = t.param(s, "w");
            let b = t.param(s, "b");
            let y = t.linear(x, w);
            let y = t.bias_last(y, b);
            let y2 = t.mul(y, y);
            t.mean_all(y2)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_bmm_both_orientations() {
        for trans_b in [false, true] {
            let check = fd_input(&[2, 3, 4], 7, &mut |t, x| {
                let other = t.leaf(
                    (0..2 * 4 * 3).map(|i| (i as f32 * 0.13).sin()).collect(),
                    if trans_b { vec![2, 3, 4] } else { vec![2, 4, 3] },
                );
                let y = t.bmm(x, other, trans_b);
                let y2 = t.mul(y, y);
                t.mean_all(y2)
            });
            assert!(check.passed(), "trans_b={trans_b}: {:?}", check.failures);
        }
    }

    #[test]
    fn grad_conv1d() {
        for (stride, pad, k) in [(1usize, 3usize, 7usize), (2, 1, 4), (4, 2, 8)] {
            let mut store = crate::nn::ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            store.insert("w", randn(&mut rng, 3 * 2 * k), vec![3, 2, k]);
            let xv = randn(&mut rng, 2 * 2 * 16);
            let names = vec!["w".to_string()];
            let check =
                gradcheck::check_params(&mut store, &names, 24, 1e-2, 2e-3, &mut |t, s| {
                    let x = t.leaf(xv.clone(), vec![2, 2, 16]);
                    let w = t.param(s, "w");
                    let y = t.conv1d(x, w, stride, pad);
                    let y2 = t.mul(y, y);
                    t.mean_all(y2)
                });
            assert!(check.passed(), "s{stride} p{pad}: {:?}", check.failures);
            // input gradient
            let check = fd_input(&[1, 2, 16], 9, &mut |t, x| {
                let w = t.leaf(
                    (0..3 * 2 * k).map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.3).collect(),
                    vec![3, 2, k],
                );
                let y = t.conv1d(x, w, stride, pad);
                let y2 = t.mul(y, y);
                t.mean_all(y2)
            });
            assert!(check.passed(), "input s{stride}: {:?}", check.failures);
        }
    }

    #[test]
    fn grad_conv_transpose1d() {
        for (stride, pad, k) in [(2usize, 1usize, 4usize), (4, 2, 8)] {
            let mut store = crate::nn::ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            store.insert("w", randn(&mut rng, 2 * 3 * k), vec![2, 3, k]);
            let xv = randn(&mut rng, 2 * 2 * 8);
            let names = vec!["w".to_string()];
            let check =
                gradcheck::check_params(&mut store, &names, 24, 1e-2, 5e-4, &mut |t, s| {
                    let x = t.leaf(xv.clone(), vec![2, 2, 8]);
                    let w = t.param(s, "w");
                    let y = t.conv_transpose1d(x, w, stride, pad);
                    let y2 = t.mul(y, y);
                    t.mean_all(y2)
                });
            assert!(check.passed(), "s{stride}: {:?}", check.failures);
            let check = fd_input(&[1, 2, 8], 11, &mut |t, x| {
                let w = t.leaf(
                    (0..2 * 3 * k).map(|i| ((i * 3 % 7) as f32 - 3.0) * 0.2).collect(),
                    vec![2, 3, k],
                );
                let y = t.conv_transpose1d(x, w, stride, pad);
                let y2 = t.mul(y, y);
                t.mean_all(y2)
            });
            assert!(check.passed(), "input s{stride}: {:?}", check.failures);
        }
    }

    #[test]
    fn conv_transpose_shape_law() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.0; 2 * 4], vec![1, 2, 4]);
        let w = t.constant(vec![0.0; 2 * 3 * 8], vec![2, 3, 8]);
        let y = t.conv_transpose1d(x, w, 4, 2);
        assert_eq!(t.shape(y), &[1, 3, 16]);
    }

    #[test]
    fn grad_softmax_layernorm_mask() {
        let check = fd_input(&[2, 3, 8], 12, &mut |t, x| {
            let gamma = t.leaf(vec![1.0; 8], vec![8]);
            let beta = t.leaf(vec![0.1; 8], vec![8]);
            let ln = t.block_layer_norm(x, gamma, beta, 4);
            let sm = t.softmax_last(ln);
            let masked = t.mask_last(sm, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
            let sq = t.mul(masked, masked);
            t.mean_all(sq)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_concat_split_merge_transpose() {
        let check = fd_input(&[2, 4, 6], 13, &mut |t, x| {
            let other = t.leaf(vec![0.3; 2 * 4 * 2], vec![2, 4, 2]);
            let cat = t.concat_last(&[x, other]); // [2,4,8]
            let split = t.split_groups(cat, 4); // [8,4,2]
            let merged = t.merge_groups(split, 4); // [2,4,8]
            let tr = t.transpose12(merged); // [2,8,4]
            let sq = t.mul(tr, tr);
            t.mean_all(sq)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn split_merge_round_trip_is_identity() {
        let mut t = Tape::new();
        let v: Vec<f32> = (0..2 * 3 * 8).map(|i| i as f32).collect();
        let x = t.constant(v.clone(), vec![2, 3, 8]);
        let s = t.split_groups(x, 4);
        let m = t.merge_groups(s, 4);
        assert_eq!(t.value(m), &v[..]);
    }

    #[test]
    fn grad_channel_affine_and_gather() {
        let mut store = crate::nn::ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        store.insert("table", randn(&mut rng, 5 * 4), vec![5, 4]);
        store.insert("scale", vec![1.1, 0.9], vec![2]);
        store.insert("bias", vec![0.0, 0.2], vec![2]);
        let xv = randn(&mut rng, 1 * 2 * 6);
        let names: Vec<String> = vec!["table".into(), "scale".into(), "bias".into()];
        let check = gradcheck::check_params(&mut store, &names, 20, 1e-2, 5e-4, &mut |t, s| {
            let x = t.leaf(xv.clone(), vec![1, 2, 6]);
            let scale = t.param(s, "scale");
            let bias = t.param(s, "bias");
            let filmed = t.channel_affine(x, scale, bias);
            let table = t.param(s, "table");
            let row = t.gather_row(table, 2);
            let rowsq = t.mul(row, row);
            let a = t.mean_all(rowsq);
            let b = t.mean_all(filmed);
            let s2 = t.add(a, b);
            let sq = t.mul(s2, s2);
            t.mean_all(sq)
        });
        assert!(check.passed(), "{:?}", check.failures);
    }

    #[test]
    fn grad_stft_mag() {
        let check = fd_input(&[2, 48], 15, &mut |t, x| {
            let mag = t.stft_mag(x, 16, 8);
            let lg = t.log_eps(mag, 1e-5);
            let sq = t.mul(lg, lg);
            t.mean_all(sq)
        });
        assert!(check.passed(), "worst {:?} {:?}", check.worst_rel, check.failures);
    }

    #[test]
    fn stft_mag_matches_f64_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let xi = t.constant(x.clone(), vec![1, 64]);
        let mag = t.stft_mag(xi, 32, 16);
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let oracle = crate::dsp::stft_mag(&x64, 32, 16);
        let got = t.value(mag);
        assert_eq!(t.shape(mag), &[1, 3, 17]);
        for (f, frame) in oracle.iter().enumerate() {
            for (k, &m) in frame.iter().enumerate() {
                let g = got[f * 17 + k] as f64;
                assert!((g - m).abs() < 1e-3, "frame {f} bin {k}: {g} vs {m}");
            }
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2.0, -1.0], vec![2]);
        let d = t.detach(x);
        let y = t.mul(d, d);
        let l = t.mean_all(y);
        t.backward(l);
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn straight_through_pattern_passes_identity_gradient() {
        // q = x + detach(e - x) carries d(loss)/dq straight onto x.
        let e = vec![0.5f32, -0.25, 0.0, 1.0];
        let mut t = Tape::new();
        let x = t.leaf(vec![0.1, 0.2, -0.3, 0.9], vec![4]);
        let ec = t.constant(e.clone(), vec![4]);
        let diff = t.sub(ec, x);
        let dd = t.detach(diff);
        let q = t.add(x, dd);
        let sq = t.mul(q, q);
        let l = t.mean_all(sq);
        t.backward(l);
        let gx = t.grad(x).unwrap().to_vec();
        // d/dq mean(q^2) = 2q/n evaluated at q = e
        for (i, &g) in gx.iter().enumerate() {
            let expected = 2.0 * e[i] / 4.0;
            assert!((g - expected).abs() < 1e-6, "{g} vs {expected}");
        }
    }
}
