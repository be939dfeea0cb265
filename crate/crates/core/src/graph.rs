//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! Every training step builds a fresh `Graph`. Ops append nodes in
//! topological order, so `backward` is a single reverse sweep. Nodes that
//! cannot influence any parameter (`needs_grad == false`) are skipped both
//! when propagating and inside op closures, which is what lets the
//! discriminator run grad-free over real audio during generator updates.

use std::sync::Arc;

use crate::kernels as k;
use crate::mel::MelAnalyzer;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub struct BackIn<'a> {
    pub grad: &'a Tensor,
    pub out: &'a Tensor,
    pub parents: &'a [&'a Tensor],
    /// Per-parent: does that parent actually need its gradient?
    pub needs: &'a [bool],
}

type BackFn = Box<dyn Fn(&BackIn) -> Vec<Option<Tensor>>>;

struct Node {
    data: Tensor,
    parents: Vec<usize>,
    needs_grad: bool,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by `Var`.
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_node[v.0].take()
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].data.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        let needs_grad = back.is_some() && parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            data,
            parents,
            needs_grad,
            back: if needs_grad { back } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input: gradients never flow into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            data: t,
            parents: vec![],
            needs_grad: false,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: a gradient slot is kept for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            data: t,
            parents: vec![],
            needs_grad: true,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.nodes[root.0].data.numel(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            // leaves have no back fn and keep their accumulated gradient
            let Some(back) = self.nodes[i].back.as_ref() else {
                continue;
            };
            if grads[i].is_none() {
                continue;
            }
            let (head, tail) = self.nodes.split_at(i);
            let node = &tail[0];
            let parent_data: Vec<&Tensor> = node.parents.iter().map(|&p| &head[p].data).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| head[p].needs_grad).collect();
            let contributions = back(&BackIn {
                grad: grads[i].as_ref().unwrap(),
                out: &node.data,
                parents: &parent_data,
                needs: &needs,
            });
            debug_assert_eq!(contributions.len(), node.parents.len());
            let parents = node.parents.clone();
            drop(parent_data);
            for (p, c) in parents.into_iter().zip(contributions) {
                let Some(c) = c else { continue };
                if !self.nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = None; // free as we go; only leaf grads survive the sweep
        }
        Grads { by_node: grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut data = self.value(a).clone();
        data.add_assign(self.value(b));
        self.push(
            data,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackIn| {
                vec![Some(c.grad.clone()), Some(c.grad.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = Tensor::from_vec(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect(),
        );
        self.push(
            data,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackIn| {
                vec![Some(c.grad.clone()), Some(c.grad.scale(-1.0))]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = Tensor::from_vec(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
        );
        self.push(
            data,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackIn| {
                let ga = c.needs[0].then(|| {
                    Tensor::from_vec(
                        c.grad.shape(),
                        c.grad.data().iter().zip(c.parents[1].data()).map(|(g, y)| g * y).collect(),
                    )
                });
                let gb = c.needs[1].then(|| {
                    Tensor::from_vec(
                        c.grad.shape(),
                        c.grad.data().iter().zip(c.parents[0].data()).map(|(g, x)| g * x).collect(),
                    )
                });
                vec![ga, gb]
            })),
        )
    }

    /// `a * x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let data = self.value(x).map(|v| a * v + b);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| vec![Some(c.grad.scale(a))])),
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data = self.value(x).map(f64::abs);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(|c: &BackIn| {
                vec![Some(Tensor::from_vec(
                    c.grad.shape(),
                    c.grad
                        .data()
                        .iter()
                        .zip(c.parents[0].data())
                        .map(|(g, x)| {
                            if *x > 0.0 {
                                *g
                            } else if *x < 0.0 {
                                -*g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                ))]
            })),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).map(f64::tanh);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(|c: &BackIn| {
                vec![Some(Tensor::from_vec(
                    c.grad.shape(),
                    c.grad
                        .data()
                        .iter()
                        .zip(c.out.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                ))]
            })),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let data = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                vec![Some(Tensor::from_vec(
                    c.grad.shape(),
                    c.grad
                        .data()
                        .iter()
                        .zip(c.parents[0].data())
                        .map(|(g, x)| if *x >= 0.0 { *g } else { slope * g })
                        .collect(),
                ))]
            })),
        )
    }

    // ---- reductions & scalar plumbing ----

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(
            Tensor::scalar(s),
            vec![x.0],
            Some(Box::new(|c: &BackIn| {
                let g = c.grad.item();
                vec![Some(Tensor::full(c.parents[0].shape(), g))]
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        self.push(
            Tensor::scalar(s / n),
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                let g = c.grad.item() / n;
                vec![Some(Tensor::full(c.parents[0].shape(), g))]
            })),
        )
    }

    /// Row means of a `[R, C]` matrix -> `[R]`.
    pub fn mean_axis1(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (r, cdim) = (v.dim(0), v.dim(1));
        let mut out = Tensor::zeros(&[r]);
        for i in 0..r {
            out.data_mut()[i] = v.row(i).iter().sum::<f64>() / cdim as f64;
        }
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                let mut gx = Tensor::zeros(&[r, cdim]);
                for i in 0..r {
                    let g = c.grad.data()[i] / cdim as f64;
                    gx.row_mut(i).fill(g);
                }
                vec![Some(gx)]
            })),
        )
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.numel(), bv.numel(), "dot length mismatch");
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        self.push(
            Tensor::scalar(s),
            vec![a.0, b.0],
            Some(Box::new(|c: &BackIn| {
                let g = c.grad.item();
                vec![
                    c.needs[0].then(|| c.parents[1].scale(g)),
                    c.needs[1].then(|| c.parents[0].scale(g)),
                ]
            })),
        )
    }

    pub fn stack_scalars(&mut self, xs: &[Var]) -> Var {
        let data: Vec<f64> = xs.iter().map(|&v| self.value(v).item()).collect();
        let n = data.len();
        self.push(
            Tensor::from_vec(&[n], data),
            xs.iter().map(|v| v.0).collect(),
            Some(Box::new(|c: &BackIn| {
                c.grad
                    .data()
                    .iter()
                    .map(|&g| Some(Tensor::scalar(g)))
                    .collect()
            })),
        )
    }

    /// Broadcast subtraction of a scalar var: `x - s`.
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let data = self.value(x).map(|v| v - sv);
        self.push(
            data,
            vec![x.0, s.0],
            Some(Box::new(|c: &BackIn| {
                let gs: f64 = c.grad.data().iter().sum();
                vec![Some(c.grad.clone()), Some(Tensor::scalar(-gs))]
            })),
        )
    }

    /// Scalar division `a / b` for `[1]` vars.
    pub fn div_scalars(&mut self, a: Var, b: Var) -> Var {
        let an = self.value(a).item();
        let bn = self.value(b).item();
        self.push(
            Tensor::scalar(an / bn),
            vec![a.0, b.0],
            Some(Box::new(|c: &BackIn| {
                let g = c.grad.item();
                let an = c.parents[0].item();
                let bn = c.parents[1].item();
                vec![
                    Some(Tensor::scalar(g / bn)),
                    Some(Tensor::scalar(-g * an / (bn * bn))),
                ]
            })),
        )
    }

    // ---- structure ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let data = self.value(x).clone().reshaped(shape);
        let in_shape = self.value(x).shape().to_vec();
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                vec![Some(c.grad.clone().reshaped(&in_shape))]
            })),
        )
    }

    pub fn transpose2(&mut self, x: Var) -> Var {
        let data = k::transpose2(self.value(x));
        self.push(
            data,
            vec![x.0],
            Some(Box::new(|c: &BackIn| vec![Some(k::transpose2(c.grad))])),
        )
    }

    pub fn pad_reflect_end(&mut self, x: Var, n: usize) -> Var {
        if n == 0 {
            return x;
        }
        let l_in = self.value(x).dim(1);
        let data = k::pad_reflect_end(self.value(x), n);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                vec![Some(k::pad_reflect_end_bwd(c.grad, n, l_in))]
            })),
        )
    }

    /// Row gather from an embedding table: `table[K, D]`, indices -> `[T, D]`.
    pub fn embed_rows(&mut self, table: Var, indices: &[u32]) -> Var {
        let t = self.value(table);
        let (kk, d) = (t.dim(0), t.dim(1));
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (i, &u) in indices.iter().enumerate() {
            assert!((u as usize) < kk, "unit {} out of range for K={}", u, kk);
            out.row_mut(i).copy_from_slice(t.row(u as usize));
        }
        let idx: Vec<u32> = indices.to_vec();
        self.push(
            out,
            vec![table.0],
            Some(Box::new(move |c: &BackIn| {
                let (kk, d) = (c.parents[0].dim(0), c.parents[0].dim(1));
                let mut gt = Tensor::zeros(&[kk, d]);
                for (i, &u) in idx.iter().enumerate() {
                    let src = c.grad.row(i);
                    let dst = gt.row_mut(u as usize);
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
                vec![Some(gt)]
            })),
        )
    }

    /// Column-wise concatenation of `[R, C_i]` matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).dim(0);
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dim(1)).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[r, total]);
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.dim(0), r, "concat_cols row mismatch");
            for i in 0..r {
                out.row_mut(i)[col..col + w].copy_from_slice(pv.row(i));
            }
            col += w;
        }
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |c: &BackIn| {
                let mut col = 0;
                let r = c.grad.dim(0);
                widths
                    .iter()
                    .map(|&w| {
                        let mut g = Tensor::zeros(&[r, w]);
                        for i in 0..r {
                            g.row_mut(i).copy_from_slice(&c.grad.row(i)[col..col + w]);
                        }
                        col += w;
                        Some(g)
                    })
                    .collect()
            })),
        )
    }

    /// Repeat a `[D]` vector into `[rows, D]`.
    pub fn broadcast_row(&mut self, v: Var, rows: usize) -> Var {
        let vd = self.value(v);
        let d = vd.numel();
        let mut out = Tensor::zeros(&[rows, d]);
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(vd.data());
        }
        self.push(
            out,
            vec![v.0],
            Some(Box::new(move |c: &BackIn| {
                let d = c.parents[0].numel();
                let mut g = Tensor::zeros(&[d]);
                for i in 0..rows {
                    for (a, b) in g.data_mut().iter_mut().zip(c.grad.row(i)) {
                        *a += b;
                    }
                }
                vec![Some(g.reshaped(c.parents[0].shape()))]
            })),
        )
    }

    // ---- linear / conv ----

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let data = k::matvec(self.value(w), self.value(x));
        self.push(
            data,
            vec![w.0, x.0],
            Some(Box::new(|c: &BackIn| {
                let (r, cdim) = (c.parents[0].dim(0), c.parents[0].dim(1));
                let gw = c.needs[0].then(|| {
                    let mut gw = Tensor::zeros(&[r, cdim]);
                    for i in 0..r {
                        let g = c.grad.data()[i];
                        for (a, x) in gw.row_mut(i).iter_mut().zip(c.parents[1].data()) {
                            *a = g * x;
                        }
                    }
                    gw
                });
                let gx = c.needs[1].then(|| {
                    let mut gx = Tensor::zeros(&[cdim]);
                    for i in 0..r {
                        let g = c.grad.data()[i];
                        for (a, w) in gx.data_mut().iter_mut().zip(c.parents[0].row(i)) {
                            *a += g * w;
                        }
                    }
                    gx
                });
                vec![gw, gx]
            })),
        )
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, dilation: usize, pad: usize) -> Var {
        let data = k::conv1d_fwd(self.value(x), self.value(w), self.value(b), stride, dilation, pad);
        self.push(
            data,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |c: &BackIn| {
                let l_in = c.parents[0].dim(1);
                let (co, kk) = (c.parents[1].dim(0), c.parents[1].dim(2));
                vec![
                    c.needs[0]
                        .then(|| k::conv1d_bwd_x(c.parents[1], c.grad, stride, dilation, pad, l_in)),
                    c.needs[1]
                        .then(|| k::conv1d_bwd_w(c.parents[0], c.grad, stride, dilation, pad, co, kk)),
                    c.needs[2].then(|| k::conv1d_bwd_b(c.grad)),
                ]
            })),
        )
    }

    pub fn conv2d_rows(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let data = k::conv2d_rows_fwd(self.value(x), self.value(w), self.value(b), stride, pad);
        self.push(
            data,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |c: &BackIn| {
                let m_in = c.parents[0].dim(2);
                let (co, kk) = (c.parents[1].dim(0), c.parents[1].dim(2));
                vec![
                    c.needs[0].then(|| k::conv2d_rows_bwd_x(c.parents[1], c.grad, stride, pad, m_in)),
                    c.needs[1].then(|| k::conv2d_rows_bwd_w(c.parents[0], c.grad, stride, pad, co, kk)),
                    c.needs[2].then(|| k::conv2d_rows_bwd_b(c.grad)),
                ]
            })),
        )
    }

    pub fn zero_stuff(&mut self, x: Var, s: usize) -> Var {
        if s == 1 {
            return x;
        }
        let l_in = self.value(x).dim(1);
        let data = k::zero_stuff(self.value(x), s);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                vec![Some(k::zero_stuff_bwd(c.grad, s, l_in))]
            })),
        )
    }

    pub fn avg_pool1d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let l_in = self.value(x).dim(1);
        let data = k::avg_pool1d_fwd(self.value(x), kernel, stride, pad);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                vec![Some(k::avg_pool1d_bwd(c.grad, kernel, stride, pad, l_in))]
            })),
        )
    }

    /// Transposed convolution with exact `stride x` upsampling,
    /// implemented as zero-stuffing followed by a stride-1 convolution.
    /// Weights use conv layout `[Co, Ci, K]`; requires `K - stride` even.
    pub fn tconv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let kk = self.value(w).dim(2);
        assert!(
            kk >= stride && (kk - stride).is_multiple_of(2),
            "tconv kernel {} incompatible with stride {}",
            kk,
            stride
        );
        let pad = kk - 1 - (kk - stride) / 2;
        let stuffed = self.zero_stuff(x, stride);
        self.conv1d(stuffed, w, b, 1, 1, pad)
    }

    /// Log-mel spectrogram of a 1-D waveform var: `[L]` -> `[n_mels, F]`.
    pub fn log_mel(&mut self, x: Var, analyzer: &Arc<MelAnalyzer>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rank(), 1, "log_mel expects a 1-D waveform");
        let data = analyzer
            .log_mel(xv.data())
            .expect("log_mel op called on a clip shorter than the analysis window");
        let a = Arc::clone(analyzer);
        self.push(
            data,
            vec![x.0],
            Some(Box::new(move |c: &BackIn| {
                let g = a.log_mel_bwd(c.parents[0].data(), c.grad);
                let n = g.len();
                vec![Some(Tensor::from_vec(&[n], g))]
            })),
        )
    }
}

/// Central-difference derivative of `f` w.r.t. one input coordinate.
/// Shared by the gradient-verification suites.
pub fn central_diff(
    f: &dyn Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    input_idx: usize,
    coord: usize,
    eps: f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[input_idx].data_mut()[coord] += eps;
    let mut minus = inputs.to_vec();
    minus[input_idx].data_mut()[coord] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// Relative-error comparison used by every finite-difference check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
