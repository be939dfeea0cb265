//! Execution context abstraction for network forward passes.
//!
//! Model code (generator, discriminators, emotion embedder, mock SER) is
//! written once against [`Ctx`] and runs in two modes:
//!
//! * [`GraphCtx`] records onto an autodiff [`Graph`] for training; parameter
//!   lookups become leaves (or constants for frozen stores) and are memoized
//!   so the optimizer can map gradients back by name.
//! * [`PlainCtx`] evaluates eagerly on [`Tensor`]s; intermediates drop as
//!   soon as they go out of scope, which keeps long-input inference cheap.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::graph::{Graph, Var};
use crate::kernels as k;
use crate::mel::MelAnalyzer;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub trait Ctx {
    type T: Clone;

    fn param(&mut self, name: &str) -> Self::T;
    fn constant(&mut self, t: Tensor) -> Self::T;
    fn numel(&self, t: &Self::T) -> usize;
    fn dims(&self, t: &Self::T) -> Vec<usize>;
    fn snapshot(&self, t: &Self::T) -> Tensor;

    fn conv1d(&mut self, x: &Self::T, w: &Self::T, b: &Self::T, stride: usize, dilation: usize, pad: usize) -> Self::T;
    fn tconv1d(&mut self, x: &Self::T, w: &Self::T, b: &Self::T, stride: usize) -> Self::T;
    fn conv2d_rows(&mut self, x: &Self::T, w: &Self::T, b: &Self::T, stride: usize, pad: usize) -> Self::T;
    fn avg_pool1d(&mut self, x: &Self::T, kernel: usize, stride: usize, pad: usize) -> Self::T;
    fn matvec(&mut self, w: &Self::T, x: &Self::T) -> Self::T;

    fn leaky_relu(&mut self, x: &Self::T, slope: f64) -> Self::T;
    fn tanh(&mut self, x: &Self::T) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn affine(&mut self, x: &Self::T, a: f64, b: f64) -> Self::T;

    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Self::T;
    fn transpose2(&mut self, x: &Self::T) -> Self::T;
    fn pad_reflect_end(&mut self, x: &Self::T, n: usize) -> Self::T;
    fn embed_rows(&mut self, table: &Self::T, indices: &[u32]) -> Self::T;
    fn concat_cols(&mut self, parts: &[Self::T]) -> Self::T;
    fn broadcast_row(&mut self, v: &Self::T, rows: usize) -> Self::T;
    fn mean_axis1(&mut self, x: &Self::T) -> Self::T;
    fn dot(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn log_mel(&mut self, x: &Self::T, analyzer: &Arc<MelAnalyzer>) -> Self::T;
}

/// Eager evaluation over a read-only parameter store.
pub struct PlainCtx<'a> {
    pub store: &'a ParamStore,
}

impl<'a> PlainCtx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        PlainCtx { store }
    }
}

impl Ctx for PlainCtx<'_> {
    type T = Tensor;

    fn param(&mut self, name: &str) -> Tensor {
        self.store.get(name).clone()
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn numel(&self, t: &Tensor) -> usize {
        t.numel()
    }

    fn dims(&self, t: &Tensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn snapshot(&self, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn conv1d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, dilation: usize, pad: usize) -> Tensor {
        k::conv1d_fwd(x, w, b, stride, dilation, pad)
    }

    fn tconv1d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
        let kk = w.dim(2);
        assert!(kk >= stride && (kk - stride).is_multiple_of(2));
        let pad = kk - 1 - (kk - stride) / 2;
        if stride == 1 {
            return k::conv1d_fwd(x, w, b, 1, 1, pad);
        }
        let stuffed = k::zero_stuff(x, stride);
        k::conv1d_fwd(&stuffed, w, b, 1, 1, pad)
    }

    fn conv2d_rows(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        k::conv2d_rows_fwd(x, w, b, stride, pad)
    }

    fn avg_pool1d(&mut self, x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Tensor {
        k::avg_pool1d_fwd(x, kernel, stride, pad)
    }

    fn matvec(&mut self, w: &Tensor, x: &Tensor) -> Tensor {
        k::matvec(w, x)
    }

    fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Tensor {
        x.map(|v| if v >= 0.0 { v } else { slope * v })
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::tanh)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = a.clone();
        out.add_assign(b);
        out
    }

    fn affine(&mut self, x: &Tensor, a: f64, b: f64) -> Tensor {
        x.map(|v| a * v + b)
    }

    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Tensor {
        x.clone().reshaped(shape)
    }

    fn transpose2(&mut self, x: &Tensor) -> Tensor {
        k::transpose2(x)
    }

    fn pad_reflect_end(&mut self, x: &Tensor, n: usize) -> Tensor {
        if n == 0 {
            x.clone()
        } else {
            k::pad_reflect_end(x, n)
        }
    }

    fn embed_rows(&mut self, table: &Tensor, indices: &[u32]) -> Tensor {
        let d = table.dim(1);
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (i, &u) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(u as usize));
        }
        out
    }

    fn concat_cols(&mut self, parts: &[Tensor]) -> Tensor {
        let r = parts[0].dim(0);
        let total: usize = parts.iter().map(|p| p.dim(1)).sum();
        let mut out = Tensor::zeros(&[r, total]);
        let mut col = 0;
        for p in parts {
            let w = p.dim(1);
            for i in 0..r {
                out.row_mut(i)[col..col + w].copy_from_slice(p.row(i));
            }
            col += w;
        }
        out
    }

    fn broadcast_row(&mut self, v: &Tensor, rows: usize) -> Tensor {
        let d = v.numel();
        let mut out = Tensor::zeros(&[rows, d]);
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(v.data());
        }
        out
    }

    fn mean_axis1(&mut self, x: &Tensor) -> Tensor {
        let (r, c) = (x.dim(0), x.dim(1));
        let mut out = Tensor::zeros(&[r]);
        for i in 0..r {
            out.data_mut()[i] = x.row(i).iter().sum::<f64>() / c as f64;
        }
        out
    }

    fn dot(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        Tensor::scalar(s)
    }

    fn log_mel(&mut self, x: &Tensor, analyzer: &Arc<MelAnalyzer>) -> Tensor {
        analyzer
            .log_mel(x.data())
            .expect("log_mel on a clip shorter than the analysis window")
    }
}

/// Records into an autodiff graph. `trainable` decides whether parameter
/// lookups become gradient leaves or constants (a frozen discriminator
/// during the generator update, for example).
pub struct GraphCtx<'a> {
    pub graph: &'a mut Graph,
    store: &'a ParamStore,
    trainable: bool,
    touched: BTreeMap<String, Var>,
}

impl<'a> GraphCtx<'a> {
    pub fn new(graph: &'a mut Graph, store: &'a ParamStore, trainable: bool) -> Self {
        GraphCtx {
            graph,
            store,
            trainable,
            touched: BTreeMap::new(),
        }
    }

    /// Parameter name -> graph leaf, for routing gradients to the optimizer.
    pub fn touched_params(&self) -> &BTreeMap<String, Var> {
        &self.touched
    }
}

impl Ctx for GraphCtx<'_> {
    type T = Var;

    fn param(&mut self, name: &str) -> Var {
        if let Some(v) = self.touched.get(name) {
            return *v;
        }
        let t = self.store.get(name).clone();
        let v = if self.trainable {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.touched.insert(name.to_string(), v);
        v
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    fn numel(&self, t: &Var) -> usize {
        self.graph.value(*t).numel()
    }

    fn dims(&self, t: &Var) -> Vec<usize> {
        self.graph.value(*t).shape().to_vec()
    }

    fn snapshot(&self, t: &Var) -> Tensor {
        self.graph.value(*t).clone()
    }

    fn conv1d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, dilation: usize, pad: usize) -> Var {
        self.graph.conv1d(*x, *w, *b, stride, dilation, pad)
    }

    fn tconv1d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize) -> Var {
        self.graph.tconv1d(*x, *w, *b, stride)
    }

    fn conv2d_rows(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Var {
        self.graph.conv2d_rows(*x, *w, *b, stride, pad)
    }

    fn avg_pool1d(&mut self, x: &Var, kernel: usize, stride: usize, pad: usize) -> Var {
        self.graph.avg_pool1d(*x, kernel, stride, pad)
    }

    fn matvec(&mut self, w: &Var, x: &Var) -> Var {
        self.graph.matvec(*w, *x)
    }

    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Var {
        self.graph.leaky_relu(*x, slope)
    }

    fn tanh(&mut self, x: &Var) -> Var {
        self.graph.tanh(*x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        self.graph.add(*a, *b)
    }

    fn affine(&mut self, x: &Var, a: f64, b: f64) -> Var {
        self.graph.affine(*x, a, b)
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Var {
        self.graph.reshape(*x, shape)
    }

    fn transpose2(&mut self, x: &Var) -> Var {
        self.graph.transpose2(*x)
    }

    fn pad_reflect_end(&mut self, x: &Var, n: usize) -> Var {
        self.graph.pad_reflect_end(*x, n)
    }

    fn embed_rows(&mut self, table: &Var, indices: &[u32]) -> Var {
        self.graph.embed_rows(*table, indices)
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Var {
        self.graph.concat_cols(parts)
    }

    fn broadcast_row(&mut self, v: &Var, rows: usize) -> Var {
        self.graph.broadcast_row(*v, rows)
    }

    fn mean_axis1(&mut self, x: &Var) -> Var {
        self.graph.mean_axis1(*x)
    }

    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        self.graph.dot(*a, *b)
    }

    fn log_mel(&mut self, x: &Var, analyzer: &Arc<MelAnalyzer>) -> Var {
        self.graph.log_mel(*x, analyzer)
    }
}
