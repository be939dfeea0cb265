//! Named parameter storage and the Adam optimizer.
//!
//! Parameters live in `BTreeMap`s so every iteration order (updates,
//! serialization, digests) is deterministic.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter '{name}'");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Deterministic content hash over names and values.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
        for (name, t) in &self.map {
            for b in name.as_bytes() {
                h = h.rotate_left(5) ^ (*b as u64);
            }
            h = h.rotate_left(17) ^ t.digest();
        }
        h
    }
}

/// First/second-moment state, serialized with checkpoints so resumed runs
/// continue the exact trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr0: f64, beta1: f64, beta2: f64, decay: f64) -> Self {
        Adam {
            lr0,
            beta1,
            beta2,
            eps: 1e-8,
            decay,
            state: AdamState::default(),
        }
    }

    pub fn learning_rate(&self, epoch: u64) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }

    /// One update over every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, epoch: u64) {
        self.state.t += 1;
        let t = self.state.t;
        let lr = self.learning_rate(epoch);
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (name, g) in grads {
            let p = store.get_mut(name);
            let m = self
                .state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for i in 0..g.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
