//! Named parameter storage and the Adam optimizer.
//!
//! Model structs hold [`ParamId`]s; the values live here so the trainer,
//! optimizer, and checkpoint writer all see one flat namespace. Values are
//! `Rc`-shared with tapes: once a tape is dropped the optimizer updates in
//! place without copying.

use ndarray::ArrayD;
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

pub struct ParamEntry {
    pub name: String,
    pub value: Rc<ArrayD<f64>>,
    /// Trainable parameters receive optimizer updates; buffers (spectral-norm
    /// power-iteration vectors, frozen backbone weights) do not.
    pub trainable: bool,
}

#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Rc::new(value),
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.entries[id.0].value)
    }

    pub fn array(&self, id: ParamId) -> ArrayD<f64> {
        (*self.entries[id.0].value).clone()
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set(&mut self, id: ParamId, value: ArrayD<f64>) {
        let entry = &mut self.entries[id.0];
        assert_eq!(
            entry.value.shape(),
            value.shape(),
            "set() must preserve shape of `{}`",
            entry.name
        );
        entry.value = Rc::new(value);
    }

    /// In-place update; clones only if a tape still holds the value.
    pub fn update_with(&mut self, id: ParamId, f: impl FnOnce(&mut ArrayD<f64>)) {
        let entry = &mut self.entries[id.0];
        f(Rc::make_mut(&mut entry.value));
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar elements across trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Adam with configurable moment decays; the default follows the two
/// time-scale setup used by the trainer (beta1 = 0, beta2 = 0.999).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<ParamId, ArrayD<f64>>,
    v: HashMap<ParamId, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update over `(param, gradient)` pairs. Gradients for
    /// non-trainable entries are rejected.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, ArrayD<f64>)]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut sorted: Vec<&(ParamId, ArrayD<f64>)> = grads.iter().collect();
        sorted.sort_by_key(|(id, _)| *id);
        for (id, g) in sorted {
            assert!(
                store.trainable(*id),
                "gradient supplied for non-trainable `{}`",
                store.name(*id)
            );
            let m = self
                .m
                .entry(*id)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(*id)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *m).and(g).for_each(|mi, &gi| {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|vi, &gi| {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            });
            let (lr, eps) = (self.lr, self.eps);
            let (m_ref, v_ref) = (&*m, &*v);
            store.update_with(*id, |p| {
                ndarray::Zip::from(p)
                    .and(m_ref)
                    .and(v_ref)
                    .for_each(|pi, &mi, &vi| {
                        let mhat = mi / bc1;
                        let vhat = vi / bc2;
                        *pi -= lr * mhat / (vhat.sqrt() + eps);
                    });
            });
        }
    }

    /// Snapshot moments for checkpointing: (param id, m, v) plus step count.
    pub fn state(&self) -> (u64, Vec<(ParamId, ArrayD<f64>, ArrayD<f64>)>) {
        let mut ids: Vec<ParamId> = self.m.keys().copied().collect();
        ids.sort();
        let moments = ids
            .into_iter()
            .map(|id| (id, self.m[&id].clone(), self.v[&id].clone()))
            .collect();
        (self.step, moments)
    }

    pub fn restore(&mut self, step: u64, moments: Vec<(ParamId, ArrayD<f64>, ArrayD<f64>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (id, m, v) in moments {
            self.m.insert(id, m);
            self.v.insert(id, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn zero_lr_leaves_params_untouched() {
        let mut store = ParamStore::new();
        let id = store.insert("w", ArrayD::from_elem(IxDyn(&[3]), 2.0), true);
        let before = store.array(id);
        let mut adam = Adam::new(0.0, 0.0, 0.999);
        adam.step(
            &mut store,
            &[(id, ArrayD::from_elem(IxDyn(&[3]), 1.0))],
        );
        assert_eq!(store.array(id), before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(w) = (w - 3)^2 / 2, gradient w - 3
        let mut store = ParamStore::new();
        let id = store.insert("w", ArrayD::from_elem(IxDyn(&[1]), 0.0), true);
        let mut adam = Adam::new(0.05, 0.0, 0.999);
        for _ in 0..400 {
            let w = store.array(id)[[0]];
            adam.step(
                &mut store,
                &[(id, ArrayD::from_elem(IxDyn(&[1]), w - 3.0))],
            );
        }
        let w = store.array(id)[[0]];
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn moments_round_trip() {
        let mut store = ParamStore::new();
        let id = store.insert("w", ArrayD::from_elem(IxDyn(&[2]), 1.0), true);
        let mut adam = Adam::new(0.01, 0.5, 0.999);
        adam.step(&mut store, &[(id, ArrayD::from_elem(IxDyn(&[2]), 0.3))]);
        let (step, moments) = adam.state();
        let mut other = Adam::new(0.01, 0.5, 0.999);
        other.restore(step, moments);
        let (s2, m2) = other.state();
        assert_eq!(step, s2);
        assert_eq!(adam.state().1, m2);
    }
}
