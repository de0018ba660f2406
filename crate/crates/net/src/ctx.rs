//! Forward-pass context: binds stored parameters onto a tape.
//!
//! Parameters bind once per context, so a module reusing a weight sees the
//! same tape node and gradients accumulate correctly. Buffer updates produced
//! during the pass (spectral-norm power-iteration vectors) are queued here and
//! applied by the trainer after the optimizer step.

use ndarray::ArrayD;
use std::cell::RefCell;
use std::collections::HashMap;
use warpgen_core::{Gradients, ParamId, ParamStore, Tape, Var};

pub struct Forward<'a> {
    pub tape: &'a Tape,
    pub store: &'a ParamStore,
    /// Training mode: spectral-norm power iteration advances; eval mode
    /// freezes the buffers.
    pub training: bool,
    /// Whether trainable parameters bind with gradients.
    bind_grads: bool,
    bound: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, ArrayD<f64>)>>,
}

impl<'a> Forward<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore, training: bool) -> Self {
        Forward {
            tape,
            store,
            training,
            bind_grads: training,
            bound: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn eval(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Self::new(tape, store, false)
    }

    /// Gradients flow to parameters but buffers stay frozen: the forward is
    /// then a pure function of the stored weights, so analytic gradients are
    /// directly comparable with finite differences.
    pub fn for_gradcheck(tape: &'a Tape, store: &'a ParamStore) -> Self {
        let mut fx = Self::new(tape, store, false);
        fx.bind_grads = true;
        fx
    }

    /// Bind a parameter as a tape leaf (cached per context).
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.borrow().get(&id) {
            return v;
        }
        let needs_grad = self.bind_grads && self.store.trainable(id);
        let var = self.tape.leaf_rc(self.store.value(id), needs_grad);
        self.bound.borrow_mut().insert(id, var);
        var
    }

    /// Current value of a buffer (no tape node).
    pub fn buffer_value(&self, id: ParamId) -> ArrayD<f64> {
        // pending updates from this pass take precedence over the store
        let pending = self.buffer_updates.borrow();
        for (pid, value) in pending.iter().rev() {
            if *pid == id {
                return value.clone();
            }
        }
        self.store.array(id)
    }

    pub fn queue_buffer_update(&self, id: ParamId, value: ArrayD<f64>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Drain queued buffer updates (applied in order; later entries win).
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, ArrayD<f64>)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    /// Collect gradients for bound parameters restricted to `ids`.
    pub fn grads_for(&self, grads: &mut Gradients, ids: &[ParamId]) -> Vec<(ParamId, ArrayD<f64>)> {
        let bound = self.bound.borrow();
        let mut out = Vec::new();
        let mut sorted = ids.to_vec();
        sorted.sort();
        for id in sorted {
            if let Some(&var) = bound.get(&id) {
                if let Some(g) = grads.take(var) {
                    out.push((id, g));
                }
            }
        }
        out
    }

    /// Gradient of one parameter if it was bound and reached by backward.
    pub fn grad_of(&self, grads: &Gradients, id: ParamId) -> Option<ArrayD<f64>> {
        let bound = self.bound.borrow();
        bound.get(&id).and_then(|&v| grads.get(v).cloned())
    }

    /// Consume the context, releasing its store borrow but keeping the
    /// binding map so gradients can be collected later (the tape outlives
    /// the context).
    pub fn into_parts(self) -> (HashMap<ParamId, Var>, Vec<(ParamId, ArrayD<f64>)>) {
        (
            self.bound.into_inner(),
            self.buffer_updates.into_inner(),
        )
    }
}

/// Collect gradients for `ids` out of a saved binding map.
pub fn collect_grads(
    bindings: &HashMap<ParamId, Var>,
    grads: &mut Gradients,
    ids: &[ParamId],
) -> Vec<(ParamId, ArrayD<f64>)> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut out = Vec::new();
    for id in sorted {
        if let Some(&var) = bindings.get(&id) {
            if let Some(g) = grads.take(var) {
                out.push((id, g));
            }
        }
    }
    out
}

/// Apply drained buffer updates to the store.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(ParamId, ArrayD<f64>)>) {
    for (id, value) in updates {
        store.set(id, value);
    }
}
