//! Reverse-mode autodiff over `ndarray` double-precision tensors.
//!
//! A [`Tape`] records every operation as a node holding the forward value and
//! a backward closure; [`Tape::backward`] walks the tape in reverse and
//! accumulates cotangents. Values are `Rc`-shared so closures capture them
//! cheaply. Everything runs sequentially in f64, which keeps results
//! bit-reproducible for a fixed seed.

mod conv;
mod ops;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

type BackFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    parents: Vec<usize>,
    backward: Option<BackFn>,
    needs_grad: bool,
}

/// Handle to a node on a [`Tape`]. Cheap to copy; tied to the tape that
/// created it (checked at use).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Recording of one forward computation.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "Var used with a foreign tape");
        v.idx
    }

    /// Insert a leaf node.
    pub fn leaf(&self, value: ArrayD<f64>, needs_grad: bool) -> Var {
        self.leaf_rc(Rc::new(value), needs_grad)
    }

    pub fn leaf_rc(&self, value: Rc<ArrayD<f64>>, needs_grad: bool) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad,
        })
    }

    /// Insert a constant (never receives gradient).
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, c: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), c))
    }

    /// Re-enter a value as a gradient-stopping leaf.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.leaf_rc(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<ArrayD<f64>> {
        let idx = self.check(v);
        Rc::clone(&self.nodes.borrow()[idx].value)
    }

    /// Owned copy of a node's value.
    pub fn array(&self, v: Var) -> ArrayD<f64> {
        (*self.value(v)).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        let idx = self.check(v);
        self.nodes.borrow()[idx].value.shape().to_vec()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        let idx = self.check(v);
        self.nodes.borrow()[idx].needs_grad
    }

    /// Extract a scalar value from a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar_value on non-scalar node");
        value.iter().next().copied().unwrap()
    }

    pub(crate) fn unary(
        &self,
        parent: Var,
        value: ArrayD<f64>,
        back: impl Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
    ) -> Var {
        let pidx = self.check(parent);
        let needs = self.needs_grad(parent);
        self.push(Node {
            value: Rc::new(value),
            parents: vec![pidx],
            backward: if needs {
                Some(Box::new(move |g| vec![Some(back(g))]))
            } else {
                None
            },
            needs_grad: needs,
        })
    }

    pub(crate) fn binary(
        &self,
        a: Var,
        b: Var,
        value: ArrayD<f64>,
        back: impl Fn(&ArrayD<f64>, bool, bool) -> (Option<ArrayD<f64>>, Option<ArrayD<f64>>) + 'static,
    ) -> Var {
        let (ai, bi) = (self.check(a), self.check(b));
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        let needs = na || nb;
        self.push(Node {
            value: Rc::new(value),
            parents: vec![ai, bi],
            backward: if needs {
                Some(Box::new(move |g| {
                    let (ga, gb) = back(g, na, nb);
                    vec![ga, gb]
                }))
            } else {
                None
            },
            needs_grad: needs,
        })
    }

    pub(crate) fn nary(
        &self,
        parents: &[Var],
        value: ArrayD<f64>,
        back: impl Fn(&ArrayD<f64>, &[bool]) -> Vec<Option<ArrayD<f64>>> + 'static,
    ) -> Var {
        let idxs: Vec<usize> = parents.iter().map(|&p| self.check(p)).collect();
        let flags: Vec<bool> = parents.iter().map(|&p| self.needs_grad(p)).collect();
        let needs = flags.iter().any(|&f| f);
        self.push(Node {
            value: Rc::new(value),
            parents: idxs,
            backward: if needs {
                let flags2 = flags.clone();
                Some(Box::new(move |g| back(g, &flags2)))
            } else {
                None
            },
            needs_grad: needs,
        })
    }

    /// Reverse pass from a scalar root. Returns gradients for leaf nodes that
    /// were created with `needs_grad = true`.
    pub fn backward(&self, root: Var) -> Gradients {
        let root_idx = self.check(root);
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root_idx].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_idx] = Some(ArrayD::from_elem(nodes[root_idx].value.raw_dim(), 1.0));

        for idx in (0..=root_idx).rev() {
            if grads[idx].is_none() {
                continue;
            }
            let node = &nodes[idx];
            if let Some(back) = &node.backward {
                let g = grads[idx].take().unwrap();
                let parent_grads = back(&g);
                assert_eq!(parent_grads.len(), node.parents.len());
                for (pg, &pidx) in parent_grads.into_iter().zip(&node.parents) {
                    let Some(pg) = pg else { continue };
                    if !nodes[pidx].needs_grad {
                        continue;
                    }
                    assert_eq!(
                        pg.shape(),
                        nodes[pidx].value.shape(),
                        "gradient shape mismatch flowing into node {pidx}"
                    );
                    match &mut grads[pidx] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            } else if !node.needs_grad {
                // constant leaf: nothing to keep
                grads[idx] = None;
            }
            // leaves with needs_grad keep their slot for the caller
        }

        Gradients {
            tape: self.id,
            grads,
        }
    }
}

/// Result of a backward pass; indexable by the `Var`s of the originating tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        assert_eq!(v.tape, self.tape, "Gradients queried with a foreign Var");
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        assert_eq!(v.tape, self.tape, "Gradients queried with a foreign Var");
        self.grads.get_mut(v.idx).and_then(|g| g.take())
    }
}
