use std::cell::{Cell, RefCell};
use std::rc::Rc;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::imgcore::SeedSpec;

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording an autograd graph on this thread.
///
/// Layers read detached views of their parameters, so intermediates are
/// freed as soon as they are consumed. Nested calls are fine.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            NO_GRAD.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(NO_GRAD.with(|g| g.replace(true)));
    f()
}

pub fn grad_enabled() -> bool {
    !NO_GRAD.with(|g| g.get())
}

/// The tensor a layer should compute with: the parameter itself, or a
/// storage-sharing detached view inside [`no_grad`].
pub(crate) fn live(t: &Tensor) -> Tensor {
    if grad_enabled() {
        t.clone()
    } else {
        t.detach()
    }
}

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Const(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

struct Inner {
    device: Device,
    dtype: DType,
    seed: u64,
    vars: RefCell<Vec<(String, Var)>>,
}

/// Registry of trainable tensors in construction order.
///
/// Initial values are drawn from a stream keyed by the parameter's full name,
/// so the value of a given tensor does not depend on what else was built.
#[derive(Clone)]
pub struct ParamStore {
    inner: Rc<Inner>,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType, seed: u64) -> Self {
        Self {
            inner: Rc::new(Inner {
                device,
                dtype,
                seed,
                vars: RefCell::new(Vec::new()),
            }),
        }
    }

    pub fn device(&self) -> &Device {
        &self.inner.device
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn vars(&self) -> Vec<(String, Var)> {
        self.inner.vars.borrow().clone()
    }

    pub fn len(&self) -> usize {
        self.inner.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_elements(&self) -> usize {
        self.inner.vars.borrow().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner
            .vars
            .borrow()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
    }

    /// Overwrites every parameter whose name satisfies `pred` with zeros.
    pub fn zero_where(&self, pred: impl Fn(&str) -> bool) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.inner.vars.borrow().iter() {
            if pred(name) {
                var.set(&var.zeros_like()?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    fn create(&self, name: String, shape: Shape, init: Init) -> Result<Tensor> {
        let mut vars = self.inner.vars.borrow_mut();
        if vars.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let count = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; count],
            Init::Uniform(bound) => {
                let mut rng = SeedSpec::new(self.inner.seed, format!("init/{name}")).rng();
                (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.inner.device)?.to_dtype(self.inner.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        vars.push((name, var));
        Ok(tensor)
    }
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, part: impl AsRef<str>) -> Scope {
        let prefix = if self.prefix.is_empty() {
            part.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, part.as_ref())
        };
        Scope {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn var(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.create(full, shape.into(), init)
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}
