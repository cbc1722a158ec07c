//! Minimal CNN engine and the attention positioning network.
//!
//! Layers keep explicit forward caches and hand-written backward passes.
//! Everything is generic over [`Real`] so training runs in `f32` while
//! gradient checks run in `f64`.

pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use model::{parameter_footprint, Footprint, ModelConfig, ModelKind, PosNet};

pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A named tensor of learnable weights (with gradient) or running statistics
/// (empty gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn trainable(shape: &[usize], value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            shape: shape.to_vec(),
            grad: vec![T::zero(); value.len()],
            value,
        }
    }

    pub fn running(shape: &[usize], value: Vec<T>) -> Self {
        Self {
            shape: shape.to_vec(),
            value,
            grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Trainable,
    Running,
}

pub struct Slot<'a, T> {
    pub name: String,
    pub kind: SlotKind,
    pub param: &'a mut Param<T>,
}

/// Anything that owns parameters.
pub trait Module<T: Real> {
    /// Appends every tensor in a fixed order, names prefixed by `prefix`.
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>);

    fn all_slots(&mut self) -> Vec<Slot<'_, T>>
    where
        Self: Sized,
    {
        let mut out = Vec::new();
        self.slots("", &mut out);
        out
    }

    fn trainable_params(&mut self) -> Vec<&mut Param<T>>
    where
        Self: Sized,
    {
        self.all_slots()
            .into_iter()
            .filter(|s| s.kind == SlotKind::Trainable)
            .map(|s| s.param)
            .collect()
    }

    fn zero_grad(&mut self)
    where
        Self: Sized,
    {
        for p in self.trainable_params() {
            p.zero_grad();
        }
    }

    fn parameter_count(&mut self) -> usize
    where
        Self: Sized,
    {
        self.trainable_params().iter().map(|p| p.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn trainable<'a, T>(out: &mut Vec<Slot<'a, T>>, prefix: &str, name: &str, p: &'a mut Param<T>) {
    out.push(Slot {
        name: join(prefix, name),
        kind: SlotKind::Trainable,
        param: p,
    });
}

pub(crate) fn running<'a, T>(out: &mut Vec<Slot<'a, T>>, prefix: &str, name: &str, p: &'a mut Param<T>) {
    out.push(Slot {
        name: join(prefix, name),
        kind: SlotKind::Running,
        param: p,
    });
}

/// Output shapes recorded during a traced forward pass.
pub type Trace = Vec<(&'static str, Vec<usize>)>;

pub(crate) fn record(trace: &mut Option<&mut Trace>, name: &'static str, shape: &[usize]) {
    if let Some(t) = trace.as_deref_mut() {
        t.push((name, shape.to_vec()));
    }
}
