use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Scalar type of the network (f32 for training, f64 for gradient checks).
pub trait Real: Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Network shape. The input is `n_arrival + n_service + output` wide, the
/// output is `l + 1` wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub n_arrival: usize,
    pub n_service: usize,
    pub output: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl Arch {
    pub fn new(n_arrival: usize, n_service: usize, l: usize, layers: usize, hidden: usize) -> Result<Self> {
        let a = Arch { n_arrival, n_service, output: l + 1, layers, hidden };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_arrival == 0 || self.n_service == 0 || self.output < 2 || self.layers == 0 || self.hidden == 0 {
            return invalid(format!("degenerate architecture {self:?}"));
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        self.n_arrival + self.n_service + self.output
    }

    fn layer_input(&self, k: usize) -> usize {
        if k == 0 { self.input() } else { self.hidden }
    }
}

/// Offsets of one named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerOffsets {
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
    pub input: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub layers: Vec<LayerOffsets>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn of(a: &Arch) -> Self {
        let h4 = 4 * a.hidden;
        let mut off = 0;
        let layers = (0..a.layers)
            .map(|k| {
                let input = a.layer_input(k);
                let l = LayerOffsets { w_ih: off, w_hh: off + h4 * input, bias: off + h4 * input + h4 * a.hidden, input };
                off = l.bias + h4;
                l
            })
            .collect();
        let head_w = off;
        let head_b = head_w + a.output * a.hidden;
        Layout { layers, head_w, head_b, total: head_b + a.output }
    }
}

/// Named tensors in storage order. Gates are stacked `i, f, g, o` along the
/// first axis of `w_ih`, `w_hh` and `bias`.
pub fn tensor_slots(a: &Arch) -> Vec<TensorSlot> {
    let lay = Layout::of(a);
    let h4 = 4 * a.hidden;
    let mut out = Vec::new();
    for (k, l) in lay.layers.iter().enumerate() {
        out.push(TensorSlot { name: format!("lstm.{k}.w_ih"), shape: vec![h4, l.input], offset: l.w_ih });
        out.push(TensorSlot { name: format!("lstm.{k}.w_hh"), shape: vec![h4, a.hidden], offset: l.w_hh });
        out.push(TensorSlot { name: format!("lstm.{k}.bias"), shape: vec![h4], offset: l.bias });
    }
    out.push(TensorSlot { name: "head.weight".into(), shape: vec![a.output, a.hidden], offset: lay.head_w });
    out.push(TensorSlot { name: "head.bias".into(), shape: vec![a.output], offset: lay.head_b });
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub arch: Arch,
    pub data: Vec<F>,
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(arch: Arch) -> Self {
        let n = Layout::of(&arch).total;
        ModelParams { arch, data: vec![F::zero(); n] }
    }

    /// Uniform(±1/√H) everywhere, forget-gate bias +1.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let a = 1.0 / (arch.hidden as f64).sqrt();
        for v in p.data.iter_mut() {
            *v = F::of(rng.random_range(-a..a));
        }
        let lay = Layout::of(&arch);
        for l in &lay.layers {
            for j in 0..arch.hidden {
                p.data[l.bias + arch.hidden + j] = F::one();
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        tensor_slots(&self.arch).into_iter().find(|s| s.name == name).map(|s| &self.data[s.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams { arch: self.arch, data: self.data.iter().map(|v| G::of(v.f64())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn layout_is_contiguous() {
        let a = Arch::new(4, 4, 50, 3, 16).unwrap();
        let slots = tensor_slots(&a);
        let mut next = 0;
        for s in &slots {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, Layout::of(&a).total);
        assert_eq!(slots[0].shape, vec![64, 59]);
        assert_eq!(slots[3].shape, vec![64, 16]);
        assert_eq!(slots.last().unwrap().name, "head.bias");
    }

    #[test]
    fn init_sets_forget_bias() {
        let a = Arch::new(1, 1, 3, 2, 8).unwrap();
        let p: ModelParams<f32> = ModelParams::init(a, &mut rng_from_seed(1));
        for k in 0..2 {
            let b = p.tensor(&format!("lstm.{k}.bias")).unwrap();
            assert!(b[8..16].iter().all(|v| *v == 1.0));
            assert!(b[..8].iter().all(|v| v.abs() <= 1.0 / 8f32.sqrt()));
        }
        assert!(p.is_finite());
    }
}
