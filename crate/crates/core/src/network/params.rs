use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
    /// Xavier/Glorot uniform for a `fan_in x fan_out` map.
    XavierUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names, shapes and offsets of every learnable tensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> TensorId {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        self.total += spec.len();
        self.specs.push(spec);
        TensorId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.specs.iter().position(|s| s.name == name).map(TensorId)
    }

    /// Tensor name and element index owning flat position `i`.
    pub fn locate(&self, i: usize) -> Option<(&TensorSpec, usize)> {
        self.specs
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.len())
            .map(|s| (s, i - s.offset))
    }
}

/// Flat storage for every tensor of a layout. Gradients, optimizer
/// moments and EMA weights use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![0.0; layout.total()];
        ParamStore { layout, data }
    }

    pub fn from_data(layout: Arc<ParamLayout>, data: Vec<f64>) -> Option<Self> {
        (data.len() == layout.total()).then_some(ParamStore { layout, data })
    }

    /// Draw every tensor from its initializer.
    pub fn init<R: Rng + ?Sized>(layout: Arc<ParamLayout>, rng: &mut R) -> Self {
        let mut store = ParamStore::zeros(layout.clone());
        for spec in layout.specs() {
            let slot = &mut store.data[spec.offset..spec.offset + spec.len()];
            match spec.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
                Init::Normal { std } => {
                    let n = Normal::new(0.0, std).expect("valid std");
                    slot.iter_mut().for_each(|v| *v = n.sample(rng));
                }
                Init::XavierUniform => {
                    let (fan_in, fan_out) = match spec.shape.as_slice() {
                        [a, b] => (*a, *b),
                        [a] => (*a, *a),
                        _ => (spec.len(), spec.len()),
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let u = Uniform::new_inclusive(-limit, limit).expect("valid range");
                    slot.iter_mut().for_each(|v| *v = u.sample(rng));
                }
            }
        }
        store
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn slice(&self, id: TensorId) -> &[f64] {
        let s = self.layout.spec(id);
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn slice_mut(&mut self, id: TensorId) -> &mut [f64] {
        let s = self.layout.spec(id);
        let (o, n) = (s.offset, s.len());
        &mut self.data[o..o + n]
    }

    pub fn mat(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let s = self.layout.spec(id);
        let (r, c) = (s.shape[0], s.len() / s.shape[0].max(1));
        ArrayView2::from_shape((r, c), self.slice(id)).expect("2d tensor")
    }

    pub fn mat_mut(&mut self, id: TensorId) -> ArrayViewMut2<'_, f64> {
        let s = self.layout.spec(id);
        let (r, c) = (s.shape[0], s.len() / s.shape[0].max(1));
        ArrayViewMut2::from_shape((r, c), self.slice_mut(id)).expect("2d tensor")
    }

    pub fn vec(&self, id: TensorId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(id))
    }

    pub fn vec_mut(&mut self, id: TensorId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.slice_mut(id))
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ParamStore) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// First non-finite entry as `(tensor name, element index)`.
    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.layout.locate(i))
            .map(|(s, k)| (s.name.clone(), k))
    }
}
