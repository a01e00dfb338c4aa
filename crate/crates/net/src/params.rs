//! Named parameter storage shared by all blocks of a network.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::BlockKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    /// Dotted block path, e.g. `img.enc0.down.pool_b.conv.w`.
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub kind: BlockKind,
    /// Running batch-norm statistics are stored but not optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, param: Param) -> ParamId {
        debug_assert_eq!(param.data.len(), param.shape.iter().product::<usize>());
        debug_assert!(
            self.find(&param.name).is_none(),
            "duplicate parameter {}",
            param.name
        );
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of optimized scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Snaps every value to the nearest `f32`, so that the single-precision
    /// checkpoint format stores the model exactly.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers parallel to a [`ParamStore`]; empty for frozen entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            bufs: store
                .params
                .iter()
                .map(|p| {
                    if p.trainable {
                        vec![0.0; p.data.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, values: &[f64]) {
        for (g, v) in self.bufs[id.0].iter_mut().zip(values) {
            *g += v;
        }
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Creates parameters with He-normal weights drawn from one seeded stream.
pub(crate) struct ParamBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl ParamBuilder<'_> {
    pub fn he_normal(
        &mut self,
        name: String,
        shape: Vec<usize>,
        fan_in: usize,
        kind: BlockKind,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(self.rng)).collect();
        self.store.push(Param {
            name,
            shape,
            data,
            kind,
            trainable: true,
        })
    }

    pub fn constant(
        &mut self,
        name: String,
        len: usize,
        value: f64,
        kind: BlockKind,
        trainable: bool,
    ) -> ParamId {
        self.filled(name, vec![len], value, kind, trainable)
    }

    pub fn filled(
        &mut self,
        name: String,
        shape: Vec<usize>,
        value: f64,
        kind: BlockKind,
        trainable: bool,
    ) -> ParamId {
        let len = shape.iter().product();
        self.store.push(Param {
            name,
            shape,
            data: vec![value; len],
            kind,
            trainable,
        })
    }
}
