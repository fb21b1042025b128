use std::collections::BTreeMap;

use super::Tensor;

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient for one parameter. Embedding tables only ever see a handful of
/// rows per example, so gathers accumulate sparsely until something forces a
/// dense view.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Accumulated gradients keyed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<ParamGrad>>,
    lens: Vec<usize>,
    widths: Vec<usize>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            slots: vec![None; store.len()],
            lens: store.tensors.iter().map(Tensor::len).collect(),
            widths: store.tensors.iter().map(Tensor::cols).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.slots[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn zero(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    /// Materialized gradient; zeros if the parameter was never touched.
    pub fn dense(&self, id: ParamId) -> Vec<f64> {
        let len = self.lens[id.0];
        match &self.slots[id.0] {
            None => vec![0.0; len],
            Some(ParamGrad::Dense(v)) => v.clone(),
            Some(ParamGrad::Rows(rows)) => {
                let width = self.widths[id.0];
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    add_into(&mut out[r * width..(r + 1) * width], g);
                }
                out
            }
        }
    }

    fn densify(&mut self, id: ParamId) -> &mut Vec<f64> {
        if !matches!(self.slots[id.0], Some(ParamGrad::Dense(_))) {
            let dense = self.dense(id);
            self.slots[id.0] = Some(ParamGrad::Dense(dense));
        }
        match &mut self.slots[id.0] {
            Some(ParamGrad::Dense(v)) => v,
            _ => unreachable!(),
        }
    }

    pub fn add_dense(&mut self, id: ParamId, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.lens[id.0]);
        add_into(self.densify(id), grad);
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, grad: &[f64]) {
        let width = self.widths[id.0];
        debug_assert_eq!(grad.len(), width);
        match &mut self.slots[id.0] {
            slot @ None => {
                let mut rows = BTreeMap::new();
                rows.insert(row, grad.to_vec());
                *slot = Some(ParamGrad::Rows(rows));
            }
            Some(ParamGrad::Rows(rows)) => match rows.get_mut(&row) {
                Some(existing) => add_into(existing, grad),
                None => {
                    rows.insert(row, grad.to_vec());
                }
            },
            Some(ParamGrad::Dense(v)) => add_into(&mut v[row * width..(row + 1) * width], grad),
        }
    }

    /// Adds `other` into `self`. Both must come from the same store layout.
    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (i, slot) in other.slots.iter().enumerate() {
            let id = ParamId(i);
            match slot {
                None => {}
                Some(ParamGrad::Dense(v)) => self.add_dense(id, v),
                Some(ParamGrad::Rows(rows)) => {
                    for (&r, g) in rows {
                        self.add_row(id, r, g);
                    }
                }
            }
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slots.iter_mut().flatten().flat_map(|g| match g {
            ParamGrad::Dense(v) => Box::new(v.iter_mut()) as Box<dyn Iterator<Item = &mut f64>>,
            ParamGrad::Rows(rows) => Box::new(rows.values_mut().flat_map(|r| r.iter_mut())),
        })
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|x| *x *= factor);
    }

    pub fn global_norm(&self) -> f64 {
        let mut total = 0.0;
        for g in self.slots.iter().flatten() {
            match g {
                ParamGrad::Dense(v) => total += v.iter().map(|x| x * x).sum::<f64>(),
                ParamGrad::Rows(rows) => {
                    for r in rows.values() {
                        total += r.iter().map(|x| x * x).sum::<f64>();
                    }
                }
            }
        }
        total.sqrt()
    }

    /// First parameter holding a NaN or infinite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.slots.iter().enumerate().find_map(|(i, g)| {
            let bad = match g.as_ref()? {
                ParamGrad::Dense(v) => v.iter().any(|x| !x.is_finite()),
                ParamGrad::Rows(rows) => rows.values().flatten().any(|x| !x.is_finite()),
            };
            bad.then_some(ParamId(i))
        })
    }
}
