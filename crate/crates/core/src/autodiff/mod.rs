//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they execute and replays them in
//! reverse on [`Graph::backward`]. There is no broadcasting: every binary op
//! requires matching shapes and reports a [`crate::Error::Shape`] otherwise.
//!
//! ```
//! use latent_trees::autodiff::{Gradients, Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::vector(vec![1.0, 2.0]));
//! let mut g = Graph::new(&store);
//! let xv = g.param(x);
//! let sq = g.square(xv);
//! let loss = g.sum(sq);
//! let mut grads = Gradients::new(&store);
//! g.backward(loss, &mut grads).unwrap();
//! assert_eq!(grads.dense(x), vec![2.0, 4.0]);
//! ```

mod graph;
mod params;
mod tensor;

pub use graph::{argmax, Backward, Elementwise, Graph, Var};
pub use params::{Gradients, ParamGrad, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod fd {
    use super::*;

    /// Central-difference gradient of `f` with respect to every scalar in
    /// the store.
    pub fn numeric_grads(
        store: &ParamStore,
        step: f64,
        f: impl Fn(&ParamStore) -> f64,
    ) -> Vec<Vec<f64>> {
        let mut work = store.clone();
        store
            .ids()
            .map(|id| {
                (0..store.get(id).len())
                    .map(|k| {
                        let orig = work.get(id).data()[k];
                        work.get_mut(id).data_mut()[k] = orig + step;
                        let up = f(&work);
                        work.get_mut(id).data_mut()[k] = orig - step;
                        let down = f(&work);
                        work.get_mut(id).data_mut()[k] = orig;
                        (up - down) / (2.0 * step)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    /// Asserts analytic vs numeric agreement for every parameter scalar.
    pub fn check(
        store: &ParamStore,
        tol: f64,
        f: impl Fn(&ParamStore) -> f64,
        grads: &Gradients,
    ) {
        let numeric = numeric_grads(store, 1e-4, &f);
        for id in store.ids() {
            let analytic = grads.dense(id);
            for (k, (a, n)) in analytic.iter().zip(&numeric[id.index()]).enumerate() {
                assert!(
                    rel_err(*a, *n) < tol,
                    "{}[{k}]: analytic {a} vs numeric {n}",
                    store.name(id)
                );
            }
        }
    }

    pub fn uniform(rng: &mut impl rand::Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    }
}
