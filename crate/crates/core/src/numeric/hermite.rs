//! Gauss–Hermite quadrature for expectations under the standard normal law.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use super::CompensatedSum;
use crate::error::{invalid, Result};

/// Nodes and weights with `Σ w_i g(z_i) ≈ E[g(Z)]`, `Z ~ N(0, 1)`.
///
/// Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite polynomials and are polished by Newton steps on the
/// orthonormal three-term recurrence; weights use `w_i = 1 / (q p_{q-1}(z_i)²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 256 {
            return Err(invalid(format!(
                "Gauss–Hermite order {order} outside 1..=256"
            )));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(f64::total_cmp);

        let q = order as f64;
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (p, pm1) = orthonormal(order, *x);
                if pm1 == 0.0 {
                    break;
                }
                let step = p / (q.sqrt() * pm1);
                *x -= step;
                if step.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        // Enforce exact symmetry of the rule.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let m = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -m;
            nodes[j] = m;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (_, pm1) = orthonormal(order, x);
                1.0 / (q * pm1 * pm1)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(Z)]` for scalar `Z ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        let mut acc = CompensatedSum::new();
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * g(z));
        }
        acc.value()
    }

    /// `E[g(Z)]` for `Z ~ N(0, I_d)` on the tensor-product rule.
    pub fn expect_tensor<F: FnMut(&[f64]) -> f64>(&self, dim: usize, mut g: F) -> f64 {
        let q = self.order();
        let mut idx = vec![0usize; dim];
        let mut z = vec![0.0; dim];
        let mut acc = CompensatedSum::new();
        loop {
            let mut w = 1.0;
            for (a, &i) in idx.iter().enumerate() {
                z[a] = self.nodes[i];
                w *= self.weights[i];
            }
            acc.add(w * g(&z));
            let mut a = 0;
            loop {
                if a == dim {
                    return acc.value();
                }
                idx[a] += 1;
                if idx[a] < q {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }
}

/// `(p_q(x), p_{q-1}(x))` for the orthonormal probabilists' Hermite family.
fn orthonormal(q: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..q {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Shared, lazily built rule of the given order.
pub fn gauss_hermite(order: usize) -> Result<Arc<GaussHermite>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&order) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(GaussHermite::new(order)?);
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert(order, rule.clone());
    Ok(rule)
}
