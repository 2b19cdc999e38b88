//! Sparse symmetric LDLᵀ factorization with a minimum-degree elimination
//! order. Sized for susceptance matrices of a few hundred buses.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SingularPivot {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LdlFactor {
    order: Vec<usize>,
    diag: Vec<f64>,
    /// Column `k` of L (below the diagonal, in elimination order) stored
    /// under the original index of the pivot.
    columns: Vec<Vec<(usize, f64)>>,
}

/// Symmetric matrix stored by rows, both triangles present.
#[derive(Debug, Clone)]
pub(crate) struct SymmetricMatrix {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { rows: vec![BTreeMap::new(); n] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Adds `value` at (i, j) and, off the diagonal, at (j, i).
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        *self.rows[i].entry(j).or_insert(0.0) += value;
        if i != j {
            *self.rows[j].entry(i).or_insert(0.0) += value;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|(&j, &a)| a * x[j]).sum()).collect()
    }

    pub fn factor(&self) -> Result<LdlFactor, SingularPivot> {
        let n = self.dim();
        let mut rows = self.rows.clone();
        let mut eliminated = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut diag = vec![0.0; n];
        let mut columns = vec![Vec::new(); n];
        let scale = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.get(&i).copied().unwrap_or(0.0).abs())
            .fold(0.0, f64::max);

        for _ in 0..n {
            // minimum degree, lowest index on ties
            let k = (0..n)
                .filter(|&i| !eliminated[i])
                .min_by_key(|&i| (rows[i].len(), i))
                .unwrap();
            let pivot = rows[k].get(&k).copied().unwrap_or(0.0);
            if !(pivot.abs() > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
                return Err(SingularPivot { index: k, value: pivot });
            }
            let neighbours: Vec<(usize, f64)> =
                rows[k].iter().filter(|(&j, _)| j != k).map(|(&j, &a)| (j, a)).collect();
            for &(i, a_ik) in &neighbours {
                let l_ik = a_ik / pivot;
                for &(j, a_kj) in &neighbours {
                    *rows[i].entry(j).or_insert(0.0) -= l_ik * a_kj;
                }
                rows[i].remove(&k);
            }
            columns[k] = neighbours.iter().map(|&(i, a)| (i, a / pivot)).collect();
            diag[k] = pivot;
            rows[k].clear();
            eliminated[k] = true;
            order.push(k);
        }
        Ok(LdlFactor { order, diag, columns })
    }
}

impl LdlFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        for &k in &self.order {
            let xk = x[k];
            for &(i, l) in &self.columns[k] {
                x[i] -= l * xk;
            }
        }
        for &k in &self.order {
            x[k] /= self.diag[k];
        }
        for &k in self.order.iter().rev() {
            let mut acc = x[k];
            for &(i, l) in &self.columns[k] {
                acc -= l * x[i];
            }
            x[k] = acc;
        }
        x
    }
}
