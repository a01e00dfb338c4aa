//! Compressed sparse row matrices and a Krylov solver for symmetric systems.

/// Square CSR matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row `(column, value)` lists. Columns within a
    /// row must be strictly increasing.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < n);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Returns `A + diag(d)`. Every diagonal entry must already be stored.
    pub fn with_added_diagonal(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            let range = out.row_ptr[i]..out.row_ptr[i + 1];
            let k = out.col_idx[range.clone()]
                .binary_search(&i)
                .expect("diagonal entry is stored");
            out.values[range.start + k] += di;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        dense
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`, recomputed from the returned solution.
    pub relative_residual: f64,
    pub converged: bool,
    /// Relative residual norm after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Conjugate residual iteration for symmetric `A`.
///
/// Among the conjugate-gradient family this variant minimizes `||b - A x||`
/// over the growing Krylov space, so the residual norm never increases.
pub fn conjugate_residual(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> SolveReport {
    let n = a.dim();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return SolveReport {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            history: vec![0.0],
        };
    }
    let mut x = x0.to_vec();
    let mut r: Vec<f64> = b
        .iter()
        .zip(a.matvec(&x))
        .map(|(bi, axi)| bi - axi)
        .collect();
    let mut ar = a.matvec(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rar = dot(&r, &ar);
    let mut history = vec![norm(&r) / b_norm];
    let mut iterations = 0;

    while history[iterations] > tol && iterations < max_iters {
        let apap = dot(&ap, &ap);
        if apap == 0.0 || rar == 0.0 {
            break;
        }
        let alpha = rar / apap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        history.push(norm(&r) / b_norm);
        a.matvec_into(&r, &mut ar);
        let rar_next = dot(&r, &ar);
        let beta = rar_next / rar;
        rar = rar_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
    }

    let true_residual: Vec<f64> = b
        .iter()
        .zip(a.matvec(&x))
        .map(|(bi, axi)| bi - axi)
        .collect();
    let relative_residual = norm(&true_residual) / b_norm;
    SolveReport {
        solution: x,
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
        history,
    }
}
