use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{argmax, ClusterError, ClusterModel, ModelBody};
use crate::rng::{seeded, unit_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NmfParams {
    pub k: usize,
    pub seed: u64,
    pub iters: usize,
}

impl Default for NmfParams {
    fn default() -> Self {
        Self {
            k: 50,
            seed: 0,
            iters: 100,
        }
    }
}

/// Sparse non-negative user × article count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCounts {
    pub rows: Vec<String>,
    /// Sorted column labels.
    pub cols: Vec<String>,
    /// Per row, `(column, value)` pairs sorted by column.
    pub entries: Vec<Vec<(usize, f64)>>,
}

impl SparseCounts {
    /// Counts occurrences of each article id per user.
    pub fn from_clicks<'a, U, A>(users: U) -> Self
    where
        U: IntoIterator<Item = (&'a str, A)>,
        A: IntoIterator<Item = &'a str>,
    {
        let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (user, clicks) in users {
            let row = rows.entry(String::from(user)).or_default();
            for a in clicks {
                *row.entry(String::from(a)).or_insert(0.0) += 1.0;
            }
        }
        let cols: Vec<String> = {
            let mut all: Vec<String> = rows.values().flat_map(|r| r.keys().cloned()).collect();
            all.sort();
            all.dedup();
            all
        };
        let entries = rows
            .values()
            .map(|r| {
                r.iter()
                    .map(|(a, v)| (cols.binary_search(a).expect("column collected above"), *v))
                    .collect()
            })
            .collect();
        Self {
            rows: rows.into_keys().collect(),
            cols,
            entries,
        }
    }

    /// Builds from a dense row-major matrix with generated labels.
    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let m = dense.first().map(Vec::len).unwrap_or(0);
        let rows = (0..dense.len()).map(|i| alloc::format!("r{i:06}")).collect();
        let cols = (0..m).map(|j| alloc::format!("c{j:06}")).collect();
        let entries = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        Self { rows, cols, entries }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    fn squared_norm(&self) -> f64 {
        self.entries.iter().flatten().map(|(_, v)| v * v).sum()
    }
}

/// `V ≈ W·H` with `W` (`n × k`) and `H` (`k × m`) stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
}

impl Factorization {
    /// Seeded strictly positive initialization scaled to the data.
    pub fn init(v: &SparseCounts, k: usize, seed: u64) -> Self {
        let (n, m) = (v.num_rows(), v.num_cols());
        let total: f64 = v.entries.iter().flatten().map(|(_, x)| x).sum();
        let scale = libm::sqrt(total / (n * m).max(1) as f64 / k as f64).max(1e-3);
        let mut rng = seeded(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| (0.01 + 0.99 * unit_f64(&mut rng)) * scale).collect()
        };
        let w = draw(n * k);
        let h = draw(k * m);
        Self { n, m, k, w, h }
    }

    fn gram_w(&self) -> Vec<f64> {
        let k = self.k;
        let mut g = vec![0.0; k * k];
        for row in self.w.chunks_exact(k) {
            for r in 0..k {
                for s in 0..k {
                    g[r * k + s] += row[r] * row[s];
                }
            }
        }
        g
    }

    fn gram_h(&self) -> Vec<f64> {
        let (k, m) = (self.k, self.m);
        let mut g = vec![0.0; k * k];
        for r in 0..k {
            for s in r..k {
                let x: f64 = self.h[r * m..(r + 1) * m]
                    .iter()
                    .zip(&self.h[s * m..(s + 1) * m])
                    .map(|(a, b)| a * b)
                    .sum();
                g[r * k + s] = x;
                g[s * k + r] = x;
            }
        }
        g
    }

    /// `H ← H ⊙ (WᵀV) ⊘ (WᵀW H)`.
    pub fn update_h(&mut self, v: &SparseCounts) {
        let (k, m) = (self.k, self.m);
        let mut num = vec![0.0; k * m];
        for (i, row) in v.entries.iter().enumerate() {
            let wi = &self.w[i * k..(i + 1) * k];
            for &(j, x) in row {
                for r in 0..k {
                    num[r * m + j] += wi[r] * x;
                }
            }
        }
        let g = self.gram_w();
        let mut den = vec![0.0; k * m];
        for r in 0..k {
            for s in 0..k {
                let c = g[r * k + s];
                if c == 0.0 {
                    continue;
                }
                let hs = &self.h[s * m..(s + 1) * m];
                den[r * m..(r + 1) * m].iter_mut().zip(hs).for_each(|(d, x)| *d += c * x);
            }
        }
        multiplicative(&mut self.h, &num, &den);
    }

    /// `W ← W ⊙ (V Hᵀ) ⊘ (W H Hᵀ)`.
    pub fn update_w(&mut self, v: &SparseCounts) {
        let (k, m) = (self.k, self.m);
        let mut num = vec![0.0; self.n * k];
        for (i, row) in v.entries.iter().enumerate() {
            for &(j, x) in row {
                for r in 0..k {
                    num[i * k + r] += x * self.h[r * m + j];
                }
            }
        }
        let g = self.gram_h();
        let mut den = vec![0.0; self.n * k];
        for (wi, di) in self.w.chunks_exact(k).zip(den.chunks_exact_mut(k)) {
            for r in 0..k {
                di[r] = (0..k).map(|s| wi[s] * g[s * k + r]).sum();
            }
        }
        multiplicative(&mut self.w, &num, &den);
    }

    /// `(WH)_{ij}`.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        (0..self.k).map(|r| self.w[i * self.k + r] * self.h[r * self.m + j]).sum()
    }

    /// `‖V − WH‖_F`, without materializing `WH`.
    pub fn frobenius_error(&self, v: &SparseCounts) -> f64 {
        let cross: f64 = v
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, x)| (i, j, x)))
            .map(|(i, j, x)| x * self.reconstruct(i, j))
            .sum();
        let gw = self.gram_w();
        let gh = self.gram_h();
        let model: f64 = gw.iter().zip(&gh).map(|(a, b)| a * b).sum();
        libm::sqrt((v.squared_norm() - 2.0 * cross + model).max(0.0))
    }

    pub fn w_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.k..(i + 1) * self.k]
    }
}

fn multiplicative(target: &mut [f64], num: &[f64], den: &[f64]) {
    for ((t, n), d) in target.iter_mut().zip(num).zip(den) {
        *t = if *n <= 0.0 || *d <= 0.0 { 0.0 } else { *t * n / d };
    }
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    pub model: ClusterModel,
    pub factors: Factorization,
    /// Frobenius error after initialization and after every iteration.
    pub errors: Vec<f64>,
}

/// Multiplicative-update NMF; users are clustered by their normalized `W` rows.
pub fn nmf_fit(matrix: &SparseCounts, params: &NmfParams) -> Result<NmfFit, ClusterError> {
    let k = params.k;
    if k == 0 || params.iters == 0 {
        return Err(ClusterError::InvalidParameter("k and iters must be positive"));
    }
    if matrix.num_rows() < k {
        return Err(ClusterError::InsufficientUsers { have: matrix.num_rows(), k });
    }
    if matrix.num_cols() < k {
        return Err(ClusterError::InsufficientArticles { have: matrix.num_cols(), k });
    }
    for (user, row) in matrix.rows.iter().zip(&matrix.entries) {
        if !row.iter().any(|(_, v)| *v > 0.0) {
            return Err(ClusterError::EmptyRow(user.clone()));
        }
        if row.iter().any(|(_, v)| !(*v >= 0.0)) {
            return Err(ClusterError::InvalidParameter("counts must be non-negative"));
        }
    }

    let mut f = Factorization::init(matrix, k, params.seed);
    let mut errors = Vec::with_capacity(params.iters + 1);
    errors.push(f.frobenius_error(matrix));
    for _ in 0..params.iters {
        f.update_h(matrix);
        f.update_w(matrix);
        errors.push(f.frobenius_error(matrix));
    }

    let mut assignments = BTreeMap::new();
    let mut memberships = BTreeMap::new();
    for (i, user) in matrix.rows.iter().enumerate() {
        let soft = normalized(f.w_row(i));
        assignments.insert(user.clone(), argmax(&soft));
        memberships.insert(user.clone(), soft);
    }
    let basis = f.h.chunks_exact(f.m).map(<[f64]>::to_vec).collect();
    Ok(NmfFit {
        model: ClusterModel {
            version: 0,
            k,
            assignments,
            body: ModelBody::Nmf {
                basis,
                articles: matrix.cols.clone(),
                memberships,
            },
        },
        factors: f,
        errors,
    })
}

fn normalized(row: &[f64]) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter().map(|x| x / sum).collect()
    } else {
        vec![1.0 / row.len() as f64; row.len()]
    }
}

/// One multiplicative pass for a new user's `W` row with `H` fixed,
/// starting from a uniform row. Returns weights summing to 1.
pub(crate) fn project_row(basis: &[Vec<f64>], articles: &[String], clicks: &[String]) -> Option<Vec<f64>> {
    let k = basis.len();
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for a in clicks {
        if let Ok(j) = articles.binary_search(a) {
            *counts.entry(j).or_insert(0.0) += 1.0;
        }
    }
    if counts.is_empty() || k == 0 {
        return None;
    }
    let w0 = 1.0 / k as f64;
    let mut row = vec![0.0; k];
    for (r, out) in row.iter_mut().enumerate() {
        let num: f64 = counts.iter().map(|(j, x)| x * basis[r][*j]).sum();
        // (w0·1ᵀ H Hᵀ)_r
        let den: f64 = (0..k)
            .map(|s| w0 * basis[s].iter().zip(&basis[r]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        *out = if num <= 0.0 || den <= 0.0 { 0.0 } else { w0 * num / den };
    }
    if row.iter().all(|x| *x == 0.0) {
        return None;
    }
    Some(normalized(&row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::UserSignal;
    use alloc::string::ToString;

    #[test]
    fn rank_one_is_recovered() {
        let v = SparseCounts::from_dense(&[vec![2.0, 4.0], vec![1.0, 2.0]]);
        let fit = nmf_fit(&v, &NmfParams { k: 1, seed: 3, iters: 500 }).unwrap();
        let rel = fit.errors.last().unwrap() / 25.0f64.sqrt();
        assert!(rel <= 1e-3, "relative error {rel}");
    }

    #[test]
    fn identity_users_split() {
        let v = SparseCounts::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        for seed in 0..10 {
            let fit = nmf_fit(&v, &NmfParams { k: 2, seed, iters: 200 }).unwrap();
            let a = &fit.model.assignments;
            assert_ne!(a["r000000"], a["r000001"]);
        }
    }

    #[test]
    fn zero_row_is_reported() {
        let v = SparseCounts::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            nmf_fit(&v, &NmfParams { k: 2, seed: 0, iters: 5 }).unwrap_err(),
            ClusterError::EmptyRow("r000001".to_string())
        );
    }

    #[test]
    fn too_few_rows_or_columns() {
        let v = SparseCounts::from_dense(&[vec![1.0, 1.0, 1.0]]);
        assert!(matches!(
            nmf_fit(&v, &NmfParams { k: 2, seed: 0, iters: 5 }),
            Err(ClusterError::InsufficientUsers { .. })
        ));
        let v = SparseCounts::from_dense(&[vec![1.0], vec![1.0]]);
        assert!(matches!(
            nmf_fit(&v, &NmfParams { k: 2, seed: 0, iters: 5 }),
            Err(ClusterError::InsufficientArticles { .. })
        ));
    }

    #[test]
    fn click_counts_and_projection() {
        let clicks_a = ["x", "x", "y"];
        let clicks_b = ["z"];
        let v = SparseCounts::from_clicks([("a", clicks_a.to_vec()), ("b", clicks_b.to_vec())]);
        assert_eq!(v.cols, ["x", "y", "z"]);
        assert_eq!(v.entries[0], [(0, 2.0), (1, 1.0)]);
        let fit = nmf_fit(&v, &NmfParams { k: 2, seed: 1, iters: 200 }).unwrap();
        let clicks: Vec<String> = ["x".to_string(), "x".to_string()].to_vec();
        let aff = fit.model.assign(UserSignal { vector: None, clicks: &clicks }).unwrap();
        assert_eq!(aff.cluster(), Some(fit.model.assignments["a"]));
        let unknown = ["nope".to_string()];
        assert!(fit.model.assign(UserSignal { vector: None, clicks: &unknown }).is_err());
    }
}
