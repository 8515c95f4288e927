use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{nearest_centroid, ClusterError, ClusterModel, ModelBody};
use crate::rng::{index, seeded, unit_f64};
use crate::vector::{distance, squared_distance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves by this much or more.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 50,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    /// Inertia after each assignment step, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Users are visited in key order, so the result depends only on the input
/// map and `params.seed`. Empty clusters keep their previous centroid.
pub fn kmeans_fit(users: &BTreeMap<String, Vec<f64>>, params: &KMeansParams) -> Result<KMeansFit, ClusterError> {
    let k = params.k;
    if k == 0 {
        return Err(ClusterError::InvalidParameter("k must be positive"));
    }
    if params.max_iters == 0 {
        return Err(ClusterError::InvalidParameter("max_iters must be positive"));
    }
    if !(params.tol >= 0.0) {
        return Err(ClusterError::InvalidParameter("tol must be non-negative"));
    }
    if users.len() < k {
        return Err(ClusterError::InsufficientUsers { have: users.len(), k });
    }
    let dim = users.values().next().map(Vec::len).unwrap_or(0);
    for (user, v) in users {
        if v.len() != dim {
            return Err(ClusterError::DimensionMismatch {
                user: user.clone(),
                expected: dim,
                got: v.len(),
            });
        }
    }
    let points: Vec<&[f64]> = users.values().map(Vec::as_slice).collect();

    let mut centroids = plus_plus_seeds(&points, k, params.seed);
    let mut labels = vec![0usize; points.len()];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;

    loop {
        let inertia = assign_all(&points, &centroids, &mut labels);
        inertia_history.push(inertia);
        if iterations == params.max_iters {
            break;
        }
        iterations += 1;

        let updated = means(&points, &labels, &centroids);
        let movement = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max);
        centroids = updated;
        if movement < params.tol {
            let inertia = assign_all(&points, &centroids, &mut labels);
            inertia_history.push(inertia);
            break;
        }
    }

    let assignments = users.keys().cloned().zip(labels.iter().copied()).collect();
    Ok(KMeansFit {
        model: ClusterModel {
            version: 0,
            k,
            assignments,
            body: ModelBody::KMeans { centroids },
        },
        inertia_history,
        iterations,
    })
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut chosen = vec![false; points.len()];
    let first = index(&mut rng, points.len());
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, points[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = unit_f64(&mut rng) * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen[*i]).collect();
            free[index(&mut rng, free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(points: &[&[f64]], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, label) in points.iter().zip(labels.iter_mut()) {
        *label = nearest_centroid(p, centroids);
        inertia += squared_distance(p, &centroids[*label]);
    }
    inertia
}

fn means(points: &[&[f64]], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = previous[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &label) in points.iter().zip(labels) {
        counts[label] += 1;
        sums[label].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((mut sum, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                sum.iter_mut().for_each(|x| *x /= n as f64);
                sum
            }
        })
        .collect()
}
