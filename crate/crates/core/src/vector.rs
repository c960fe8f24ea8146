//! Dense-vector helpers shared by clustering, retrieval and ranking.
//!
//! Embeddings are stored as `f32`; all arithmetic is carried out in `f64`.

use alloc::vec::Vec;

pub type Embedding = Vec<f32>;

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    1.0 - cosine(a, b)
}

/// Unit-length copy; zero vectors are returned unchanged.
pub fn normalized(a: &[f32]) -> Embedding {
    let n = norm(a);
    if n == 0.0 {
        return a.to_vec();
    }
    a.iter().map(|&x| (f64::from(x) / n) as f32).collect()
}

/// Arithmetic mean of equal-length vectors, computed in `f64`.
pub fn mean(vectors: &[&[f32]]) -> Vec<f64> {
    let Some(first) = vectors.first() else {
        return Vec::new();
    };
    let mut acc = alloc::vec![0.0f64; first.len()];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += f64::from(x);
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn is_finite(a: &[f32]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Indices of the `n` rows most cosine-similar to `query`, ties broken by
/// the supplied id (ascending).
pub fn top_n_by_cosine<'a, I: Ord + ?Sized>(query: &[f32], rows: &[(&'a I, &[f32])], n: usize) -> Vec<(&'a I, f64)> {
    let mut scored: Vec<(&I, f64)> = rows.iter().map(|(id, v)| (*id, cosine(query, v))).collect();
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
    scored.truncate(n);
    scored
}
