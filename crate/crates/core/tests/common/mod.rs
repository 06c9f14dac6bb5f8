#![allow(dead_code)]

use negsim_core::loss::SiglipWeight;
use negsim_core::optimizer::random_embeddings;
use negsim_core::{EmbeddingSet, LossFamily, LossSpec, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    random_embeddings(n, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Haar-ish orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &q {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub fn rotate(m: &Matrix, q: &[Vec<f64>]) -> Matrix {
    let rows: Vec<Vec<f64>> = m
        .row_iter()
        .map(|r| q.iter().map(|qk| qk.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn rotate_set(e: &EmbeddingSet, q: &[Vec<f64>]) -> EmbeddingSet {
    EmbeddingSet::with_tolerance(rotate(e.u(), q), rotate(e.v(), q), 1e-10).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Brute-force loss straight from the two definitions, without any
/// log-sum-exp shifting or similarity caching.
pub fn reference_loss(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> f64 {
    let m = idx.len();
    let mf = m as f64;
    let t = spec.temperature();
    let (c1, c2) = spec.selectors();
    let (c1, c2) = (c1 as u8 as f64, c2 as u8 as f64);
    let u = |k: usize| e.u().row(idx[k]);
    let v = |k: usize| e.v().row(idx[k]);

    let family = match spec.family() {
        LossFamily::InfoNce => {
            // softmax cross-entropy, both directions
            let mut s = 0.0;
            for i in 0..m {
                let num = (dot(u(i), v(i)) / t).exp();
                let den_uv: f64 = (0..m).map(|j| (dot(u(i), v(j)) / t).exp()).sum();
                let den_vu: f64 = (0..m).map(|j| (dot(v(i), u(j)) / t).exp()).sum();
                s -= (num / den_uv).ln() + (num / den_vu).ln();
            }
            s / (2.0 * mf)
        }
        LossFamily::SimClr | LossFamily::Dcl | LossFamily::Dhel => {
            let psi: fn(f64) -> f64 = match spec.family() {
                LossFamily::SimClr => |x| (1.0 + x).ln(),
                _ => |x| x.ln(),
            };
            let phi = |x: f64| (x / t).exp();
            let one_side = |am: &Matrix, bm: &Matrix| {
                let a = |k: usize| am.row(idx[k]);
                let b = |k: usize| bm.row(idx[k]);
                (0..m)
                    .map(|i| {
                        let mut inner = 0.0;
                        for j in (0..m).filter(|&j| j != i) {
                            inner += c1 * phi(dot(&sub(b(j), b(i)), a(i)));
                            inner += c2 * phi(dot(&sub(a(j), b(i)), a(i)));
                        }
                        psi(inner)
                    })
                    .sum::<f64>()
                    / mf
            };
            0.5 * one_side(e.u(), e.v()) + 0.5 * one_side(e.v(), e.u())
        }
        LossFamily::SigLip | LossFamily::Spectral => {
            let b = spec.bias();
            let w = match spec.siglip_weight() {
                SiglipWeight::GlobalSize => spec.n_global() as f64 - 1.0,
                SiglipWeight::BatchSize => mf - 1.0,
            };
            let siglip = matches!(spec.family(), LossFamily::SigLip);
            let phi = |x: f64| if siglip { -(1.0 + (-t * x + b).exp()).ln() } else { x };
            let psi = |x: f64| if siglip { w * (1.0 + (t * x - b).exp()).ln() } else { x * x };
            let mut s = -(0..m).map(|i| phi(dot(u(i), v(i)))).sum::<f64>() / mf;
            if m >= 2 {
                let pairs = mf * (mf - 1.0);
                for i in 0..m {
                    for j in (0..m).filter(|&j| j != i) {
                        s += c1 / pairs * psi(dot(u(i), v(j)));
                        s += c2 / (2.0 * pairs) * (psi(dot(u(i), u(j))) + psi(dot(v(i), v(j))));
                    }
                }
            }
            s
        }
        LossFamily::GenericInfo { .. } | LossFamily::GenericIndAdd { .. } => {
            panic!("reference oracle covers named families only")
        }
    };
    family + spec.vrns_lambda() * reference_vrns(e, idx, spec.n_global())
}

pub fn reference_vrns(e: &EmbeddingSet, idx: &[usize], n_global: usize) -> f64 {
    let m = idx.len();
    let target = 1.0 / (n_global as f64 - 1.0);
    let mut s = 0.0;
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            let x = dot(e.u().row(idx[i]), e.v().row(idx[j])) + target;
            s += x * x;
        }
    }
    s / (m as f64 * (m as f64 - 1.0))
}

/// Every named family plus VRNS and bias variants, at temperatures where
/// central differences with step 1e-5 resolve the gradient.
pub fn spec_zoo(n_global: usize, seed: u64) -> Vec<LossSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for family in LossFamily::NAMED {
        let t = rng.random_range(0.2..2.0);
        let mut spec = LossSpec::new(family.clone(), t, n_global).unwrap();
        if spec.uses_bias() {
            spec = spec.with_bias(rng.random_range(-3.0..3.0)).unwrap();
        }
        out.push(spec.clone());
        out.push(spec.with_vrns(rng.random_range(0.5..30.0)).unwrap());
    }
    out
}
