#![allow(dead_code)]

use mjls::linalg::{Mat, Vector};
use mjls::{MjlsModel, Mode, ModelData};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// Two-mode second-order example with identity weights.
pub fn reference_model() -> MjlsModel {
    let a1 = Mat::from_row_slice(2, 2, &[2.0, 1.1, -1.7, -0.8]);
    let a2 = Mat::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 0.6]);
    let b1 = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
    let b2 = Mat::from_row_slice(2, 1, &[2.0, 1.0]);
    MjlsModel::new(ModelData {
        modes: vec![
            Mode::new(a1, b1, Mat::identity(2, 2), s(1.0)),
            Mode::new(a2, b2, Mat::identity(2, 2), s(1.0)),
        ],
        transition: Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.7, 0.3]),
        initial_distribution: Vector::from_vec(vec![0.5, 0.5]),
        x0: Vector::from_vec(vec![5.0, 5.0]),
    })
    .unwrap()
}

pub fn scalar_model(a: f64, b: f64, q: f64, r: f64) -> MjlsModel {
    MjlsModel::new(ModelData {
        modes: vec![Mode::new(s(a), s(b), s(q), s(r))],
        transition: s(1.0),
        initial_distribution: Vector::from_element(1, 1.0),
        x0: Vector::from_element(1, 1.0),
    })
    .unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| uniform(rng, -amp, amp))
}

/// Probability vector; with probability `zero_prob` one entry is dropped
/// (when more than one entry exists).
pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize, zero_prob: f64) -> Vector {
    let mut w = Vector::from_fn(len, |_, _| uniform(rng, 0.05, 1.0));
    if len > 1 && rng.gen::<f64>() < zero_prob {
        let drop = rng.gen_range(0..len);
        w[drop] = 0.0;
    }
    let total = w.sum();
    w / total
}

pub fn random_transition(rng: &mut ChaCha8Rng, l: usize) -> Mat {
    let mut t = Mat::zeros(l, l);
    for i in 0..l {
        let row = random_distribution(rng, l, 0.2);
        t.row_mut(i).copy_from(&row.transpose());
    }
    t
}

/// Random PSD weight `G'G` with `G` of `rank` rows.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Mat {
    let g = random_matrix(rng, rank, n, 1.0);
    let q = g.transpose() * g;
    (&q + q.transpose()) * 0.5
}

/// `n <= 2, m = 1, L <= 2`, `R > 0`, arbitrary (possibly unstable) dynamics.
pub fn random_small_model(rng: &mut ChaCha8Rng) -> MjlsModel {
    let l = rng.gen_range(1..=2);
    let n = rng.gen_range(1..=2);
    let modes = (0..l)
        .map(|_| {
            let rank = rng.gen_range(1..=n);
            Mode::new(
                random_matrix(rng, n, n, 1.5),
                random_matrix(rng, n, 1, 1.0),
                random_psd(rng, n, rank),
                s(uniform(rng, 0.1, 2.0)),
            )
        })
        .collect();
    MjlsModel::new(ModelData {
        modes,
        transition: random_transition(rng, l),
        initial_distribution: random_distribution(rng, l, 0.2),
        x0: Vector::from_fn(n, |_, _| uniform(rng, -3.0, 3.0)),
    })
    .unwrap()
}

/// Mean-square stabilizable by construction (`A_i + B_i F_i` has spectral
/// norm 0.8) and exactly observable (`Q_i > 0`), with `R_i > 0`.
pub fn random_stabilizable_model(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> MjlsModel {
    let modes = (0..l)
        .map(|_| {
            let closed = random_matrix(rng, n, n, 1.0);
            let closed = &closed * (0.8 / closed.norm().max(1e-12));
            let b = random_matrix(rng, n, m, 1.0);
            let f = random_matrix(rng, m, n, 1.5);
            let a = closed - &b * f;
            let q = random_psd(rng, n, n) + Mat::identity(n, n) * 0.1;
            Mode::new(a, b, q, Mat::identity(m, m) * uniform(rng, 0.2, 2.0))
        })
        .collect();
    MjlsModel::new(ModelData {
        modes,
        transition: random_transition(rng, l),
        initial_distribution: random_distribution(rng, l, 0.0),
        x0: Vector::from_fn(n, |_, _| uniform(rng, -2.0, 2.0)),
    })
    .unwrap()
}

/// `R = 0`, square invertible `B`, `Q = I`: solvable only through
/// `B' P B > 0`.
pub fn singular_r_model() -> MjlsModel {
    let a1 = Mat::from_row_slice(2, 2, &[1.2, 0.4, -0.3, 0.9]);
    let a2 = Mat::from_row_slice(2, 2, &[0.5, -1.0, 0.8, 1.1]);
    let b1 = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let b2 = Mat::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
    MjlsModel::new(ModelData {
        modes: vec![
            Mode::new(a1, b1, Mat::identity(2, 2), Mat::zeros(2, 2)),
            Mode::new(a2, b2, Mat::identity(2, 2), Mat::zeros(2, 2)),
        ],
        transition: Mat::from_row_slice(2, 2, &[0.6, 0.4, 0.25, 0.75]),
        initial_distribution: Vector::from_vec(vec![0.3, 0.7]),
        x0: Vector::from_vec(vec![1.5, -2.0]),
    })
    .unwrap()
}

/// Textbook single-mode backward Riccati recursion, written out with an
/// explicit inverse. Returns `(P(k), K(k))` for `k = 0..=horizon`.
pub fn classical_recursion(a: &Mat, b: &Mat, q: &Mat, r: &Mat, terminal: &Mat, horizon: usize) -> Vec<(Mat, Mat)> {
    let mut p = terminal.clone();
    let mut out = Vec::new();
    for _ in 0..=horizon {
        let gain_den = (r + b.transpose() * &p * b).try_inverse().unwrap();
        let k = -&gain_den * b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain_den * b.transpose() * &p * a;
        p = next;
        out.push((p.clone(), k));
    }
    out.reverse();
    out
}

/// Spectral radius by Gelfand's formula: `||T^(2^s)||^(2^-s)` with
/// normalization at every squaring.
pub fn gelfand_radius(t: &Mat, squarings: u32) -> f64 {
    let mut m = t.clone();
    let mut log_scale = 0.0f64; // log of the factor removed so far, per unit power
    let mut power = 1.0f64;
    for _ in 0..squarings {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = &m * &m;
        power *= 2.0;
    }
    (log_scale + m.norm().ln() / power).exp()
}

/// Numerical rank via singular values.
pub fn rank(m: &Mat, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|v| **v > tol * top.max(1e-300)).count()
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
