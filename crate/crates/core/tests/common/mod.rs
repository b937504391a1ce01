//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use ivp_core::sysmodel::{LinearSystem, NetworkStructure, NoiseModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn two_state(c: &[f64], sigma_nu: f64, sigma_omega: f64) -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
        DMatrix::from_row_slice(1, 2, c),
        NoiseModel::iid(sigma_nu, sigma_omega).unwrap(),
    )
    .unwrap()
}

/// Output sums both states and carries no measurement noise.
pub fn summed_output() -> LinearSystem {
    two_state(&[1.0, 1.0], 1.0, 0.0)
}

/// Output reads the first state; unit process and measurement noise.
pub fn first_state_output() -> LinearSystem {
    two_state(&[1.0, 0.0], 1.0, 1.0)
}

pub const SUMMED_OUTPUT_JSON: &str = r#"{"n":2,"m":1,"A":[[0,1],[0,-1]],"C":[[1,1]],
    "noise":{"kind":"iid","sigma_nu":1,"sigma_omega":0}}"#;

pub const FIRST_STATE_OUTPUT_JSON: &str = r#"{"n":2,"m":1,"A":[[0,1],[0,-1]],"C":[[1,0]],
    "noise":{"kind":"iid","sigma_nu":1,"sigma_omega":1}}"#;

/// Three nodes, one sensor on nodes 1 and 3; edges 2->1, 1->2, 3->2.
pub fn three_node() -> NetworkStructure {
    NetworkStructure::from_one_based(3, 1, &[(2, 1), (1, 2), (3, 2)], &[(1, 1), (3, 1)]).unwrap()
}

pub const THREE_NODE_JSON: &str = r#"{"n":3,"m":1,
    "structure":{"edges":[[2,1],[1,2],[3,2]],"sensor_edges":[[1,1],[3,1]]}}"#;

/// Four nodes: self-loops on 1 and 2, edges 2->1, 4->1, 3->2; one sensor on nodes 1 and 3.
pub fn four_node() -> NetworkStructure {
    NetworkStructure::from_one_based(4, 1, &[(1, 1), (2, 1), (4, 1), (2, 2), (3, 2)], &[(1, 1), (3, 1)]).unwrap()
}

pub const FOUR_NODE_JSON: &str = r#"{"n":4,"m":1,
    "structure":{"edges":[[1,1],[2,1],[4,1],[2,2],[3,2]],"sensor_edges":[[1,1],[3,1]]}}"#;

/// Four-node weights `(a11, a12, a14, a22, a23, c11, c13)` with `c13 a11 a22 + c11 a12 a23 = 0`
/// and `c11 a14 a22 != 0`.
pub const FOUR_NODE_SPECIAL: [f64; 7] = [1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0];

/// Stacks `C A^k`, `k = 0..=horizon`, by repeated row-times-matrix products.
pub fn oracle_stack(a: &DMatrix<f64>, c: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let (m, n) = c.shape();
    let mut out = DMatrix::zeros(m * (horizon + 1), n);
    let mut block = c.clone();
    for k in 0..=horizon {
        out.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Reduced row echelon form by Gauss-Jordan elimination with complete pivoting; entries
/// below `1e-9` times the largest entry count as zero. Returns the pivot columns and the
/// reduced rows.
fn oracle_rref(m: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let mut r = m.clone();
    let (rows, cols) = r.shape();
    let tol = 1e-9 * r.amax().max(f64::MIN_POSITIVE);
    let mut pivots = Vec::new();
    let mut free: Vec<usize> = (0..cols).collect();
    for row in 0..rows {
        let mut best = (0.0, 0, 0);
        for i in row..rows {
            for &j in &free {
                if r[(i, j)].abs() > best.0 {
                    best = (r[(i, j)].abs(), i, j);
                }
            }
        }
        if best.0 <= tol {
            break;
        }
        let (_, pi, pj) = best;
        r.swap_rows(row, pi);
        let scale = r[(row, pj)];
        r.row_mut(row).iter_mut().for_each(|v| *v /= scale);
        for i in 0..rows {
            if i != row {
                let f = r[(i, pj)];
                if f != 0.0 {
                    for j in 0..cols {
                        let delta = f * r[(row, j)];
                        r[(i, j)] -= delta;
                    }
                }
            }
        }
        pivots.push(pj);
        free.retain(|&j| j != pj);
    }
    (pivots, r)
}

pub fn oracle_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    oracle_rref(m).0.len()
}

/// Kernel basis read off the reduced row echelon form: one vector per free column.
pub fn oracle_kernel(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return (0..cols).map(|j| DVector::from_fn(cols, |i, _| if i == j { 1.0 } else { 0.0 })).collect();
    }
    let (pivots, r) = oracle_rref(m);
    (0..cols)
        .filter(|j| !pivots.contains(j))
        .map(|j| {
            let mut v = DVector::zeros(cols);
            v[j] = 1.0;
            for (row, &p) in pivots.iter().enumerate() {
                v[p] = -r[(row, j)];
            }
            v
        })
        .collect()
}

/// Node `pos` of the unpublic block can move without changing the outputs iff some kernel
/// vector of `O E_Pbar` moves it.
pub fn oracle_node_private(o_pbar: &DMatrix<f64>, pos: usize) -> bool {
    oracle_kernel(o_pbar).iter().any(|v| v[pos].abs() > 1e-9)
}

/// `Q(w)` by composite Simpson quadrature of the normal density over `[w, w + 40]`.
pub fn oracle_q(w: f64) -> f64 {
    let steps = 200_000;
    let h = 40.0 / steps as f64;
    let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(w) + f(w + 40.0);
    for k in 1..steps {
        let x = w + k as f64 * h;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Random small system drawn from one of three families: sparse integer matrices scaled by
/// a power of two, a mixed-up observability staircase with a planted unobservable block, or
/// dense Gaussian matrices.
pub fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = rng.random_range(1..=2usize);
    match rng.random_range(0..3) {
        0 => {
            let pick = |rng: &mut ChaCha8Rng| {
                if rng.random_bool(0.35) {
                    [-1.0, 1.0, 2.0][rng.random_range(0..3)]
                } else {
                    0.0
                }
            };
            let a = DMatrix::from_fn(n, n, |_, _| pick(rng)) / 4.0;
            let mut c = DMatrix::from_fn(m, n, |_, _| pick(rng));
            if c.iter().all(|v| *v == 0.0) {
                c[(0, rng.random_range(0..n))] = 1.0;
            }
            (a, c)
        }
        1 => {
            let r = rng.random_range(1..=n);
            let mut a = DMatrix::zeros(n, n);
            let mut c = DMatrix::zeros(m, n);
            for i in 0..n {
                for j in 0..n {
                    let observed_block = i < r && j < r;
                    let unobserved = i >= r;
                    if observed_block || unobserved {
                        a[(i, j)] = rng.random_range(-0.6..0.6);
                    }
                }
            }
            for i in 0..m {
                for j in 0..r {
                    c[(i, j)] = rng.random_range(-1.0..1.0);
                }
            }
            // Permute states so the planted block is not always the trailing one.
            let mut perm: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.random_range(0..=k));
            }
            let p = DMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
            (&p * a * p.transpose(), c * p.transpose())
        }
        _ => {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            (a, c)
        }
    }
}

pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> LinearSystem {
    loop {
        let (a, c) = random_pair(rng, n);
        if let Ok(sys) = LinearSystem::new(a, c, NoiseModel::iid(0.0, 0.0).unwrap()) {
            return sys;
        }
    }
}

pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    let size = rng.random_range(0..=max.min(n));
    let mut all: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        all.swap(k, rng.random_range(0..=k));
    }
    let mut out = all[..size].to_vec();
    out.sort();
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}
