//! Orthonormal 8×8 DCT-II and its inverse.
//!
//! Evaluation order is fixed (row pass, then column pass, plain loops) so
//! results are bit-identical across runs.

use std::sync::OnceLock;

pub const N: usize = 8;
pub const BLOCK: usize = N * N;

pub type Block = [f64; BLOCK];

/// `basis()[k][n] = a(k) * cos((2n + 1) k pi / 16)`.
pub fn basis() -> &'static [[f64; N]; N] {
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; N]; N];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 {
                (1.0 / N as f64).sqrt()
            } else {
                (2.0 / N as f64).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// Forward transform, `coeffs = C · block · Cᵀ`.
pub fn forward(block: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; BLOCK];
    // rows
    for y in 0..N {
        for k in 0..N {
            let mut s = 0.0;
            for x in 0..N {
                s += c[k][x] * block[y * N + x];
            }
            tmp[y * N + k] = s;
        }
    }
    let mut out = [0.0; BLOCK];
    // columns
    for k in 0..N {
        for x in 0..N {
            let mut s = 0.0;
            for y in 0..N {
                s += c[k][y] * tmp[y * N + x];
            }
            out[k * N + x] = s;
        }
    }
    out
}

/// Inverse transform, `block = Cᵀ · coeffs · C`.
pub fn inverse(coeffs: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; BLOCK];
    for v in 0..N {
        for x in 0..N {
            let mut s = 0.0;
            for u in 0..N {
                s += c[u][x] * coeffs[v * N + u];
            }
            tmp[v * N + x] = s;
        }
    }
    let mut out = [0.0; BLOCK];
    for y in 0..N {
        for x in 0..N {
            let mut s = 0.0;
            for v in 0..N {
                s += c[v][y] * tmp[v * N + x];
            }
            out[y * N + x] = s;
        }
    }
    out
}

/// Zigzag scan order: `ZIGZAG[i]` is the raster index of the i-th scanned
/// coefficient.
pub const ZIGZAG: [usize; BLOCK] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Copy an 8×8 block out of a row-major plane.
pub fn load_block(data: &[f64], stride: usize, bx: usize, by: usize) -> Block {
    let mut b = [0.0; BLOCK];
    for y in 0..N {
        let row = (by * N + y) * stride + bx * N;
        b[y * N..y * N + N].copy_from_slice(&data[row..row + N]);
    }
    b
}

pub fn store_block(data: &mut [f64], stride: usize, bx: usize, by: usize, b: &Block) {
    for y in 0..N {
        let row = (by * N + y) * stride + bx * N;
        data[row..row + N].copy_from_slice(&b[y * N..y * N + N]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_is_orthonormal() {
        let c = basis();
        for i in 0..N {
            for j in 0..N {
                let dot: f64 = (0..N).map(|n| c[i][n] * c[j][n]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zigzag_is_a_permutation_walking_antidiagonals() {
        let mut seen = [false; BLOCK];
        let mut last_diag = 0;
        for &i in &ZIGZAG {
            assert!(!seen[i]);
            seen[i] = true;
            let d = i / N + i % N;
            assert!(d == last_diag || d == last_diag + 1);
            last_diag = d;
        }
    }

    #[test]
    fn dc_of_constant_block() {
        let b = [0.25; BLOCK];
        let c = forward(&b);
        assert!((c[0] - 2.0).abs() < 1e-14);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-14));
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(v in proptest::collection::vec(-1.0f64..1.0, BLOCK)) {
            let mut b = [0.0; BLOCK];
            b.copy_from_slice(&v);
            let c = forward(&b);
            let back = inverse(&c);
            for i in 0..BLOCK {
                prop_assert!((back[i] - b[i]).abs() <= 1e-10);
            }
            let e1: f64 = b.iter().map(|x| x * x).sum();
            let e2: f64 = c.iter().map(|x| x * x).sum();
            prop_assert!((e1 - e2).abs() <= 1e-10);
        }
    }
}
