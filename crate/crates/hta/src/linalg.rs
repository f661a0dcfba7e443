//! Dense row-major matrices, vectors, and a seeded splitmix64 RNG.
//!
//! Everything is `f64`: the gradient checks in [`crate::network`] compare
//! against central differences at 1e-4 relative tolerance, which single
//! precision cannot sustain. The RNG is a counter generator so that a
//! given seed reproduces the same stream on every platform, without
//! pulling in an external randomness crate.

/// A vector is a plain `Vec<f64>`; operations that need a length check
/// assert it at the call site.
pub type Vector = Vec<f64>;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive, got {rows}x{cols}");
        Matrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from a row-major value slice.
    pub fn from_rows(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(
            values.len(),
            rows * cols,
            "value count {} does not fill a {rows}x{cols} matrix",
            values.len()
        );
        let mut m = Matrix::zeros(rows, cols);
        m.values.copy_from_slice(values);
        m
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert!(i < self.rows);
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// `true` if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product. Panics on an inner-dimension mismatch,
/// naming both shapes.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(
        a.cols, b.rows,
        "matmul dimension mismatch: {}x{} times {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `m * x` for a column vector `x`. Panics if `x.len() != m.cols()`.
pub fn matvec(m: &Matrix, x: &[f64]) -> Vector {
    assert_eq!(
        x.len(),
        m.cols,
        "matvec dimension mismatch: {}x{} times vector of len {}",
        m.rows,
        m.cols,
        x.len()
    );
    (0..m.rows)
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Euclidean norm squared.
pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Deterministic splitmix64 generator.
///
/// A counter generator: the state advances by a fixed odd constant and the
/// output is a bijective mix of the counter, so identical seeds give
/// identical streams on every platform. Single-owner by design; hand it
/// off, never share it.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`. Panics if `lo >= hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo < hi, "uniform range is empty: lo={lo}, hi={hi}");
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection, so the distribution is
    /// exact. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is empty");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// A fresh seed for a derived stream (restart workers, growth init).
    pub fn derive_seed(&mut self) -> u64 {
        self.next_u64()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Matrix with i.i.d. uniform entries in `[lo, hi)`. Panics if `lo >= hi`.
pub fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    assert!(lo < hi, "uniform_init range is empty: lo={lo}, hi={hi}");
    let mut m = Matrix::zeros(rows, cols);
    for v in m.values.iter_mut() {
        *v = rng.uniform(lo, hi);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_leaves_operand_unchanged() {
        let m = Matrix::from_rows(2, 2, &[3.0, -1.5, 0.25, 7.0]);
        assert_eq!(matmul(&Matrix::identity(2), &m), m);
        assert_eq!(matmul(&m, &Matrix::identity(2)), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_rows(2, 1, &[1.0, 1.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(42);
        let a = uniform_init(&mut rng, 3, 4, -1.0, 1.0);
        let b = uniform_init(&mut rng, 4, 2, -1.0, 1.0);
        let c = matmul(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-15, "entry ({i},{j})");
            }
        }
    }

    #[test]
    #[should_panic(expected = "matmul dimension mismatch")]
    fn matmul_rejects_mismatched_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        matmul(&a, &b);
    }

    #[test]
    fn matmul_is_associative_for_well_conditioned_inputs() {
        let mut rng = Rng::new(7);
        for _ in 0..20 {
            let a = uniform_init(&mut rng, 5, 5, -1.0, 1.0);
            let b = uniform_init(&mut rng, 5, 5, -1.0, 1.0);
            let c = uniform_init(&mut rng, 5, 5, -1.0, 1.0);
            let left = matmul(&matmul(&a, &b), &c);
            let right = matmul(&a, &matmul(&b, &c));
            for (l, r) in left.values().iter().zip(right.values()) {
                let scale = l.abs().max(r.abs()).max(1.0);
                assert!((l - r).abs() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_init_stays_in_range_and_is_seed_deterministic() {
        let m1 = uniform_init(&mut Rng::new(123), 8, 9, 0.0, 1.0);
        let m2 = uniform_init(&mut Rng::new(123), 8, 9, 0.0, 1.0);
        assert_eq!(m1, m2);
        assert!(m1.values().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    #[should_panic(expected = "range is empty")]
    fn uniform_init_rejects_inverted_range() {
        uniform_init(&mut Rng::new(0), 2, 2, 1.0, 1.0);
    }

    #[test]
    fn uniform_mean_approaches_one_half() {
        let mut rng = Rng::new(2024);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| rng.next_f64()).sum();
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn below_is_uniform_over_small_range() {
        let mut rng = Rng::new(5);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[rng.below(4)] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "counts {counts:?}");
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut xs: Vec<usize> = (0..100).collect();
        Rng::new(9).shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(xs, (0..100).collect::<Vec<_>>());
    }
}
