//! Householder QR with column-norm pivoting for small dense blocks.

/// `A P = Q R` for a column-major `rows x cols` matrix.
pub(crate) struct PivotedQr {
    rows: usize,
    cols: usize,
    /// `R` in the upper triangle, Householder vectors (implicit unit head) below.
    a: Vec<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl PivotedQr {
    /// Factorizes `a`; diagonal entries of `R` below `rank_tol * |R_00|` end the numerical rank.
    pub fn new(rows: usize, cols: usize, mut a: Vec<f64>, rank_tol: f64) -> Self {
        assert_eq!(a.len(), rows * cols);
        let steps = rows.min(cols);
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut tau = vec![0.0; steps];
        for i in 0..steps {
            let p = (i..cols)
                .max_by(|&j, &l| {
                    norm(&a[j * rows + i..(j + 1) * rows]).total_cmp(&norm(&a[l * rows + i..(l + 1) * rows]))
                })
                .expect("non-empty range");
            if p != i {
                for r in 0..rows {
                    a.swap(i * rows + r, p * rows + r);
                }
                perm.swap(i, p);
            }
            let head = a[i * rows + i];
            let tail = norm(&a[i * rows + i + 1..(i + 1) * rows]);
            if tail == 0.0 {
                continue;
            }
            let beta = -head.signum() * head.hypot(tail);
            let scale = 1.0 / (head - beta);
            for v in &mut a[i * rows + i + 1..(i + 1) * rows] {
                *v *= scale;
            }
            a[i * rows + i] = beta;
            tau[i] = (beta - head) / beta;
            for j in i + 1..cols {
                let mut w = a[j * rows + i];
                for r in i + 1..rows {
                    w += a[i * rows + r] * a[j * rows + r];
                }
                w *= tau[i];
                a[j * rows + i] -= w;
                for r in i + 1..rows {
                    a[j * rows + r] -= w * a[i * rows + r];
                }
            }
        }
        let lead = if steps > 0 { a[0].abs() } else { 0.0 };
        let rank = (0..steps)
            .take_while(|&i| lead > 0.0 && a[i * rows + i].abs() > rank_tol * lead)
            .count();
        Self {
            rows,
            cols,
            a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `perm[i]` is the original column placed at position `i`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn r(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j && j < self.cols);
        self.a[j * self.rows + i]
    }

    /// Overwrites `b` with `Q^T b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let rows = self.rows;
        for (i, &t) in self.tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let v = &self.a[i * rows + i + 1..(i + 1) * rows];
            let mut w = b[i] + v.iter().zip(&b[i + 1..]).map(|(a, c)| a * c).sum::<f64>();
            w *= t;
            b[i] -= w;
            for (bi, vi) in b[i + 1..].iter_mut().zip(v) {
                *bi -= w * vi;
            }
        }
    }

    /// Solves `R[..n, ..n] x = b`.
    pub fn solve_upper(&self, n: usize, mut b: Vec<f64>) -> Vec<f64> {
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.r(i, j) * b[j]).sum();
            b[i] = (b[i] - s) / self.r(i, i);
        }
        b
    }

    /// Solves `R[..n, ..n]^T x = b`.
    pub fn solve_upper_transposed(&self, n: usize, mut b: Vec<f64>) -> Vec<f64> {
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.r(j, i) * b[j]).sum();
            b[i] = (b[i] - s) / self.r(i, i);
        }
        b
    }
}
