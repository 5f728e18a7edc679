//! Dense row-major tensors and parameter initialization.
//!
//! All math in this crate is 64-bit. Tensors are plain buffers; gradient
//! tracking lives in [`crate::tape`].

use rand::Rng;

use crate::error::{Error, Result};

/// Dense tensor with row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor-new",
                format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
            requires_grad: false,
        }
    }

    /// 2-D constructor from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("tensor-from-rows", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix (shape `[r, c]`).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => self.shape.iter().take(self.shape.len() - 1).product(),
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Initialization schemes for trainable tensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    /// Gaussian with the given standard deviation.
    Normal { std: f64 },
}

/// Standard-normal draw via Box-Muller; deterministic for a given rng state.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > 1e-300 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Initialize a tensor of the given shape. Glorot uses `shape = [fan_in, fan_out]`.
pub fn init_params<R: Rng>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = match scheme {
        InitScheme::GlorotUniform => {
            let (fan_in, fan_out) = match shape.len() {
                2 => (shape[0], shape[1]),
                1 => (shape[0], 1),
                _ => (numel, 1),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..numel).map(|_| rng.gen::<f64>() * 2.0 * bound - bound).collect()
        }
        InitScheme::Normal { std } => (0..numel).map(|_| sample_normal(rng) * std).collect(),
    };
    Tensor {
        shape: shape.to_vec(),
        data,
        requires_grad: false,
    }
}

// ── Raw matrix kernels ──────────────────────────────────────────────
//
// The tape's matmul gradients reuse these; keeping them free functions also
// lets oracle code in tests call a different path than the tape does.

/// C = A(m×k) · B(k×n), accumulated into a zeroed `out`.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow) {
                    *c += av * bv;
                }
            }
        }
    }
}

/// C = A(m×n) · B(k×n)ᵀ → m×k, rowwise dot products.
pub fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut s = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + l] = s;
        }
    }
}

/// C = A(m×k)ᵀ · B(m×n) → k×n, as a sum of rank-1 updates.
pub fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    out.fill(0.0);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let crow = &mut out[p * n..(p + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow) {
                    *c += av * bv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let eye = [1.0, 0.0, 0.0, 1.0];
        let mut out = [0.0; 4];
        matmul_raw(&a, &eye, 2, 2, 2, &mut out);
        assert_eq!(out, a);
        matmul_raw(&eye, &[5.0, 7.0], 2, 2, 1, &mut out[..2]);
        assert_eq!(&out[..2], &[5.0, 7.0]);
    }

    #[test]
    fn matmul_hand_value() {
        // [[1,2]]·[[3],[4]] = [[11]]
        let mut out = [0.0; 1];
        matmul_raw(&[1.0, 2.0], &[3.0, 4.0], 1, 2, 1, &mut out);
        assert_eq!(out[0], 11.0);
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, k, n) = (4, 3, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut c = vec![0.0; m * n];
        matmul_raw(&a, &b, m, k, n, &mut c);

        // A·B == A·(Bᵀ)ᵀ via matmul_nt_raw on transposed b.
        let mut bt = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_nt_raw(&a, &bt, m, k, n, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }

        // A·B == (Aᵀ)ᵀ·B via matmul_tn_raw on transposed a.
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_tn_raw(&at, &b, k, m, n, &mut c3);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn init_deterministic_per_seed() {
        let t1 = init_params(&[7, 5], InitScheme::GlorotUniform, &mut ChaCha8Rng::seed_from_u64(3));
        let t2 = init_params(&[7, 5], InitScheme::GlorotUniform, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(t1.data(), t2.data());
        let n1 = init_params(&[64], InitScheme::Normal { std: 0.01 }, &mut ChaCha8Rng::seed_from_u64(4));
        let n2 = init_params(&[64], InitScheme::Normal { std: 0.01 }, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(n1.data(), n2.data());
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = init_params(&[13, 7], InitScheme::GlorotUniform, &mut rng);
        let bound = (6.0 / 20.0f64).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn normal_mean_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let t = init_params(&[n], InitScheme::Normal { std: 0.01 }, &mut rng);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let sigma_mean = 0.01 / (n as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * sigma_mean,
            "sample mean {mean} outside 3σ = {}",
            3.0 * sigma_mean
        );
    }
}
