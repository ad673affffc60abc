//! Mixed-radix decimation-in-time FFT for arbitrary lengths.
//!
//! The length is factored into small primes; radix-p butterflies are
//! evaluated directly, so lengths with large prime factors degrade towards
//! O(n²) but stay correct. Window lengths used here (powers of two times 3)
//! factor completely into radices 2 and 3.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed twiddles and factorization for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    factors: Vec<usize>,
    twiddles: Vec<Complex64>,
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    // radix 4 is not special-cased; 2 and 3 cover the common lengths
    let mut p = 2;
    while n > 1 {
        if n % p == 0 {
            factors.push(p);
            n /= p;
        } else {
            p += if p == 2 { 1 } else { 2 };
            if p * p > n {
                p = n;
            }
        }
    }
    factors
}

impl FftPlan {
    pub fn new(len: usize) -> FftPlan {
        assert!(len > 0, "FFT length must be positive");
        let twiddles = (0..len)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / len as f64;
                Complex64::new(libm::cos(angle), libm::sin(angle))
            })
            .collect();
        FftPlan { len, factors: factorize(len), twiddles }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forward transform `X[k] = Σ_n x[n]·e^{−2πi·kn/N}`.
    pub fn forward(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.len, "FFT input length");
        let mut out = vec![Complex64::new(0.0, 0.0); self.len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.factors.iter().copied().max().unwrap_or(1)];
        self.transform(input, 0, 1, &mut out, &self.factors, &mut scratch);
        out
    }

    /// Transform of real input.
    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        let buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&buf)
    }

    fn transform(
        &self,
        input: &[Complex64],
        offset: usize,
        stride: usize,
        out: &mut [Complex64],
        factors: &[usize],
        scratch: &mut [Complex64],
    ) {
        let n = out.len();
        if n == 1 {
            out[0] = input[offset];
            return;
        }
        let p = factors[0];
        let m = n / p;
        for j in 0..p {
            self.transform(
                input,
                offset + j * stride,
                stride * p,
                &mut out[j * m..(j + 1) * m],
                &factors[1..],
                scratch,
            );
        }
        // twiddle index step for W_n, and for W_p
        let step_n = self.len / n;
        let step_p = self.len / p;
        for k in 0..m {
            for j in 0..p {
                scratch[j] = out[j * m + k] * self.twiddles[(j * k * step_n) % self.len];
            }
            for q in 0..p {
                let mut acc = scratch[0];
                for j in 1..p {
                    acc += scratch[j] * self.twiddles[((j * q) % p) * step_p];
                }
                out[q * m + k] = acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    acc + v * Complex64::new(libm::cos(a), libm::sin(a))
                })
            })
            .collect()
    }

    #[test]
    fn factorizes_lengths() {
        assert_eq!(factorize(384), vec![2, 2, 2, 2, 2, 2, 2, 3]);
        assert_eq!(factorize(97), vec![97]);
        assert_eq!(factorize(90), vec![2, 3, 3, 5]);
        assert!(factorize(1).is_empty());
    }

    #[test]
    fn matches_naive_dft_for_mixed_lengths() {
        for &n in &[1usize, 2, 3, 5, 12, 30, 49, 64, 97, 384] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new(libm::sin(i as f64 * 1.3) + 0.1, libm::cos(i as f64 * 0.7)))
                .collect();
            let got = FftPlan::new(n).forward(&x);
            let want = naive(&x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < 1e-9, "n = {n}");
            }
        }
    }
}
