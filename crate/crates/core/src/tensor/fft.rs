//! Real-input FFTs and the FFT-backed causal convolution kernels.
//!
//! Spectra are half spectra of length `n / 2 + 1`. Two real sequences are
//! transformed per complex FFT call (packed as real and imaginary parts).

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Smallest power of two that holds the full linear convolution of two
/// length-`t` sequences, i.e. `≥ 2t − 1`.
pub fn fft_len(t: usize) -> usize {
    (2 * t.max(1) - 1).next_power_of_two()
}

/// Half spectrum of `x` zero-padded to `n`.
pub fn rfft(x: &[f64], n: usize) -> Result<Vec<Complex64>> {
    if n < x.len() || n == 0 {
        return Err(Error::InvalidLength(format!(
            "fft length {n} shorter than input length {}",
            x.len()
        )));
    }
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    plan(n, false).process(&mut buf);
    buf.truncate(n / 2 + 1);
    Ok(buf)
}

/// Inverse of [`rfft`]: the length-`n` real sequence with the given half spectrum.
pub fn irfft(spectrum: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if spectrum.len() != n / 2 + 1 {
        return Err(Error::InvalidLength(format!(
            "half spectrum of length {} does not match fft length {n}",
            spectrum.len()
        )));
    }
    let mut buf = hermitian_full(spectrum, n);
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|z| z.re * scale).collect())
}

fn hermitian_full(half: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut full = Vec::with_capacity(n);
    full.extend_from_slice(half);
    for f in half.len()..n {
        full.push(half[n - f].conj());
    }
    full
}

/// Batched real transforms of fixed length, two rows per complex FFT.
pub struct RealFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        let forward = plan(n, false);
        let inverse = plan(n, true);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Transforms every row (each at most `n` long, zero-padded) into
    /// consecutive half spectra in `out` (`rows.len() * bins` entries).
    pub fn forward_rows<'a, I>(&mut self, rows: I, out: &mut Vec<Complex64>)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let n = self.n;
        let bins = self.bins();
        out.clear();
        let mut it = rows.into_iter();
        while let Some(a) = it.next() {
            let b = it.next();
            for (i, z) in self.buf.iter_mut().enumerate() {
                let re = a.get(i).copied().unwrap_or(0.0);
                let im = b.and_then(|b| b.get(i).copied()).unwrap_or(0.0);
                *z = Complex64::new(re, im);
            }
            self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
            let base = out.len();
            out.resize(base + bins * if b.is_some() { 2 } else { 1 }, Complex64::default());
            for f in 0..bins {
                let z = self.buf[f];
                let zc = self.buf[(n - f) % n].conj();
                out[base + f] = (z + zc) * 0.5;
                if b.is_some() {
                    // (z − zc) / 2i
                    let d = z - zc;
                    out[base + bins + f] = Complex64::new(d.im * 0.5, -d.re * 0.5);
                }
            }
        }
    }

    /// Inverse transforms consecutive half spectra, writing the first
    /// `keep` samples of each row into `out` (rows × keep).
    pub fn inverse_rows(&mut self, spectra: &[Complex64], keep: usize, out: &mut [f64]) {
        let n = self.n;
        let bins = self.bins();
        let rows = spectra.len() / bins;
        debug_assert_eq!(out.len(), rows * keep);
        let scale = 1.0 / n as f64;
        let mut r = 0;
        while r < rows {
            let a = &spectra[r * bins..(r + 1) * bins];
            let b = (r + 1 < rows).then(|| &spectra[(r + 1) * bins..(r + 2) * bins]);
            let i = Complex64::new(0.0, 1.0);
            for f in 0..n {
                let (af, bf) = if f < bins {
                    (a[f], b.map_or(Complex64::default(), |b| b[f]))
                } else {
                    (a[n - f].conj(), b.map_or(Complex64::default(), |b| b[n - f].conj()))
                };
                self.buf[f] = af + i * bf;
            }
            self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
            for t in 0..keep {
                out[r * keep + t] = self.buf[t].re * scale;
            }
            if b.is_some() {
                for t in 0..keep {
                    out[(r + 1) * keep + t] = self.buf[t].im * scale;
                }
            }
            r += 2;
        }
    }
}

/// Half spectra of many rows in split (planar) layout: row `r` occupies
/// `re[r * bins..(r + 1) * bins]` and the same range of `im`.
pub struct Planar {
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Planar {
    fn zeros(rows: usize, bins: usize) -> Self {
        Self {
            bins,
            re: vec![0.0; rows * bins],
            im: vec![0.0; rows * bins],
        }
    }

    #[inline]
    fn row(&self, r: usize) -> (&[f64], &[f64]) {
        let s = r * self.bins..(r + 1) * self.bins;
        (&self.re[s.clone()], &self.im[s])
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> (&mut [f64], &mut [f64]) {
        let s = r * self.bins..(r + 1) * self.bins;
        (&mut self.re[s.clone()], &mut self.im[s])
    }
}

impl RealFft {
    /// Like [`RealFft::forward_rows`] for `len`-long rows, in planar layout.
    pub fn forward_planar(&mut self, data: &[f64], len: usize) -> Planar {
        let rows = data.len().checked_div(len).unwrap_or(0);
        let mut out = Planar::zeros(rows, self.bins());
        let mut packed = Vec::with_capacity(2 * self.bins());
        for r in (0..rows).step_by(2) {
            let pair = if r + 1 < rows { 2 } else { 1 };
            self.forward_rows(data[r * len..(r + pair) * len].chunks(len), &mut packed);
            for (i, z) in packed.iter().enumerate() {
                out.re[r * self.bins() + i] = z.re;
                out.im[r * self.bins() + i] = z.im;
            }
        }
        out
    }

    /// Inverse of [`RealFft::forward_planar`], keeping `keep` samples per row.
    pub fn inverse_planar(&mut self, spectra: &Planar, keep: usize, out: &mut [f64]) {
        let n = self.n;
        let bins = self.bins();
        let rows = spectra.re.len() / bins;
        let scale = 1.0 / n as f64;
        for r in (0..rows).step_by(2) {
            let (ar, ai) = spectra.row(r);
            let second = (r + 1 < rows).then(|| spectra.row(r + 1));
            // z = A + iB, where A and B are the Hermitian extensions
            for f in 0..n {
                let (g, sign) = if f < bins { (f, 1.0) } else { (n - f, -1.0) };
                let (a_re, a_im) = (ar[g], sign * ai[g]);
                let (b_re, b_im) = second.map_or((0.0, 0.0), |(br, bi)| (br[g], sign * bi[g]));
                self.buf[f] = Complex64::new(a_re - b_im, a_im + b_re);
            }
            self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
            for t in 0..keep {
                out[r * keep + t] = self.buf[t].re * scale;
            }
            if second.is_some() {
                for t in 0..keep {
                    out[(r + 1) * keep + t] = self.buf[t].im * scale;
                }
            }
        }
    }
}

/// Frequency-domain pieces of a causal convolution `y = x ⋆ k`, kept for the
/// backward pass.
pub struct ConvSpectra {
    pub n: usize,
    pub x: Planar,
    pub k: Planar,
}

/// Causal convolution of `x: [B, C_in, T]` with `k: [C_out, C_in, K]` (K ≤ T),
/// computed through the convolution theorem. Returns `[B, C_out, T]` and the
/// spectra used.
pub fn causal_conv_spectral(x: &[f64], k: &[f64], dims: ConvDims) -> (Vec<f64>, ConvSpectra) {
    let ConvDims { batch, c_in, c_out, t, klen } = dims;
    let n = fft_len(t);
    let mut fft = RealFft::new(n);
    let bins = fft.bins();
    let xs = fft.forward_planar(x, t);
    let ks = fft.forward_planar(k, klen);

    let mut ys = Planar::zeros(batch * c_out, bins);
    for b in 0..batch {
        for o in 0..c_out {
            let (acc_re, acc_im) = ys.row_mut(b * c_out + o);
            for c in 0..c_in {
                let (xr, xi) = xs.row(b * c_in + c);
                let (kr, ki) = ks.row(o * c_in + c);
                cmac(acc_re, acc_im, xr, xi, kr, ki);
            }
        }
    }
    let mut y = vec![0.0; batch * c_out * t];
    fft.inverse_planar(&ys, t, &mut y);
    (y, ConvSpectra { n, x: xs, k: ks })
}

/// Gradients of a spectral causal convolution given the output gradient
/// `g: [B, C_out, T]`. Either side can be skipped.
pub fn causal_conv_spectral_backward(
    g: &[f64],
    spectra: &ConvSpectra,
    dims: ConvDims,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ConvDims { batch, c_in, c_out, t, klen } = dims;
    let mut fft = RealFft::new(spectra.n);
    let bins = fft.bins();
    let gs = fft.forward_planar(g, t);

    let dx = want_x.then(|| {
        // dx[b,c,s] = Σ_o Σ_τ g[b,o,s+τ] k[o,c,τ]
        let mut acc = Planar::zeros(batch * c_in, bins);
        for b in 0..batch {
            for c in 0..c_in {
                let (out_re, out_im) = acc.row_mut(b * c_in + c);
                for o in 0..c_out {
                    let (gr, gi) = gs.row(b * c_out + o);
                    let (kr, ki) = spectra.k.row(o * c_in + c);
                    cmac_conj(out_re, out_im, gr, gi, kr, ki);
                }
            }
        }
        let mut dx = vec![0.0; batch * c_in * t];
        fft.inverse_planar(&acc, t, &mut dx);
        dx
    });
    let dk = want_k.then(|| {
        // dk[o,c,τ] = Σ_b Σ_t g[b,o,t] x[b,c,t−τ]
        let mut acc = Planar::zeros(c_out * c_in, bins);
        for o in 0..c_out {
            for c in 0..c_in {
                let (out_re, out_im) = acc.row_mut(o * c_in + c);
                for b in 0..batch {
                    let (gr, gi) = gs.row(b * c_out + o);
                    let (xr, xi) = spectra.x.row(b * c_in + c);
                    cmac_conj(out_re, out_im, gr, gi, xr, xi);
                }
            }
        }
        let mut dk = vec![0.0; c_out * c_in * klen];
        fft.inverse_planar(&acc, klen, &mut dk);
        dk
    });
    (dx, dk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t: usize,
    pub klen: usize,
}

/// `acc += a · b` on planar rows.
#[inline]
fn cmac(acc_re: &mut [f64], acc_im: &mut [f64], ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) {
    let n = acc_re.len();
    let (acc_im, ar, ai, br, bi) = (&mut acc_im[..n], &ar[..n], &ai[..n], &br[..n], &bi[..n]);
    for f in 0..n {
        acc_re[f] += ar[f] * br[f] - ai[f] * bi[f];
        acc_im[f] += ar[f] * bi[f] + ai[f] * br[f];
    }
}

/// `acc += a · conj(b)` on planar rows.
#[inline]
fn cmac_conj(acc_re: &mut [f64], acc_im: &mut [f64], ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) {
    let n = acc_re.len();
    let (acc_im, ar, ai, br, bi) = (&mut acc_im[..n], &ar[..n], &ai[..n], &br[..n], &bi[..n]);
    for f in 0..n {
        acc_re[f] += ar[f] * br[f] + ai[f] * bi[f];
        acc_im[f] += ai[f] * br[f] - ar[f] * bi[f];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64], n: usize) -> Vec<Complex64> {
        (0..n / 2 + 1)
            .map(|f| {
                (0..x.len()).fold(Complex64::default(), |acc, t| {
                    let ang = -2.0 * std::f64::consts::PI * (f * t) as f64 / n as f64;
                    acc + Complex64::from_polar(x[t], ang)
                })
            })
            .collect()
    }

    #[test]
    fn zero_and_delta() {
        let s = rfft(&[0.0; 4], 4).unwrap();
        assert!(s.iter().all(|z| z.norm() == 0.0));
        let s = rfft(&[1.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|z| (*z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn roundtrip_pads_with_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = irfft(&rfft(&x, 8).unwrap(), 8).unwrap();
        for (i, v) in back.iter().enumerate() {
            let want = x.get(i).copied().unwrap_or(0.0);
            assert!((v - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn short_length_is_rejected() {
        assert!(matches!(rfft(&[1.0, 2.0, 3.0], 2), Err(Error::InvalidLength(_))));
    }

    #[test]
    fn matches_naive_dft() {
        let x = [0.3, -1.2, 2.0, 0.7, 0.1];
        for n in [5, 7, 8, 16] {
            let a = rfft(&x, n).unwrap();
            let b = naive_dft(&x, n);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn packed_rows_match_single_transforms() {
        let rows: Vec<Vec<f64>> = (0..3).map(|r| (0..6).map(|i| (r * 7 + i) as f64 * 0.1 - 0.5).collect()).collect();
        let mut fft = RealFft::new(16);
        let mut out = Vec::new();
        fft.forward_rows(rows.iter().map(|r| r.as_slice()), &mut out);
        for (r, row) in rows.iter().enumerate() {
            let single = rfft(row, 16).unwrap();
            for f in 0..9 {
                assert!((out[r * 9 + f] - single[f]).norm() < 1e-12);
            }
        }
        let mut back = vec![0.0; 3 * 6];
        fft.inverse_rows(&out, 6, &mut back);
        for (r, row) in rows.iter().enumerate() {
            for i in 0..6 {
                assert!((back[r * 6 + i] - row[i]).abs() < 1e-12);
            }
        }
    }
}
