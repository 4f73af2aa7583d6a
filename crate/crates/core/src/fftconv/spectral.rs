//! Real-input 3D FFTs over `[d, h, w]` blocks.
//!
//! The last axis uses a real-to-complex transform, the other two use
//! complex transforms on transposed copies so that every transform runs
//! over contiguous memory. 2D data is handled as `d = 1`.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) type C32 = Complex<f32>;

/// Transforms for one padded shape.
pub(crate) struct Plan3 {
    pub shape: [usize; 3],
    r2c: Arc<dyn RealToComplex<f32>>,
    c2r: Arc<dyn ComplexToReal<f32>>,
    fwd_h: Arc<dyn Fft<f32>>,
    inv_h: Arc<dyn Fft<f32>>,
    fwd_d: Arc<dyn Fft<f32>>,
    inv_d: Arc<dyn Fft<f32>>,
}

impl Plan3 {
    pub fn new(shape: [usize; 3]) -> Self {
        let [d, h, w] = shape;
        let mut real = RealFftPlanner::<f32>::new();
        let mut cplx = FftPlanner::<f32>::new();
        Self {
            shape,
            r2c: real.plan_fft_forward(w),
            c2r: real.plan_fft_inverse(w),
            fwd_h: cplx.plan_fft_forward(h),
            inv_h: cplx.plan_fft_inverse(h),
            fwd_d: cplx.plan_fft_forward(d),
            inv_d: cplx.plan_fft_inverse(d),
        }
    }

    /// Number of complex bins along the last axis.
    pub fn cw(&self) -> usize {
        self.shape[2] / 2 + 1
    }

    /// Forward transform of a real `[d, h, w]` block (unnormalized).
    pub fn forward(&self, input: &[f32]) -> Vec<C32> {
        let [d, h, w] = self.shape;
        let cw = self.cw();
        debug_assert_eq!(input.len(), d * h * w);
        let mut spec = vec![C32::default(); d * h * cw];
        let mut line = vec![0f32; w];
        let mut scratch = self.r2c.make_scratch_vec();
        for (row_in, row_out) in input.chunks_exact(w).zip(spec.chunks_exact_mut(cw)) {
            line.copy_from_slice(row_in);
            self.r2c
                .process_with_scratch(&mut line, row_out, &mut scratch)
                .expect("buffer sizes come from the plan");
        }
        self.complex_axes(&mut spec, &self.fwd_h, &self.fwd_d);
        spec
    }

    /// Inverse transform (unnormalized) into a real block.
    pub fn inverse(&self, mut spec: Vec<C32>) -> Vec<f32> {
        let [d, h, w] = self.shape;
        let cw = self.cw();
        self.complex_axes(&mut spec, &self.inv_h, &self.inv_d);
        let mut out = vec![0f32; d * h * w];
        let mut scratch = self.c2r.make_scratch_vec();
        for (row_in, row_out) in spec.chunks_exact_mut(cw).zip(out.chunks_exact_mut(w)) {
            // Rounding leaves tiny imaginary parts on the self-conjugate bins.
            row_in[0].im = 0.0;
            if w % 2 == 0 {
                row_in[cw - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row_in, row_out, &mut scratch)
                .expect("buffer sizes come from the plan");
        }
        out
    }

    fn complex_axes(&self, spec: &mut [C32], along_h: &Arc<dyn Fft<f32>>, along_d: &Arc<dyn Fft<f32>>) {
        let [d, h, _] = self.shape;
        let cw = self.cw();
        if h > 1 {
            let mut buf = vec![C32::default(); h * cw];
            let mut scratch = vec![C32::default(); along_h.get_inplace_scratch_len()];
            for plane in spec.chunks_exact_mut(h * cw) {
                transpose(plane, &mut buf, h, cw);
                along_h.process_with_scratch(&mut buf, &mut scratch);
                transpose(&buf, plane, cw, h);
            }
        }
        if d > 1 {
            let plane = h * cw;
            let mut buf = vec![C32::default(); d * plane];
            let mut scratch = vec![C32::default(); along_d.get_inplace_scratch_len()];
            transpose(spec, &mut buf, d, plane);
            along_d.process_with_scratch(&mut buf, &mut scratch);
            transpose(&buf, spec, plane, d);
        }
    }
}

/// `dst[c * rows + r] = src[r * cols + c]`.
fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
