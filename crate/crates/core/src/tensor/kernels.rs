//! Raw forward and backward kernels over flat slices.
//!
//! Layout is channels-last: images are `[H,W,C]`, volumes `[T,H,W,C]`,
//! kernels `[kT,kH,kW,Cin,Cout]`. Convolution is cross-correlation (no
//! kernel flip). Every output element accumulates its terms in a fixed
//! order, so results do not depend on how the loops are scheduled.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Geometry of a convolution over three spatial axes `(T,H,W)`.
/// Two-dimensional convolutions use `T = kT = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad_lo: [usize; 3],
    pub output: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

/// Output extent and low-side padding along one axis.
pub fn axis_extent(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if input == 0 {
        return Err(Error::EmptyInput(op));
    }
    if kernel == 0 || stride == 0 {
        return Err(Error::Config(format!("{op}: kernel and stride must be positive")));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::shape(
                    op,
                    format!("kernel extent {kernel} exceeds input extent {input}"),
                ));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        op: &'static str,
        input: [usize; 3],
        cin: usize,
        kernel: [usize; 3],
        kernel_cin: usize,
        cout: usize,
        stride: [usize; 3],
        padding: Padding,
    ) -> Result<Self> {
        if cin != kernel_cin {
            return Err(Error::shape(
                op,
                format!("input has {cin} channels, kernel expects {kernel_cin}"),
            ));
        }
        if cin == 0 || cout == 0 {
            return Err(Error::EmptyInput(op));
        }
        let mut output = [0; 3];
        let mut pad_lo = [0; 3];
        for a in 0..3 {
            let (o, p) = axis_extent(op, input[a], kernel[a], stride[a], padding)?;
            output[a] = o;
            pad_lo[a] = p;
        }
        Ok(ConvGeom {
            input,
            kernel,
            stride,
            pad_lo,
            output,
            cin,
            cout,
        })
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product::<usize>() * self.cout
    }

    /// Extents of the zero-padded input that every tap reads from.
    fn padded_input(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.input[a] + self.pad_lo[a]).max((self.output[a] - 1) * self.stride[a] + self.kernel[a]))
    }

    /// Output coordinate that reads input `i` through kernel tap `k`.
    #[inline]
    fn target(&self, axis: usize, i: usize, k: usize) -> Option<usize> {
        let pos = (i + self.pad_lo[axis]).checked_sub(k)?;
        if pos % self.stride[axis] != 0 {
            return None;
        }
        let o = pos / self.stride[axis];
        (o < self.output[axis]).then_some(o)
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

}

/// Channel lanes accumulated together in registers.
const LANES: usize = 8;

/// Splits `0..n` into full `LANES`-wide blocks plus a narrower tail.
fn lane_blocks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(LANES).map(move |s| (s, (n - s).min(LANES)))
}

/// Forward convolution. Each output element is `bias` followed by its
/// taps in row-major `(kT,kH,kW,Cin)` order.
pub fn conv_forward<F: Scalar>(g: &ConvGeom, input: &[F], kernel: &[F], bias: Option<&[F]>) -> Vec<F> {
    let dims = g.padded_input();
    let x = pad_volume(input, g.input, g.cin, dims, g.pad_lo);
    let (kp, np) = pad_lanes(kernel, g.taps() * g.cin, g.cout);
    let bp = bias.map(|b| pad_lanes(b, 1, g.cout).0);
    let out = correlate(&x, dims, g.cin, &kp, g.kernel, np, g.stride, g.output, bp.as_deref());
    strip_lanes(out, np, g.cout)
}

/// `src` (`[dims][c]`) embedded in a zero volume of extent `dims`, offset by `lo`.
fn pad_volume<F: Scalar>(src: &[F], src_dims: [usize; 3], c: usize, dims: [usize; 3], lo: [usize; 3]) -> Vec<F> {
    if dims == src_dims {
        return src.to_vec();
    }
    let mut out = vec![F::zero(); dims.iter().product::<usize>() * c];
    let row = src_dims[2] * c;
    for t in 0..src_dims[0] {
        for y in 0..src_dims[1] {
            let s = (t * src_dims[1] + y) * row;
            let d = (((t + lo[0]) * dims[1] + y + lo[1]) * dims[2] + lo[2]) * c;
            out[d..d + row].copy_from_slice(&src[s..s + row]);
        }
    }
    out
}

/// Rows of width `n` widened with zeros to a whole number of lane blocks.
fn pad_lanes<F: Scalar>(src: &[F], rows: usize, n: usize) -> (Vec<F>, usize) {
    let np = n.div_ceil(LANES) * LANES;
    if np == n {
        return (src.to_vec(), n);
    }
    let mut out = vec![F::zero(); rows * np];
    for (d, s) in out.chunks_exact_mut(np).zip(src.chunks_exact(n)) {
        d[..n].copy_from_slice(s);
    }
    (out, np)
}

fn strip_lanes<F: Scalar>(src: Vec<F>, np: usize, n: usize) -> Vec<F> {
    if np == n {
        return src;
    }
    src.chunks_exact(np).flat_map(|r| r[..n].iter().copied()).collect()
}

/// Output positions computed together along the row.
const POS_BLOCK: usize = 8;

/// Valid cross-correlation of an already padded `[dims][cin]` volume with a
/// `[taps][cin][np]` kernel, `np` a multiple of `LANES`.
#[allow(clippy::too_many_arguments)]
fn correlate<F: Scalar>(
    x: &[F],
    dims: [usize; 3],
    cin: usize,
    kernel: &[F],
    kdims: [usize; 3],
    np: usize,
    stride: [usize; 3],
    out: [usize; 3],
    bias: Option<&[F]>,
) -> Vec<F> {
    let [ot, oh, ow] = out;
    let mut res = vec![F::zero(); ot * oh * ow * np];
    let c = Correlation {
        x,
        dims,
        cin,
        kernel,
        kdims,
        np,
        stride,
        bias,
    };
    for t in 0..ot {
        for y in 0..oh {
            let row = &mut res[(t * oh + y) * ow * np..(t * oh + y + 1) * ow * np];
            let mut xo = 0;
            while xo + POS_BLOCK <= ow {
                c.block::<POS_BLOCK>(t, y, xo, row);
                xo += POS_BLOCK;
            }
            while xo < ow {
                c.block::<1>(t, y, xo, row);
                xo += 1;
            }
        }
    }
    res
}

struct Correlation<'a, F> {
    x: &'a [F],
    dims: [usize; 3],
    cin: usize,
    kernel: &'a [F],
    kdims: [usize; 3],
    np: usize,
    stride: [usize; 3],
    bias: Option<&'a [F]>,
}

impl<F: Scalar> Correlation<'_, F> {
    /// Outputs `xo..xo+P` of row `(t,y)`, written into `row`.
    #[inline(always)]
    fn block<const P: usize>(&self, t: usize, y: usize, xo: usize, row: &mut [F]) {
        let [_, ph, pw] = self.dims;
        let [kt, kh, kw] = self.kdims;
        let [st, sy, sx] = self.stride;
        let (np, run) = (self.np, kw * self.cin);
        let step = sx * self.cin;
        for cb in (0..np).step_by(LANES) {
            let mut acc = [[F::zero(); LANES]; P];
            if let Some(b) = self.bias {
                for a in acc.iter_mut() {
                    a.copy_from_slice(&b[cb..cb + LANES]);
                }
            }
            for a in 0..kt {
                for b in 0..kh {
                    let xb = (((t * st + a) * ph + y * sy + b) * pw + xo * sx) * self.cin;
                    let xs: [&[F]; P] = std::array::from_fn(|p| &self.x[xb + p * step..xb + p * step + run]);
                    let kb = (a * kh + b) * run;
                    let ks = &self.kernel[kb * np..(kb + run) * np];
                    for (r, kr) in ks.chunks_exact(np).enumerate() {
                        let kv: &[F; LANES] = kr[cb..cb + LANES].try_into().unwrap();
                        for (acc, xs) in acc.iter_mut().zip(&xs) {
                            let xv = xs[r];
                            for l in 0..LANES {
                                acc[l] += xv * kv[l];
                            }
                        }
                    }
                }
            }
            for (p, acc) in acc.iter().enumerate() {
                let o = (xo + p) * np + cb;
                row[o..o + LANES].copy_from_slice(acc);
            }
        }
    }
}

/// `grad_bias += sum of grad_out over positions`.
pub fn conv_backward_bias<F: Scalar>(g: &ConvGeom, grad_out: &[F], grad_bias: &mut [F]) {
    for row in grad_out.chunks_exact(g.cout) {
        for (d, &v) in grad_bias.iter_mut().zip(row) {
            *d += v;
        }
    }
}

/// `grad_kernel += input ⋆ grad_out`, summing over output positions in
/// row-major order.
pub fn conv_backward_kernel<F: Scalar>(g: &ConvGeom, input: &[F], grad_out: &[F], grad_kernel: &mut [F]) {
    let cin = g.cin;
    let dims = g.padded_input();
    let x = pad_volume(input, g.input, cin, dims, g.pad_lo);
    let (go, np) = pad_lanes(grad_out, g.output.iter().product(), g.cout);
    let [kt, kh, kw] = g.kernel;
    let mut offsets = Vec::with_capacity(g.taps() * cin);
    for a in 0..kt {
        for b in 0..kh {
            for c in 0..kw {
                offsets.extend((0..cin).map(|ci| ((a * dims[1] + b) * dims[2] + c) * cin + ci));
            }
        }
    }
    let mut bases = Vec::with_capacity(g.output.iter().product());
    for t in 0..g.output[0] {
        for y in 0..g.output[1] {
            for xo in 0..g.output[2] {
                bases.push(((t * g.stride[0] * dims[1] + y * g.stride[1]) * dims[2] + xo * g.stride[2]) * cin);
            }
        }
    }
    let job = KernelGrad {
        x: &x,
        go: &go,
        np,
        bases: &bases,
        offsets: &offsets,
    };
    let mut dk = vec![F::zero(); offsets.len() * np];
    let mut r = 0;
    while r < offsets.len() {
        let mut cb = 0;
        if r + 8 <= offsets.len() {
            while cb + 2 * LANES <= np {
                job.block::<8, 2>(r, cb, &mut dk);
                cb += 2 * LANES;
            }
            while cb < np {
                job.block::<8, 1>(r, cb, &mut dk);
                cb += LANES;
            }
            r += 8;
        } else {
            while cb < np {
                job.block::<1, 1>(r, cb, &mut dk);
                cb += LANES;
            }
            r += 1;
        }
    }
    for (d, s) in grad_kernel.chunks_exact_mut(g.cout).zip(dk.chunks_exact(np)) {
        for (d, &v) in d.iter_mut().zip(s) {
            *d += v;
        }
    }
}

struct KernelGrad<'a, F> {
    x: &'a [F],
    go: &'a [F],
    np: usize,
    bases: &'a [usize],
    offsets: &'a [usize],
}

impl<F: Scalar> KernelGrad<'_, F> {
    /// Kernel rows `r..r+R` by lane blocks `cb..cb+B*LANES`.
    #[inline(always)]
    fn block<const R: usize, const B: usize>(&self, r: usize, cb: usize, dk: &mut [F]) {
        let offs: [usize; R] = self.offsets[r..r + R].try_into().unwrap();
        let mut acc = [[[F::zero(); LANES]; B]; R];
        for (pos, &base) in self.bases.iter().enumerate() {
            let o = pos * self.np + cb;
            let go: &[F] = &self.go[o..o + B * LANES];
            for (acc, &off) in acc.iter_mut().zip(&offs) {
                let xv = self.x[base + off];
                for (bl, acc) in acc.iter_mut().enumerate() {
                    let gv: &[F; LANES] = go[bl * LANES..(bl + 1) * LANES].try_into().unwrap();
                    for l in 0..LANES {
                        acc[l] += xv * gv[l];
                    }
                }
            }
        }
        for (i, acc) in acc.iter().enumerate() {
            for (bl, acc) in acc.iter().enumerate() {
                let o = (r + i) * self.np + cb + bl * LANES;
                dk[o..o + LANES].copy_from_slice(acc);
            }
        }
    }
}

/// `grad_input += grad_out ⋆ kernelᵀ`. Each input element sums over taps
/// in reverse row-major order, then output channels.
pub fn conv_backward_input<F: Scalar>(g: &ConvGeom, kernel: &[F], grad_out: &[F], grad_input: &mut [F]) {
    if g.stride != [1, 1, 1] {
        return conv_backward_input_strided(g, kernel, grad_out, grad_input);
    }
    let (cin, cout) = (g.cin, g.cout);
    let taps = g.taps();
    // Zero-extended grad_out correlated with the flipped, transposed kernel.
    let dims: [usize; 3] = std::array::from_fn(|a| g.input[a] + g.kernel[a] - 1);
    let lo: [usize; 3] = std::array::from_fn(|a| g.kernel[a] - 1 - g.pad_lo[a]);
    let go = pad_volume(grad_out, g.output, cout, dims, lo);
    let np = cin.div_ceil(LANES) * LANES;
    let mut wt = vec![F::zero(); taps * cout * np];
    for tap in 0..taps {
        let src = taps - 1 - tap;
        for ci in 0..cin {
            for co in 0..cout {
                wt[(tap * cout + co) * np + ci] = kernel[(src * cin + ci) * cout + co];
            }
        }
    }
    let gi = correlate(&go, dims, cout, &wt, g.kernel, np, [1, 1, 1], g.input, None);
    for (d, s) in grad_input.chunks_exact_mut(cin).zip(gi.chunks_exact(np)) {
        for (d, &v) in d.iter_mut().zip(s) {
            *d += v;
        }
    }
}

/// Gather form of [`conv_backward_input`] for strided convolutions, summing
/// taps in row-major order, then output channels.
fn conv_backward_input_strided<F: Scalar>(g: &ConvGeom, kernel: &[F], grad_out: &[F], grad_input: &mut [F]) {
    let (cin, cout) = (g.cin, g.cout);
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [_, oh, ow] = g.output;
    // Kernel re-laid out as [tap][Cout][Cin] so input channels are contiguous.
    let taps = g.taps();
    let mut wt = vec![F::zero(); kernel.len()];
    for tap in 0..taps {
        for ci in 0..cin {
            for co in 0..cout {
                wt[(tap * cout + co) * cin + ci] = kernel[(tap * cin + ci) * cout + co];
            }
        }
    }
    let mut hits: Vec<(usize, usize)> = Vec::with_capacity(taps);
    for t in 0..it {
        for y in 0..ih {
            for x in 0..iw {
                hits.clear();
                for a in 0..kt {
                    let Some(ot) = g.target(0, t, a) else { continue };
                    for b in 0..kh {
                        let Some(oy) = g.target(1, y, b) else { continue };
                        for c in 0..kw {
                            let Some(ox) = g.target(2, x, c) else { continue };
                            hits.push((((ot * oh + oy) * ow + ox) * cout, (a * kh + b) * kw + c));
                        }
                    }
                }
                let base = ((t * ih + y) * iw + x) * cin;
                for (cb, width) in lane_blocks(cin) {
                    let mut acc = [F::zero(); LANES];
                    for &(o_off, tap) in &hits {
                        for co in 0..cout {
                            let gv = grad_out[o_off + co];
                            let off = (tap * cout + co) * cin + cb;
                            if width == LANES {
                                let wr: &[F; LANES] = wt[off..off + LANES].try_into().unwrap();
                                for l in 0..LANES {
                                    acc[l] += gv * wr[l];
                                }
                            } else {
                                for l in 0..width {
                                    acc[l] += gv * wt[off + l];
                                }
                            }
                        }
                    }
                    for (d, &v) in grad_input[base + cb..base + cb + width].iter_mut().zip(&acc) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Geometry of a valid-padding max pool over `(T,H,W)` with `C` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
    pub channels: usize,
}

impl PoolGeom {
    pub fn new(
        op: &'static str,
        input: [usize; 3],
        channels: usize,
        window: [usize; 3],
        stride: [usize; 3],
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyInput(op));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = axis_extent(op, input[a], window[a], stride[a], Padding::Valid)?.0;
        }
        Ok(PoolGeom {
            input,
            window,
            stride,
            output,
            channels,
        })
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product::<usize>() * self.channels
    }
}

/// Returns pooled values and, per output element, the flat input index of
/// the first maximum in row-major window order.
pub fn maxpool_forward<F: Scalar>(g: &PoolGeom, input: &[F]) -> (Vec<F>, Vec<usize>) {
    let [_, ih, iw] = g.input;
    let [ot, oh, ow] = g.output;
    let [wt, wh, ww] = g.window;
    let c = g.channels;
    let mut out = Vec::with_capacity(g.output_len());
    let mut arg = Vec::with_capacity(g.output_len());
    for t in 0..ot {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for a in 0..wt {
                        for b in 0..wh {
                            for d in 0..ww {
                                let st = t * g.stride[0] + a;
                                let sy = y * g.stride[1] + b;
                                let sx = x * g.stride[2] + d;
                                let idx = ((st * ih + sy) * iw + sx) * c + ch;
                                if best == usize::MAX || input[idx] > input[best] {
                                    best = idx;
                                }
                            }
                        }
                    }
                    out.push(input[best]);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<F: Scalar>(argmax: &[usize], grad_out: &[F], grad_input: &mut [F]) {
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_input[i] += g;
    }
}

pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::shape("matmul", format!("{a:?} x {b:?}"))),
    }
}

/// `out += a · b`, accumulating over `k` in ascending order.
pub fn matmul_into<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `grad_a += grad_out · bᵀ`.
pub fn matmul_grad_a<F: Scalar>(
    grad_out: &[F],
    b: &[F],
    grad_a: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let go = &grad_out[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&g, &bv) in go.iter().zip(brow) {
                acc += g * bv;
            }
            grad_a[i * k + p] += acc;
        }
    }
}

/// `grad_b += aᵀ · grad_out`.
pub fn matmul_grad_b<F: Scalar>(
    a: &[F],
    grad_out: &[F],
    grad_b: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let go = &grad_out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let row = &mut grad_b[p * n..(p + 1) * n];
            for (d, &g) in row.iter_mut().zip(go) {
                *d += av * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn same_padding_extents() {
        assert_eq!(axis_extent("t", 64, 3, 1, Padding::Same).unwrap(), (64, 1));
        // even kernel: the extra zero goes on the high side
        assert_eq!(axis_extent("t", 5, 2, 1, Padding::Same).unwrap(), (5, 0));
        assert_eq!(axis_extent("t", 5, 3, 2, Padding::Same).unwrap(), (3, 1));
        assert_eq!(axis_extent("t", 5, 3, 2, Padding::Valid).unwrap(), (2, 0));
        assert!(axis_extent("t", 2, 3, 1, Padding::Valid).is_err());
        assert!(axis_extent("t", 0, 1, 1, Padding::Valid).is_err());
    }

    #[test]
    fn pool_first_max_wins_ties() {
        let g = PoolGeom::new("p", [1, 2, 2], 1, [1, 2, 2], [1, 2, 2]).unwrap();
        let (v, a) = maxpool_forward(&g, &[5.0f32, 5.0, 1.0, 5.0]);
        assert_eq!(v, vec![5.0]);
        assert_eq!(a, vec![0]);
    }

    /// Direct cross-correlation with explicit zero padding.
    fn reference_conv(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.output_len()];
        let [ot, oh, ow] = g.output;
        for t in 0..ot {
            for y in 0..oh {
                for x in 0..ow {
                    for co in 0..g.cout {
                        let mut v = bias[co];
                        for a in 0..g.kernel[0] {
                            for b in 0..g.kernel[1] {
                                for c in 0..g.kernel[2] {
                                    let p = [
                                        (t * g.stride[0] + a) as isize - g.pad_lo[0] as isize,
                                        (y * g.stride[1] + b) as isize - g.pad_lo[1] as isize,
                                        (x * g.stride[2] + c) as isize - g.pad_lo[2] as isize,
                                    ];
                                    if (0..3).any(|i| p[i] < 0 || p[i] >= g.input[i] as isize) {
                                        continue;
                                    }
                                    let i_off = ((p[0] as usize * g.input[1] + p[1] as usize) * g.input[2]
                                        + p[2] as usize)
                                        * g.cin;
                                    let k_off = ((a * g.kernel[1] + b) * g.kernel[2] + c) * g.cin;
                                    for ci in 0..g.cin {
                                        v += input[i_off + ci] * kernel[(k_off + ci) * g.cout + co];
                                    }
                                }
                            }
                        }
                        out[((t * oh + y) * ow + x) * g.cout + co] = v;
                    }
                }
            }
        }
        out
    }

    fn values(n: usize, salt: usize) -> Vec<f64> {
        (0..n).map(|i| (((i * 7919 + salt * 104729) % 997) as f64 / 498.5) - 1.0).collect()
    }

    fn geometry() -> impl Strategy<Value = ConvGeom> {
        (
            [1usize..4, 1..6, 1..12],
            [1usize..3, 1..4, 1..4],
            [1usize..3, 1..3, 1..3],
            1usize..6,
            1usize..19,
            prop_oneof![Just(Padding::Valid), Just(Padding::Same)],
        )
            .prop_filter_map("kernel larger than input", |(input, kernel, stride, cin, cout, padding)| {
                ConvGeom::new("t", input, cin, kernel, cin, cout, stride, padding).ok()
            })
    }

    proptest! {
        #[test]
        fn conv_matches_reference(g in geometry()) {
            let n_in = g.input.iter().product::<usize>() * g.cin;
            let input = values(n_in, 1);
            let kernel = values(g.taps() * g.cin * g.cout, 2);
            let bias = values(g.cout, 3);
            let expect = reference_conv(&g, &input, &kernel, &bias);
            let got = conv_forward(&g, &input, &kernel, Some(&bias));
            prop_assert_eq!(got.len(), expect.len());
            for (a, b) in got.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn conv_backward_is_the_adjoint(g in geometry()) {
            let n_in = g.input.iter().product::<usize>() * g.cin;
            let n_k = g.taps() * g.cin * g.cout;
            let input = values(n_in, 4);
            let kernel = values(n_k, 5);
            let grad_out = values(g.output_len(), 6);
            let zero = vec![0.0; g.cout];
            // <grad_out, conv(x, k)> is bilinear, so its gradients are
            // reference convolutions against unit inputs and unit kernels.
            let mut gk = vec![0.0; n_k];
            conv_backward_kernel(&g, &input, &grad_out, &mut gk);
            for j in (0..n_k).step_by(n_k.div_ceil(12)) {
                let mut unit = vec![0.0; n_k];
                unit[j] = 1.0;
                let y = reference_conv(&g, &input, &unit, &zero);
                let e: f64 = y.iter().zip(&grad_out).map(|(a, b)| a * b).sum();
                prop_assert!((gk[j] - e).abs() < 1e-9);
            }
            let mut gi = vec![0.0; n_in];
            conv_backward_input(&g, &kernel, &grad_out, &mut gi);
            for j in (0..n_in).step_by(n_in.div_ceil(12)) {
                let mut unit = vec![0.0; n_in];
                unit[j] = 1.0;
                let y = reference_conv(&g, &unit, &kernel, &zero);
                let e: f64 = y.iter().zip(&grad_out).map(|(a, b)| a * b).sum();
                prop_assert!((gi[j] - e).abs() < 1e-9);
            }
        }
    }
}
