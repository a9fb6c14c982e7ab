//! Reverse-mode differentiation over a linear tape of coarse tensor ops.
//!
//! Each node stores its forward value; [`Tape::backward`] walks the nodes in
//! reverse creation order and accumulates adjoints into the parents. The op
//! set is exactly what the pseudo-3D denoiser needs: spatial 3×3 and temporal
//! 3-tap convolutions, 1×1 channel projections, strided multi-head-free
//! attention, SiLU, pooling and a handful of structural ops.
//!
//! Feature maps use the `[frames, channels, height·width]` layout throughout.

use std::borrow::Cow;

use crate::scalar::{gemm, Mat, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// How one operand of an attention op is laid out inside its buffer.
///
/// Group `g`, token `n`, feature `d` lives at
/// `g·group_stride + n·token_stride + d·dim_stride`. A `group_stride` of 0
/// shares one key/value set across all query groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    pub groups: usize,
    pub tokens: usize,
    pub dim: usize,
    pub group_stride: usize,
    pub token_stride: usize,
    pub dim_stride: usize,
}

impl AttnLayout {
    fn mat(&self, g: usize) -> Mat {
        Mat {
            offset: g * self.group_stride,
            rows: self.tokens,
            cols: self.dim,
            rs: self.token_stride,
            cs: self.dim_stride,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    frames: usize,
    cin: usize,
    cout: usize,
    height: usize,
    width: usize,
}

enum Op<F> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Silu(Var),
    Concat { a: Var, b: Var, frames: usize, ca: usize, cb: usize, plane: usize },
    Conv3x3 { x: Var, w: Var, b: Var, dims: ConvDims },
    TemporalConv { x: Var, w: Var, b: Var, dims: ConvDims },
    ChannelLinear { x: Var, w: Var, b: Var, groups: usize, cin: usize, cout: usize, plane: usize },
    AddChannel { x: Var, bias: Var, channels: usize, plane: usize },
    AvgPool2 { x: Var, maps: usize, height: usize, width: usize },
    Upsample2 { x: Var, maps: usize, height: usize, width: usize },
    Attention { q: Var, k: Var, v: Var, ql: AttnLayout, kl: AttnLayout, probs: Vec<F> },
}

struct Node<'p, F: Scalar> {
    value: Cow<'p, [F]>,
    op: Op<F>,
}

/// Records a forward computation. Parameter leaves borrow their storage.
pub struct Tape<'p, F: Scalar> {
    nodes: Vec<Node<'p, F>>,
}

impl<F: Scalar> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn silu<F: Scalar>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

fn silu_grad<F: Scalar>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Unfolds one `[cin, h, w]` frame into `[cin·9, h·w]` columns with zero padding.
fn im2col<F: Scalar>(src: &[F], cin: usize, h: usize, w: usize, cols: &mut [F]) {
    let plane = h * w;
    for ci in 0..cin {
        let img = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let line = &img[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = F::zero();
                            out[1..].copy_from_slice(&line[..w - 1]);
                        }
                        1 => out.copy_from_slice(line),
                        _ => {
                            out[..w - 1].copy_from_slice(&line[1..]);
                            out[w - 1] = F::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the frame.
fn col2im_add<F: Scalar>(cols: &[F], cin: usize, h: usize, w: usize, dst: &mut [F]) {
    let plane = h * w;
    for ci in 0..cin {
        let img = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let line = &mut img[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => add_into(&mut line[..w - 1], &src[1..]),
                        1 => add_into(line, src),
                        _ => add_into(&mut line[1..], &src[..w - 1]),
                    }
                }
            }
        }
    }
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'p, [F]>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, value: Vec<F>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    /// Trainable parameter `index`, borrowed from the caller.
    pub fn param(&mut self, index: usize, value: &'p [F]) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(index))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add length mismatch");
        let out = va.iter().zip(vb).map(|(&x, &y)| x + y).collect();
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| silu(v)).collect();
        self.push(Cow::Owned(out), Op::Silu(x))
    }

    /// Channel concatenation of `[f, ca, P]` and `[f, cb, P]`.
    pub fn concat_channels(&mut self, a: Var, b: Var, frames: usize, ca: usize, cb: usize, plane: usize) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), frames * ca * plane);
        assert_eq!(vb.len(), frames * cb * plane);
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for t in 0..frames {
            out.extend_from_slice(&va[t * ca * plane..(t + 1) * ca * plane]);
            out.extend_from_slice(&vb[t * cb * plane..(t + 1) * cb * plane]);
        }
        self.push(Cow::Owned(out), Op::Concat { a, b, frames, ca, cb, plane })
    }

    /// Space-only convolution: a `1×3×3` kernel applied to every frame independently.
    ///
    /// `w` is `[cout, cin, 3, 3]`, `b` is `[cout]`; zero padding keeps `h × w`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, frames: usize, cin: usize, cout: usize, height: usize, width: usize) -> Var {
        let dims = ConvDims { frames, cin, cout, height, width };
        let plane = height * width;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(vx.len(), frames * cin * plane, "conv3x3 input");
        assert_eq!(vw.len(), cout * cin * 9, "conv3x3 weight");
        assert_eq!(vb.len(), cout, "conv3x3 bias");
        let mut out = vec![F::zero(); frames * cout * plane];
        let mut cols = vec![F::zero(); cin * 9 * plane];
        for t in 0..frames {
            im2col(&vx[t * cin * plane..(t + 1) * cin * plane], cin, height, width, &mut cols);
            let dst = &mut out[t * cout * plane..(t + 1) * cout * plane];
            for (co, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(vb[co]);
            }
            gemm(
                vw,
                Mat::row_major(0, cout, cin * 9),
                &cols,
                Mat::row_major(0, cin * 9, plane),
                F::one(),
                dst,
                Mat::row_major(0, cout, plane),
            );
        }
        self.push(Cow::Owned(out), Op::Conv3x3 { x, w, b, dims })
    }

    /// Convolution along frames with a 3-tap kernel and zero padding.
    ///
    /// `w` is `[cout, cin, 3]` where tap 1 is the current frame, tap 0 the previous.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Var, frames: usize, cin: usize, cout: usize, plane: usize) -> Var {
        let dims = ConvDims { frames, cin, cout, height: 1, width: plane };
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(vx.len(), frames * cin * plane, "temporal conv input");
        assert_eq!(vw.len(), cout * cin * 3, "temporal conv weight");
        assert_eq!(vb.len(), cout, "temporal conv bias");
        let mut out = vec![F::zero(); frames * cout * plane];
        for t in 0..frames {
            let base = t * cout * plane;
            for (co, row) in out[base..base + cout * plane].chunks_exact_mut(plane).enumerate() {
                row.fill(vb[co]);
            }
            for k in 0..3 {
                let s = t as isize + k as isize - 1;
                if s < 0 || s >= frames as isize {
                    continue;
                }
                let s = s as usize;
                gemm(
                    vw,
                    Mat { offset: k, rows: cout, cols: cin, rs: cin * 3, cs: 3 },
                    vx,
                    Mat::row_major(s * cin * plane, cin, plane),
                    F::one(),
                    &mut out,
                    Mat::row_major(base, cout, plane),
                );
            }
        }
        self.push(Cow::Owned(out), Op::TemporalConv { x, w, b, dims })
    }

    /// `y[g] = W·x[g] + b` for each of `groups` blocks of shape `[cin, plane]`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Var, groups: usize, cin: usize, cout: usize, plane: usize) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(vx.len(), groups * cin * plane, "linear input");
        assert_eq!(vw.len(), cout * cin, "linear weight");
        assert_eq!(vb.len(), cout, "linear bias");
        let mut out = vec![F::zero(); groups * cout * plane];
        for g in 0..groups {
            let base = g * cout * plane;
            for (co, row) in out[base..base + cout * plane].chunks_exact_mut(plane).enumerate() {
                row.fill(vb[co]);
            }
            gemm(
                vw,
                Mat::row_major(0, cout, cin),
                vx,
                Mat::row_major(g * cin * plane, cin, plane),
                F::one(),
                &mut out,
                Mat::row_major(base, cout, plane),
            );
        }
        self.push(Cow::Owned(out), Op::ChannelLinear { x, w, b, groups, cin, cout, plane })
    }

    /// Adds `bias[c]` to every position of channel `c` in `[f, c, P]`.
    pub fn add_channel(&mut self, x: Var, bias: Var, frames: usize, channels: usize, plane: usize) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        assert_eq!(vx.len(), frames * channels * plane);
        assert_eq!(vb.len(), channels);
        let mut out = vx.to_vec();
        for (i, row) in out.chunks_exact_mut(plane).enumerate() {
            let add = vb[i % channels];
            row.iter_mut().for_each(|v| *v += add);
        }
        self.push(Cow::Owned(out), Op::AddChannel { x, bias, channels, plane })
    }

    /// 2×2 mean pooling of `maps` planes of size `h × w` (both even).
    pub fn avg_pool2(&mut self, x: Var, maps: usize, height: usize, width: usize) -> Var {
        assert!(height.is_multiple_of(2) && width.is_multiple_of(2), "pooling needs even dims");
        let vx = self.value(x);
        assert_eq!(vx.len(), maps * height * width);
        let (oh, ow) = (height / 2, width / 2);
        let quarter = F::from_f64(0.25);
        let mut out = vec![F::zero(); maps * oh * ow];
        for m in 0..maps {
            let src = &vx[m * height * width..];
            let dst = &mut out[m * oh * ow..];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * width + 2 * xx;
                    dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + width] + src[i + width + 1]) * quarter;
                }
            }
        }
        self.push(Cow::Owned(out), Op::AvgPool2 { x, maps, height, width })
    }

    /// Nearest-neighbour 2× upsampling of `maps` planes of size `h × w`.
    pub fn upsample2(&mut self, x: Var, maps: usize, height: usize, width: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.len(), maps * height * width);
        let (oh, ow) = (height * 2, width * 2);
        let mut out = vec![F::zero(); maps * oh * ow];
        for m in 0..maps {
            let src = &vx[m * height * width..];
            let dst = &mut out[m * oh * ow..];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * width + xx / 2];
                }
            }
        }
        self.push(Cow::Owned(out), Op::Upsample2 { x, maps, height, width })
    }

    /// Scaled dot-product attention `softmax(q·kᵀ/√d)·v` per group.
    ///
    /// Keys and values share `kl`; the output has the same layout and length as `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, ql: AttnLayout, kl: AttnLayout) -> Var {
        assert_eq!(ql.dim, kl.dim, "attention feature dims");
        assert!(kl.group_stride == 0 || kl.groups == ql.groups, "attention groups");
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, nk, d) = (ql.tokens, kl.tokens, ql.dim);
        let scale = F::from_f64(1.0 / (d as f64).sqrt());
        let mut probs = vec![F::zero(); ql.groups * nq * nk];
        let mut out = vec![F::zero(); vq.len()];
        for g in 0..ql.groups {
            let p = &mut probs[g * nq * nk..(g + 1) * nq * nk];
            gemm(vq, ql.mat(g), vk, kl.mat(g).t(), F::zero(), p, Mat::row_major(0, nq, nk));
            for row in p.chunks_exact_mut(nk) {
                let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
                let mut sum = F::zero();
                for x in row.iter_mut() {
                    *x = ((*x - max) * scale).exp();
                    sum += *x;
                }
                let inv = F::one() / sum;
                row.iter_mut().for_each(|x| *x *= inv);
            }
            gemm(p, Mat::row_major(0, nq, nk), vv, kl.mat(g), F::zero(), &mut out, ql.mat(g));
        }
        self.push(Cow::Owned(out), Op::Attention { q, k, v, ql, kl, probs })
    }

    /// Back-propagates `seed` (the adjoint of `output`) and returns the
    /// gradient of every parameter index in `0..n_params`.
    pub fn backward(&self, output: Var, seed: Vec<F>, n_params: usize) -> Vec<Vec<F>> {
        assert_eq!(seed.len(), self.value(output).len(), "seed length");
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut param_grads: Vec<Vec<F>> = vec![Vec::new(); n_params];

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(i) => param_grads[*i] = g,
                Op::Add(a, b) => {
                    add_into(Self::grad_slot(&mut grads, *a, g.len()), &g);
                    add_into(Self::grad_slot(&mut grads, *b, g.len()), &g);
                }
                Op::Silu(x) => {
                    let vx = self.value(*x);
                    let dst = Self::grad_slot(&mut grads, *x, g.len());
                    for ((d, &gi), &xi) in dst.iter_mut().zip(&g).zip(vx) {
                        *d += gi * silu_grad(xi);
                    }
                }
                &Op::Concat { a, b, frames, ca, cb, plane } => {
                    let (la, lb) = (ca * plane, cb * plane);
                    {
                        let da = Self::grad_slot(&mut grads, a, frames * la);
                        for t in 0..frames {
                            add_into(&mut da[t * la..(t + 1) * la], &g[t * (la + lb)..t * (la + lb) + la]);
                        }
                    }
                    let db = Self::grad_slot(&mut grads, b, frames * lb);
                    for t in 0..frames {
                        add_into(&mut db[t * lb..(t + 1) * lb], &g[t * (la + lb) + la..(t + 1) * (la + lb)]);
                    }
                }
                &Op::Conv3x3 { x, w, b, dims } => self.conv3x3_backward(&g, x, w, b, dims, &mut grads),
                &Op::TemporalConv { x, w, b, dims } => self.temporal_backward(&g, x, w, b, dims, &mut grads),
                &Op::ChannelLinear { x, w, b, groups, cin, cout, plane } => {
                    let (vx, vw) = (self.value(x), self.value(w));
                    {
                        let dw = Self::grad_slot(&mut grads, w, cout * cin);
                        for gi in 0..groups {
                            gemm(
                                &g,
                                Mat::row_major(gi * cout * plane, cout, plane),
                                vx,
                                Mat::row_major(gi * cin * plane, cin, plane).t(),
                                F::one(),
                                dw,
                                Mat::row_major(0, cout, cin),
                            );
                        }
                    }
                    {
                        let db = Self::grad_slot(&mut grads, b, cout);
                        for (i, row) in g.chunks_exact(plane).enumerate() {
                            db[i % cout] += row.iter().copied().sum();
                        }
                    }
                    let dx = Self::grad_slot(&mut grads, x, groups * cin * plane);
                    for gi in 0..groups {
                        gemm(
                            vw,
                            Mat::row_major(0, cout, cin).t(),
                            &g,
                            Mat::row_major(gi * cout * plane, cout, plane),
                            F::one(),
                            dx,
                            Mat::row_major(gi * cin * plane, cin, plane),
                        );
                    }
                }
                &Op::AddChannel { x, bias, channels, plane } => {
                    add_into(Self::grad_slot(&mut grads, x, g.len()), &g);
                    let db = Self::grad_slot(&mut grads, bias, channels);
                    for (i, row) in g.chunks_exact(plane).enumerate() {
                        db[i % channels] += row.iter().copied().sum();
                    }
                }
                &Op::AvgPool2 { x, maps, height, width } => {
                    let (oh, ow) = (height / 2, width / 2);
                    let quarter = F::from_f64(0.25);
                    let dx = Self::grad_slot(&mut grads, x, maps * height * width);
                    for m in 0..maps {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let gv = g[m * oh * ow + y * ow + xx] * quarter;
                                let i = m * height * width + 2 * y * width + 2 * xx;
                                dx[i] += gv;
                                dx[i + 1] += gv;
                                dx[i + width] += gv;
                                dx[i + width + 1] += gv;
                            }
                        }
                    }
                }
                &Op::Upsample2 { x, maps, height, width } => {
                    let (oh, ow) = (height * 2, width * 2);
                    let dx = Self::grad_slot(&mut grads, x, maps * height * width);
                    for m in 0..maps {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[m * height * width + (y / 2) * width + xx / 2] += g[m * oh * ow + y * ow + xx];
                            }
                        }
                    }
                }
                Op::Attention { q, k, v, ql, kl, probs } => {
                    self.attention_backward(&g, *q, *k, *v, *ql, *kl, probs, &mut grads)
                }
            }
        }
        param_grads
    }

    fn grad_slot(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut Vec<F> {
        grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
    }

    fn conv3x3_backward(&self, g: &[F], x: Var, w: Var, b: Var, d: ConvDims, grads: &mut [Option<Vec<F>>]) {
        let plane = d.height * d.width;
        let (vx, vw) = (self.value(x), self.value(w));
        let flen = d.cin * 9;
        let mut cols = vec![F::zero(); flen * plane];
        {
            let dw = Self::grad_slot(grads, w, d.cout * flen);
            for t in 0..d.frames {
                im2col(&vx[t * d.cin * plane..(t + 1) * d.cin * plane], d.cin, d.height, d.width, &mut cols);
                gemm(
                    g,
                    Mat::row_major(t * d.cout * plane, d.cout, plane),
                    &cols,
                    Mat::row_major(0, flen, plane).t(),
                    F::one(),
                    dw,
                    Mat::row_major(0, d.cout, flen),
                );
            }
        }
        {
            let db = Self::grad_slot(grads, b, d.cout);
            for (i, row) in g.chunks_exact(plane).enumerate() {
                db[i % d.cout] += row.iter().copied().sum();
            }
        }
        let dx = Self::grad_slot(grads, x, d.frames * d.cin * plane);
        for t in 0..d.frames {
            gemm(
                vw,
                Mat::row_major(0, d.cout, flen).t(),
                g,
                Mat::row_major(t * d.cout * plane, d.cout, plane),
                F::zero(),
                &mut cols,
                Mat::row_major(0, flen, plane),
            );
            col2im_add(&cols, d.cin, d.height, d.width, &mut dx[t * d.cin * plane..(t + 1) * d.cin * plane]);
        }
    }

    fn temporal_backward(&self, g: &[F], x: Var, w: Var, b: Var, d: ConvDims, grads: &mut [Option<Vec<F>>]) {
        let plane = d.width;
        let (vx, vw) = (self.value(x), self.value(w));
        {
            let dw = Self::grad_slot(grads, w, d.cout * d.cin * 3);
            for t in 0..d.frames {
                for k in 0..3 {
                    let s = t as isize + k as isize - 1;
                    if s < 0 || s >= d.frames as isize {
                        continue;
                    }
                    gemm(
                        g,
                        Mat::row_major(t * d.cout * plane, d.cout, plane),
                        vx,
                        Mat::row_major(s as usize * d.cin * plane, d.cin, plane).t(),
                        F::one(),
                        dw,
                        Mat { offset: k, rows: d.cout, cols: d.cin, rs: d.cin * 3, cs: 3 },
                    );
                }
            }
        }
        {
            let db = Self::grad_slot(grads, b, d.cout);
            for (i, row) in g.chunks_exact(plane).enumerate() {
                db[i % d.cout] += row.iter().copied().sum();
            }
        }
        let dx = Self::grad_slot(grads, x, d.frames * d.cin * plane);
        for t in 0..d.frames {
            for k in 0..3 {
                let s = t as isize + k as isize - 1;
                if s < 0 || s >= d.frames as isize {
                    continue;
                }
                gemm(
                    vw,
                    Mat { offset: k, rows: d.cout, cols: d.cin, rs: d.cin * 3, cs: 3 }.t(),
                    g,
                    Mat::row_major(t * d.cout * plane, d.cout, plane),
                    F::one(),
                    dx,
                    Mat::row_major(s as usize * d.cin * plane, d.cin, plane),
                );
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[F],
        q: Var,
        k: Var,
        v: Var,
        ql: AttnLayout,
        kl: AttnLayout,
        probs: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, nk) = (ql.tokens, kl.tokens);
        let scale = F::from_f64(1.0 / (ql.dim as f64).sqrt());
        let pm = Mat::row_major(0, nq, nk);
        // dS for every group, scaled by 1/sqrt(d).
        let mut ds_all = vec![F::zero(); ql.groups * nq * nk];
        {
            let dv = Self::grad_slot(grads, v, vv.len());
            for gi in 0..ql.groups {
                let p = &probs[gi * nq * nk..(gi + 1) * nq * nk];
                gemm(p, pm.t(), g, ql.mat(gi), F::one(), dv, kl.mat(gi));
                let ds = &mut ds_all[gi * nq * nk..(gi + 1) * nq * nk];
                gemm(g, ql.mat(gi), vv, kl.mat(gi).t(), F::zero(), ds, pm);
                for (drow, prow) in ds.chunks_exact_mut(nk).zip(p.chunks_exact(nk)) {
                    let dot: F = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
            }
        }
        {
            let dq = Self::grad_slot(grads, q, vq.len());
            for gi in 0..ql.groups {
                gemm(&ds_all, Mat::row_major(gi * nq * nk, nq, nk), vk, kl.mat(gi), F::one(), dq, ql.mat(gi));
            }
        }
        let dk = Self::grad_slot(grads, k, vk.len());
        for gi in 0..ql.groups {
            gemm(&ds_all, Mat::row_major(gi * nq * nk, nq, nk).t(), vq, ql.mat(gi), F::one(), dk, kl.mat(gi));
        }
    }
}
