//! 2D convolution and transposed convolution, forward and adjoint.
//!
//! Both directions reduce to one GEMM per sample around an im2col/col2im
//! pair. The transposed convolution is implemented as the exact adjoint of
//! the strided convolution, so a 4x4/stride-2/padding-1 block doubles the
//! spatial extent while `conv2d` with the same geometry halves it.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Record, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct ConvRecord {
    pub input: Var,
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
    pub output: Var,
}

pub(crate) struct ConvTransposeRecord {
    pub input: Var,
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
    pub output: Var,
}

/// Gathers kernel windows of `src` (channels x src_h x src_w) into
/// `cols[(channels*kh*kw) x (grid_h*grid_w)]`, row-major. Grid position
/// (i, j) reads source pixel (i*stride + ki - pad, j*stride + kj - pad);
/// out-of-range reads produce zero.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    src: &[E],
    channels: usize,
    src_h: usize,
    src_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    cols: &mut [E],
) {
    debug_assert_eq!(src.len(), channels * src_h * src_w);
    debug_assert_eq!(cols.len(), channels * kh * kw * grid_h * grid_w);
    let grid = grid_h * grid_w;
    for c in 0..channels {
        let plane = &src[c * src_h * src_w..(c + 1) * src_h * src_w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * grid;
                for gi in 0..grid_h {
                    let si = (gi * stride + ki) as isize - pad as isize;
                    let dst = &mut cols[row + gi * grid_w..row + (gi + 1) * grid_w];
                    if si < 0 || si >= src_h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let src_row = &plane[si as usize * src_w..(si as usize + 1) * src_w];
                    for (gj, d) in dst.iter_mut().enumerate() {
                        let sj = (gj * stride + kj) as isize - pad as isize;
                        *d = if sj < 0 || sj >= src_w as isize {
                            E::zero()
                        } else {
                            src_row[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back into
/// `dst` (channels x dst_h x dst_w).
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    cols: &[E],
    channels: usize,
    dst_h: usize,
    dst_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    dst: &mut [E],
) {
    debug_assert_eq!(dst.len(), channels * dst_h * dst_w);
    debug_assert_eq!(cols.len(), channels * kh * kw * grid_h * grid_w);
    let grid = grid_h * grid_w;
    for c in 0..channels {
        let plane = &mut dst[c * dst_h * dst_w..(c + 1) * dst_h * dst_w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * grid;
                for gi in 0..grid_h {
                    let di = (gi * stride + ki) as isize - pad as isize;
                    if di < 0 || di >= dst_h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut plane[di as usize * dst_w..(di as usize + 1) * dst_w];
                    let src_row = &cols[row + gi * grid_w..row + (gi + 1) * grid_w];
                    for (gj, &v) in src_row.iter().enumerate() {
                        let dj = (gj * stride + kj) as isize - pad as isize;
                        if dj >= 0 && dj < dst_w as isize {
                            dst_row[dj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

impl<E: Element> Tape<E> {
    /// input (B,Cin,H,W) * weight (Cout,Cin,Kh,Kw) + bias (Cout), with
    /// output extent floor((H + 2*padding - Kh)/stride) + 1.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (b, c_in, h, w) = self.value(input).dims4("conv2d")?;
        let (c_out, wc_in, kh, kw) = self.value(weight).dims4("conv2d")?;
        if wc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.value(input).shape().to_vec(),
                rhs: self.value(weight).shape().to_vec(),
            });
        }
        if self.value(bias).shape() != [c_out] {
            return Err(TensorError::BadShape {
                op: "conv2d",
                expected: format!("bias of shape [{c_out}]"),
                got: self.value(bias).shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!(
                    "kernel {kh}x{kw} exceeds padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            });
        }
        let oh = conv_out_extent(h, kh, stride, padding);
        let ow = conv_out_extent(w, kw, stride, padding);

        let ckk = c_in * kh * kw;
        let mut cols = vec![E::zero(); ckk * oh * ow];
        let mut out = Tensor::zeros(vec![b, c_out, oh, ow]);
        {
            let x = self.value(input).data().to_vec();
            let w_mat = self.value(weight).data().to_vec();
            let bias_v = self.value(bias).data().to_vec();
            let sample_in = c_in * h * w;
            let sample_out = c_out * oh * ow;
            for n in 0..b {
                im2col(
                    &x[n * sample_in..(n + 1) * sample_in],
                    c_in,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    padding,
                    oh,
                    ow,
                    &mut cols,
                );
                let out_slice = &mut out.data_mut()[n * sample_out..(n + 1) * sample_out];
                E::gemm(
                    c_out,
                    ckk,
                    oh * ow,
                    E::one(),
                    &w_mat,
                    false,
                    &cols,
                    false,
                    E::zero(),
                    out_slice,
                );
                for (c, chunk) in out_slice.chunks_mut(oh * ow).enumerate() {
                    let bv = bias_v[c];
                    for v in chunk {
                        *v += bv;
                    }
                }
            }
        }
        let needs =
            self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        let out = self.push_output("conv2d", out, needs)?;
        self.records.push(Record::Conv(ConvRecord {
            input,
            weight,
            bias,
            stride,
            padding,
            output: out,
        }));
        Ok(out)
    }

    /// input (B,Cin,H,W) * weight (Cin,Cout,Kh,Kw) + bias (Cout), with
    /// output extent (H - 1)*stride - 2*padding + Kh.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (b, c_in, h, w) = self.value(input).dims4("conv_transpose2d")?;
        let (wc_in, c_out, kh, kw) = self.value(weight).dims4("conv_transpose2d")?;
        if wc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.value(input).shape().to_vec(),
                rhs: self.value(weight).shape().to_vec(),
            });
        }
        if self.value(bias).shape() != [c_out] {
            return Err(TensorError::BadShape {
                op: "conv_transpose2d",
                expected: format!("bias of shape [{c_out}]"),
                got: self.value(bias).shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: "stride must be positive".into(),
            });
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        if oh <= 2 * padding || ow <= 2 * padding {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: format!("padding {padding} consumes the whole {oh}x{ow} output"),
            });
        }
        let (oh, ow) = (oh - 2 * padding, ow - 2 * padding);

        let ckk = c_out * kh * kw;
        let mut cols = vec![E::zero(); ckk * h * w];
        let mut out = Tensor::zeros(vec![b, c_out, oh, ow]);
        {
            let x = self.value(input).data().to_vec();
            let w_mat = self.value(weight).data().to_vec(); // (c_in, ckk) viewed flat
            let bias_v = self.value(bias).data().to_vec();
            let sample_in = c_in * h * w;
            let sample_out = c_out * oh * ow;
            for n in 0..b {
                // cols = W^T (ckk x c_in) * x (c_in x h*w)
                E::gemm(
                    ckk,
                    c_in,
                    h * w,
                    E::one(),
                    &w_mat,
                    true,
                    &x[n * sample_in..(n + 1) * sample_in],
                    false,
                    E::zero(),
                    &mut cols,
                );
                let out_slice = &mut out.data_mut()[n * sample_out..(n + 1) * sample_out];
                col2im(
                    &cols, c_out, oh, ow, kh, kw, stride, padding, h, w, out_slice,
                );
                for (c, chunk) in out_slice.chunks_mut(oh * ow).enumerate() {
                    let bv = bias_v[c];
                    for v in chunk {
                        *v += bv;
                    }
                }
            }
        }
        let needs =
            self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        let out = self.push_output("conv_transpose2d", out, needs)?;
        self.records.push(Record::ConvTranspose(ConvTransposeRecord {
            input,
            weight,
            bias,
            stride,
            padding,
            output: out,
        }));
        Ok(out)
    }

    pub(crate) fn conv2d_backward(&mut self, rec: &ConvRecord) -> Result<()> {
        let Some(gout) = self.nodes[rec.output.0].grad.clone() else {
            return Ok(());
        };
        let (b, c_in, h, w) = self.value(rec.input).dims4("conv2d")?;
        let (c_out, _, kh, kw) = self.value(rec.weight).dims4("conv2d")?;
        let (_, _, oh, ow) = gout.dims4("conv2d")?;
        let ckk = c_in * kh * kw;
        let sample_in = c_in * h * w;
        let sample_out = c_out * oh * ow;
        let gout = gout.into_data();

        let need_x = self.needs_grad(rec.input);
        let need_w = self.needs_grad(rec.weight);
        let need_b = self.needs_grad(rec.bias);

        let mut gx = if need_x {
            vec![E::zero(); b * sample_in]
        } else {
            Vec::new()
        };
        let mut gw = if need_w {
            vec![E::zero(); c_out * ckk]
        } else {
            Vec::new()
        };
        let mut gb = if need_b {
            vec![E::zero(); c_out]
        } else {
            Vec::new()
        };

        let x = self.value(rec.input).data().to_vec();
        let w_mat = self.value(rec.weight).data().to_vec();
        let mut cols = vec![E::zero(); ckk * oh * ow];
        for n in 0..b {
            let g = &gout[n * sample_out..(n + 1) * sample_out];
            if need_w {
                im2col(
                    &x[n * sample_in..(n + 1) * sample_in],
                    c_in,
                    h,
                    w,
                    kh,
                    kw,
                    rec.stride,
                    rec.padding,
                    oh,
                    ow,
                    &mut cols,
                );
                // gw += g (c_out x ohow) * cols^T (ohow x ckk)
                E::gemm(
                    c_out,
                    oh * ow,
                    ckk,
                    E::one(),
                    g,
                    false,
                    &cols,
                    true,
                    E::one(),
                    &mut gw,
                );
            }
            if need_x {
                // gcols = W^T (ckk x c_out) * g (c_out x ohow)
                E::gemm(
                    ckk,
                    c_out,
                    oh * ow,
                    E::one(),
                    &w_mat,
                    true,
                    g,
                    false,
                    E::zero(),
                    &mut cols,
                );
                col2im(
                    &cols,
                    c_in,
                    h,
                    w,
                    kh,
                    kw,
                    rec.stride,
                    rec.padding,
                    oh,
                    ow,
                    &mut gx[n * sample_in..(n + 1) * sample_in],
                );
            }
            if need_b {
                for (c, chunk) in g.chunks(oh * ow).enumerate() {
                    for &v in chunk {
                        gb[c] += v;
                    }
                }
            }
        }
        if need_x {
            self.accumulate_slice(rec.input, &gx);
        }
        if need_w {
            self.accumulate_slice(rec.weight, &gw);
        }
        if need_b {
            self.accumulate_slice(rec.bias, &gb);
        }
        Ok(())
    }

    pub(crate) fn conv_transpose2d_backward(
        &mut self,
        rec: &ConvTransposeRecord,
    ) -> Result<()> {
        let Some(gout) = self.nodes[rec.output.0].grad.clone() else {
            return Ok(());
        };
        let (b, c_in, h, w) = self.value(rec.input).dims4("conv_transpose2d")?;
        let (_, c_out, kh, kw) = self.value(rec.weight).dims4("conv_transpose2d")?;
        let (_, _, oh, ow) = gout.dims4("conv_transpose2d")?;
        let ckk = c_out * kh * kw;
        let sample_in = c_in * h * w;
        let sample_out = c_out * oh * ow;
        let gout = gout.into_data();

        let need_x = self.needs_grad(rec.input);
        let need_w = self.needs_grad(rec.weight);
        let need_b = self.needs_grad(rec.bias);

        let mut gx = if need_x {
            vec![E::zero(); b * sample_in]
        } else {
            Vec::new()
        };
        let mut gw = if need_w {
            vec![E::zero(); c_in * ckk]
        } else {
            Vec::new()
        };
        let mut gb = if need_b {
            vec![E::zero(); c_out]
        } else {
            Vec::new()
        };

        let x = self.value(rec.input).data().to_vec();
        let w_mat = self.value(rec.weight).data().to_vec();
        let mut gcols = vec![E::zero(); ckk * h * w];
        for n in 0..b {
            let g = &gout[n * sample_out..(n + 1) * sample_out];
            // Windows of the output gradient, gathered on the input grid.
            im2col(
                g,
                c_out,
                oh,
                ow,
                kh,
                kw,
                rec.stride,
                rec.padding,
                h,
                w,
                &mut gcols,
            );
            if need_x {
                // gx = W (c_in x ckk) * gcols (ckk x h*w)
                E::gemm(
                    c_in,
                    ckk,
                    h * w,
                    E::one(),
                    &w_mat,
                    false,
                    &gcols,
                    false,
                    E::zero(),
                    &mut gx[n * sample_in..(n + 1) * sample_in],
                );
            }
            if need_w {
                // gw += x (c_in x h*w) * gcols^T (h*w x ckk)
                E::gemm(
                    c_in,
                    h * w,
                    ckk,
                    E::one(),
                    &x[n * sample_in..(n + 1) * sample_in],
                    false,
                    &gcols,
                    true,
                    E::one(),
                    &mut gw,
                );
            }
            if need_b {
                for (c, chunk) in g.chunks(oh * ow).enumerate() {
                    for &v in chunk {
                        gb[c] += v;
                    }
                }
            }
        }
        if need_x {
            self.accumulate_slice(rec.input, &gx);
        }
        if need_w {
            self.accumulate_slice(rec.weight, &gw);
        }
        if need_b {
            self.accumulate_slice(rec.bias, &gb);
        }
        Ok(())
    }

    fn accumulate_slice(&mut self, v: Var, contribution: &[E]) {
        let node = &mut self.nodes[v.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
        for (g, &c) in grad.data_mut().iter_mut().zip(contribution) {
            *g += c;
        }
    }
}
