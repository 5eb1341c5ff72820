//! 2D convolution (cross-correlation semantics) with stride, symmetric
//! padding and channel groups. `groups == in_channels` gives the depth-wise
//! convolution used inside the FFN blocks.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Node, Var};
use crate::tensor::ops::mm_nn;
use crate::tensor::{Real, Tensor};

struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvDims {
    fn cg_in(&self) -> usize {
        self.c_in / self.groups
    }
    fn cg_out(&self) -> usize {
        self.c_out / self.groups
    }
}

/// Unpacks one (batch, group) input slab into a column matrix of shape
/// `[cg_in*kh*kw, h_out*w_out]`. Out-of-bounds taps read as zero.
fn im2col<T: Real>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let l = d.h_out * d.w_out;
    for c in 0..d.cg_in() {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * l;
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let dst = row + oy * d.w_out;
                    if iy < 0 || iy >= d.h as isize {
                        col[dst..dst + d.w_out].fill(T::zero());
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..d.w_out {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        col[dst + ox] = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            plane[iy * d.w + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input slab.
fn col2im_add<T: Real>(col: &[T], d: &ConvDims, dx: &mut [T]) {
    let l = d.h_out * d.w_out;
    for c in 0..d.cg_in() {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * l;
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..d.w_out {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let p = iy * d.w + ix as usize;
                        plane[p] = plane[p] + col[row + oy * d.w_out + ox];
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Convolution of `x: [B, C_in, H, W]` with `w: [C_out, C_in/groups, kh, kw]`
    /// and optional bias `[C_out]`. Output spatial dims are
    /// `floor((H + 2*pad - k) / stride) + 1`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected rank-4 input and weight, got {:?} and {:?}", xs, ws),
            ));
        }
        let (batch, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::dim(
                "conv2d",
                format!("channels ({c_in} in, {c_out} out) not divisible by groups {groups}"),
            ));
        }
        if wc != c_in / groups {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "weight expects {} input channels per group, input provides {}",
                    wc,
                    c_in / groups
                ),
            ));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "kernel {}x{} does not fit padded input {}x{} (pad {})",
                    kh, kw, h, wd, pad
                ),
            ));
        }
        if let Some(bias) = b {
            if self.shape(bias) != [c_out] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias shape {:?}, expected [{}]", self.shape(bias), c_out),
                ));
            }
        }
        let d = ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            groups,
            h_out: (h + 2 * pad - kh) / stride + 1,
            w_out: (wd + 2 * pad - kw) / stride + 1,
        };
        let l = d.h_out * d.w_out;
        let col_rows = d.cg_in() * kh * kw;

        let xd = self.data(x);
        let wdat = self.data(w);
        let bd = b.map(|bias| self.data(bias).to_vec());
        let mut out = vec![T::zero(); batch * c_out * l];
        let mut col = vec![T::zero(); col_rows * l];
        for bi in 0..batch {
            for gi in 0..groups {
                let x_off = (bi * c_in + gi * d.cg_in()) * h * wd;
                im2col(&xd[x_off..x_off + d.cg_in() * h * wd], &d, &mut col);
                let w_off = gi * d.cg_out() * col_rows;
                let o_off = (bi * c_out + gi * d.cg_out()) * l;
                mm_nn(
                    &wdat[w_off..w_off + d.cg_out() * col_rows],
                    &col,
                    d.cg_out(),
                    col_rows,
                    l,
                    &mut out[o_off..o_off + d.cg_out() * l],
                );
            }
        }
        if let Some(bd) = &bd {
            for bi in 0..batch {
                for co in 0..c_out {
                    let o = (bi * c_out + co) * l;
                    for v in &mut out[o..o + l] {
                        *v = *v + bd[co];
                    }
                }
            }
        }

        let (out_h, out_w) = (d.h_out, d.w_out);
        let needs =
            self.needs_grad(x) || self.needs_grad(w) || b.is_some_and(|bias| self.needs_grad(bias));
        let x_needs = self.needs_grad(x);
        let w_needs = self.needs_grad(w);
        let b_needs = b.is_some_and(|bias| self.needs_grad(bias));
        let (x_numel, w_numel) = (xd.len(), wdat.len());
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let xd = nodes[x.0].tensor.data();
            let wdat = nodes[w.0].tensor.data();
            let mut dx = if x_needs { vec![T::zero(); x_numel] } else { Vec::new() };
            let mut dw = if w_needs { vec![T::zero(); w_numel] } else { Vec::new() };
            let mut col = vec![T::zero(); col_rows * l];
            let mut dcol = vec![T::zero(); col_rows * l];
            for bi in 0..d.batch {
                for gi in 0..d.groups {
                    let x_off = (bi * d.c_in + gi * d.cg_in()) * d.h * d.w;
                    let w_off = gi * d.cg_out() * col_rows;
                    let o_off = (bi * d.c_out + gi * d.cg_out()) * l;
                    let gslab = &g[o_off..o_off + d.cg_out() * l];
                    if w_needs {
                        // dW[o, q] += sum_l g[o, l] * col[q, l]
                        im2col(&xd[x_off..x_off + d.cg_in() * d.h * d.w], &d, &mut col);
                        let dwg = &mut dw[w_off..w_off + d.cg_out() * col_rows];
                        for o in 0..d.cg_out() {
                            let grow = &gslab[o * l..(o + 1) * l];
                            for q in 0..col_rows {
                                let crow = &col[q * l..(q + 1) * l];
                                let mut s = T::zero();
                                for (&gv, &cv) in grow.iter().zip(crow) {
                                    s = s + gv * cv;
                                }
                                dwg[o * col_rows + q] = dwg[o * col_rows + q] + s;
                            }
                        }
                    }
                    if x_needs {
                        // dcol[q, l] = sum_o w[o, q] * g[o, l], then scatter.
                        dcol.fill(T::zero());
                        let wg = &wdat[w_off..w_off + d.cg_out() * col_rows];
                        for o in 0..d.cg_out() {
                            let grow = &gslab[o * l..(o + 1) * l];
                            for q in 0..col_rows {
                                let woq = wg[o * col_rows + q];
                                let drow = &mut dcol[q * l..(q + 1) * l];
                                for (dv, &gv) in drow.iter_mut().zip(grow) {
                                    *dv = *dv + woq * gv;
                                }
                            }
                        }
                        col2im_add(&dcol, &d, &mut dx[x_off..x_off + d.cg_in() * d.h * d.w]);
                    }
                }
            }
            if x_needs {
                grads.add(x, &dx);
            }
            if w_needs {
                grads.add(w, &dw);
            }
            if b_needs {
                let bias = b.expect("bias var present when b_needs");
                let mut db = vec![T::zero(); d.c_out];
                for bi in 0..d.batch {
                    for co in 0..d.c_out {
                        let o = (bi * d.c_out + co) * l;
                        for &gv in &g[o..o + l] {
                            db[co] = db[co] + gv;
                        }
                    }
                }
                grads.add(bias, &db);
            }
        };
        Ok(self.insert(
            Tensor::new(vec![batch, c_out, out_h, out_w], out)?,
            "conv2d",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }
}
