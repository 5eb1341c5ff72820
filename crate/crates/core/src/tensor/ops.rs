//! Forward operations and their backward rules.
//!
//! Broadcasting follows trailing-axis alignment; no implicit type promotion.
//! Every op records its backward rule on the tape unless nothing upstream
//! requires gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Node, Var};
use crate::tensor::{lit, Real, Tensor};

/// Tanh-approximation GELU constant sqrt(2/pi). Ports must match this bit
/// pattern at the formula level.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.7978845608;
const GELU_CUBIC: f64 = 0.044715;

// ── broadcasting helpers ────────────────────────────────────────────────

/// Broadcast shape of `a` and `b` under trailing-axis alignment.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let db = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::dim(op, format!("cannot broadcast {:?} with {:?}", a, b)));
        }
        out[d] = da.max(db);
    }
    Ok(out)
}

/// Per-element map from output index to source index for a broadcast from
/// `src` to `out`. `None` means the shapes are identical.
fn broadcast_map(src: &[usize], out: &[usize]) -> Option<Arc<Vec<u32>>> {
    if src == out {
        return None;
    }
    let rank = out.len();
    let mut padded = vec![1usize; rank];
    padded[rank - src.len()..].copy_from_slice(src);
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off as u32);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * out[d];
        }
    }
    Some(Arc::new(map))
}

fn gathered<T: Real>(src: &[T], map: &Option<Arc<Vec<u32>>>, numel: usize, i: usize) -> T {
    debug_assert!(map.is_some() || i < numel);
    let _ = numel;
    match map {
        Some(m) => src[m[i] as usize],
        None => src[i],
    }
}

fn scatter_add<T: Real>(dst: &mut [T], map: &Option<Arc<Vec<u32>>>, g: &[T]) {
    match map {
        Some(m) => {
            for (i, &gv) in g.iter().enumerate() {
                let j = m[i] as usize;
                dst[j] = dst[j] + gv;
            }
        }
        None => {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d = *d + gv;
            }
        }
    }
}

// ── matmul kernels ──────────────────────────────────────────────────────

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn mm_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] · b[k,n]ᵀ
fn mm_nt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s = s + x * y;
            }
            orow[p] = orow[p] + s;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n]
fn mm_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

// ── ops ─────────────────────────────────────────────────────────────────

impl<T: Real> Graph<T> {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        // (grad_out, a_val, b_val) -> (da, db)
        df: impl Fn(T, T, T) -> (T, T) + Send + 'static,
    ) -> Result<Var> {
        let (asb, bsb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(op, &asb, &bsb)?;
        let numel: usize = out_shape.iter().product();
        let amap = broadcast_map(&asb, &out_shape);
        let bmap = broadcast_map(&bsb, &out_shape);

        let (ad, bd) = (self.data(a), self.data(b));
        let mut data = Vec::with_capacity(numel);
        if amap.is_none() && bmap.is_none() {
            for (&x, &y) in ad.iter().zip(bd) {
                data.push(f(x, y));
            }
        } else {
            for i in 0..numel {
                data.push(f(
                    gathered(ad, &amap, numel, i),
                    gathered(bd, &bmap, numel, i),
                ));
            }
        }

        let needs = self.needs_grad(a) || self.needs_grad(b);
        let a_needs = self.needs_grad(a);
        let b_needs = self.needs_grad(b);
        let (an, bn) = (ad.len(), bd.len());
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let ad = nodes[a.0].tensor.data();
            let bd = nodes[b.0].tensor.data();
            let n = g.len();
            let mut da = if a_needs { vec![T::zero(); an] } else { Vec::new() };
            let mut db = if b_needs { vec![T::zero(); bn] } else { Vec::new() };
            for (i, &gv) in g.iter().enumerate() {
                let av = gathered(ad, &amap, n, i);
                let bv = gathered(bd, &bmap, n, i);
                let (ga, gb) = df(gv, av, bv);
                if a_needs {
                    let j = match &amap {
                        Some(m) => m[i] as usize,
                        None => i,
                    };
                    da[j] = da[j] + ga;
                }
                if b_needs {
                    let j = match &bmap {
                        Some(m) => m[i] as usize,
                        None => i,
                    };
                    db[j] = db[j] + gb;
                }
            }
            if a_needs {
                grads.add(a, &da);
            }
            if b_needs {
                grads.add(b, &db);
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, data)?,
            op,
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g, T::zero() - g))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        // (grad_out, x_val) -> dx
        df: impl Fn(T, T) -> T + Send + 'static,
    ) -> Result<Var> {
        let data: Vec<T> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs_grad(x);
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let xd = nodes[x.0].tensor.data();
            let dx: Vec<T> = g.iter().zip(xd).map(|(&gv, &xv)| df(gv, xv)).collect();
            grads.add(x, &dx);
        };
        Ok(self.insert(
            Tensor::new(shape, data)?,
            op,
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, |g, _| g)
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("mul_scalar", x, |v| v * c, move |g, _| g * c)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "tanh",
            x,
            |v| v.tanh(),
            |g, x| {
                let t = x.tanh();
                g * (T::one() - t * t)
            },
        )
    }

    /// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let c = lit::<T>(GELU_SQRT_2_OVER_PI);
        let k = lit::<T>(GELU_CUBIC);
        let half = lit::<T>(0.5);
        self.unary(
            "gelu",
            x,
            move |v| {
                let t = (c * (v + k * v * v * v)).tanh();
                half * v * (T::one() + t)
            },
            move |g, v| {
                let inner = c * (v + k * v * v * v);
                let t = inner.tanh();
                let sech2 = T::one() - t * t;
                let dinner = c * (T::one() + lit::<T>(3.0) * k * v * v);
                g * (half * (T::one() + t) + half * v * sech2 * dinner)
            },
        )
    }

    /// Unit Huber: 0.5·x² for |x| < 1, |x| − 0.5 otherwise. Gradient is x on
    /// the quadratic branch, sign(x) on the linear branch; both branches meet
    /// with magnitude 1 at |x| = 1.
    pub fn huber(&mut self, x: Var) -> Result<Var> {
        let half = lit::<T>(0.5);
        self.unary(
            "huber",
            x,
            move |v| {
                if v.abs() < T::one() {
                    half * v * v
                } else {
                    v.abs() - half
                }
            },
            |g, v| {
                if v.abs() < T::one() {
                    g * v
                } else if v > T::zero() {
                    g
                } else {
                    T::zero() - g
                }
            },
        )
    }

    /// Batched matrix product `[.., M, K] · [.., K, N] -> [.., M, N]` with
    /// broadcastable batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let asb = self.shape(a).to_vec();
        let bsb = self.shape(b).to_vec();
        if asb.len() < 2 || bsb.len() < 2 {
            return Err(Error::dim(
                "matmul",
                format!("operands must be at least rank 2, got {:?} and {:?}", asb, bsb),
            ));
        }
        let (m, k) = (asb[asb.len() - 2], asb[asb.len() - 1]);
        let (k2, n) = (bsb[bsb.len() - 2], bsb[bsb.len() - 1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dims disagree: {:?} vs {:?}", asb, bsb),
            ));
        }
        let batch = broadcast_shape("matmul", &asb[..asb.len() - 2], &bsb[..bsb.len() - 2])?;
        let n_batch: usize = batch.iter().product();
        let amap = broadcast_map(&asb[..asb.len() - 2], &batch);
        let bmap = broadcast_map(&bsb[..bsb.len() - 2], &batch);

        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![T::zero(); n_batch * m * n];
        for bi in 0..n_batch {
            let ao = gathered_idx(&amap, bi) * m * k;
            let bo = gathered_idx(&bmap, bi) * k * n;
            mm_nn(&ad[ao..ao + m * k], &bd[bo..bo + k * n], m, k, n, &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);

        let needs = self.needs_grad(a) || self.needs_grad(b);
        let a_needs = self.needs_grad(a);
        let b_needs = self.needs_grad(b);
        let (a_numel, b_numel) = (ad.len(), bd.len());
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let ad = nodes[a.0].tensor.data();
            let bd = nodes[b.0].tensor.data();
            if a_needs {
                let mut da = vec![T::zero(); a_numel];
                for bi in 0..n_batch {
                    let ao = gathered_idx(&amap, bi) * m * k;
                    let bo = gathered_idx(&bmap, bi) * k * n;
                    mm_nt(&g[bi * m * n..(bi + 1) * m * n], &bd[bo..bo + k * n], m, n, k, &mut da[ao..ao + m * k]);
                }
                grads.add(a, &da);
            }
            if b_needs {
                let mut db = vec![T::zero(); b_numel];
                for bi in 0..n_batch {
                    let ao = gathered_idx(&amap, bi) * m * k;
                    let bo = gathered_idx(&bmap, bi) * k * n;
                    mm_tn(&ad[ao..ao + m * k], &g[bi * m * n..(bi + 1) * m * n], m, k, n, &mut db[bo..bo + k * n]);
                }
                grads.add(b, &db);
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, out)?,
            "matmul",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {} out of range for shape {:?}", axis, shape),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.data(x);
        let mut data = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = xd[at(0)];
                for j in 1..len {
                    mx = mx.max(xd[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (xd[at(j)] - mx).exp();
                    data[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    data[at(j)] = data[at(j)] / sum;
                }
            }
        }
        let needs = self.needs_grad(x);
        let out_id = self.len();
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let s = nodes[out_id].tensor.data();
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let mut dot = T::zero();
                    for j in 0..len {
                        dot = dot + g[at(j)] * s[at(j)];
                    }
                    for j in 0..len {
                        dx[at(j)] = s[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            grads.add(x, &dx);
        };
        Ok(self.insert(
            Tensor::new(shape, data)?,
            "softmax",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Layer normalization over the last axis followed by affine gamma/beta.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layernorm", "rank-0 input".to_string()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layernorm",
                format!(
                    "gamma {:?} / beta {:?} must be [{}] for input {:?}",
                    self.shape(gamma),
                    self.shape(beta),
                    d,
                    shape
                ),
            ));
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let rows = xd.len() / d;
        let mut data = vec![T::zero(); xd.len()];
        let dn = lit::<T>(d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / dn;
            let mut var = T::zero();
            for &v in row {
                var = var + (v - mean) * (v - mean);
            }
            var = var / dn;
            let inv_std = T::one() / (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let x_needs = self.needs_grad(x);
        let g_needs = self.needs_grad(gamma);
        let b_needs = self.needs_grad(beta);
        let backward = move |nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let xd = nodes[x.0].tensor.data();
            let gam = nodes[gamma.0].tensor.data();
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            let dn = lit::<T>(d as f64);
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let grow = &g[r * d..(r + 1) * d];
                let mut mean = T::zero();
                for &v in row {
                    mean = mean + v;
                }
                mean = mean / dn;
                let mut var = T::zero();
                for &v in row {
                    var = var + (v - mean) * (v - mean);
                }
                var = var / dn;
                let inv_std = T::one() / (var + eps).sqrt();
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                for j in 0..d {
                    let xhat = (row[j] - mean) * inv_std;
                    let dxhat = grow[j] * gam[j];
                    dgamma[j] = dgamma[j] + grow[j] * xhat;
                    dbeta[j] = dbeta[j] + grow[j];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
                for j in 0..d {
                    let xhat = (row[j] - mean) * inv_std;
                    let dxhat = grow[j] * gam[j];
                    dx[r * d + j] =
                        inv_std / dn * (dn * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
            if x_needs {
                grads.add(x, &dx);
            }
            if g_needs {
                grads.add(gamma, &dgamma);
            }
            if b_needs {
                grads.add(beta, &dbeta);
            }
        };
        Ok(self.insert(
            Tensor::new(shape, data)?,
            "layernorm",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Reshape preserving element order.
    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::dim(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                    self.shape(x),
                    self.value(x).numel(),
                    new_shape,
                    numel
                ),
            ));
        }
        let data = self.data(x).to_vec();
        let needs = self.needs_grad(x);
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            grads.add(x, g);
        };
        Ok(self.insert(
            Tensor::new(new_shape.to_vec(), data)?,
            "reshape",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Axis permutation; backward scatters through the inverse permutation.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(
                "permute",
                format!("invalid axes {:?} for shape {:?}", axes, shape),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let mut src_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            src_strides[d] = src_strides[d + 1] * shape[d + 1];
        }
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let numel: usize = shape.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..numel {
            map.push(off as u32);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += perm_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
                off -= perm_strides[d] * out_shape[d];
            }
        }
        let map = Arc::new(map);
        let xd = self.data(x);
        let data: Vec<T> = map.iter().map(|&i| xd[i as usize]).collect();
        let needs = self.needs_grad(x);
        let n_src = xd.len();
        let bmap = Arc::clone(&map);
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, n_src);
            for (i, &gv) in g.iter().enumerate() {
                let j = bmap[i] as usize;
                slot[j] = slot[j] + gv;
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, data)?,
            "permute",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let rank = self.shape(x).len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::dim(
                "permute",
                format!("transpose axes ({}, {}) out of range for rank {}", d0, d1, rank),
            ));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(d0, d1);
        self.permute(x, &axes)
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::dim("concat", "empty input list".to_string()));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {} out of range for shape {:?}", axis, first),
            ));
        }
        let mut axis_total = 0usize;
        let mut blocks = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::dim(
                    "concat",
                    format!("shape {:?} incompatible with {:?} along axis {}", s, first, axis),
                ));
            }
            blocks.push(s[axis]);
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![T::zero(); numel];
        let row_out = axis_total * inner;
        let mut offset = 0usize;
        for (xi, &x) in xs.iter().enumerate() {
            let xd = self.data(x);
            let row_in = blocks[xi] * inner;
            for o in 0..outer {
                let dst = o * row_out + offset;
                data[dst..dst + row_in].copy_from_slice(&xd[o * row_in..(o + 1) * row_in]);
            }
            offset += row_in;
        }
        let needs = xs.iter().any(|&x| self.needs_grad(x));
        let sources: Vec<(Var, usize, bool)> = xs
            .iter()
            .map(|&x| (x, self.value(x).numel(), self.needs_grad(x)))
            .collect();
        let blocks_b = blocks.clone();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let mut offset = 0usize;
            for (xi, &(x, numel, x_needs)) in sources.iter().enumerate() {
                let row_in = blocks_b[xi] * inner;
                if x_needs {
                    let slot = grads.entry(x, numel);
                    for o in 0..outer {
                        let src = o * row_out + offset;
                        for j in 0..row_in {
                            slot[o * row_in + j] = slot[o * row_in + j] + g[src + j];
                        }
                    }
                }
                offset += row_in;
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, data)?,
            "concat",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Takes `len` indices starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::dim(
                "slice",
                format!(
                    "slice [{}, {}) along axis {} out of range for shape {:?}",
                    start,
                    start + len,
                    axis,
                    shape
                ),
            ));
        }
        let (outer, all, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let xd = self.data(x);
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * all + start) * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&xd[src..src + len * inner]);
        }
        let needs = self.needs_grad(x);
        let n_src = xd.len();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, n_src);
            for o in 0..outer {
                let dst = (o * all + start) * inner;
                for j in 0..len * inner {
                    slot[dst + j] = slot[dst + j] + g[o * len * inner + j];
                }
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, data)?,
            "slice",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Broadcasts to `target` under trailing-axis rules; backward reduces.
    pub fn broadcast_to(&mut self, x: Var, target: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let joint = broadcast_shape("broadcast_to", &shape, target)?;
        if joint != target {
            return Err(Error::dim(
                "broadcast_to",
                format!("cannot broadcast {:?} to {:?}", shape, target),
            ));
        }
        let map = broadcast_map(&shape, target);
        let xd = self.data(x);
        let numel: usize = target.iter().product();
        let data: Vec<T> = (0..numel).map(|i| gathered(xd, &map, numel, i)).collect();
        let needs = self.needs_grad(x);
        let n_src = xd.len();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, n_src);
            scatter_add(slot, &map, g);
        };
        Ok(self.insert(
            Tensor::new(target.to_vec(), data)?,
            "broadcast_to",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Sum of all elements to a scalar of shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let mut s = T::zero();
        for &v in self.data(x) {
            s = s + v;
        }
        let needs = self.needs_grad(x);
        let numel = self.value(x).numel();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, numel);
            for v in slot.iter_mut() {
                *v = *v + g[0];
            }
        };
        Ok(self.insert(Tensor::scalar(s), "sum", needs, Some(Box::new(backward)), None))
    }

    /// Mean of all elements to a scalar of shape `[1]`.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let numel = self.value(x).numel();
        let mut s = T::zero();
        for &v in self.data(x) {
            s = s + v;
        }
        let inv = T::one() / lit::<T>(numel as f64);
        let needs = self.needs_grad(x);
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let gv = g[0] * inv;
            let slot = grads.entry(x, numel);
            for v in slot.iter_mut() {
                *v = *v + gv;
            }
        };
        Ok(self.insert(Tensor::scalar(s * inv), "mean", needs, Some(Box::new(backward)), None))
    }

    /// Mean along one axis (the axis is removed).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "mean_axis",
                format!("axis {} out of range for shape {:?}", axis, shape),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let xd = self.data(x);
        let inv = T::one() / lit::<T>(len as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + xd[(o * len + j) * inner + i];
                }
            }
        }
        for v in data.iter_mut() {
            *v = *v * inv;
        }
        let needs = self.needs_grad(x);
        let n_src = xd.len();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, n_src);
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        let d = (o * len + j) * inner + i;
                        slot[d] = slot[d] + g[o * inner + i] * inv;
                    }
                }
            }
        };
        Ok(self.insert(
            Tensor::new(out_shape, data)?,
            "mean_axis",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }

    /// Nearest-neighbor upsampling of a `[B, C, H, W]` tensor by an integer
    /// factor; backward sums each factor×factor block.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::dim(
                "upsample_nearest",
                format!("expected [B, C, H, W], got {:?}", shape),
            ));
        }
        if factor == 0 {
            return Err(Error::dim("upsample_nearest", "factor must be >= 1".to_string()));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (ho, wo) = (h * factor, w * factor);
        let xd = self.data(x);
        let mut data = vec![T::zero(); b * c * ho * wo];
        for bc in 0..b * c {
            let src = &xd[bc * h * w..(bc + 1) * h * w];
            let dst = &mut data[bc * ho * wo..(bc + 1) * ho * wo];
            for y in 0..ho {
                let sy = y / factor;
                for xj in 0..wo {
                    dst[y * wo + xj] = src[sy * w + xj / factor];
                }
            }
        }
        let needs = self.needs_grad(x);
        let n_src = xd.len();
        let backward = move |_nodes: &[Node<T>], g: &[T], grads: &mut crate::tensor::Grads<T>| {
            let slot = grads.entry(x, n_src);
            for bc in 0..b * c {
                let gsrc = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dslot = &mut slot[bc * h * w..(bc + 1) * h * w];
                for y in 0..ho {
                    let sy = y / factor;
                    for xj in 0..wo {
                        dslot[sy * w + xj / factor] =
                            dslot[sy * w + xj / factor] + gsrc[y * wo + xj];
                    }
                }
            }
        };
        Ok(self.insert(
            Tensor::new(vec![b, c, ho, wo], data)?,
            "upsample_nearest",
            needs,
            Some(Box::new(backward)),
            None,
        ))
    }
}

#[inline]
fn gathered_idx(map: &Option<Arc<Vec<u32>>>, i: usize) -> usize {
    match map {
        Some(m) => m[i] as usize,
        None => i,
    }
}

/// Splits a shape at `axis` into (outer, axis length, inner) products.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
