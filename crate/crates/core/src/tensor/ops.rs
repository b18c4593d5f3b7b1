//! Forward ops and their backward closures.

use rand::Rng;

use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability clamp used by [`bce_loss`] to keep `ln` finite.
pub const BCE_CLAMP: f64 = 1e-7;

/// Epsilon inside the layer-norm variance denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<S: Scalar> Tensor<S> {
    /// Matrix product `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        self.with_data(|a| rhs.with_data(|b| matmul_raw(a, b, m, k, n, &mut out)));
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let da = parents[1].with_data(|b| {
                let mut da = vec![S::zero(); m * k];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for (kk, slot) in da[i * k..(i + 1) * k].iter_mut().enumerate() {
                        let b_row = &b[kk * n..(kk + 1) * n];
                        let mut acc = S::zero();
                        for (gv, bv) in g_row.iter().zip(b_row) {
                            acc += *gv * *bv;
                        }
                        *slot = acc;
                    }
                }
                da
            });
            parents[0].accumulate_grad(&da);
            let db = parents[0].with_data(|a| {
                let mut db = vec![S::zero(); k * n];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let av = a[i * k + kk];
                        if av == S::zero() {
                            continue;
                        }
                        let db_row = &mut db[kk * n..(kk + 1) * n];
                        for (slot, gv) in db_row.iter_mut().zip(g_row) {
                            *slot += av * *gv;
                        }
                    }
                }
                db
            });
            parents[1].accumulate_grad(&db);
        });
        Ok(Tensor::new_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let out = self.with_data(|a| rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| *x + *y).collect()));
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            parents[0].accumulate_grad(g);
            parents[1].accumulate_grad(g);
        });
        Ok(Tensor::new_op(
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Adds a `[n]` bias row to every row of a `[m×n]` matrix.
    pub fn add_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = self.dims2("add_bias")?;
        if bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        let out = self.with_data(|x| {
            bias.with_data(|b| {
                let mut out = Vec::with_capacity(m * n);
                for row in 0..m {
                    for (xv, bv) in x[row * n..(row + 1) * n].iter().zip(b) {
                        out.push(*xv + *bv);
                    }
                }
                out
            })
        });
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            parents[0].accumulate_grad(g);
            let mut db = vec![S::zero(); n];
            for row in 0..m {
                for (slot, gv) in db.iter_mut().zip(&g[row * n..(row + 1) * n]) {
                    *slot += *gv;
                }
            }
            parents[1].accumulate_grad(&db);
        });
        Ok(Tensor::new_op(
            vec![m, n],
            out,
            vec![self.clone(), bias.clone()],
            backward,
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let out = self.with_data(|a| rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| *x * *y).collect()));
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let da: Vec<S> = parents[1].with_data(|b| g.iter().zip(b).map(|(gv, bv)| *gv * *bv).collect());
            parents[0].accumulate_grad(&da);
            let db: Vec<S> = parents[0].with_data(|a| g.iter().zip(a).map(|(gv, av)| *gv * *av).collect());
            parents[1].accumulate_grad(&db);
        });
        Ok(Tensor::new_op(
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, factor: S) -> Tensor<S> {
        let out = self.with_data(|x| x.iter().map(|v| *v * factor).collect());
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let dx: Vec<S> = g.iter().map(|gv| *gv * factor).collect();
            parents[0].accumulate_grad(&dx);
        });
        Tensor::new_op(self.shape(), out, vec![self.clone()], backward)
    }

    /// 2-D transpose (copying).
    pub fn transpose(&self) -> Result<Tensor<S>> {
        let (m, n) = self.dims2("transpose")?;
        let out = self.with_data(|x| {
            let mut out = vec![S::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x[i * n + j];
                }
            }
            out
        });
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut dx = vec![S::zero(); m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            parents[0].accumulate_grad(&dx);
        });
        Ok(Tensor::new_op(vec![n, m], out, vec![self.clone()], backward))
    }

    /// Column slice `[m×n] -> [m×(c1-c0)]`.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor<S>> {
        let (m, n) = self.dims2("slice_cols")?;
        if c0 >= c1 || c1 > n {
            return Err(Error::Parameter {
                name: "slice_cols",
                message: format!("column range {c0}..{c1} outside width {n}"),
            });
        }
        let w = c1 - c0;
        let out = self.with_data(|x| {
            let mut out = Vec::with_capacity(m * w);
            for row in 0..m {
                out.extend_from_slice(&x[row * n + c0..row * n + c1]);
            }
            out
        });
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut dx = vec![S::zero(); m * n];
            for row in 0..m {
                dx[row * n + c0..row * n + c1].copy_from_slice(&g[row * w..(row + 1) * w]);
            }
            parents[0].accumulate_grad(&dx);
        });
        Ok(Tensor::new_op(vec![m, w], out, vec![self.clone()], backward))
    }

    /// Row slice `[m×n] -> [(r1-r0)×n]`.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor<S>> {
        let (m, n) = self.dims2("slice_rows")?;
        if r0 >= r1 || r1 > m {
            return Err(Error::Parameter {
                name: "slice_rows",
                message: format!("row range {r0}..{r1} outside height {m}"),
            });
        }
        let h = r1 - r0;
        let out = self.with_data(|x| x[r0 * n..r1 * n].to_vec());
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut dx = vec![S::zero(); m * n];
            dx[r0 * n..r1 * n].copy_from_slice(g);
            parents[0].accumulate_grad(&dx);
        });
        Ok(Tensor::new_op(vec![h, n], out, vec![self.clone()], backward))
    }

    /// Concatenates same-height matrices along columns.
    pub fn concat_cols(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::Parameter {
                name: "concat_cols",
                message: "need at least one part".into(),
            });
        }
        let (m, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for row in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                p.with_data(|x| out.extend_from_slice(&x[row * w..(row + 1) * w]));
            }
        }
        let widths_cl = widths.clone();
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut offset = 0usize;
            for (p, w) in parents.iter().zip(&widths_cl) {
                let mut dp = Vec::with_capacity(m * w);
                for row in 0..m {
                    dp.extend_from_slice(&g[row * n + offset..row * n + offset + w]);
                }
                p.accumulate_grad(&dp);
                offset += w;
            }
        });
        Ok(Tensor::new_op(vec![m, n], out, parts.to_vec(), backward))
    }

    /// Same data, new shape with identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || numel != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.to_vec();
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            parents[0].accumulate_grad(g);
        });
        Ok(Tensor::new_op(shape.to_vec(), out, vec![self.clone()], backward))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Result<Tensor<S>> {
        let total = self.with_data(|x| x.iter().fold(S::zero(), |a, v| a + *v));
        let n = self.numel();
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            parents[0].accumulate_grad(&vec![g[0]; n]);
        });
        Ok(Tensor::new_op(vec![1], vec![total], vec![self.clone()], backward))
    }

    /// Row lookup `table[V×d]` by token ids -> `[ids.len()×d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<S>> {
        let (v, d) = self.dims2("embedding")?;
        if ids.is_empty() {
            return Err(Error::Parameter {
                name: "embedding",
                message: "empty id list".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Parameter {
                name: "embedding",
                message: format!("id {bad} outside vocabulary of {v}"),
            });
        }
        let n = ids.len();
        let out = self.with_data(|x| {
            let mut out = Vec::with_capacity(n * d);
            for &id in ids {
                out.extend_from_slice(&x[id * d..(id + 1) * d]);
            }
            out
        });
        let ids_cl = ids.to_vec();
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut dt = vec![S::zero(); v * d];
            for (i, &id) in ids_cl.iter().enumerate() {
                for (slot, gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                    *slot += *gv;
                }
            }
            parents[0].accumulate_grad(&dt);
        });
        Ok(Tensor::new_op(vec![n, d], out, vec![self.clone()], backward))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Parameter {
                name: "softmax",
                message: format!("axis {axis} outside rank {}", shape.len()),
            });
        }
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![S::zero(); self.numel()];
        self.with_data(|x| {
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let mut max = x[base];
                    for i in 1..len {
                        let v = x[base + i * inner];
                        if v > max {
                            max = v;
                        }
                    }
                    let mut total = S::zero();
                    for i in 0..len {
                        let e = (x[base + i * inner] - max).exp();
                        out[base + i * inner] = e;
                        total += e;
                    }
                    for i in 0..len {
                        out[base + i * inner] = out[base + i * inner] / total;
                    }
                }
            }
        });
        let backward = Box::new(move |g: &[S], out: &[S], parents: &[Tensor<S>]| {
            let mut dx = vec![S::zero(); g.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let mut dot = S::zero();
                    for i in 0..len {
                        let idx = base + i * inner;
                        dot += g[idx] * out[idx];
                    }
                    for i in 0..len {
                        let idx = base + i * inner;
                        dx[idx] = out[idx] * (g[idx] - dot);
                    }
                }
            }
            parents[0].accumulate_grad(&dx);
        });
        Ok(Tensor::new_op(shape, out, vec![self.clone()], backward))
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&self, gain: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.shape();
        let n = *shape.last().expect("tensors have rank >= 1");
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gain.shape(),
            });
        }
        let slices = self.numel() / n;
        let eps = S::cast(LAYER_NORM_EPS);
        let inv_n = S::one() / S::cast(n as f64);
        let mut normed = vec![S::zero(); self.numel()];
        let mut inv_std = vec![S::zero(); slices];
        self.with_data(|x| {
            for s in 0..slices {
                let row = &x[s * n..(s + 1) * n];
                let mean = row.iter().fold(S::zero(), |a, v| a + *v) * inv_n;
                let var = row
                    .iter()
                    .fold(S::zero(), |a, v| a + (*v - mean) * (*v - mean))
                    * inv_n;
                let inv = S::one() / (var + eps).sqrt();
                inv_std[s] = inv;
                for (slot, v) in normed[s * n..(s + 1) * n].iter_mut().zip(row) {
                    *slot = (*v - mean) * inv;
                }
            }
        });
        let out = gain.with_data(|gn| {
            bias.with_data(|b| {
                let mut out = Vec::with_capacity(self.numel());
                for s in 0..slices {
                    for (j, v) in normed[s * n..(s + 1) * n].iter().enumerate() {
                        out.push(*v * gn[j] + b[j]);
                    }
                }
                out
            })
        });
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let mut dgain = vec![S::zero(); n];
            let mut dbias = vec![S::zero(); n];
            for s in 0..slices {
                for j in 0..n {
                    let idx = s * n + j;
                    dgain[j] += g[idx] * normed[idx];
                    dbias[j] += g[idx];
                }
            }
            let dx = parents[1].with_data(|gn| {
                let mut dx = vec![S::zero(); g.len()];
                for s in 0..slices {
                    let mut mean_dxhat = S::zero();
                    let mut mean_dxhat_xhat = S::zero();
                    for j in 0..n {
                        let idx = s * n + j;
                        let dxh = g[idx] * gn[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * normed[idx];
                    }
                    mean_dxhat = mean_dxhat * inv_n;
                    mean_dxhat_xhat = mean_dxhat_xhat * inv_n;
                    for j in 0..n {
                        let idx = s * n + j;
                        let dxh = g[idx] * gn[j];
                        dx[idx] = inv_std[s] * (dxh - mean_dxhat - normed[idx] * mean_dxhat_xhat);
                    }
                }
                dx
            });
            parents[0].accumulate_grad(&dx);
            parents[1].accumulate_grad(&dgain);
            parents[2].accumulate_grad(&dbias);
        });
        Ok(Tensor::new_op(
            self.shape(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            backward,
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor<S> {
        let c = S::cast((2.0 / std::f64::consts::PI).sqrt());
        let a = S::cast(0.044715);
        let half = S::cast(0.5);
        let three = S::cast(3.0);
        let out = self.with_data(|x| {
            x.iter()
                .map(|&v| {
                    let t = (c * (v + a * v * v * v)).tanh();
                    half * v * (S::one() + t)
                })
                .collect()
        });
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let dx: Vec<S> = parents[0].with_data(|x| {
                x.iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let du = c * (S::one() + three * a * v * v);
                        let d = half * (S::one() + t) + half * v * (S::one() - t * t) * du;
                        gv * d
                    })
                    .collect()
            });
            parents[0].accumulate_grad(&dx);
        });
        Tensor::new_op(self.shape(), out, vec![self.clone()], backward)
    }

    /// Elementwise logistic sigmoid; `sigmoid(0) = 0.5` exactly.
    pub fn sigmoid(&self) -> Tensor<S> {
        let out = self.with_data(|x| {
            x.iter()
                .map(|&v| S::one() / (S::one() + (-v).exp()))
                .collect()
        });
        let backward = Box::new(move |g: &[S], out: &[S], parents: &[Tensor<S>]| {
            let dx: Vec<S> = g
                .iter()
                .zip(out)
                .map(|(&gv, &y)| gv * y * (S::one() - y))
                .collect();
            parents[0].accumulate_grad(&dx);
        });
        Tensor::new_op(self.shape(), out, vec![self.clone()], backward)
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `rate` and scales survivors by `1/(1-rate)`; in eval it is the
    /// identity (the same tensor handle).
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R, training: bool) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter {
                name: "dropout_rate",
                message: format!("rate must be in [0,1), got {rate}"),
            });
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = S::cast(1.0 / (1.0 - rate));
        let threshold = S::cast(rate);
        let mask: Vec<S> = (0..self.numel())
            .map(|_| {
                if S::unit_uniform(rng) < threshold {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let out = self.with_data(|x| x.iter().zip(&mask).map(|(v, m)| *v * *m).collect());
        let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
            let dx: Vec<S> = g.iter().zip(&mask).map(|(gv, m)| *gv * *m).collect();
            parents[0].accumulate_grad(&dx);
        });
        Ok(Tensor::new_op(self.shape(), out, vec![self.clone()], backward))
    }
}

/// Masked binary cross-entropy, averaged over `mask = 1` positions.
///
/// Predictions are clamped to `[1e-7, 1-1e-7]` before the logs; gradients
/// are zero where the clamp is active. `target` and `mask` must hold only
/// zeros and ones and are non-differentiable.
pub fn bce_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    if pred.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: pred.shape(),
            rhs: mask.shape(),
        });
    }
    let check_binary = |t: &Tensor<S>, name: &'static str| -> Result<Vec<S>> {
        let v = t.to_vec();
        if v.iter().any(|&x| x != S::zero() && x != S::one()) {
            return Err(Error::Parameter {
                name,
                message: "entries must be 0 or 1".into(),
            });
        }
        Ok(v)
    };
    let target_v = check_binary(target, "bce_target")?;
    let mask_v = check_binary(mask, "bce_mask")?;
    let selected = mask_v.iter().filter(|&&m| m == S::one()).count();
    if selected == 0 {
        return Err(Error::EmptyLossSupport);
    }
    let lo = S::cast(BCE_CLAMP);
    let hi = S::one() - S::cast(BCE_CLAMP);
    let inv_count = S::one() / S::cast(selected as f64);
    let loss = pred.with_data(|p| {
        let mut acc = S::zero();
        for i in 0..p.len() {
            if mask_v[i] == S::one() {
                let pc = p[i].max(lo).min(hi);
                let t = target_v[i];
                acc += -(t * pc.ln() + (S::one() - t) * (S::one() - pc).ln());
            }
        }
        acc * inv_count
    });
    let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
        let dp: Vec<S> = parents[0].with_data(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &pv)| {
                    if mask_v[i] != S::one() || pv < lo || pv > hi {
                        S::zero()
                    } else {
                        let pc = pv.max(lo).min(hi);
                        g[0] * inv_count * (pc - target_v[i]) / (pc * (S::one() - pc))
                    }
                })
                .collect()
        });
        parents[0].accumulate_grad(&dp);
    });
    Ok(Tensor::new_op(vec![1], vec![loss], vec![pred.clone()], backward))
}

/// Token-level cross-entropy from logits `[n×V]` against target ids,
/// averaged over the `n` positions (log-sum-exp stabilized).
pub fn cross_entropy_mean<S: Scalar>(logits: &Tensor<S>, targets: &[usize]) -> Result<Tensor<S>> {
    let (n, v) = logits.dims2("cross_entropy")?;
    if targets.len() != n {
        return Err(Error::Parameter {
            name: "cross_entropy_targets",
            message: format!("{} targets for {} rows", targets.len(), n),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Parameter {
            name: "cross_entropy_targets",
            message: format!("target id {bad} outside vocabulary of {v}"),
        });
    }
    let inv_n = S::one() / S::cast(n as f64);
    let mut probs = vec![S::zero(); n * v];
    let loss = logits.with_data(|x| {
        let mut acc = S::zero();
        for row in 0..n {
            let r = &x[row * v..(row + 1) * v];
            let mut max = r[0];
            for &lv in &r[1..] {
                if lv > max {
                    max = lv;
                }
            }
            let mut total = S::zero();
            for (j, &lv) in r.iter().enumerate() {
                let e = (lv - max).exp();
                probs[row * v + j] = e;
                total += e;
            }
            for p in &mut probs[row * v..(row + 1) * v] {
                *p = *p / total;
            }
            let lse = max + total.ln();
            acc += lse - r[targets[row]];
        }
        acc * inv_n
    });
    let targets_cl = targets.to_vec();
    let backward = Box::new(move |g: &[S], _out: &[S], parents: &[Tensor<S>]| {
        let mut dx = vec![S::zero(); n * v];
        for row in 0..n {
            for j in 0..v {
                let idx = row * v + j;
                let indicator = if j == targets_cl[row] { S::one() } else { S::zero() };
                dx[idx] = g[0] * inv_n * (probs[idx] - indicator);
            }
        }
        parents[0].accumulate_grad(&dx);
    });
    Ok(Tensor::new_op(vec![1], vec![loss], vec![logits.clone()], backward))
}
