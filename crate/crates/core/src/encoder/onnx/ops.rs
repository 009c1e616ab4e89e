//! Tensor values and the ONNX operators the interpreter supports.
//!
//! The operator set covers what transformer image/text towers export to at
//! opsets 13–18: elementwise arithmetic and activations, matrix products,
//! normalization, softmax, and the shape plumbing around them.

use ndarray::{concatenate, Array2, ArrayD, ArrayView2, Axis, IxDyn, Slice, Zip};

use super::proto::{data_type, NodeProto, TensorProto};
use crate::error::{Error, Result};

/// A dense value flowing through a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    I64(ArrayD<i64>),
    Bool(ArrayD<bool>),
}

fn err(msg: impl Into<String>) -> Error {
    Error::Onnx(msg.into())
}

macro_rules! same_kind {
    ($t:expr, $a:ident => $body:expr) => {
        match $t {
            Tensor::F32($a) => Tensor::F32($body),
            Tensor::I64($a) => Tensor::I64($body),
            Tensor::Bool($a) => Tensor::Bool($body),
        }
    };
}

impl Tensor {
    pub fn f32(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        ArrayD::from_shape_vec(IxDyn(shape), data)
            .map(Tensor::F32)
            .map_err(|e| err(format!("bad f32 tensor shape {shape:?}: {e}")))
    }

    pub fn i64(shape: &[usize], data: Vec<i64>) -> Result<Self> {
        ArrayD::from_shape_vec(IxDyn(shape), data)
            .map(Tensor::I64)
            .map_err(|e| err(format!("bad i64 tensor shape {shape:?}: {e}")))
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::I64(a) => a.shape(),
            Tensor::Bool(a) => a.shape(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Tensor::F32(_) => "f32",
            Tensor::I64(_) => "i64",
            Tensor::Bool(_) => "bool",
        }
    }

    pub fn as_f32(&self) -> Result<&ArrayD<f32>> {
        match self {
            Tensor::F32(a) => Ok(a),
            other => Err(err(format!("expected f32, got {}", other.kind()))),
        }
    }

    pub fn as_i64(&self) -> Result<&ArrayD<i64>> {
        match self {
            Tensor::I64(a) => Ok(a),
            other => Err(err(format!("expected i64, got {}", other.kind()))),
        }
    }

    fn as_bool(&self) -> Result<&ArrayD<bool>> {
        match self {
            Tensor::Bool(a) => Ok(a),
            other => Err(err(format!("expected bool, got {}", other.kind()))),
        }
    }

    /// Integer contents in logical order (shape and index inputs).
    pub fn ints(&self) -> Result<Vec<i64>> {
        match self {
            Tensor::I64(a) => Ok(a.iter().copied().collect()),
            other => Err(err(format!("expected an integer tensor, got {}", other.kind()))),
        }
    }

    pub fn into_f32_vec(self) -> Result<Vec<f32>> {
        match self {
            Tensor::F32(a) => Ok(a.iter().copied().collect()),
            other => Err(err(format!("expected f32, got {}", other.kind()))),
        }
    }

    pub fn from_proto(t: &TensorProto) -> Result<Self> {
        if t.external {
            return Err(err(format!(
                "tensor {:?} uses external data, which is unsupported",
                t.name
            )));
        }
        let shape: Vec<usize> = t
            .dims
            .iter()
            .map(|&d| usize::try_from(d).map_err(|_| err(format!("negative dim in {:?}", t.name))))
            .collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let raw = &t.raw_data;
        let tensor = match t.data_type {
            data_type::FLOAT => {
                let v = if raw.is_empty() {
                    t.float_data.clone()
                } else {
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                        .collect()
                };
                Tensor::f32(&shape, v)?
            }
            data_type::DOUBLE => {
                let v = if raw.is_empty() {
                    t.double_data.iter().map(|&x| x as f32).collect()
                } else {
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8")) as f32)
                        .collect()
                };
                Tensor::f32(&shape, v)?
            }
            data_type::INT64 => {
                let v = if raw.is_empty() {
                    t.int64_data.clone()
                } else {
                    raw.chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().expect("8")))
                        .collect()
                };
                Tensor::i64(&shape, v)?
            }
            data_type::INT32 => {
                let v = if raw.is_empty() {
                    t.int32_data.clone()
                } else {
                    raw.chunks_exact(4)
                        .map(|c| i64::from(i32::from_le_bytes(c.try_into().expect("4"))))
                        .collect()
                };
                Tensor::i64(&shape, v)?
            }
            data_type::INT8 | data_type::UINT8 => {
                let v = if raw.is_empty() {
                    t.int32_data.clone()
                } else if t.data_type == data_type::INT8 {
                    raw.iter().map(|&b| i64::from(b as i8)).collect()
                } else {
                    raw.iter().map(|&b| i64::from(b)).collect()
                };
                Tensor::i64(&shape, v)?
            }
            data_type::BOOL => {
                let v: Vec<bool> = if raw.is_empty() {
                    t.int32_data.iter().map(|&x| x != 0).collect()
                } else {
                    raw.iter().map(|&b| b != 0).collect()
                };
                Tensor::Bool(
                    ArrayD::from_shape_vec(IxDyn(&shape), v).map_err(|e| err(format!("bad bool tensor: {e}")))?,
                )
            }
            other => return Err(err(format!("tensor {:?} has unsupported data type {other}", t.name))),
        };
        if tensor.shape().iter().product::<usize>() != count {
            return Err(err(format!("tensor {:?} holds the wrong number of values", t.name)));
        }
        Ok(tensor)
    }
}

// ---------------------------------------------------------------- attributes

fn attr_i(node: &NodeProto, name: &str, default: i64) -> i64 {
    node.attr(name).and_then(|a| a.i).unwrap_or(default)
}

fn attr_f(node: &NodeProto, name: &str, default: f32) -> f32 {
    node.attr(name).and_then(|a| a.f).unwrap_or(default)
}

fn attr_ints(node: &NodeProto, name: &str) -> Option<Vec<i64>> {
    node.attr(name).map(|a| a.ints.clone())
}

// ---------------------------------------------------------------- helpers

fn normalize_axis(axis: i64, rank: usize) -> Result<usize> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    if (0..r.max(1)).contains(&a) {
        Ok(a as usize)
    } else {
        Err(err(format!("axis {axis} out of range for rank {rank}")))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                _ => Err(err(format!("cannot broadcast {a:?} with {b:?}"))),
            }
        })
        .collect()
}

fn binary<A, B, O>(a: &ArrayD<A>, b: &ArrayD<B>, f: impl Fn(&A, &B) -> O) -> Result<ArrayD<O>> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let av = a.broadcast(IxDyn(&shape)).ok_or_else(|| err("broadcast failed"))?;
    let bv = b.broadcast(IxDyn(&shape)).ok_or_else(|| err("broadcast failed"))?;
    Ok(Zip::from(&av).and(&bv).map_collect(f))
}

fn reshape<T: Clone>(a: &ArrayD<T>, shape: &[usize]) -> Result<ArrayD<T>> {
    ArrayD::from_shape_vec(IxDyn(shape), a.iter().cloned().collect())
        .map_err(|e| err(format!("cannot reshape {:?} to {shape:?}: {e}", a.shape())))
}

fn input<'a>(inputs: &'a [Option<&'a Tensor>], i: usize, op: &str) -> Result<&'a Tensor> {
    inputs
        .get(i)
        .copied()
        .flatten()
        .ok_or_else(|| err(format!("{op} is missing input {i}")))
}

fn optional<'a>(inputs: &'a [Option<&'a Tensor>], i: usize) -> Option<&'a Tensor> {
    inputs.get(i).copied().flatten()
}

// ---------------------------------------------------------------- operators

fn arithmetic(op: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(match (a, b) {
        (Tensor::F32(x), Tensor::F32(y)) => Tensor::F32(match op {
            "Add" => binary(x, y, |p, q| p + q)?,
            "Sub" => binary(x, y, |p, q| p - q)?,
            "Mul" => binary(x, y, |p, q| p * q)?,
            "Div" => binary(x, y, |p, q| p / q)?,
            "Pow" => binary(x, y, |p, q| p.powf(*q))?,
            _ => unreachable!(),
        }),
        (Tensor::F32(x), Tensor::I64(y)) if op == "Pow" => Tensor::F32(binary(x, y, |p, q| p.powi(*q as i32))?),
        (Tensor::I64(x), Tensor::I64(y)) => Tensor::I64(match op {
            "Add" => binary(x, y, |p, q| p.wrapping_add(*q))?,
            "Sub" => binary(x, y, |p, q| p.wrapping_sub(*q))?,
            "Mul" => binary(x, y, |p, q| p.wrapping_mul(*q))?,
            "Div" => {
                if y.iter().any(|&q| q == 0) {
                    return Err(err("integer division by zero"));
                }
                binary(x, y, |p, q| p / q)?
            }
            "Pow" => binary(x, y, |p, q| p.pow(*q as u32))?,
            _ => unreachable!(),
        }),
        _ => return Err(err(format!("{op} on {} and {}", a.kind(), b.kind()))),
    })
}

fn compare(op: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    fn cmp<T: PartialOrd>(op: &str, x: &ArrayD<T>, y: &ArrayD<T>) -> Result<ArrayD<bool>> {
        match op {
            "Equal" => binary(x, y, |p, q| p == q),
            "Less" => binary(x, y, |p, q| p < q),
            "Greater" => binary(x, y, |p, q| p > q),
            "LessOrEqual" => binary(x, y, |p, q| p <= q),
            "GreaterOrEqual" => binary(x, y, |p, q| p >= q),
            _ => unreachable!(),
        }
    }
    Ok(Tensor::Bool(match (a, b) {
        (Tensor::F32(x), Tensor::F32(y)) => cmp(op, x, y)?,
        (Tensor::I64(x), Tensor::I64(y)) => cmp(op, x, y)?,
        (Tensor::Bool(x), Tensor::Bool(y)) => cmp(op, x, y)?,
        _ => return Err(err(format!("{op} on {} and {}", a.kind(), b.kind()))),
    }))
}

fn logical(op: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (x, y) = (a.as_bool()?, b.as_bool()?);
    Ok(Tensor::Bool(match op {
        "And" => binary(x, y, |p, q| *p && *q)?,
        "Or" => binary(x, y, |p, q| *p || *q)?,
        "Xor" => binary(x, y, |p, q| p != q)?,
        _ => unreachable!(),
    }))
}

fn unary_float(op: &str, t: &Tensor) -> Result<Tensor> {
    if let (Tensor::I64(a), "Neg" | "Abs") = (t, op) {
        return Ok(Tensor::I64(if op == "Neg" { a.mapv(|v| -v) } else { a.mapv(i64::abs) }));
    }
    let a = t.as_f32()?;
    let f: fn(f32) -> f32 = match op {
        "Sigmoid" => |v| 1.0 / (1.0 + (-v).exp()),
        "Tanh" => f32::tanh,
        "Erf" => libm::erff,
        "Relu" => |v| v.max(0.0),
        "Sqrt" => f32::sqrt,
        "Exp" => f32::exp,
        "Log" => f32::ln,
        "Neg" => |v| -v,
        "Abs" => f32::abs,
        "Reciprocal" => |v| 1.0 / v,
        _ => unreachable!(),
    };
    Ok(Tensor::F32(a.mapv(f)))
}

fn matmul(a: &ArrayD<f32>, b: &ArrayD<f32>) -> Result<ArrayD<f32>> {
    let a_vec = a.ndim() == 1;
    let b_vec = b.ndim() == 1;
    let a2 = if a_vec {
        a.clone().insert_axis(Axis(0))
    } else {
        a.clone()
    };
    let b2 = if b_vec {
        b.clone().insert_axis(Axis(1))
    } else {
        b.clone()
    };
    if a2.ndim() < 2 || b2.ndim() < 2 {
        return Err(err("MatMul on a scalar"));
    }
    let (m, k) = (a2.shape()[a2.ndim() - 2], a2.shape()[a2.ndim() - 1]);
    let (k2, n) = (b2.shape()[b2.ndim() - 2], b2.shape()[b2.ndim() - 1]);
    if k != k2 {
        return Err(err(format!(
            "MatMul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let batch_a = &a2.shape()[..a2.ndim() - 2];
    let batch_b = &b2.shape()[..b2.ndim() - 2];
    let batch = broadcast_shape(batch_a, batch_b)?;
    let nb: usize = batch.iter().product();
    let mut out_shape = batch.clone();
    out_shape.extend([m, n]);

    let out = if b2.ndim() == 2 {
        // a batch of rows against one weight matrix
        let flat = Array2::from_shape_vec(
            (nb * m, k),
            a2.broadcast(IxDyn(&[&batch[..], &[m, k]].concat()))
                .ok_or_else(|| err("broadcast failed"))?
                .iter()
                .copied()
                .collect(),
        )
        .map_err(|e| err(e.to_string()))?;
        let w: ArrayView2<f32> = b2.view().into_dimensionality().map_err(|e| err(e.to_string()))?;
        flat.dot(&w)
            .into_dyn()
            .into_shape_with_order(IxDyn(&out_shape))
            .map_err(|e| err(e.to_string()))?
    } else {
        let mut full_a = batch.clone();
        full_a.extend([m, k]);
        let mut full_b = batch.clone();
        full_b.extend([k, n]);
        let av: Vec<f32> = a2
            .broadcast(IxDyn(&full_a))
            .ok_or_else(|| err("broadcast failed"))?
            .iter()
            .copied()
            .collect();
        let bv: Vec<f32> = b2
            .broadcast(IxDyn(&full_b))
            .ok_or_else(|| err("broadcast failed"))?
            .iter()
            .copied()
            .collect();
        let mut data = Vec::with_capacity(nb * m * n);
        for i in 0..nb {
            let x = ArrayView2::from_shape((m, k), &av[i * m * k..(i + 1) * m * k]).expect("sized");
            let y = ArrayView2::from_shape((k, n), &bv[i * k * n..(i + 1) * k * n]).expect("sized");
            data.extend(x.dot(&y).iter().copied());
        }
        ArrayD::from_shape_vec(IxDyn(&out_shape), data).map_err(|e| err(e.to_string()))?
    };
    let mut out = out;
    if b_vec {
        let last = out.ndim() - 1;
        out = out.remove_axis(Axis(last));
    }
    if a_vec {
        let row = out.ndim() - if b_vec { 1 } else { 2 };
        out = out.remove_axis(Axis(row));
    }
    Ok(out)
}

fn gemm(node: &NodeProto, inputs: &[Option<&Tensor>]) -> Result<Tensor> {
    let a = input(inputs, 0, "Gemm")?.as_f32()?;
    let b = input(inputs, 1, "Gemm")?.as_f32()?;
    let to2 = |x: &ArrayD<f32>, t: bool| -> Result<Array2<f32>> {
        let m: Array2<f32> = x.clone().into_dimensionality().map_err(|e| err(e.to_string()))?;
        Ok(if t { m.reversed_axes() } else { m })
    };
    let a = to2(a, attr_i(node, "transA", 0) != 0)?;
    let b = to2(b, attr_i(node, "transB", 0) != 0)?;
    let mut y = a.dot(&b) * attr_f(node, "alpha", 1.0);
    let mut y_dyn = y.view_mut().into_dyn().to_owned();
    if let Some(c) = optional(inputs, 2) {
        let c = c.as_f32()?.mapv(|v| v * attr_f(node, "beta", 1.0));
        y_dyn = binary(&y_dyn, &c, |p, q| p + q)?;
    }
    y = y_dyn.into_dimensionality().map_err(|e| err(e.to_string()))?;
    Ok(Tensor::F32(y.into_dyn()))
}

fn softmax(node: &NodeProto, t: &Tensor) -> Result<Tensor> {
    let mut a = t.as_f32()?.clone();
    let axis = normalize_axis(attr_i(node, "axis", -1), a.ndim())?;
    for mut lane in a.lanes_mut(Axis(axis)) {
        let max = lane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        lane.mapv_inplace(|v| (v - max).exp());
        let total: f32 = lane.sum();
        lane.mapv_inplace(|v| v / total);
    }
    Ok(Tensor::F32(a))
}

fn layer_norm(node: &NodeProto, inputs: &[Option<&Tensor>]) -> Result<Tensor> {
    let x = input(inputs, 0, "LayerNormalization")?.as_f32()?;
    let scale = input(inputs, 1, "LayerNormalization")?.as_f32()?;
    let bias = optional(inputs, 2).map(Tensor::as_f32).transpose()?;
    let axis = normalize_axis(attr_i(node, "axis", -1), x.ndim())?;
    let eps = attr_f(node, "epsilon", 1e-5);
    let inner: usize = x.shape()[axis..].iter().product();
    let norm_shape = &x.shape()[axis..];
    let scale: Vec<f32> = scale
        .broadcast(IxDyn(norm_shape))
        .ok_or_else(|| err("bad LayerNorm scale"))?
        .iter()
        .copied()
        .collect();
    let bias: Vec<f32> = match bias {
        Some(b) => b
            .broadcast(IxDyn(norm_shape))
            .ok_or_else(|| err("bad LayerNorm bias"))?
            .iter()
            .copied()
            .collect(),
        None => vec![0.0; inner],
    };
    let mut data: Vec<f32> = x.iter().copied().collect();
    for row in data.chunks_mut(inner) {
        let n = inner as f32;
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, s), b) in row.iter_mut().zip(&scale).zip(&bias) {
            *v = (*v - mean) * inv * s + b;
        }
    }
    Tensor::f32(x.shape(), data)
}

fn reduce(node: &NodeProto, inputs: &[Option<&Tensor>], mean: bool) -> Result<Tensor> {
    let x = input(inputs, 0, &node.op_type)?.as_f32()?;
    let axes = match optional(inputs, 1) {
        Some(t) => Some(t.ints()?),
        None => attr_ints(node, "axes"),
    };
    let keep = attr_i(node, "keepdims", 1) != 0;
    let mut axes: Vec<usize> = match axes {
        Some(a) if !a.is_empty() => a.iter().map(|&v| normalize_axis(v, x.ndim())).collect::<Result<_>>()?,
        _ if attr_i(node, "noop_with_empty_axes", 0) != 0 => return Ok(Tensor::F32(x.clone())),
        _ => (0..x.ndim()).collect(),
    };
    axes.sort_unstable();
    axes.dedup();
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let mut out = x.clone();
    for &a in axes.iter().rev() {
        out = out.sum_axis(Axis(a));
        if keep {
            out = out.insert_axis(Axis(a));
        }
    }
    if mean {
        out.mapv_inplace(|v| v / count as f32);
    }
    Ok(Tensor::F32(out))
}

fn target_shape(data: &[usize], spec: &[i64], allow_zero: bool) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(spec.len());
    let mut infer = None;
    for (i, &d) in spec.iter().enumerate() {
        match d {
            -1 => {
                if infer.replace(i).is_some() {
                    return Err(err("Reshape with more than one -1"));
                }
                out.push(1);
            }
            0 if !allow_zero => out.push(*data.get(i).ok_or_else(|| err("Reshape copies a missing dim"))?),
            d if d >= 0 => out.push(d as usize),
            _ => return Err(err(format!("invalid reshape dim {d}"))),
        }
    }
    if let Some(i) = infer {
        let known: usize = out.iter().product();
        let total: usize = data.iter().product();
        if known == 0 || !total.is_multiple_of(known) {
            return Err(err(format!("cannot infer reshape of {data:?} to {spec:?}")));
        }
        out[i] = total / known;
    }
    Ok(out)
}

fn transpose<T: Clone>(a: &ArrayD<T>, perm: &[usize]) -> ArrayD<T> {
    let p = a.clone().permuted_axes(IxDyn(perm));
    p.as_standard_layout().into_owned()
}

fn gather<T: Clone>(data: &ArrayD<T>, indices: &ArrayD<i64>, axis: usize) -> Result<ArrayD<T>> {
    let dim = data.shape()[axis] as i64;
    let flat: Vec<usize> = indices
        .iter()
        .map(|&i| {
            let j = if i < 0 { i + dim } else { i };
            if (0..dim).contains(&j) {
                Ok(j as usize)
            } else {
                Err(err(format!("Gather index {i} out of range for dim {dim}")))
            }
        })
        .collect::<Result<_>>()?;
    let picked = data.select(Axis(axis), &flat);
    let mut shape = data.shape()[..axis].to_vec();
    shape.extend_from_slice(indices.shape());
    shape.extend_from_slice(&data.shape()[axis + 1..]);
    reshape(&picked, &shape)
}

fn slice<T: Clone>(a: &ArrayD<T>, starts: &[i64], ends: &[i64], axes: &[usize], steps: &[i64]) -> Result<ArrayD<T>> {
    let mut view = a.view();
    for (i, &axis) in axes.iter().enumerate() {
        let dim = a.shape()[axis] as i64;
        let step = steps[i];
        if step == 0 {
            return Err(err("Slice step of zero"));
        }
        let fix = |v: i64| if v < 0 { v.saturating_add(dim) } else { v };
        let (start, end) = (fix(starts[i]), fix(ends[i]));
        let slice = if step > 0 {
            let s = start.clamp(0, dim);
            let e = end.clamp(0, dim);
            Slice::new(s as isize, Some(e.max(s) as isize), step as isize)
        } else {
            let s = start.clamp(-1, dim - 1);
            let e = end.clamp(-1, dim - 1);
            // walk from s down to (exclusive) e
            let lo = (e + 1).min(s + 1);
            Slice::new(lo as isize, Some((s + 1) as isize), step as isize)
        };
        view.slice_axis_inplace(Axis(axis), slice);
    }
    Ok(view.as_standard_layout().into_owned())
}

fn trilu<T: Clone + Default>(a: &ArrayD<T>, upper: bool, k: i64) -> Result<ArrayD<T>> {
    if a.ndim() < 2 {
        return Err(err("Trilu needs rank >= 2"));
    }
    let mut out = a.clone();
    let nd = a.ndim();
    for (idx, v) in out.indexed_iter_mut() {
        let (r, c) = (idx[nd - 2] as i64, idx[nd - 1] as i64);
        let keep = if upper { c - r >= k } else { c - r <= k };
        if !keep {
            *v = T::default();
        }
    }
    Ok(out)
}

fn argmax(node: &NodeProto, t: &Tensor) -> Result<Tensor> {
    fn run<T: PartialOrd + Copy>(a: &ArrayD<T>, axis: usize, last: bool) -> ArrayD<i64> {
        a.map_axis(Axis(axis), |lane| {
            let mut best = 0usize;
            for (i, v) in lane.iter().enumerate() {
                if *v > lane[best] || (last && *v == lane[best]) {
                    best = i;
                }
            }
            best as i64
        })
    }
    let axis = normalize_axis(attr_i(node, "axis", 0), t.shape().len())?;
    let last = attr_i(node, "select_last_index", 0) != 0;
    let mut out = match t {
        Tensor::F32(a) => run(a, axis, last),
        Tensor::I64(a) => run(a, axis, last),
        Tensor::Bool(a) => run(a, axis, last),
    };
    if attr_i(node, "keepdims", 1) != 0 {
        out = out.insert_axis(Axis(axis));
    }
    Ok(Tensor::I64(out))
}

fn cast(t: &Tensor, to: i64) -> Result<Tensor> {
    let to = to as i32;
    Ok(match (t, to) {
        (Tensor::F32(a), data_type::FLOAT | data_type::DOUBLE) => Tensor::F32(a.clone()),
        (Tensor::F32(a), data_type::INT64 | data_type::INT32 | data_type::INT8 | data_type::UINT8) => {
            Tensor::I64(a.mapv(|v| v as i64))
        }
        (Tensor::F32(a), data_type::BOOL) => Tensor::Bool(a.mapv(|v| v != 0.0)),
        (Tensor::I64(a), data_type::FLOAT | data_type::DOUBLE) => Tensor::F32(a.mapv(|v| v as f32)),
        (Tensor::I64(a), data_type::INT64 | data_type::INT32 | data_type::INT8 | data_type::UINT8) => {
            Tensor::I64(a.clone())
        }
        (Tensor::I64(a), data_type::BOOL) => Tensor::Bool(a.mapv(|v| v != 0)),
        (Tensor::Bool(a), data_type::FLOAT | data_type::DOUBLE) => Tensor::F32(a.mapv(|v| f32::from(u8::from(v)))),
        (Tensor::Bool(a), data_type::INT64 | data_type::INT32 | data_type::INT8 | data_type::UINT8) => {
            Tensor::I64(a.mapv(i64::from))
        }
        (Tensor::Bool(a), data_type::BOOL) => Tensor::Bool(a.clone()),
        (_, other) => return Err(err(format!("Cast to unsupported type {other}"))),
    })
}

fn constant(node: &NodeProto) -> Result<Tensor> {
    for a in &node.attributes {
        match a.name.as_str() {
            "value" => return Tensor::from_proto(a.t.as_ref().ok_or_else(|| err("Constant value is not a tensor"))?),
            "value_float" => return Tensor::f32(&[], vec![a.f.unwrap_or_default()]),
            "value_floats" => return Tensor::f32(&[a.floats.len()], a.floats.clone()),
            "value_int" => return Tensor::i64(&[], vec![a.i.unwrap_or_default()]),
            "value_ints" => return Tensor::i64(&[a.ints.len()], a.ints.clone()),
            _ => {}
        }
    }
    Err(err("Constant without a supported value attribute"))
}

fn as_dims(spec: &[i64]) -> Result<Vec<usize>> {
    spec.iter()
        .map(|&d| usize::try_from(d).map_err(|_| err(format!("negative dimension {d}"))))
        .collect()
}

/// Executes one node on already-resolved inputs.
pub fn run_node(node: &NodeProto, inputs: &[Option<&Tensor>]) -> Result<Vec<Tensor>> {
    let op = node.op_type.as_str();
    let x = || input(inputs, 0, op);
    let out = match op {
        "Identity" => x()?.clone(),
        "Constant" => constant(node)?,
        "Add" | "Sub" | "Mul" | "Div" | "Pow" => arithmetic(op, x()?, input(inputs, 1, op)?)?,
        "Equal" | "Less" | "Greater" | "LessOrEqual" | "GreaterOrEqual" => compare(op, x()?, input(inputs, 1, op)?)?,
        "And" | "Or" | "Xor" => logical(op, x()?, input(inputs, 1, op)?)?,
        "Not" => Tensor::Bool(x()?.as_bool()?.mapv(|v| !v)),
        "Sigmoid" | "Tanh" | "Erf" | "Relu" | "Sqrt" | "Exp" | "Log" | "Neg" | "Abs" | "Reciprocal" => {
            unary_float(op, x()?)?
        }
        "MatMul" => Tensor::F32(matmul(x()?.as_f32()?, input(inputs, 1, op)?.as_f32()?)?),
        "Gemm" => gemm(node, inputs)?,
        "Softmax" => softmax(node, x()?)?,
        "LayerNormalization" => layer_norm(node, inputs)?,
        "ReduceMean" => reduce(node, inputs, true)?,
        "ReduceSum" => reduce(node, inputs, false)?,
        "Where" => {
            let c = x()?.as_bool()?;
            let (a, b) = (input(inputs, 1, op)?, input(inputs, 2, op)?);
            let shape = broadcast_shape(&broadcast_shape(c.shape(), a.shape())?, b.shape())?;
            let c = c
                .broadcast(IxDyn(&shape))
                .ok_or_else(|| err("Where broadcast failed"))?;
            macro_rules! select {
                ($p:expr, $q:expr) => {{
                    let p = $p
                        .broadcast(IxDyn(&shape))
                        .ok_or_else(|| err("Where broadcast failed"))?;
                    let q = $q
                        .broadcast(IxDyn(&shape))
                        .ok_or_else(|| err("Where broadcast failed"))?;
                    Zip::from(&c)
                        .and(&p)
                        .and(&q)
                        .map_collect(|&k, u, v| if k { u.clone() } else { v.clone() })
                }};
            }
            match (a, b) {
                (Tensor::F32(p), Tensor::F32(q)) => Tensor::F32(select!(p, q)),
                (Tensor::I64(p), Tensor::I64(q)) => Tensor::I64(select!(p, q)),
                (Tensor::Bool(p), Tensor::Bool(q)) => Tensor::Bool(select!(p, q)),
                _ => return Err(err("Where branches differ in type")),
            }
        }
        "Shape" => {
            let shape = x()?.shape();
            let rank = shape.len() as i64;
            let clampi = |v: i64| (if v < 0 { v + rank } else { v }).clamp(0, rank) as usize;
            let start = clampi(attr_i(node, "start", 0));
            let end = clampi(attr_i(node, "end", rank));
            let dims: Vec<i64> = shape[start..end.max(start)].iter().map(|&d| d as i64).collect();
            Tensor::i64(&[dims.len()], dims)?
        }
        "Reshape" => {
            let t = x()?;
            let spec = input(inputs, 1, op)?.ints()?;
            let shape = target_shape(t.shape(), &spec, attr_i(node, "allowzero", 0) != 0)?;
            same_kind!(t, a => reshape(a, &shape)?)
        }
        "Flatten" => {
            let t = x()?;
            let axis = normalize_axis(attr_i(node, "axis", 1), t.shape().len() + 1)?;
            let outer: usize = t.shape()[..axis].iter().product();
            let inner: usize = t.shape()[axis..].iter().product();
            same_kind!(t, a => reshape(a, &[outer, inner])?)
        }
        "Transpose" => {
            let t = x()?;
            let rank = t.shape().len();
            let perm: Vec<usize> = match attr_ints(node, "perm") {
                Some(p) => p.iter().map(|&v| normalize_axis(v, rank)).collect::<Result<_>>()?,
                None => (0..rank).rev().collect(),
            };
            same_kind!(t, a => transpose(a, &perm))
        }
        "Unsqueeze" => {
            let t = x()?;
            let axes = match optional(inputs, 1) {
                Some(a) => a.ints()?,
                None => attr_ints(node, "axes").ok_or_else(|| err("Unsqueeze without axes"))?,
            };
            let rank = t.shape().len() + axes.len();
            let mut axes: Vec<usize> = axes.iter().map(|&v| normalize_axis(v, rank)).collect::<Result<_>>()?;
            axes.sort_unstable();
            let mut shape = t.shape().to_vec();
            for a in axes {
                shape.insert(a, 1);
            }
            same_kind!(t, a => reshape(a, &shape)?)
        }
        "Squeeze" => {
            let t = x()?;
            let rank = t.shape().len();
            let axes = match optional(inputs, 1) {
                Some(a) => Some(a.ints()?),
                None => attr_ints(node, "axes"),
            };
            let drop: Vec<usize> = match axes {
                Some(a) => a.iter().map(|&v| normalize_axis(v, rank)).collect::<Result<_>>()?,
                None => (0..rank).filter(|&i| t.shape()[i] == 1).collect(),
            };
            let shape: Vec<usize> = t
                .shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, &d)| d)
                .collect();
            same_kind!(t, a => reshape(a, &shape)?)
        }
        "Concat" => {
            let parts: Vec<&Tensor> = inputs.iter().flatten().copied().collect();
            let first = parts.first().ok_or_else(|| err("Concat without inputs"))?;
            let axis = normalize_axis(attr_i(node, "axis", 0), first.shape().len())?;
            macro_rules! cat {
                ($variant:ident) => {{
                    let views = parts
                        .iter()
                        .map(|p| match p {
                            Tensor::$variant(a) => Ok(a.view()),
                            _ => Err(err("Concat inputs differ in type")),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::$variant(concatenate(Axis(axis), &views).map_err(|e| err(format!("Concat: {e}")))?)
                }};
            }
            match first {
                Tensor::F32(_) => cat!(F32),
                Tensor::I64(_) => cat!(I64),
                Tensor::Bool(_) => cat!(Bool),
            }
        }
        "Gather" => {
            let t = x()?;
            let idx = input(inputs, 1, op)?.as_i64()?;
            let axis = normalize_axis(attr_i(node, "axis", 0), t.shape().len())?;
            same_kind!(t, a => gather(a, idx, axis)?)
        }
        "Slice" => {
            let t = x()?;
            let starts = input(inputs, 1, op)?.ints()?;
            let ends = input(inputs, 2, op)?.ints()?;
            let rank = t.shape().len();
            let axes: Vec<usize> = match optional(inputs, 3) {
                Some(a) => a
                    .ints()?
                    .iter()
                    .map(|&v| normalize_axis(v, rank))
                    .collect::<Result<_>>()?,
                None => (0..starts.len()).collect(),
            };
            let steps = match optional(inputs, 4) {
                Some(s) => s.ints()?,
                None => vec![1; starts.len()],
            };
            if ends.len() != starts.len() || axes.len() != starts.len() || steps.len() != starts.len() {
                return Err(err("Slice inputs disagree in length"));
            }
            same_kind!(t, a => slice(a, &starts, &ends, &axes, &steps)?)
        }
        "Expand" => {
            let t = x()?;
            let spec = as_dims(&input(inputs, 1, op)?.ints()?)?;
            let shape = broadcast_shape(t.shape(), &spec)?;
            same_kind!(t, a => a.broadcast(IxDyn(&shape)).ok_or_else(|| err("Expand failed"))?.to_owned())
        }
        "ConstantOfShape" => {
            let shape = as_dims(&x()?.ints()?)?;
            let value = match node.attr("value").and_then(|a| a.t.as_ref()) {
                Some(t) => Tensor::from_proto(t)?,
                None => Tensor::f32(&[1], vec![0.0])?,
            };
            same_kind!(&value, v => ArrayD::from_elem(IxDyn(&shape), v.iter().next().cloned().ok_or_else(|| err("empty ConstantOfShape value"))?))
        }
        "Cast" => cast(x()?, attr_i(node, "to", data_type::FLOAT as i64))?,
        "Trilu" => {
            let t = x()?;
            let k = match optional(inputs, 1) {
                Some(k) => *k.ints()?.first().ok_or_else(|| err("empty Trilu k"))?,
                None => 0,
            };
            let upper = attr_i(node, "upper", 1) != 0;
            same_kind!(t, a => trilu(a, upper, k)?)
        }
        "ArgMax" => argmax(node, x()?)?,
        "Range" => {
            let (s, l, d) = (x()?, input(inputs, 1, op)?, input(inputs, 2, op)?);
            match (s, l, d) {
                (Tensor::I64(s), Tensor::I64(l), Tensor::I64(d)) => {
                    let (s, l, d) = (
                        s.iter().next().copied(),
                        l.iter().next().copied(),
                        d.iter().next().copied(),
                    );
                    let (Some(s), Some(l), Some(d)) = (s, l, d) else {
                        return Err(err("empty Range input"));
                    };
                    if d == 0 {
                        return Err(err("Range with zero delta"));
                    }
                    let n = ((l - s) as f64 / d as f64).ceil().max(0.0) as usize;
                    let v: Vec<i64> = (0..n as i64).map(|i| s + i * d).collect();
                    Tensor::i64(&[v.len()], v)?
                }
                (Tensor::F32(s), Tensor::F32(l), Tensor::F32(d)) => {
                    let (s, l, d) = (
                        s.iter().next().copied(),
                        l.iter().next().copied(),
                        d.iter().next().copied(),
                    );
                    let (Some(s), Some(l), Some(d)) = (s, l, d) else {
                        return Err(err("empty Range input"));
                    };
                    let n = ((l - s) / d).ceil().max(0.0) as usize;
                    let v: Vec<f32> = (0..n).map(|i| s + i as f32 * d).collect();
                    Tensor::f32(&[v.len()], v)?
                }
                _ => return Err(err("Range inputs differ in type")),
            }
        }
        other => return Err(err(format!("unsupported operator {other} (node {:?})", node.name))),
    };
    Ok(vec![out])
}
