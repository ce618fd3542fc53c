//! Dense kernels behind the graph ops. Each output row is computed by
//! exactly one task with a fixed summation order, so results do not depend on
//! the execution mode.

use crate::par::Exec;

/// Work size (multiply-adds) below which the parallel path is not worth it.
const PAR_THRESHOLD: usize = 1 << 15;

fn pick(exec: Exec, work: usize) -> Exec {
    if work >= PAR_THRESHOLD {
        exec
    } else {
        Exec::Sequential
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    pick(exec, m * k * n).for_each_chunk(&mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `out[m×k] = a[m×n] · b[k×n]ᵀ`.
pub fn matmul_bt(exec: Exec, a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    pick(exec, m * k * n).for_each_chunk(&mut out, k, |i, row| {
        let a_row = &a[i * n..(i + 1) * n];
        for (p, o) in row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`.
pub fn matmul_at(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    pick(exec, m * k * n).for_each_chunk(&mut out, n, |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// Numerically stable softmax of one strided lane in place.
pub(crate) fn softmax_lane(data: &mut [f64], base: usize, n: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        max = max.max(data[base + i * stride]);
    }
    let mut sum = 0.0;
    for i in 0..n {
        let e = (data[base + i * stride] - max).exp();
        data[base + i * stride] = e;
        sum += e;
    }
    for i in 0..n {
        data[base + i * stride] /= sum;
    }
}
