use crate::error::{LmnError, Result};
use crate::harness::data::Sequence;
use crate::models::{
    ForwardTrace, LmnParams, ModelParams, MslmnParams, Readout, Recurrent, RnnParams, UrnnParams,
};
use crate::numerics::{gemv_t_add, outer_add, Matrix};

use super::loss::{batch_scale, sequence_loss_grad, LossKind};

/// One gradient tensor per parameter tensor, in [`Recurrent::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(model: &impl Recurrent) -> Self {
        GradientSet {
            tensors: model
                .tensors()
                .into_iter()
                .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// `out += W[..r1]ᵀ · x[..r1]`
fn gemv_t_rows_add(out: &mut [f64], w: &Matrix, x: &[f64], r1: usize) {
    for (r, &xr) in x[..r1].iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(w.row(r)) {
            *o += a * xr;
        }
    }
}

fn tanh_backward(dh: &mut [f64], h: &[f64]) {
    for (d, v) in dh.iter_mut().zip(h) {
        *d *= 1.0 - v * v;
    }
}

fn add_into(dst: &mut Matrix, v: &[f64]) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(v) {
        *d += s;
    }
}

/// Loss of a batch, without gradients.
pub fn batch_loss(model: &ModelParams, batch: &[&Sequence], kind: LossKind) -> Result<f64> {
    let scale = batch_scale(kind, batch)?;
    let mut total = 0.0;
    for s in batch {
        let tr = model.forward(&s.x)?;
        total += sequence_loss_grad(kind, &tr.y, &s.target, scale, false)?.0;
    }
    Ok(total)
}

/// Exact reverse-mode gradients of the batch objective over the full
/// unrolled sequences.
pub fn bptt_gradients(
    model: &ModelParams,
    batch: &[&Sequence],
    kind: LossKind,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(LmnError::invalid("empty batch"));
    }
    let scale = batch_scale(kind, batch)?;
    let mut grads = GradientSet::zeros_like(model);
    let mut total = 0.0;
    for s in batch {
        let tr = model.forward(&s.x)?;
        let (l, dy) = sequence_loss_grad(kind, &tr.y, &s.target, scale, true)?;
        let dy = dy.expect("gradient requested");
        total += l;
        match model {
            ModelParams::Rnn(p) => rnn_backward(p, &s.x, &tr, &dy, &mut grads.tensors),
            ModelParams::Lmn(p) => lmn_backward(p, &s.x, &tr, &dy, &mut grads.tensors),
            ModelParams::Urnn(p) => urnn_backward(p, &s.x, &tr, &dy, &mut grads.tensors),
            ModelParams::Mslmn(p) => mslmn_backward(p, &s.x, &tr, &dy, &mut grads.tensors),
        }
    }
    if !total.is_finite() {
        return Err(LmnError::NonFinite("batch loss".into()));
    }
    Ok((total, grads))
}

fn rnn_backward(p: &RnnParams, x: &Matrix, tr: &ForwardTrace, dy: &Matrix, g: &mut [Matrix]) {
    let n_h = p.hidden_size();
    let mut da_next = vec![0.0; n_h];
    for t in (0..x.rows()).rev() {
        let h = tr.h.row(t);
        let dyt = dy.row(t);
        let mut dh = vec![0.0; n_h];
        gemv_t_add(&mut dh, &p.w_hy, dyt);
        gemv_t_add(&mut dh, &p.w_hh, &da_next);
        tanh_backward(&mut dh, h);
        let da = dh;
        outer_add(&mut g[2], dyt, h);
        add_into(&mut g[4], dyt);
        outer_add(&mut g[0], &da, x.row(t));
        if t > 0 {
            outer_add(&mut g[1], &da, tr.h.row(t - 1));
        }
        add_into(&mut g[3], &da);
        da_next = da;
    }
}

fn lmn_backward(p: &LmnParams, x: &Matrix, tr: &ForwardTrace, dy: &Matrix, g: &mut [Matrix]) {
    let (n_h, n_m) = (p.hidden_size(), p.memory_size());
    let m = tr.m.as_ref().expect("LMN trace has memory");
    let zero = vec![0.0; n_m];
    let mut carry = vec![0.0; n_m];
    for t in (0..x.rows()).rev() {
        let h = tr.h.row(t);
        let mt = m.row(t);
        let mprev: &[f64] = if t > 0 { m.row(t - 1) } else { &zero };
        let dyt = dy.row(t);
        let mut dm = carry;
        let mut dh = vec![0.0; n_h];
        match p.readout {
            Readout::Memory => {
                gemv_t_add(&mut dm, &p.w_out, dyt);
                outer_add(&mut g[4], dyt, mt);
            }
            Readout::Hidden => {
                gemv_t_add(&mut dh, &p.w_out, dyt);
                outer_add(&mut g[4], dyt, h);
            }
        }
        add_into(&mut g[7], dyt);
        gemv_t_add(&mut dh, &p.w_hm, &dm);
        tanh_backward(&mut dh, h);
        let da = dh;
        outer_add(&mut g[2], &dm, h);
        add_into(&mut g[6], &dm);
        outer_add(&mut g[0], &da, x.row(t));
        add_into(&mut g[5], &da);
        let mut next = vec![0.0; n_m];
        if t > 0 {
            outer_add(&mut g[3], &dm, mprev);
            outer_add(&mut g[1], &da, mprev);
            gemv_t_add(&mut next, &p.w_mm, &dm);
            gemv_t_add(&mut next, &p.w_mh, &da);
        }
        carry = next;
    }
}

fn urnn_backward(p: &UrnnParams, x: &Matrix, tr: &ForwardTrace, dy: &Matrix, g: &mut [Matrix]) {
    let (len, n_h, k) = (x.rows(), p.hidden_size(), p.k());
    // tensor order: w_xh, w_hh_1..k, w_hy_0..k, b_h, b_y
    let hh = 1;
    let hy = 1 + k;
    let bh = 2 + 2 * k;
    let by = bh + 1;
    let mut da = Matrix::zeros(len, n_h);
    for t in (0..len).rev() {
        let mut dh = vec![0.0; n_h];
        for i in 0..=k {
            if t + i < len {
                gemv_t_add(&mut dh, &p.w_hy[i], dy.row(t + i));
            }
        }
        for i in 1..=k {
            if t + i < len {
                gemv_t_add(&mut dh, &p.w_hh[i - 1], da.row(t + i));
            }
        }
        tanh_backward(&mut dh, tr.h.row(t));
        let dyt = dy.row(t);
        add_into(&mut g[by], dyt);
        for i in 0..=k.min(t) {
            outer_add(&mut g[hy + i], dyt, tr.h.row(t - i));
        }
        for i in 1..=k.min(t) {
            outer_add(&mut g[hh + i - 1], &dh, tr.h.row(t - i));
        }
        outer_add(&mut g[0], &dh, x.row(t));
        add_into(&mut g[bh], &dh);
        da.row_mut(t).copy_from_slice(&dh);
    }
}

fn mslmn_backward(p: &MslmnParams, x: &Matrix, tr: &ForwardTrace, dy: &Matrix, g: &mut [Matrix]) {
    let (n, n_h, total) = (p.module_size(), p.hidden_size(), p.memory_size());
    let m = tr.m.as_ref().expect("MS-LMN trace has memory");
    let active = tr.active.as_ref().expect("MS-LMN trace has clock info");
    let zero = vec![0.0; total];
    let mut carry = vec![0.0; total];
    for t in (0..x.rows()).rev() {
        let h = tr.h.row(t);
        let mt = m.row(t);
        let mprev: &[f64] = if t > 0 { m.row(t - 1) } else { &zero };
        let dyt = dy.row(t);
        let rows = active[t] * n;

        let mut dm = carry;
        gemv_t_add(&mut dm, &p.w_my, dyt);
        outer_add(&mut g[4], dyt, mt);
        add_into(&mut g[7], dyt);

        let mut dh = vec![0.0; n_h];
        gemv_t_rows_add(&mut dh, &p.w_hm, &dm, rows);
        tanh_backward(&mut dh, h);
        let da = dh;
        for r in 0..rows {
            let d = dm[r];
            if d == 0.0 {
                continue;
            }
            for (o, hv) in g[2].row_mut(r).iter_mut().zip(h) {
                *o += d * hv;
            }
            g[6].as_mut_slice()[r] += d;
        }
        outer_add(&mut g[0], &da, x.row(t));
        add_into(&mut g[5], &da);

        // held rows pass their gradient straight through
        let mut next = vec![0.0; total];
        next[rows..].copy_from_slice(&dm[rows..]);
        if t > 0 {
            for r in 0..rows {
                let d = dm[r];
                if d == 0.0 {
                    continue;
                }
                let c0 = (r / n) * n;
                let grow = &mut g[3].row_mut(r)[c0..];
                for (o, mv) in grow.iter_mut().zip(&mprev[c0..]) {
                    *o += d * mv;
                }
                for (o, w) in next[c0..].iter_mut().zip(&p.w_mm.row(r)[c0..]) {
                    *o += d * w;
                }
            }
            outer_add(&mut g[1], &da, mprev);
            gemv_t_add(&mut next, &p.w_mh, &da);
        }
        carry = next;
    }
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences over every parameter scalar:
/// `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn grad_check(
    model: &ModelParams,
    batch: &[&Sequence],
    kind: LossKind,
    epsilon: f64,
) -> Result<f64> {
    let (_, analytic) = bptt_gradients(model, batch, kind)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let n_tensors = analytic.tensors.len();
    for ti in 0..n_tensors {
        let len = analytic.tensors[ti].len();
        for j in 0..len {
            let orig = probe.tensors_mut()[ti].as_slice()[j];
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig + epsilon;
            let up = batch_loss(&probe, batch, kind)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig - epsilon;
            let down = batch_loss(&probe, batch, kind)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig;
            let gn = (up - down) / (2.0 * epsilon);
            let ga = analytic.tensors[ti].as_slice()[j];
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
