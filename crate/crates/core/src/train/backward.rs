//! Reverse pass through [`Mlp`]s and whole metanets, driven by the caches
//! the forward pass records.

use alloc::vec;
use alloc::vec::Vec;

use crate::gnn::{GnnForm, GnnLayer, GnnModel, GraphInput, Mat, Mlp, MlpCache, ModelCache, Readout};

/// Backpropagates `grad_out` through `mlp`. Weight gradients are added to
/// `grad` (laid out as in `to_flat`: per layer `w` row-major then `b`); the
/// gradient with respect to the input is returned.
pub(crate) fn mlp_backward(mlp: &Mlp, cache: &MlpCache, grad_out: &Mat, grad: &mut [f64]) -> Mat {
    let mut offsets = Vec::with_capacity(mlp.layers.len());
    let mut at = 0;
    for d in &mlp.layers {
        offsets.push(at);
        at += d.num_params();
    }
    let mut delta = grad_out.clone();
    for (li, d) in mlp.layers.iter().enumerate().rev() {
        let z = &cache.pre[li];
        let x = &cache.inputs[li];
        let (rows, din, dout) = (x.rows(), d.input_dim(), d.output_dim());
        for r in 0..rows {
            let zr = z.row(r);
            for (o, g) in delta.row_mut(r).iter_mut().enumerate() {
                *g *= d.acts[o].derivative(zr[o]);
            }
        }
        let base = offsets[li];
        let (gw, gb) = grad[base..base + dout * din + dout].split_at_mut(dout * din);
        for r in 0..rows {
            let dr = delta.row(r);
            let xr = x.row(r);
            for (o, &g) in dr.iter().enumerate().take(dout) {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                for (w, xv) in gw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                    *w += g * xv;
                }
            }
        }
        let mut prev = Mat::zeros(rows, din);
        for r in 0..rows {
            let dr = delta.row(r);
            let pr = prev.row_mut(r);
            for (o, &g) in dr.iter().enumerate().take(dout) {
                if g == 0.0 {
                    continue;
                }
                for (p, w) in pr.iter_mut().zip(d.w.row(o)) {
                    *p += g * w;
                }
            }
        }
        delta = prev;
    }
    delta
}

/// Flat offsets of every MLP, in [`GnnModel::mlps`] order.
fn offsets(model: &GnnModel) -> Vec<usize> {
    let mut out = Vec::new();
    let mut at = 0;
    for m in model.mlps() {
        out.push(at);
        at += m.num_params();
    }
    out
}

fn add_rows(dst: &mut Mat, index: &[usize], src: &Mat, col0: usize) {
    let w = dst.cols();
    for (k, &i) in index.iter().enumerate() {
        for (a, b) in dst.row_mut(i).iter_mut().zip(&src.row(k)[col0..col0 + w]) {
            *a += b;
        }
    }
}

fn add_block(dst: &mut Mat, src: &Mat, col0: usize) {
    let w = dst.cols();
    for k in 0..dst.rows() {
        for (a, b) in dst.row_mut(k).iter_mut().zip(&src.row(k)[col0..col0 + w]) {
            *a += b;
        }
    }
}

fn add_column_sums(dst: &mut [f64], src: &Mat, col0: usize) {
    let w = dst.len();
    for r in 0..src.rows() {
        for (a, b) in dst.iter_mut().zip(&src.row(r)[col0..col0 + w]) {
            *a += b;
        }
    }
}

fn broadcast(rows: usize, v: &[f64]) -> Mat {
    let mut m = Mat::zeros(rows, v.len());
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(v);
    }
    m
}

/// Walks the MLP list in declaration order while handing out gradient
/// slices.
struct Cursor<'a> {
    offsets: Vec<usize>,
    grad: &'a mut [f64],
    next: usize,
}

impl Cursor<'_> {
    fn slot(&mut self, index: usize) -> &mut [f64] {
        let start = self.offsets[index];
        let end = self.offsets.get(index + 1).copied().unwrap_or(self.grad.len());
        &mut self.grad[start..end]
    }
}

/// Gradient of `sum(grad_out * output)` with respect to every model weight,
/// added into `grad` (flat layout of [`GnnModel::to_flat`]).
pub(crate) fn model_backward(model: &GnnModel, g: &GraphInput, cache: &ModelCache, grad_out: &Mat, grad: &mut [f64]) {
    let mut cur = Cursor {
        offsets: offsets(model),
        grad,
        next: 0,
    };
    // Slot indices per layer, mirroring `mlps()`.
    let mut slots = Vec::with_capacity(model.layers.len());
    cur.next = 2;
    for l in &model.layers {
        let msg = cur.next;
        cur.next += 1;
        let upd = l.node_upd.as_ref().map(|_| {
            cur.next += 1;
            cur.next - 1
        });
        let edge = cur.next;
        cur.next += 1;
        let glob = l.global_upd.as_ref().map(|_| {
            cur.next += 1;
            cur.next - 1
        });
        slots.push((msg, upd, edge, glob));
    }
    let head_slot = cur.next;

    let last = cache.states.last().expect("final state");
    let (n, m) = (last.v.rows(), last.e.rows());
    let mut dv = Mat::zeros(n, last.v.cols());
    let mut de = Mat::zeros(m, last.e.cols());
    let mut du = vec![0.0; last.u.len()];
    let d_head = mlp_backward(model.readout.head(), &cache.head, grad_out, cur.slot(head_slot));
    match &model.readout {
        Readout::EdgeMeanPool(_) => {
            let scale = 1.0 / m.max(1) as f64;
            for k in 0..m {
                for (a, b) in de.row_mut(k).iter_mut().zip(d_head.row(0)) {
                    *a += b * scale;
                }
            }
        }
        Readout::PerEdge(_) => add_rows(&mut de, &cache.param_edges, &d_head, 0),
        Readout::Global(_) => {
            for (a, b) in du.iter_mut().zip(d_head.row(0)) {
                *a += b;
            }
        }
    }

    for (li, layer) in model.layers.iter().enumerate().rev() {
        let s_in = &cache.states[li];
        let s_out = &cache.states[li + 1];
        let lc = &cache.layers[li];
        let (msg_slot, upd_slot, edge_slot, glob_slot) = slots[li];
        let mut dv_in = Mat::zeros(n, s_in.v.cols());
        let mut de_in = Mat::zeros(m, s_in.e.cols());
        let mut du_in = vec![0.0; s_in.u.len()];
        match model.form {
            GnnForm::Standard => {
                let (dx, dxe) = (s_out.v.cols(), s_out.e.cols());
                let mut dv_new = dv.clone();
                // Global update reads sums of the new node and edge features.
                match (&layer.global_upd, glob_slot, &lc.glob) {
                    (Some(mlp), Some(slot), Some(c)) => {
                        let dg = mlp_backward(mlp, c, &Mat::from_vec(1, du.len(), du.clone()), cur.slot(slot));
                        let row = dg.row(0);
                        for i in 0..n {
                            for (a, b) in dv_new.row_mut(i).iter_mut().zip(&row[..dx]) {
                                *a += b;
                            }
                        }
                        for k in 0..m {
                            for (a, b) in de.row_mut(k).iter_mut().zip(&row[dx..dx + dxe]) {
                                *a += b;
                            }
                        }
                        for (a, b) in du_in.iter_mut().zip(&row[dx + dxe..]) {
                            *a += b;
                        }
                    }
                    _ => du_in.iter_mut().zip(&du).for_each(|(a, b)| *a += b),
                }
                edge_step(layer, &lc.edge, &de, g, cur.slot(edge_slot), &mut dv_new, &mut de_in, &mut du_in);
                let d_agg = match (&layer.node_upd, upd_slot, &lc.upd) {
                    (Some(mlp), Some(slot), Some(c)) => {
                        let d = mlp_backward(mlp, c, &dv_new, cur.slot(slot));
                        add_block(&mut dv_in, &d, 0);
                        let da = mlp.input_dim() - s_in.v.cols() - s_in.u.len();
                        let mut d_agg = Mat::zeros(n, da);
                        add_block(&mut d_agg, &d, s_in.v.cols());
                        add_column_sums(&mut du_in, &d, s_in.v.cols() + da);
                        d_agg
                    }
                    _ => dv_new,
                };
                msg_step(layer, &lc.msg, &d_agg, g, s_in.u.len(), cur.slot(msg_slot), &mut dv_in, &mut de_in, &mut du_in);
            }
            GnnForm::GlobalFirst => {
                let mut dv_new = dv.clone();
                let mut du_new = du.clone();
                edge_step(layer, &lc.edge, &de, g, cur.slot(edge_slot), &mut dv_new, &mut de_in, &mut du_new);
                msg_step(layer, &lc.msg, &dv_new, g, du_new.len(), cur.slot(msg_slot), &mut dv_in, &mut de_in, &mut du_new);
                match (&layer.global_upd, glob_slot, &lc.glob) {
                    (Some(mlp), Some(slot), Some(c)) => {
                        let d = mlp_backward(mlp, c, &broadcast(m, &du_new), cur.slot(slot));
                        add_block(&mut de_in, &d, 0);
                        add_column_sums(&mut du_in, &d, s_in.e.cols());
                    }
                    _ => du_in.iter_mut().zip(&du_new).for_each(|(a, b)| *a += b),
                }
            }
        }
        dv = dv_in;
        de = de_in;
        du = du_in;
    }
    mlp_backward(&model.edge_embed, &cache.edge_embed, &de, cur.slot(1));
    mlp_backward(&model.node_embed, &cache.node_embed, &dv, cur.slot(0));
}

/// Edge update input is `[v[dst], v[src], e, u]`.
#[allow(clippy::too_many_arguments)]
fn edge_step(layer: &GnnLayer, cache: &MlpCache, de_out: &Mat, g: &GraphInput, grad: &mut [f64], dv: &mut Mat, de_in: &mut Mat, du: &mut [f64]) {
    let d = mlp_backward(&layer.edge_upd, cache, de_out, grad);
    let dx = dv.cols();
    add_rows(dv, &g.dst, &d, 0);
    add_rows(dv, &g.src, &d, dx);
    add_block(de_in, &d, 2 * dx);
    add_column_sums(du, &d, 2 * dx + de_in.cols());
}

/// Message input is `[v[dst], v[src], e, u]`; messages sum into `dst`.
#[allow(clippy::too_many_arguments)]
fn msg_step(layer: &GnnLayer, cache: &MlpCache, d_agg: &Mat, g: &GraphInput, du_len: usize, grad: &mut [f64], dv: &mut Mat, de_in: &mut Mat, du: &mut [f64]) {
    let mut d_msg = Mat::zeros(g.dst.len(), d_agg.cols());
    for (k, &t) in g.dst.iter().enumerate() {
        d_msg.row_mut(k).copy_from_slice(d_agg.row(t));
    }
    let d = mlp_backward(&layer.node_msg, cache, &d_msg, grad);
    let dx = dv.cols();
    add_rows(dv, &g.dst, &d, 0);
    add_rows(dv, &g.src, &d, dx);
    add_block(de_in, &d, 2 * dx);
    debug_assert_eq!(du.len(), du_len);
    add_column_sums(du, &d, 2 * dx + de_in.cols());
}
