//! Masked-LM loss and its exact gradient by reverse-mode differentiation.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use super::{gelu_grad, Activations, Batch, BlockCache, BlockSlots, LnCache, Model};

/// One training sequence: the (partially masked) input and the original
/// tokens expected at the masked positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

struct Grad<'a> {
    model: &'a Model,
    buf: Vec<f64>,
}

impl Grad<'_> {
    fn add(&mut self, idx: usize, m: &Array2<f64>) {
        let range = self.model.layout.range(idx);
        for (g, v) in self.buf[range].iter_mut().zip(m.iter()) {
            *g += v;
        }
    }

    fn add_vec(&mut self, idx: usize, v: &Array1<f64>) {
        let range = self.model.layout.range(idx);
        for (g, x) in self.buf[range].iter_mut().zip(v.iter()) {
            *g += x;
        }
    }

    fn add_row(&mut self, idx: usize, row: usize, v: ArrayView1<'_, f64>) {
        let e = &self.model.layout.entries[idx];
        let start = e.offset + row * e.cols;
        for (g, x) in self.buf[start..start + e.cols].iter_mut().zip(v.iter()) {
            *g += x;
        }
    }
}

impl Model {
    /// Mean cross-entropy over all masked positions of the batch.
    pub fn mlm_loss(&self, batch: &[MaskedSequence]) -> f64 {
        self.loss_and_grad(batch, None, false).0
    }

    /// Mean cross-entropy and its gradient with respect to
    /// [`Model::params`].
    pub fn mlm_loss_and_grad(&self, batch: &[MaskedSequence]) -> (f64, Vec<f64>) {
        let (loss, grad) = self.loss_and_grad(batch, None, true);
        (loss, grad.expect("gradient requested"))
    }

    pub(crate) fn loss_and_grad(
        &self,
        batch: &[MaskedSequence],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
        want_grad: bool,
    ) -> (f64, Option<Vec<f64>>) {
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(batch.len());
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for seq in batch {
            let start = tokens.len();
            spans.push((start, seq.input.len()));
            tokens.extend_from_slice(&seq.input);
            for &(p, t) in &seq.targets {
                rows.push(start + p);
                labels.push(t as usize);
            }
        }
        if rows.is_empty() {
            return (0.0, want_grad.then(|| vec![0.0; self.layout.total]));
        }
        let packed = Batch {
            spans,
            interventions: vec![&[]; batch.len()],
        };
        let acts = self.run(self.embed(&tokens), &packed, dropout, false);
        let logits = self.logits_rows(&acts.output, Some(&rows));

        let m = rows.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = logits;
        for (mut row, &label) in dlogits.rows_mut().into_iter().zip(&labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            loss += z.ln() - (row[label].ln());
            row /= z;
            row[label] -= 1.0;
            row /= m;
        }
        loss /= m;
        if !want_grad {
            return (loss, None);
        }
        let grad = self.backward(&acts, &packed, &tokens, &rows, &dlogits);
        (loss, Some(grad))
    }

    fn backward(
        &self,
        acts: &Activations,
        batch: &Batch<'_>,
        tokens: &[u32],
        rows: &[usize],
        dlogits: &Array2<f64>,
    ) -> Vec<f64> {
        let lay = &self.layout;
        let mut g = Grad {
            model: self,
            buf: vec![0.0; lay.total],
        };

        let x_rows = acts.output.select(Axis(0), rows);
        g.add(lay.out_w, &x_rows.t().dot(dlogits));
        g.add_vec(lay.out_b, &dlogits.sum_axis(Axis(0)));
        let mut dx = Array2::zeros(acts.output.dim());
        let dx_rows = dlogits.dot(&self.mat(lay.out_w).t());
        for (i, &r) in rows.iter().enumerate() {
            let mut row = dx.row_mut(r);
            row += &dx_rows.row(i);
        }

        for (slots, cache) in lay.blocks.iter().zip(&acts.blocks).rev() {
            dx = self.block_backward(dx, slots, cache, batch, &mut g);
        }

        let du0 = ln_backward(&dx, &acts.ln0, self.vector(lay.emb_ln_g), &mut g, lay.emb_ln_g, lay.emb_ln_b);
        for &(start, len) in &batch.spans {
            for p in 0..len {
                g.add_row(lay.pos_emb, p, du0.row(start + p));
            }
        }
        for (i, &t) in tokens.iter().enumerate() {
            g.add_row(lay.tok_emb, t as usize, du0.row(i));
        }
        g.buf
    }

    fn block_backward(
        &self,
        dout: Array2<f64>,
        sl: &BlockSlots,
        c: &BlockCache,
        batch: &Batch<'_>,
        g: &mut Grad<'_>,
    ) -> Array2<f64> {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let du2 = ln_backward(&dout, &c.ln2, self.vector(sl.ln2_g), g, sl.ln2_g, sl.ln2_b);
        let mut dy = du2.clone();
        g.add(sl.w2, &c.g.t().dot(&du2));
        g.add_vec(sl.b2, &du2.sum_axis(Axis(0)));
        let mut dh1 = du2.dot(&self.mat(sl.w2).t());
        dh1.zip_mut_with(&c.h1, |d, &h| *d *= gelu_grad(h));
        g.add(sl.w1, &c.y.t().dot(&dh1));
        g.add_vec(sl.b1, &dh1.sum_axis(Axis(0)));
        dy += &dh1.dot(&self.mat(sl.w1).t());

        let du1 = ln_backward(&dy, &c.ln1, self.vector(sl.ln1_g), g, sl.ln1_g, sl.ln1_b);
        let mut dx = du1.clone();
        g.add(sl.wo, &c.ctx.t().dot(&du1));
        g.add_vec(sl.bo, &du1.sum_axis(Axis(0)));
        let dctx = du1.dot(&self.mat(sl.wo).t());

        let mut dq = Array2::zeros(dctx.dim());
        let mut dk = Array2::zeros(dctx.dim());
        let mut dv = Array2::zeros(dctx.dim());
        for (si, &(start, len)) in batch.spans.iter().enumerate() {
            let rows = start..start + len;
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let dctx_h = dctx.slice(s![rows.clone(), cols.clone()]);
                let qh = c.q.slice(s![rows.clone(), cols.clone()]);
                let kh = c.k.slice(s![rows.clone(), cols.clone()]);
                let vh = c.v.slice(s![rows.clone(), cols.clone()]);
                let w = &c.weights[si][h];
                let p = &c.probs[si][h];

                dv.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&w.t().dot(&dctx_h));
                let mut dp = dctx_h.dot(&vh.t());
                if let Some(f) = &c.factors[si][h] {
                    dp *= f;
                }
                // softmax backward, row by row
                let mut ds = dp;
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    drow.zip_mut_with(&prow, |d, &pv| *d = pv * (*d - dot) * scale);
                }
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&ds.t().dot(&qh));
            }
        }
        for (d, w, b) in [(&dq, sl.wq, sl.bq), (&dk, sl.wk, sl.bk), (&dv, sl.wv, sl.bv)] {
            g.add(w, &c.x_in.t().dot(d));
            g.add_vec(b, &d.sum_axis(Axis(0)));
            dx += &d.dot(&self.mat(w).t());
        }
        dx
    }
}

fn ln_backward(
    dout: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<'_, f64>,
    g: &mut Grad<'_>,
    gamma_idx: usize,
    beta_idx: usize,
) -> Array2<f64> {
    g.add_vec(gamma_idx, &(dout * &cache.xhat).sum_axis(Axis(0)));
    g.add_vec(beta_idx, &dout.sum_axis(Axis(0)));
    let d = dout.ncols() as f64;
    let mut du = dout * &gamma;
    for ((mut row, xhat), &inv) in du
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean = row.sum() / d;
        let mean_x: f64 = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xhat, |v, &xh| *v = inv * (*v - mean - xh * mean_x));
    }
    du
}
