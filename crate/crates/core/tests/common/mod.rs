//! Plain-loop transcription of the encoder/decoder pipeline, shared by the
//! fidelity tests, and a scalar Adam reference.

#![allow(dead_code)]

use treegpt::autodiff::sigmoid;
use treegpt::model::TreeGPTModel;
use treegpt::training::AdamWConfig;
use treegpt::treeffn::TreeFFNWeights;
use treegpt::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

/// `x · w + b` for one row, accumulating from 0.0 in input order.
fn linear(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|j| {
            let mut acc = 0.0;
            for (k, xv) in x.iter().enumerate() {
                acc += xv * w[k][j];
            }
            acc + b[j]
        })
        .collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

struct Cell {
    edge: Vec<f64>,
    proj: Option<(Mat, Vec<f64>)>,
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
    gate: Option<(Mat, Vec<f64>)>,
}

impl Cell {
    fn from(w: &TreeFFNWeights) -> Cell {
        let pair =
            |w: &Option<Tensor>, b: &Option<Tensor>| w.as_ref().map(|w| (mat(w), b.as_ref().unwrap().data().to_vec()));
        Cell {
            edge: w.edge_embedding.data().to_vec(),
            proj: pair(&w.edge_proj_w, &w.edge_proj_b),
            w1: mat(&w.msg_w1),
            b1: w.msg_b1.data().to_vec(),
            w2: mat(&w.msg_w2),
            b2: w.msg_b2.data().to_vec(),
            gate: pair(&w.gate_w, &w.gate_b),
        }
    }
}

/// One TreeFFN call: `t` synchronous rounds over `edges`, then the residual
/// choice.
fn treeffn(h0: &Mat, edges: &[(usize, usize)], cell: &Cell, t: usize, residual: bool) -> Mat {
    let d = h0[0].len();
    let e = match &cell.proj {
        Some((w, b)) => linear(&cell.edge, w, b),
        None => cell.edge.clone(),
    };
    let mut h = h0.clone();
    let mut delta = vec![vec![0.0; d]; h.len()];
    for _ in 0..t {
        let mut updates = Vec::new();
        for &(j, i) in edges {
            // message from source j to target i
            let hidden: Vec<f64> = linear(&cat(&[&h[j], &h[i], &e]), &cell.w1, &cell.b1)
                .into_iter()
                .map(|z| if z > 0.0 { z } else { 0.0 })
                .collect();
            let m = linear(&hidden, &cell.w2, &cell.b2);
            let upd: Vec<f64> = match &cell.gate {
                Some((gw, gb)) => {
                    let g = linear(&cat(&[&h[i], &h[j]]), gw, gb);
                    g.iter().zip(&m).map(|(&gz, &mv)| sigmoid(gz) * mv).collect()
                }
                None => m,
            };
            updates.push((i, upd));
        }
        for (i, upd) in updates {
            for k in 0..d {
                h[i][k] += upd[k];
                delta[i][k] += upd[k];
            }
        }
    }
    if residual {
        h0.iter().zip(&delta).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
    } else {
        delta
    }
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn transcription(model: &TreeGPTModel, tokens: &[usize]) -> Mat {
    let cfg = &model.config;
    let n = tokens.len();
    let tok = mat(&model.token_embedding);
    let mut h: Mat = tokens.iter().map(|&t| tok[t].clone()).collect();
    if let Some(pos) = &model.position_embedding {
        let pos = mat(pos);
        h = h.iter().enumerate().map(|(i, r)| r.iter().zip(&pos[i]).map(|(a, b)| a + b).collect()).collect();
    }
    let e_enc: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    let e_dec: Vec<(usize, usize)> = (1..n).rev().map(|i| (i, i - 1)).collect();
    let (t, res) = (cfg.treeffn.iterations, cfg.treeffn.use_residual);
    for layer in &model.layers {
        let h_enc = treeffn(&h, &e_enc, &Cell::from(&layer.encoder), t, res);
        h = add(&h, &h_enc);
        let h_dec = treeffn(&h, &e_dec, &Cell::from(&layer.decoder), t, res);
        h = add(&h, &h_dec);
    }
    let head = mat(&model.head_w);
    h.iter().map(|r| linear(r, &head, model.head_b.data())).collect()
}

/// Textbook Adam with decoupled decay, one scalar at a time.
#[derive(Default)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, theta: f64, g: f64, lr: f64, h: &AdamWConfig, decay: bool) -> f64 {
        self.t += 1;
        self.m = h.beta1 * self.m + (1.0 - h.beta1) * g;
        self.v = h.beta2 * self.v + (1.0 - h.beta2) * g * g;
        let m_hat = self.m / (1.0 - h.beta1.powf(self.t as f64));
        let v_hat = self.v / (1.0 - h.beta2.powf(self.t as f64));
        let wd = if decay { h.weight_decay } else { 0.0 };
        theta - lr * m_hat / (v_hat.sqrt() + h.eps) - lr * wd * theta
    }
}
