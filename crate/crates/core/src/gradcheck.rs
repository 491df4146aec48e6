//! Central finite-difference gradient checking.

use crate::autodiff::{Graph, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{BoundModel, TreeGPTModel};
use crate::tensor::Tensor;

/// Finite-difference step used throughout the test suite.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, params: &[(String, Tensor)]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.iter().map(|(_, t)| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let v = g.value(out).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective".into() });
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε`, element by element.
///
/// `f` receives one graph handle per entry of `params`, in order.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.iter().map(|(_, t)| g.param(t)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective".into() });
    }
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut work = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (p, (name, tensor)) in params.iter().enumerate() {
        let mut worst = (0.0f64, 0usize);
        for j in 0..tensor.numel() {
            let orig = tensor.data()[j];
            work[p].1.data_mut()[j] = orig + eps;
            let plus = evaluate(&f, &work)?;
            work[p].1.data_mut()[j] = orig - eps;
            let minus = evaluate(&f, &work)?;
            work[p].1.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[p].data()[j], numeric);
            if err > worst.0 {
                worst = (err, j);
            }
        }
        checks.push(ParamCheck {
            name: name.clone(),
            numel: tensor.numel(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 < tol,
        });
    }
    Ok(GradCheckReport { eps, tol, params: checks })
}

/// Runs [`grad_check`] on the masked training loss of `model` over `batch`,
/// one report entry per named parameter tensor.
pub fn model_grad_check(model: &TreeGPTModel, batch: &Batch, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let params: Vec<(String, Tensor)> = model.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let view = batch.view();
    let f = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let p = BoundModel::from_vars(&model.config, vars)?;
        let (loss, _) = model.loss_graph(g, &p, &view, &batch.targets, &batch.loss_mask)?;
        Ok(loss)
    };
    grad_check(f, &params, eps, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_closed_form() {
        let theta = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let f = |g: &mut Graph, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        };
        let mut g = Graph::new();
        let x = g.param(&theta).unwrap();
        let out = f(&mut g, &[x]).unwrap();
        g.backward(out).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);

        let report = grad_check(f, &[("theta".into(), theta)], DEFAULT_EPS, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn relative_error_floors_denominator_at_one() {
        assert_eq!(relative_error(1e-3, 0.0), 1e-3);
        assert_eq!(relative_error(200.0, 100.0), 0.5);
    }
}
