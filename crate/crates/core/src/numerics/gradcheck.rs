use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Outcome for one coordinate of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords.iter().all(|c| c.rel_err <= self.tol)
    }

    pub fn failures(&self) -> Vec<&CoordCheck> {
        self.coords.iter().filter(|c| c.rel_err > self.tol).collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut x = x.clone();
    x.set_requires_grad(false);
    let xv = g.leaf(&x);
    let out = f(&mut g, xv)?;
    let v = g.scalar(out)?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    Ok(v as f64)
}

/// Checks the reverse-mode gradient of `f` at `x` against central differences
/// `(f(x + h·eᵢ) - f(x - h·eᵢ)) / 2h`, coordinate by coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f32, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut tracked = x.clone();
    tracked.set_requires_grad(true);
    let xv = g.leaf(&tracked);
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xv)
        .map_or_else(|| vec![0.0; x.numel()], <[f32]>::to_vec);
    compare_with_finite_diff(f, x, &analytic, h, tol)
}

/// Like [`finite_diff_check`] but with a caller-supplied analytic gradient.
pub fn compare_with_finite_diff<F>(
    f: F,
    x: &Tensor,
    analytic: &[f32],
    h: f32,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite_diff_check: step must be positive"));
    }
    if analytic.len() != x.numel() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            lhs: x.shape().to_vec(),
            rhs: vec![analytic.len()],
        });
    }
    let mut coords = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        // Divide by the step actually taken after f32 rounding.
        let step = (orig + h) as f64 - (orig - h) as f64;
        let numeric = (plus - minus) / step;
        let a = analytic[i] as f64;
        let rel_err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        coords.push(CoordCheck {
            index: i,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    Ok(GradCheckReport { tol, coords })
}
