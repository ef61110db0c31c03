//! Strong-Wolfe line search (bracketing followed by cubic-interpolation zoom).

/// A point accepted by the line search.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub step: f64,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for WolfeParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 40,
        }
    }
}

struct Probe {
    t: f64,
    f: f64,
    dphi: f64,
    grad: Vec<f64>,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or `None`
/// when the cubic has no real minimizer.
fn cubic_minimizer(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Searches along a descent direction for a step satisfying the strong Wolfe
/// conditions
///
/// `phi(t) <= phi(0) + c1 t phi'(0)` and `|phi'(t)| <= c2 |phi'(0)|`.
///
/// `eval(t)` returns the objective value, the full gradient and the
/// directional derivative at `x + t d`. The sufficient-decrease test allows a
/// few ulps of slack in `phi(0)` so that the search does not fail on
/// round-off once the iterate is already at the optimum to machine precision.
pub fn strong_wolfe<F>(
    mut eval: F,
    f0: f64,
    dphi0: f64,
    t_init: f64,
    params: WolfeParams,
) -> Result<LineSearchStep, String>
where
    F: FnMut(f64) -> (f64, Vec<f64>, f64),
{
    if !(dphi0 < 0.0) {
        return Err(format!("not a descent direction (phi'(0) = {dphi0:e})"));
    }
    let slack = 10.0 * f64::EPSILON * f0.abs();
    let armijo = |t: f64, f: f64| f <= f0 + params.c1 * t * dphi0 + slack;
    let curvature = |dphi: f64| dphi.abs() <= -params.c2 * dphi0;

    let mut evals = 0usize;
    let mut probe = |t: f64, evals: &mut usize| {
        *evals += 1;
        let (f, grad, dphi) = eval(t);
        Probe { t, f, dphi, grad }
    };
    let accept = |p: Probe, evals: usize| LineSearchStep {
        step: p.t,
        loss: p.f,
        grad: p.grad,
        evaluations: evals,
    };

    let mut prev = Probe {
        t: 0.0,
        f: f0,
        dphi: dphi0,
        grad: Vec::new(),
    };
    let mut t = t_init;
    let (mut lo, mut hi) = loop {
        if evals >= params.max_evals {
            return Err("bracketing phase exhausted its evaluation budget".into());
        }
        let cur = probe(t, &mut evals);
        if !cur.f.is_finite() {
            // step overshot into overflow; shrink towards the last good point
            t = prev.t + 0.5 * (t - prev.t);
            continue;
        }
        if !armijo(cur.t, cur.f) || (evals > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(cur.dphi) {
            return Ok(accept(cur, evals));
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        t = cur.t * 2.0;
        prev = cur;
    };

    // lo satisfies sufficient decrease and has the lowest value seen so far.
    loop {
        let width = (hi.t - lo.t).abs();
        if evals >= params.max_evals || width <= f64::EPSILON * lo.t.abs().max(1e-300) {
            return if lo.t > 0.0 && lo.f < f0 {
                Ok(accept(lo, evals))
            } else {
                Err(format!(
                    "zoom failed to find an acceptable step (bracket [{:e}, {:e}])",
                    lo.t.min(hi.t),
                    lo.t.max(hi.t)
                ))
            };
        }
        let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
        let margin = 0.1 * (b - a);
        let t = match cubic_minimizer(lo.t, lo.f, lo.dphi, hi.t, hi.f, hi.dphi) {
            Some(t) if t > a + margin && t < b - margin => t,
            _ => 0.5 * (a + b),
        };
        let cur = probe(t, &mut evals);
        if !armijo(cur.t, cur.f) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(cur.dphi) {
                return Ok(accept(cur, evals));
            }
            if cur.dphi * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}
