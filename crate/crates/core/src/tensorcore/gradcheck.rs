use super::tape::{ParamSet, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest step tried when the one-sided differences disagree.
pub const MIN_FD_STEP: f64 = 1e-8;

/// One-sided differences further apart than this (relative) mean a kink
/// or strong curvature within the step; the central difference then errs
/// by up to half of it, so the step shrinks.
/// Typical kinks are ReLU and clamp boundaries.
const KINK_TOL: f64 = 2e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(param id, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    /// Coordinates left out because a kink lies within [`MIN_FD_STEP`].
    pub kinks_skipped: Vec<(usize, usize)>,
    /// Reverse-mode gradients for every parameter.
    pub analytic: Vec<Tensor>,
}

fn evaluate<F>(f: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::shape("grad_check", "closure must return a scalar"));
    }
    let v = value.scalar_value();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("grad_check closure returned {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients with central differences on every
/// coordinate of `point`.
pub fn grad_check<F>(f: F, point: &ParamSet) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = point
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(id, t)| (0..t.len()).map(move |k| (id, k)))
        .collect();
    grad_check_coords(f, point, &coords)
}

/// As [`grad_check`], restricted to the listed `(param id, flat index)` coordinates.
pub fn grad_check_coords<F>(f: F, point: &ParamSet, coords: &[(usize, usize)]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, point)?;
    let v0 = tape.value(out).scalar_value();
    if !v0.is_finite() {
        return Err(Error::NonFinite(format!("grad_check closure returned {v0}")));
    }
    let analytic = tape.backward(out)?.param_grads(point);

    let mut probe = point.clone();
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut kinks_skipped = Vec::new();
    for &(id, k) in coords {
        let orig = point.get(id).data()[k];
        let mut step = FD_STEP;
        let fd = loop {
            probe.get_mut(id).data_mut()[k] = orig + step;
            let up = evaluate(&f, &probe)?;
            probe.get_mut(id).data_mut()[k] = orig - step;
            let down = evaluate(&f, &probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let (fwd, bwd) = ((up - v0) / step, (v0 - down) / step);
            let central = (up - down) / (2.0 * step);
            if (fwd - bwd).abs() <= KINK_TOL * 1f64.max(central.abs()) {
                break Some(central);
            }
            if step <= MIN_FD_STEP {
                break None;
            }
            step = (step / 10.0).max(MIN_FD_STEP);
        };
        let Some(fd) = fd else {
            kinks_skipped.push((id, k));
            continue;
        };
        let ad = analytic[id].data()[k];
        let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
        if rel > max_rel_error || worst.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst = Some((id, k));
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        coords_checked: coords.len() - kinks_skipped.len(),
        kinks_skipped,
        analytic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let mut p = ParamSet::new();
        let w = p.add("w", Tensor::scalar(3.0));
        let r = grad_check(
            |tape, params| {
                let v = tape.param(params, w);
                tape.mul(v, v)
            },
            &p,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.analytic[0].scalar_value(), 6.0);
    }

    #[test]
    fn independent_coordinate_is_exact_zero() {
        let mut p = ParamSet::new();
        let w = p.add("w", Tensor::row(vec![0.4, -1.1]));
        let _idle = p.add("idle", Tensor::scalar(2.0));
        let r = grad_check(
            |tape, params| {
                let v = tape.param(params, w);
                let s = tape.sigmoid(v);
                Ok(tape.sum(s))
            },
            &p,
        )
        .unwrap();
        assert_eq!(r.analytic[1].scalar_value(), 0.0);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn kink_at_the_point_is_skipped() {
        let mut p = ParamSet::new();
        let w = p.add("w", Tensor::row(vec![0.0, 2e-6, 0.7]));
        let r = grad_check(
            |tape, params| {
                let v = tape.param(params, w);
                let a = tape.relu(v);
                Ok(tape.sum(a))
            },
            &p,
        )
        .unwrap();
        // 0 is a kink; 2e-6 is within the first step but clear of the smallest
        assert_eq!(r.kinks_skipped, vec![(0, 0)]);
        assert_eq!(r.coords_checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_not_mistaken_for_a_kink() {
        let mut p = ParamSet::new();
        let w = p.add("w", Tensor::scalar(0.3));
        // the tape computes 2x, the values say x^2 + 1 (from the constant)
        let r = grad_check(
            |tape, params| {
                let v = tape.param(params, w);
                let x = params.get(w).scalar_value();
                let c = tape.constant(Tensor::scalar(x * x - 2.0 * x));
                let twice = tape.scale(v, 2.0);
                tape.add(twice, c)
            },
            &p,
        )
        .unwrap();
        assert!(r.kinks_skipped.is_empty());
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_closure_is_diagnosed() {
        let mut p = ParamSet::new();
        let w = p.add("w", Tensor::scalar(0.0));
        let err = grad_check(
            |tape, params| {
                let v = tape.param(params, w);
                let z = tape.constant(Tensor::scalar(0.0));
                tape.div(v, z)
            },
            &p,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
