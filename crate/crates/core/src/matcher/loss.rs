use crate::error::{Error, Result};
use crate::tensorcore::{Tape, Tensor, Var};

/// Negated empirical information distance. `d_xy`, `d_yx` are `(P x 1)`
/// score columns; matched pairs contribute `ln d`, unmatched `ln(1 - d)`,
/// averaged over both directions and all pairs. Scores are clamped to
/// `[clamp, 1 - clamp]` first.
pub fn loss_from_scores(tape: &mut Tape, d_xy: Var, d_yx: Var, labels: &[bool], clamp: f64) -> Result<Var> {
    let p = labels.len();
    if p == 0 {
        return Err(Error::Empty("loss batch"));
    }
    if tape.value(d_xy).len() != p || tape.value(d_yx).len() != p {
        return Err(Error::shape("loss", format!("{p} labels for {} scores", tape.value(d_xy).len())));
    }
    let pos = tape.constant(Tensor::column(labels.iter().map(|&m| f64::from(u8::from(m))).collect()));
    let neg = tape.constant(Tensor::column(labels.iter().map(|&m| f64::from(u8::from(!m))).collect()));
    let mut terms = Vec::with_capacity(4);
    for d in [d_xy, d_yx] {
        let c = tape.clamp(d, clamp, 1.0 - clamp);
        let log_d = tape.log(c)?;
        let one_minus = tape.affine(c, -1.0, 1.0);
        let log_1md = tape.log(one_minus)?;
        terms.push(tape.mul(pos, log_d)?);
        terms.push(tape.mul(neg, log_1md)?);
    }
    let total = tape.add_n(&terms)?;
    let s = tape.sum(total);
    Ok(tape.scale(s, -0.5 / p as f64))
}

/// [`loss_from_scores`] on plain values `(d_xy, d_yx, matched)`.
pub fn loss_value(scores: &[(f64, f64, bool)], clamp: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let dxy = tape.constant(Tensor::column(scores.iter().map(|s| s.0).collect()));
    let dyx = tape.constant(Tensor::column(scores.iter().map(|s| s.1).collect()));
    let labels: Vec<bool> = scores.iter().map(|s| s.2).collect();
    if labels.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let l = loss_from_scores(&mut tape, dxy, dyx, &labels, clamp)?;
    Ok(tape.scalar(l))
}
