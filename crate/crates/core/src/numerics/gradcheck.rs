use super::tape::{ParamStore, Tape, Var};
use crate::error::Result;

/// Worst relative error between the tape gradient of `loss` and central
/// differences with step `h`, over every scalar parameter in `store`.
///
/// The relative error of a coordinate is `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F>(store: &ParamStore, h: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let analytic = {
        let mut tape = Tape::new(store);
        let out = loss(&mut tape)?;
        tape.backward(out)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = loss(&mut tape)?;
        tape.check_finite()?;
        Ok(tape.value(out).item())
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for k in 0..store.get(id).data().len() {
            let original = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic.get(id).data()[k];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
