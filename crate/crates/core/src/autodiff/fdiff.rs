//! Central finite differences over a whole parameter store.

use super::store::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Numerically differentiate `f` with central differences of step `h`
/// at the store's current values. `f` must be a pure function of the
/// store. O(2·N) evaluations — strictly a testing tool.
pub fn finite_diff_grad<F>(store: &ParamStore, h: f64, mut f: F) -> Result<GradMap>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(CoreError::Contract(format!("finite_diff_grad: bad step {h}")));
    }
    let mut work = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut out = GradMap::new();
    for name in &names {
        let base = store.value(name)?.clone();
        let mut grad = Tensor::zeros(base.shape());
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[i] += h;
            work.set_value(name, plus)?;
            let fp = f(&work)?;
            let mut minus = base.clone();
            minus.data_mut()[i] -= h;
            work.set_value(name, minus)?;
            let fm = f(&work)?;
            if !(fp.is_finite() && fm.is_finite()) {
                return Err(CoreError::NonFinite(format!(
                    "finite_diff_grad at `{name}`[{i}]"
                )));
            }
            grad.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        work.set_value(name, base)?;
        out.insert(name.clone(), grad);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_recovered() {
        // f = sum(p²) + 3·q  →  df/dp_i = 2·p_i, df/dq = 3.
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![1.5, -2.0])).unwrap();
        s.insert("q", Tensor::scalar(0.7)).unwrap();
        let g = finite_diff_grad(&s, 1e-5, |st| {
            let p = st.value("p")?;
            let q = st.value("q")?;
            Ok(p.data().iter().map(|v| v * v).sum::<f64>() + 3.0 * q.item())
        })
        .unwrap();
        let gp = g.get("p").unwrap();
        assert!((gp.data()[0] - 3.0).abs() < 1e-8);
        assert!((gp.data()[1] + 4.0).abs() < 1e-8);
        assert!((g.get("q").unwrap().item() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_step() {
        let s = ParamStore::new();
        assert!(finite_diff_grad(&s, 0.0, |_| Ok(0.0)).is_err());
        assert!(finite_diff_grad(&s, f64::NAN, |_| Ok(0.0)).is_err());
    }
}
