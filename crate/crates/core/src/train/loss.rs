use crate::error::{Error, Result};
use crate::model::{Scalar, Tensor};

fn check(logits_rows: usize, targets: &[u32], mask: &[bool]) -> Result<()> {
    if targets.len() != logits_rows || mask.len() != logits_rows {
        return Err(Error::Shape(format!(
            "{logits_rows} logit rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Negative log-softmax of `row` at `target`, in double precision.
pub(crate) fn nll<T: Scalar>(row: &[T], target: usize) -> f64 {
    let m = row
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
    let lse = m + row
        .iter()
        .map(|&x| (x.as_f64() - m).exp())
        .sum::<f64>()
        .ln();
    lse - row[target].as_f64()
}

/// Mean cross-entropy of `targets` over the positions where `mask` is set.
pub fn lm_loss<T: Scalar>(logits: &Tensor<T>, targets: &[u32], mask: &[bool]) -> Result<f64> {
    let (sum, count, _) = loss_and_grad(logits, targets, mask, None)?;
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(sum / count as f64)
}

/// Summed loss, number of counted positions and, when `normalizer` is given,
/// the gradient of `sum / normalizer` with respect to the logits. Masked
/// rows get an exactly zero gradient.
pub fn loss_and_grad<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[u32],
    mask: &[bool],
    normalizer: Option<f64>,
) -> Result<(f64, usize, Option<Vec<T>>)> {
    let v = logits.cols();
    let rows = logits.len() / v.max(1);
    check(rows, targets, mask)?;
    let mut grad = normalizer.map(|_| vec![T::zero(); logits.len()]);
    let mut sum = 0.0;
    let mut count = 0;
    for (i, (&t, &on)) in targets.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        let t = t as usize;
        if t >= v {
            return Err(Error::TokenOutOfRange {
                id: t as u32,
                vocab: v,
            });
        }
        let row = logits.row(i);
        sum += nll(row, t);
        count += 1;
        if let (Some(g), Some(n)) = (grad.as_mut(), normalizer) {
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
            let z: f64 = row.iter().map(|&x| (x.as_f64() - m).exp()).sum();
            let out = &mut g[i * v..(i + 1) * v];
            for (j, (o, &x)) in out.iter_mut().zip(row).enumerate() {
                let p = (x.as_f64() - m).exp() / z;
                let y = if j == t { 1.0 } else { 0.0 };
                *o = T::lit((p - y) / n);
            }
        }
    }
    Ok((sum, count, grad))
}
