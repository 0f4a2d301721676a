use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Arithmetic mean of per-frame class probability vectors.
pub fn mean_vote(rows: &[Tensor]) -> Result<Tensor> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Dimension("mean vote over zero rows".into()))?;
    let c = first.len();
    let mut acc = vec![0.0; c];
    for row in rows {
        if row.len() != c {
            return Err(Error::Dimension(format!(
                "probability rows of length {c} and {} cannot be averaged",
                row.len()
            )));
        }
        acc.iter_mut().zip(row.data()).for_each(|(a, p)| *a += p);
    }
    let n = rows.len() as f64;
    Ok(Tensor::vector(acc.into_iter().map(|a| a / n).collect()))
}
