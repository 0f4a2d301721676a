use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N × D` per-frame feature vectors, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

/// `K` weaved rows of length `N·D/K`; row `k` is `C_1k ‖ C_2k ‖ … ‖ C_Nk`
/// where `C_nk` is the `k`-th contiguous chunk of frame `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeavedMatrix {
    n: usize,
    d: usize,
    k: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 || data.len() != n * d {
            return Err(Error::Dimension(format!(
                "feature matrix {n}×{d} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Tensor]) -> Result<Self> {
        let d = rows.first().map(Tensor::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("feature rows differ in length".into()));
        }
        Self::new(rows.len(), d, rows.iter().flat_map(|r| r.data().iter().copied()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> Vec<Tensor> {
        self.data.chunks_exact(self.d).map(|r| Tensor::vector(r.to_vec())).collect()
    }
}

impl WeavedMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row_len(&self) -> usize {
        self.n * self.d / self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let len = self.row_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn rows(&self) -> Vec<Tensor> {
        self.data
            .chunks_exact(self.row_len())
            .map(|r| Tensor::vector(r.to_vec()))
            .collect()
    }

    /// Builds a weaved matrix from `K` row tensors, e.g. gradients.
    pub fn from_rows(rows: &[Tensor], n: usize, d: usize) -> Result<Self> {
        let k = rows.len();
        check_chunking(d, k)?;
        if rows.iter().any(|r| r.len() != n * d / k) {
            return Err(Error::Dimension(format!(
                "weaved rows must have length {} for N={n}, D={d}, K={k}",
                n * d / k
            )));
        }
        Ok(Self {
            n,
            d,
            k,
            data: rows.iter().flat_map(|r| r.data().iter().copied()).collect(),
        })
    }
}

fn check_chunking(d: usize, k: usize) -> Result<()> {
    if k == 0 || !d.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "feature length D={d} is not divisible by K={k}"
        )));
    }
    Ok(())
}

/// Source `(frame, offset)` of position `col` in weaved row `row`.
pub fn weave_source(n: usize, d: usize, k: usize, row: usize, col: usize) -> (usize, usize) {
    let chunk = d / k;
    debug_assert!(row < k && col < n * chunk);
    (col / chunk, row * chunk + col % chunk)
}

/// Regroups per-frame chunks into per-chunk rows. Pure data movement.
pub fn weave(features: &FeatureMatrix, k: usize) -> Result<WeavedMatrix> {
    let (n, d) = (features.n, features.d);
    check_chunking(d, k)?;
    let chunk = d / k;
    let mut data = Vec::with_capacity(n * d);
    for row in 0..k {
        for frame in 0..n {
            data.extend_from_slice(&features.row(frame)[row * chunk..(row + 1) * chunk]);
        }
    }
    Ok(WeavedMatrix { n, d, k, data })
}

/// Inverse of [`weave`].
pub fn unweave(weaved: &WeavedMatrix, n: usize, d: usize, k: usize) -> Result<FeatureMatrix> {
    check_chunking(d, k)?;
    if (weaved.n, weaved.d, weaved.k) != (n, d, k) || weaved.data.len() != n * d {
        return Err(Error::Dimension(format!(
            "weaved matrix is N={}, D={}, K={} but N={n}, D={d}, K={k} was requested",
            weaved.n, weaved.d, weaved.k
        )));
    }
    let chunk = d / k;
    let mut data = vec![0.0; n * d];
    for (row, values) in weaved.data.chunks_exact(n * chunk).enumerate() {
        for (frame, part) in values.chunks_exact(chunk).enumerate() {
            let at = frame * d + row * chunk;
            data[at..at + chunk].copy_from_slice(part);
        }
    }
    FeatureMatrix::new(n, d, data)
}
