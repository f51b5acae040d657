use crate::error::{Error, Result};

/// Posterior co-clustering probabilities S_ij, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Builds a matrix from row-major values, checking shape, range and symmetry.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "similarity matrix entries".into(),
                expected: n * n,
                found: values.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) || v != values[j * n + i] {
                    return Err(Error::InvalidInput(format!(
                        "similarity entry ({i}, {j}) = {v} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    /// Dissimilarity D = 1 − S.
    pub fn dissimilarity(&self) -> Vec<f64> {
        self.values.iter().map(|s| 1.0 - s).collect()
    }
}

/// Co-clustering frequencies over the allocation vectors of a trace.
pub fn similarity<'a>(allocations: impl IntoIterator<Item = &'a [usize]>) -> Result<SimilarityMatrix> {
    let mut counts: Vec<u32> = vec![];
    let mut n = 0;
    let mut iterations = 0u32;
    let mut blocks: Vec<Vec<usize>> = vec![];
    for z in allocations {
        if iterations == 0 {
            n = z.len();
            counts = vec![0; n * n];
        } else if z.len() != n {
            return Err(Error::DimensionMismatch {
                what: "allocation vector length".into(),
                expected: n,
                found: z.len(),
            });
        }
        iterations += 1;
        blocks.iter_mut().for_each(Vec::clear);
        for (i, &c) in z.iter().enumerate() {
            if c >= blocks.len() {
                blocks.resize_with(c + 1, Vec::new);
            }
            blocks[c].push(i);
        }
        for block in &blocks {
            for (a, &i) in block.iter().enumerate() {
                let row = &mut counts[i * n..(i + 1) * n];
                for &j in &block[a..] {
                    row[j] += 1;
                }
            }
        }
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("similarity needs a non-empty trace".into()));
    }
    let t = f64::from(iterations);
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = f64::from(counts[i * n + j]) / t;
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, values })
}
