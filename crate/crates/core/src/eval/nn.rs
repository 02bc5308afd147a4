use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::sts::cosine;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub cosine: f64,
}

fn rank(query: &[f64], matrix: &Tensor, k: usize, skip: impl Fn(usize) -> bool) -> Result<Vec<Neighbor>> {
    if query.len() != matrix.cols() {
        return Err(Error::Input(format!("query has {} dims, matrix has {}", query.len(), matrix.cols())));
    }
    if query.iter().all(|&x| x == 0.0) {
        return Err(Error::Input("query vector has zero norm".into()));
    }
    let mut all: Vec<Neighbor> = (0..matrix.rows())
        .filter(|&i| !skip(i))
        .map(|i| Neighbor { index: i, cosine: cosine(query, matrix.row(i)).unwrap_or(0.0) })
        .collect();
    all.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.index.cmp(&b.index)));
    all.truncate(k);
    Ok(all)
}

/// The `k` rows most cosine-similar to `query`, best first, ties by index.
/// Rows bitwise identical to the query are skipped.
pub fn nearest_neighbors(query: &[f64], matrix: &Tensor, k: usize) -> Result<Vec<Neighbor>> {
    rank(query, matrix, k, |i| {
        matrix.row(i).iter().zip(query).all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

/// Neighbours of row `row`, excluding that row itself.
pub fn nearest_neighbors_of_row(matrix: &Tensor, row: usize, k: usize) -> Result<Vec<Neighbor>> {
    if row >= matrix.rows() {
        return Err(Error::Input(format!("row {row} outside {} rows", matrix.rows())));
    }
    rank(matrix.row(row), matrix, k, |i| i == row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_exclusion() {
        let m = Tensor::new(
            vec![5, 2],
            vec![1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 2.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let nn = nearest_neighbors(&[1.0, 0.0], &m, 3).unwrap();
        // rows 0 and 4 equal the query bitwise and are skipped; row 3 is parallel
        let idx: Vec<usize> = nn.iter().map(|n| n.index).collect();
        assert_eq!(idx, [3, 1, 2]);
        assert!((nn[0].cosine - 1.0).abs() < 1e-15);

        let by_row = nearest_neighbors_of_row(&m, 0, 2).unwrap();
        let idx: Vec<usize> = by_row.iter().map(|n| n.index).collect();
        assert_eq!(idx, [3, 4]);
    }

    #[test]
    fn zero_query_is_rejected() {
        let m = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(nearest_neighbors(&[0.0, 0.0], &m, 1).is_err());
    }
}
