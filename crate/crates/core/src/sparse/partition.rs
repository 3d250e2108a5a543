use crate::error::{Error, Result};

/// Coordinates owned by device `device` of node `node`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub node: usize,
    pub device: usize,
    /// Sorted global column indices.
    pub coords: Vec<usize>,
}

impl Partition {
    /// Flat worker index `node · L + device`.
    pub fn worker(&self, devices_per_node: usize) -> usize {
        self.node * devices_per_node + self.device
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy<'a> {
    /// Equal column counts; the first `n mod KL` parts get one extra column.
    Contiguous,
    /// Contiguous ranges whose boundaries equalize per-part nnz.
    BalancedByNnz(&'a [usize]),
}

/// Splits `0..n_cols` into `nodes · devices` disjoint contiguous ranges.
/// Partition `p` belongs to node `p / devices`, device `p % devices`, so each
/// node's coordinates are themselves contiguous.
pub fn partition_columns(
    n_cols: usize,
    nodes: usize,
    devices: usize,
    strategy: PartitionStrategy<'_>,
) -> Result<Vec<Partition>> {
    if nodes == 0 || devices == 0 {
        return Err(Error::invalid("nodes and devices must be at least 1"));
    }
    let parts = nodes * devices;
    if parts > n_cols {
        return Err(Error::invalid(format!(
            "{parts} workers but only {n_cols} coordinates"
        )));
    }
    let bounds = match strategy {
        PartitionStrategy::Contiguous => contiguous_bounds(n_cols, parts),
        PartitionStrategy::BalancedByNnz(nnz) => {
            if nnz.len() != n_cols {
                return Err(Error::Dimension { expected: n_cols, got: nnz.len() });
            }
            balanced_bounds(nnz, parts)
        }
    };
    Ok(bounds
        .windows(2)
        .enumerate()
        .map(|(p, w)| Partition { node: p / devices, device: p % devices, coords: (w[0]..w[1]).collect() })
        .collect())
}

fn contiguous_bounds(n: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (n / parts, n % parts);
    let mut bounds = vec![0];
    for p in 0..parts {
        bounds.push(bounds[p] + base + usize::from(p < extra));
    }
    bounds
}

fn balanced_bounds(nnz: &[usize], parts: usize) -> Vec<usize> {
    let n = nnz.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for &c in nnz {
        prefix.push(prefix.last().unwrap() + c as u64);
    }
    let total = prefix[n] as f64;
    let mut bounds = vec![0usize];
    for p in 1..parts {
        let target = total * p as f64 / parts as f64;
        let lo = bounds[p - 1] + 1;
        let hi = n - (parts - p);
        // First index whose prefix reaches the target, then pick the closer
        // of it and its predecessor.
        let mut b = prefix[lo..=hi].partition_point(|&s| (s as f64) < target) + lo;
        b = b.min(hi);
        if b > lo && (target - prefix[b - 1] as f64) < (prefix[b] as f64 - target) {
            b -= 1;
        }
        bounds.push(b);
    }
    bounds.push(n);
    bounds
}
