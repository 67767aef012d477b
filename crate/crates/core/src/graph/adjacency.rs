use super::SkeletonTopology;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Degree regularizer for partition matrices; keeps empty rows finite.
pub const PARTITION_EPSILON: f64 = 0.001;

/// Neighbourhood subsets of a joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    /// The joint itself.
    Root,
    /// Neighbours strictly closer to the centre joint.
    Centripetal,
    /// All remaining neighbours, including equidistant ones.
    Centrifugal,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Root, Partition::Centripetal, Partition::Centrifugal];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Symmetric binary adjacency with zero diagonal.
pub fn build_adjacency<S: Scalar>(topology: &SkeletonTopology) -> Tensor<S> {
    let n = topology.num_joints();
    let mut a = Tensor::zeros(&[n, n]);
    for &(i, j) in topology.edges() {
        a.set(&[i, j], S::one());
        a.set(&[j, i], S::one());
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
pub fn normalize_self<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let n = square_side(a)?;
    let mut tilde = a.clone();
    for i in 0..n {
        tilde.set(&[i, i], tilde.at(&[i, i]) + S::one());
    }
    Ok(symmetric_normalize(&tilde, S::zero()))
}

/// `D_p^{-1/2} A_p D_p^{-1/2}` with `D_p(ii) = Σ_j A_p(ij) + eps`.
pub fn normalize_partition<S: Scalar>(a_p: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
    square_side(a_p)?;
    Ok(symmetric_normalize(a_p, eps))
}

fn square_side<S: Scalar>(a: &Tensor<S>) -> Result<usize> {
    match a.shape() {
        &[r, c] if r == c => Ok(r),
        s => Err(Error::Shape(format!("expected a square matrix, got {s:?}"))),
    }
}

fn symmetric_normalize<S: Scalar>(a: &Tensor<S>, eps: S) -> Tensor<S> {
    let n = a.shape()[0];
    let inv_sqrt: Vec<S> = (0..n)
        .map(|i| {
            let d: S = a.data()[i * n..(i + 1) * n].iter().copied().sum::<S>() + eps;
            if d > S::zero() {
                S::one() / d.sqrt()
            } else {
                S::zero()
            }
        })
        .collect();
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        inv_sqrt[i] * a.data()[k] * inv_sqrt[j]
    })
}

/// The three partition matrices and their normalized forms.
///
/// Entry `(i, j)` of a partition matrix is nonzero when joint `j` belongs
/// to that subset of joint `i`'s neighbourhood.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedAdjacency<S> {
    raw: [Tensor<S>; 3],
    normalized: [Tensor<S>; 3],
    epsilon: S,
}

impl<S: Scalar> PartitionedAdjacency<S> {
    pub fn from_topology(topology: &SkeletonTopology) -> Result<Self> {
        let raw = partition(topology)?;
        Ok(Self::from_raw(raw, S::lit(PARTITION_EPSILON)))
    }

    /// Normalizes externally built partition matrices.
    pub fn from_raw(raw: [Tensor<S>; 3], epsilon: S) -> Self {
        let normalized = raw
            .clone()
            .map(|a| normalize_partition(&a, epsilon).expect("partition matrices are square"));
        Self {
            raw,
            normalized,
            epsilon,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.raw[0].shape()[0]
    }

    pub fn raw(&self, p: Partition) -> &Tensor<S> {
        &self.raw[p.index()]
    }

    pub fn normalized(&self, p: Partition) -> &Tensor<S> {
        &self.normalized[p.index()]
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    /// Σ_p A_p, which equals A + I for any valid topology.
    pub fn raw_sum(&self) -> Tensor<S> {
        let mut s = self.raw[0].clone();
        s.add_assign(&self.raw[1]);
        s.add_assign(&self.raw[2]);
        s
    }
}

/// Splits each joint's closed neighbourhood into root, centripetal, and
/// centrifugal subsets by hop distance to the centre joint.
pub fn partition<S: Scalar>(topology: &SkeletonTopology) -> Result<[Tensor<S>; 3]> {
    let n = topology.num_joints();
    let dist = topology.hop_distances();
    if dist.contains(&usize::MAX) {
        return Err(Error::Topology(vec![
            "graph is disconnected; hop distances are undefined".into(),
        ]));
    }
    let mut out = [Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n])];
    for i in 0..n {
        out[Partition::Root.index()].set(&[i, i], S::one());
    }
    for &(a, b) in topology.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let p = if dist[j] < dist[i] {
                Partition::Centripetal
            } else {
                Partition::Centrifugal
            };
            out[p.index()].set(&[i, j], S::one());
        }
    }
    Ok(out)
}
