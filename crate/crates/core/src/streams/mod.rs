//! Input preprocessing: frame repetition, bone and motion streams, and
//! joint-bone channel fusion.

mod format;

pub use format::{
    load_manifest, load_split, read_sequence, write_sequence, DatasetManifest, ManifestEntry, SkeletonSequence, Split,
    MANIFEST_FILE, SEQUENCE_MAGIC, SEQUENCE_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::SkeletonTopology;
use crate::tensor::Tensor;
use crate::Scalar;

fn dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, t, n] => Ok((c, t, n)),
        s => Err(shape_err!("expected a (C,T,N) sequence, got {s:?}")),
    }
}

/// Tiles the sequence cyclically along time and truncates at `t_target`.
pub fn pad_repeat<S: Scalar>(raw: &Tensor<S>, t_target: usize) -> Result<Tensor<S>> {
    let (c, t_raw, n) = dims(raw)?;
    if t_raw == 0 || t_target == 0 {
        return Err(Error::Shape("cannot repeat an empty sequence".into()));
    }
    let d = raw.data();
    Ok(Tensor::from_fn(&[c, t_target, n], |k| {
        let j = k % n;
        let t = (k / n) % t_target;
        let ci = k / (n * t_target);
        d[(ci * t_raw + t % t_raw) * n + j]
    }))
}

/// Bone vectors `x[:, t, target] − x[:, t, source]`; the centre joint,
/// which no bone points to, stays zero.
pub fn bones<S: Scalar>(joints: &Tensor<S>, topology: &SkeletonTopology) -> Result<Tensor<S>> {
    let (c, t, n) = dims(joints)?;
    if n != topology.num_joints() {
        return Err(shape_err!("{n} joints in data, topology has {}", topology.num_joints()));
    }
    let d = joints.data();
    let mut out = Tensor::zeros(&[c, t, n]);
    let o = out.data_mut();
    for &(s, u) in topology.bones() {
        for ci in 0..c {
            for ti in 0..t {
                let base = (ci * t + ti) * n;
                o[base + u] = d[base + u] - d[base + s];
            }
        }
    }
    Ok(out)
}

/// Forward difference along time with a zero final frame.
pub fn motion<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, t, n) = dims(x)?;
    let d = x.data();
    Ok(Tensor::from_fn(&[c, t, n], |k| {
        let ti = (k / n) % t;
        if ti + 1 < t {
            d[k + n] - d[k]
        } else {
            S::zero()
        }
    }))
}

/// Channel concatenation, `a` first.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("cannot fuse {:?} with {:?}", a.shape(), b.shape()));
    }
    let (c, t, n) = dims(a)?;
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![2 * c, t, n], data)
}

/// Joint and bone channels stacked into one `2C`-channel input.
pub fn fuse_joint_bone<S: Scalar>(joints: &Tensor<S>, bones: &Tensor<S>) -> Result<Tensor<S>> {
    concat_channels(joints, bones)
}

/// Inverse of [`concat_channels`] for an even channel count.
pub fn split_channels<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let (c, t, n) = dims(x)?;
    if c % 2 != 0 {
        return Err(shape_err!("cannot split {c} channels in half"));
    }
    let half = c / 2 * t * n;
    let d = x.data();
    Ok((
        Tensor::new(vec![c / 2, t, n], d[..half].to_vec())?,
        Tensor::new(vec![c / 2, t, n], d[half..].to_vec())?,
    ))
}

/// One input representation fed to a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
    /// Joint and bone channels fused into a single `2C` input.
    JointBone,
}

impl Stream {
    pub const SEPARATE: [Stream; 4] = [Stream::Joint, Stream::Bone, Stream::JointMotion, Stream::BoneMotion];

    /// Channel multiplier relative to the raw coordinate channels.
    pub fn channel_factor(self) -> usize {
        match self {
            Stream::JointBone => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Joint => "joint",
            Stream::Bone => "bone",
            Stream::JointMotion => "joint-motion",
            Stream::BoneMotion => "bone-motion",
            Stream::JointBone => "joint-bone",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [
            Stream::Joint,
            Stream::Bone,
            Stream::JointMotion,
            Stream::BoneMotion,
            Stream::JointBone,
        ]
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown stream {name:?}")))
    }

    /// Derives this stream from padded joint coordinates.
    pub fn derive<S: Scalar>(self, joints: &Tensor<S>, topology: &SkeletonTopology) -> Result<Tensor<S>> {
        match self {
            Stream::Joint => Ok(joints.clone()),
            Stream::Bone => bones(joints, topology),
            Stream::JointMotion => motion(joints),
            Stream::BoneMotion => motion(&bones(joints, topology)?),
            Stream::JointBone => fuse_joint_bone(joints, &bones(joints, topology)?),
        }
    }
}

/// Pads raw joints to `frames` and derives `stream`.
pub fn prepare<S: Scalar>(
    raw: &Tensor<S>,
    topology: &SkeletonTopology,
    stream: Stream,
    frames: usize,
) -> Result<Tensor<S>> {
    stream.derive(&pad_repeat(raw, frames)?, topology)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_two_frames_to_five() {
        let raw = Tensor::<f64>::from_f64(&[1, 2, 1], &[1.0, 2.0]).unwrap();
        assert_eq!(pad_repeat(&raw, 5).unwrap().data(), &[1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(pad_repeat(&raw, 2).unwrap(), raw);
        assert_eq!(pad_repeat(&raw, 1).unwrap().data(), &[1.0]);
    }

    #[test]
    fn linear_drift_motion() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 2], |k| (k / 2) as f64 * 0.5);
        assert_eq!(motion(&x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn stream_names_round_trip() {
        for s in [
            Stream::Joint,
            Stream::Bone,
            Stream::JointMotion,
            Stream::BoneMotion,
            Stream::JointBone,
        ] {
            assert_eq!(Stream::parse(s.name()).unwrap(), s);
        }
        assert!(Stream::parse("velocity").is_err());
    }
}
