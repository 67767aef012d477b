//! Planted-window synthetic skeleton data.
//!
//! Every sample shares a base pose and a whole-body sway whose phase is
//! drawn per sample. Inside the informative window one joint, chosen by the
//! class, additionally moves along one axis; outside the window classes are
//! indistinguishable up to noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::streams::{write_sequence, DatasetManifest, ManifestEntry, SkeletonSequence, Split};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub topology: String,
    pub num_classes: usize,
    pub frames: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// First informative frame.
    pub window_start: usize,
    pub window_len: usize,
    /// Peak displacement of the class joint inside the window.
    pub amplitude: f64,
    /// Peak of the shared sway.
    pub sway: f64,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub noise: f64,
    pub samples_per_class: usize,
    pub val_per_class: usize,
}

fn default_channels() -> usize {
    3
}

/// Class motion: which joint moves, along which axis, how many cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    pub joint: usize,
    pub axis: usize,
    pub cycles: usize,
}

impl SyntheticSpec {
    /// Four classes on the five-joint toy skeleton, 16 frames, frames 5..=8
    /// informative, 200 training samples per class.
    pub fn planted() -> Self {
        Self {
            topology: "toy-5".into(),
            num_classes: 4,
            frames: 16,
            channels: 3,
            window_start: 5,
            window_len: 4,
            amplitude: 1.0,
            sway: 0.5,
            noise: 0.05,
            samples_per_class: 200,
            val_per_class: 50,
        }
    }

    pub fn window(&self) -> std::ops::Range<usize> {
        self.window_start..self.window_start + self.window_len
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.frames == 0 || self.channels == 0 || self.samples_per_class == 0 {
            return fail("classes, frames, channels and samples per class must be positive".into());
        }
        if self.window_len == 0 || self.window_start + self.window_len > self.frames {
            return fail(format!(
                "window {:?} does not fit in {} frames",
                self.window(),
                self.frames
            ));
        }
        if !(self.noise >= 0.0 && self.amplitude > 0.0 && self.sway >= 0.0) {
            return fail("noise and sway must be non-negative, amplitude positive".into());
        }
        if topology.num_joints() < 2 {
            return fail("synthetic classes need a joint besides the center".into());
        }
        Ok(())
    }

    /// Distinct per class: joints cycle first, then axes, then cycle counts.
    pub fn signature(&self, class: usize, topology: &SkeletonTopology) -> Signature {
        let movers: Vec<usize> = (0..topology.num_joints()).filter(|&j| j != topology.center()).collect();
        let m = movers.len();
        Signature {
            joint: movers[class % m],
            axis: (class / m) % self.channels,
            cycles: 1 + class / (m * self.channels),
        }
    }
}

fn sample(
    spec: &SyntheticSpec,
    sig: Signature,
    pose: &[f64],
    class: usize,
    topology: &str,
    rng: &mut ChaCha8Rng,
) -> SkeletonSequence {
    let (c, t, n) = (spec.channels, spec.frames, pose.len() / spec.channels);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let mut data = vec![0f32; c * t * n];
    for ti in 0..t {
        let sway = spec.sway * (2.0 * PI * ti as f64 / t as f64 + phase).sin();
        let local = spec.window().contains(&ti).then(|| {
            let u = (ti - spec.window_start) as f64 / spec.window_len as f64;
            // a raised cosine bump, always non-negative
            spec.amplitude * 0.5 * (1.0 - (2.0 * PI * sig.cycles as f64 * u + phase).cos())
        });
        for ci in 0..c {
            for j in 0..n {
                let mut v = pose[ci * n + j] + sway + noise.sample(rng);
                if let Some(d) = local {
                    if j == sig.joint && ci == sig.axis {
                        v += d;
                    }
                }
                data[(ci * t + ti) * n + j] = v as f32;
            }
        }
    }
    SkeletonSequence {
        data: Tensor::new(vec![c, t, n], data).expect("sized above"),
        topology: topology.to_string(),
        label: Some(class),
    }
}

/// Train and validation sequences, class-major. Deterministic in `seed`.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let topology = SkeletonTopology::resolve(&spec.topology)?;
    spec.validate(&topology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.num_joints();
    let pose: Vec<f64> = (0..spec.channels * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut draw = |count: usize| -> Vec<SkeletonSequence> {
        let mut out = Vec::with_capacity(count * spec.num_classes);
        for class in 0..spec.num_classes {
            let sig = spec.signature(class, &topology);
            for _ in 0..count {
                out.push(sample(spec, sig, &pose, class, topology.name(), &mut rng));
            }
        }
        out
    };
    let train = draw(spec.samples_per_class);
    let val = draw(spec.val_per_class);
    Ok((train, val))
}

/// Writes sequences under `train/` and `val/` plus the manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let (train, val) = synthesize(spec, seed)?;
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for (split, name, seqs) in [(Split::Train, "train", &train), (Split::Val, "val", &val)] {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, s) in seqs.iter().enumerate() {
            let file = format!("{name}/c{}_{i:05}.seq", s.label.expect("labeled"));
            write_sequence(dir.join(&file), s)?;
            entries.push(ManifestEntry { file, split });
        }
    }
    let manifest = DatasetManifest {
        topology: train.first().map_or(spec.topology.clone(), |s| s.topology.clone()),
        num_classes: spec.num_classes,
        channels: spec.channels,
        entries,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Fraction of `window` covered by `selected`.
pub fn window_recall(selected: &[usize], window: std::ops::Range<usize>) -> f64 {
    let hit = selected.iter().filter(|i| window.contains(i)).count();
    hit as f64 / window.len() as f64
}
