mod common;

use common::{randn, rng};
use rand::Rng;
use tagcn::graph::SkeletonTopology;
use tagcn::streams::{
    bones, fuse_joint_bone, load_split, motion, pad_repeat, prepare, read_sequence, split_channels, write_sequence,
    DatasetManifest, ManifestEntry, SkeletonSequence, Split, Stream,
};
use tagcn::tensor::Tensor;

#[test]
fn repetition_is_cyclic() {
    let raw = randn(&[3, 113, 4], &mut rng(1));
    let padded = pad_repeat(&raw, 300).unwrap();
    assert_eq!(padded.shape(), &[3, 300, 4]);
    for c in 0..3 {
        for t in 0..300 {
            for n in 0..4 {
                assert_eq!(padded.at(&[c, t, n]), raw.at(&[c, t % 113, n]));
            }
        }
    }
    assert_eq!(pad_repeat(&padded, 300).unwrap(), padded);
    let long = pad_repeat(&raw, 50).unwrap();
    assert_eq!(long.at(&[2, 49, 3]), raw.at(&[2, 49, 3]));
    assert!(pad_repeat(&Tensor::<f64>::zeros(&[3, 4]), 5).is_err());
}

#[test]
fn chain_bones_by_hand() {
    let topo = SkeletonTopology::with_derived_bones("chain", 3, vec![(0, 1), (1, 2)], 0).unwrap();
    // one frame, coordinates (x, y) per joint
    let x = Tensor::<f64>::from_f64(&[2, 1, 3], &[0.0, 1.0, 3.0, 0.0, 2.0, 2.5]).unwrap();
    let b = bones(&x, &topo).unwrap();
    assert_eq!(b.data(), &[0.0, 1.0, 2.0, 0.0, 2.0, 0.5]);
    assert_eq!(
        bones(&Tensor::<f64>::zeros(&[3, 2, 3]), &topo).unwrap(),
        Tensor::zeros(&[3, 2, 3])
    );
}

#[test]
fn bones_are_translation_invariant_and_joints_are_not() {
    let topo = SkeletonTopology::ntu_rgbd_25();
    let mut r = rng(2);
    let x = randn(&[3, 6, 25], &mut r);
    let shift: Vec<f64> = (0..3).map(|_| r.gen_range(-5.0..5.0)).collect();
    let moved = Tensor::from_fn(&[3, 6, 25], |k| x.data()[k] + shift[k / 150]);
    let (b0, b1) = (bones(&x, &topo).unwrap(), bones(&moved, &topo).unwrap());
    assert!(b0.max_abs_diff(&b1) < 1e-12);
    assert!(x.max_abs_diff(&moved) > 1e-3);
    // the centre joint carries the zero vector
    let centre = topo.center();
    for c in 0..3 {
        for t in 0..6 {
            assert_eq!(b0.at(&[c, t, centre]), 0.0);
        }
    }
}

#[test]
fn motion_matches_loop_difference_and_telescopes() {
    let x = randn(&[2, 4, 3], &mut rng(3));
    let m = motion(&x).unwrap();
    for c in 0..2 {
        for n in 0..3 {
            for t in 0..3 {
                assert_eq!(m.at(&[c, t, n]), x.at(&[c, t + 1, n]) - x.at(&[c, t, n]));
            }
            assert_eq!(m.at(&[c, 3, n]), 0.0);
            let total: f64 = (0..4).map(|t| m.at(&[c, t, n])).sum();
            assert!((total - (x.at(&[c, 3, n]) - x.at(&[c, 0, n]))).abs() < 1e-12);
        }
    }
    let still = Tensor::full(&[3, 5, 2], 0.7);
    assert_eq!(motion(&still).unwrap(), Tensor::zeros(&[3, 5, 2]));
}

#[test]
fn fusion_round_trip() {
    let j = randn(&[3, 4, 5], &mut rng(4));
    let zero = Tensor::zeros(&[3, 4, 5]);
    let fused = fuse_joint_bone(&j, &zero).unwrap();
    assert_eq!(fused.shape(), &[6, 4, 5]);
    assert!(fused.data()[60..].iter().all(|&v| v == 0.0));
    let b = randn(&[3, 4, 5], &mut rng(5));
    let (a2, b2) = split_channels(&fuse_joint_bone(&j, &b).unwrap()).unwrap();
    assert_eq!((a2, b2), (j.clone(), b));
    assert_eq!(
        fuse_joint_bone(&j, &Tensor::zeros(&[3, 4, 4])).unwrap_err().category(),
        "shape"
    );
}

#[test]
fn prepared_streams_have_expected_channels() {
    let topo = SkeletonTopology::kinetics_18();
    let raw = randn(&[3, 40, 18], &mut rng(6));
    for s in [
        Stream::Joint,
        Stream::Bone,
        Stream::JointMotion,
        Stream::BoneMotion,
        Stream::JointBone,
    ] {
        let x = prepare(&raw, &topo, s, 64).unwrap();
        assert_eq!(x.shape(), &[3 * s.channel_factor(), 64, 18]);
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for i in 0..4 {
        let seq = SkeletonSequence {
            data: Tensor::from_fn(&[3, 7, 5], |k| (k + i) as f32),
            topology: "toy-5".into(),
            label: Some(i % 2),
        };
        let file = format!("s{i}.seq");
        write_sequence(dir.path().join(&file), &seq).unwrap();
        assert_eq!(read_sequence(dir.path().join(&file)).unwrap(), seq);
        entries.push(ManifestEntry {
            file,
            split: if i < 3 { Split::Train } else { Split::Val },
        });
    }
    let manifest = DatasetManifest {
        topology: "toy-5".into(),
        num_classes: 2,
        channels: 3,
        entries,
    };
    manifest.save(dir.path()).unwrap();
    let (m, train) = load_split(dir.path(), Split::Train).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(train.len(), 3);
    assert_eq!(load_split(dir.path(), Split::Val).unwrap().1[0].label, Some(1));

    let bad = DatasetManifest {
        num_classes: 1,
        ..manifest
    };
    bad.save(dir.path()).unwrap();
    assert_eq!(load_split(dir.path(), Split::Train).unwrap_err().category(), "range");
}
