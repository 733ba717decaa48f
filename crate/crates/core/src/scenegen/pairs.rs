use super::scene::dist;
use super::types::Frame;
use crate::error::{Error, Result};

/// A cross-frame pair whose id-based label disagrees with the distance rule.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDisagreement {
    pub a: usize,
    pub b: usize,
    pub distance_m: f64,
    pub id_label: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    /// `(index in frame A, index in frame B, matched)` for every cross pair.
    pub pairs: Vec<(usize, usize, bool)>,
    pub disagreements: Vec<LabelDisagreement>,
}

/// Labels every cross-frame patch pair. A pair is matched when the 3D
/// locations are within `tau_match` meters (inclusive). When both patches
/// carry landmark ids the ids decide, and distance-based disagreements are
/// reported.
pub fn ground_truth_pairs(a: &Frame, b: &Frame, tau_match: f64) -> Result<GroundTruth> {
    let loc = |f: &Frame, i: usize| {
        f.patches[i].location.ok_or_else(|| Error::MissingLocation {
            patch_id: f.patches[i].id.clone(),
        })
    };
    let mut gt = GroundTruth::default();
    for i in 0..a.patches.len() {
        let la = loc(a, i)?;
        for j in 0..b.patches.len() {
            let lb = loc(b, j)?;
            let d = dist(la, lb);
            let by_distance = d <= tau_match;
            let matched = match (a.patches[i].landmark_id, b.patches[j].landmark_id) {
                (Some(x), Some(y)) => {
                    let by_id = x == y;
                    if by_id != by_distance {
                        gt.disagreements.push(LabelDisagreement {
                            a: i,
                            b: j,
                            distance_m: d,
                            id_label: by_id,
                        });
                    }
                    by_id
                }
                _ => by_distance,
            };
            gt.pairs.push((i, j, matched));
        }
    }
    Ok(gt)
}

/// Frame index pairs `(i, j)`, `i < j`, whose camera centers are between
/// `min_gap_m` and `max_dist_m` apart (both inclusive).
pub fn pair_frames(frames: &[Frame], min_gap_m: f64, max_dist_m: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            let d = dist(frames[i].position, frames[j].position);
            if d >= min_gap_m && d <= max_dist_m {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::camera::{CameraModel, Intrinsics, Pose};
    use crate::scenegen::types::{BBox, LocationFrame, Patch, PixelBlock};
    use proptest::prelude::*;

    fn patch(id: &str, loc: Option<[f64; 3]>, lm: Option<u32>) -> Patch {
        Patch {
            id: id.into(),
            frame_id: "f".into(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            pixels: PixelBlock::new(1, 1, 1, vec![0]).unwrap(),
            location: loc,
            location_frame: LocationFrame::World,
            landmark_id: lm,
        }
    }

    fn frame(id: &str, pos: [f64; 3], patches: Vec<Patch>) -> Frame {
        Frame {
            id: id.into(),
            camera: CameraModel::new(Intrinsics::default(), Pose::identity()).unwrap(),
            position: pos,
            patches,
        }
    }

    #[test]
    fn id_overrides_distance() {
        let a = frame("a", [0.0; 3], vec![patch("a0", Some([0.0; 3]), Some(7))]);
        let b = frame("b", [0.0; 3], vec![patch("b0", Some([5.0, 0.0, 0.0]), Some(7))]);
        let gt = ground_truth_pairs(&a, &b, 1.0).unwrap();
        assert_eq!(gt.pairs, vec![(0, 0, true)]);
        assert_eq!(gt.disagreements.len(), 1);
    }

    #[test]
    fn far_apart_is_unmatched_and_boundary_is_inclusive() {
        let a = frame("a", [0.0; 3], vec![patch("a0", Some([0.0; 3]), None)]);
        let b = frame(
            "b",
            [0.0; 3],
            vec![patch("b0", Some([50.0, 0.0, 0.0]), None), patch("b1", Some([1.0, 0.0, 0.0]), None)],
        );
        let gt = ground_truth_pairs(&a, &b, 1.0).unwrap();
        assert_eq!(gt.pairs, vec![(0, 0, false), (0, 1, true)]);
    }

    #[test]
    fn missing_location_is_error() {
        let a = frame("a", [0.0; 3], vec![patch("a0", None, None)]);
        let b = frame("b", [0.0; 3], vec![patch("b0", Some([0.0; 3]), None)]);
        match ground_truth_pairs(&a, &b, 1.0) {
            Err(Error::MissingLocation { patch_id }) => assert_eq!(patch_id, "a0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frame_pairing_bounds() {
        let frames = vec![
            frame("0", [0.0, 0.0, 0.0], vec![]),
            frame("1", [0.0, 0.0, 30.0], vec![]),
            frame("2", [0.0, 0.0, 1.0], vec![]),
            frame("3", [0.0, 0.0, 10.0], vec![]),
            frame("4", [0.0, 0.0, 25.0], vec![]),
        ];
        let pairs = pair_frames(&frames, 2.0, 25.0);
        assert!(!pairs.contains(&(0, 1)), "30 m apart");
        assert!(!pairs.contains(&(0, 2)), "1 m apart");
        assert!(pairs.contains(&(0, 3)), "10 m apart");
        assert!(pairs.contains(&(0, 4)), "25 m is inclusive");
    }

    proptest! {
        #[test]
        fn labels_symmetric_under_reversal(
            la in proptest::collection::vec((0.0f64..4.0, 0.0f64..4.0, proptest::option::of(0u32..4)), 1..6),
            lb in proptest::collection::vec((0.0f64..4.0, 0.0f64..4.0, proptest::option::of(0u32..4)), 1..6),
            tau in 0.1f64..2.0,
        ) {
            let mk = |v: &[(f64, f64, Option<u32>)], n: &str| {
                frame(n, [0.0; 3], v.iter().enumerate()
                    .map(|(i, &(x, z, id))| patch(&format!("{n}{i}"), Some([x, 0.0, z]), id))
                    .collect())
            };
            let (a, b) = (mk(&la, "a"), mk(&lb, "b"));
            let ab = ground_truth_pairs(&a, &b, tau).unwrap();
            let ba = ground_truth_pairs(&b, &a, tau).unwrap();
            for &(i, j, m) in &ab.pairs {
                prop_assert!(ba.pairs.contains(&(j, i, m)));
            }
        }
    }
}
