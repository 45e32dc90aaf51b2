//! Reconstruction of a scene log: TSDF fusion, depth re-rendering, object
//! masking by cropping above the table, and pose-based frame selection.

mod tsdf;

pub use tsdf::{change_detect, render_mask, TsdfVolume, VolumeHeader};

use crate::geometry::Pose;

pub const DEFAULT_TRANSLATION_THRESHOLD: f64 = 0.05;
pub const DEFAULT_ROTATION_THRESHOLD_DEG: f64 = 10.0;

/// Greedy frame selection: frame `i` is kept when it has moved at least
/// `trans_thresh` meters or rotated at least `rot_thresh_deg` degrees from
/// the most recently kept frame. The first frame is always kept.
pub fn downsample_frames(poses: &[Pose], trans_thresh: f64, rot_thresh_deg: f64) -> Vec<usize> {
    // Absorbs accumulated rounding in evenly spaced trajectories.
    const SLACK: f64 = 1e-9;
    let mut kept = Vec::new();
    let Some(first) = poses.first() else {
        return kept;
    };
    kept.push(0);
    let mut last = *first;
    let rot_thresh = rot_thresh_deg.to_radians();
    for (i, pose) in poses.iter().enumerate().skip(1) {
        let moved = last.translation_distance_to(pose) >= trans_thresh - SLACK;
        let turned = last.rotation_angle_to(pose) >= rot_thresh - SLACK;
        if moved || turned {
            kept.push(i);
            last = *pose;
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn identical_poses_keep_first() {
        let poses = vec![Pose::identity(); 7];
        assert_eq!(downsample_frames(&poses, 0.05, 10.0), vec![0]);
    }

    #[test]
    fn widely_spaced_poses_all_kept() {
        let poses: Vec<Pose> = (0..6)
            .map(|i| Pose::from_translation(Vec3::new(0.06 * i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(downsample_frames(&poses, 0.05, 10.0), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn small_steps_keep_every_fifth() {
        // 1 cm and 2 degrees per frame: both thresholds are first reached five
        // frames after the last kept one.
        let poses: Vec<Pose> = (0..21)
            .map(|i| {
                Pose::from_axis_angle(
                    &Vec3::z(),
                    (2.0 * i as f64).to_radians(),
                    Vec3::new(0.01 * i as f64, 0.0, 0.0),
                )
            })
            .collect();
        assert_eq!(downsample_frames(&poses, 0.05, 10.0), vec![0, 5, 10, 15, 20]);
    }
}
