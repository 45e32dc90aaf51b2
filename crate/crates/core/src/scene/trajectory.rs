use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n_views: usize,
    /// Camera distance from the gaze target, meters.
    pub radius_range: (f64, f64),
    /// Camera elevation above the table plane, degrees.
    pub elevation_range_deg: (f64, f64),
    pub gaze_target: [f64; 3],
    /// Maximum angle between the optical axis and the exact gaze direction.
    pub gaze_noise_deg: f64,
    /// Uniform roll about the optical axis in `[-roll, roll]`.
    pub roll_deg: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            n_views: 40,
            radius_range: (0.38, 0.5),
            elevation_range_deg: (35.0, 80.0),
            gaze_target: [0.0, 0.0, 0.04],
            gaze_noise_deg: 5.0,
            roll_deg: 20.0,
        }
    }
}

/// Random unit vector perpendicular to `v`.
fn random_perpendicular<R: Rng>(v: &Vec3, rng: &mut R) -> Vec3 {
    let a = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = v.cross(&a).normalize();
    let e2 = v.cross(&e1);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    e1 * phi.cos() + e2 * phi.sin()
}

/// Camera poses on the upper hemisphere around the gaze target.
///
/// Each camera looks at the target, then its optical axis is tilted by at
/// most `gaze_noise_deg` and rolled by at most `roll_deg`.
pub fn sample_camera_trajectory<R: Rng>(rng: &mut R, cfg: &TrajectoryConfig) -> Vec<Pose> {
    let target = Vec3::from(cfg.gaze_target);
    (0..cfg.n_views)
        .map(|_| {
            let radius = rng.random_range(cfg.radius_range.0..=cfg.radius_range.1);
            let elev = rng
                .random_range(cfg.elevation_range_deg.0..=cfg.elevation_range_deg.1)
                .to_radians();
            let azim = rng.random_range(0.0..std::f64::consts::TAU);
            let eye = target
                + Vec3::new(
                    radius * elev.cos() * azim.cos(),
                    radius * elev.cos() * azim.sin(),
                    radius * elev.sin(),
                );
            let base = Pose::look_at(&eye, &target, &Vec3::z());

            let tilt = rng.random_range(0.0..=cfg.gaze_noise_deg).to_radians();
            let tilt_axis = random_perpendicular(&Vec3::z(), rng);
            let roll = if cfg.roll_deg > 0.0 {
                rng.random_range(-cfg.roll_deg..=cfg.roll_deg).to_radians()
            } else {
                0.0
            };
            // Perturbations act in the camera frame: tilt about an axis in the
            // image plane, roll about the optical axis.
            let perturb = Pose::from_axis_angle(&tilt_axis, tilt, Vec3::zeros()).compose(&Pose::from_axis_angle(
                &Vec3::z(),
                roll,
                Vec3::zeros(),
            ));
            Pose::new(base.rotation * perturb.rotation, eye)
        })
        .collect()
}
