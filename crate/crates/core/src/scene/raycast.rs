use super::{Primitive, Scene};
use crate::geometry::{Pose, Vec3};

const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    /// Not necessarily unit length; hit parameters are in multiples of it.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Nearest intersection of a ray with the scene.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Outward unit normal in world frame.
    pub normal: Vec3,
    /// 0 for the table.
    pub object_id: u32,
    pub part: usize,
    /// Object surface coordinate; world coordinate for the table.
    pub surface_coord: Vec3,
}

/// Ray parameter and local outward normal of the first intersection.
fn intersect_primitive(prim: &Primitive, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
    match *prim {
        Primitive::Sphere { radius } => {
            let a = dir.norm_squared();
            let b = origin.dot(dir);
            let c = origin.norm_squared() - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t0 = (-b - sq) / a;
            let t1 = (-b + sq) / a;
            let t = if t0 > T_MIN {
                t0
            } else if t1 > T_MIN {
                t1
            } else {
                return None;
            };
            Some((t, (origin + dir * t) / radius))
        }
        Primitive::Box { half_extents } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut near_axis = 0;
            let mut far_axis = 0;
            for axis in 0..3 {
                let h = half_extents[axis];
                let o = origin[axis];
                let d = dir[axis];
                if d.abs() < 1e-15 {
                    if o < -h || o > h {
                        return None;
                    }
                    continue;
                }
                let mut t0 = (-h - o) / d;
                let mut t1 = (h - o) / d;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > t_near {
                    t_near = t0;
                    near_axis = axis;
                }
                if t1 < t_far {
                    t_far = t1;
                    far_axis = axis;
                }
                if t_near > t_far {
                    return None;
                }
            }
            let (t, axis) = if t_near > T_MIN {
                (t_near, near_axis)
            } else if t_far > T_MIN {
                (t_far, far_axis)
            } else {
                return None;
            };
            let p = origin + dir * t;
            let mut n = Vec3::zeros();
            n[axis] = p[axis].signum();
            Some((t, n))
        }
    }
}

struct PreparedPart {
    object_id: u32,
    index: usize,
    primitive: Primitive,
    /// World-to-part transform.
    inverse: Pose,
    to_world: Pose,
    /// Part-to-rest transform for surface coordinates.
    rest: Pose,
}

/// Scene flattened into world-placed parts for repeated ray queries.
pub struct PreparedScene {
    parts: Vec<PreparedPart>,
}

impl PreparedScene {
    pub fn new(scene: &Scene) -> Self {
        let mut parts = Vec::new();
        for obj in &scene.objects {
            for (index, part) in obj.shape.parts().iter().enumerate() {
                let to_world = obj.pose.compose(&part.pose);
                parts.push(PreparedPart {
                    object_id: obj.id,
                    index,
                    primitive: part.primitive,
                    inverse: to_world.inverse(),
                    to_world,
                    rest: part.rest,
                });
            }
        }
        PreparedScene { parts }
    }

    /// Nearest intersection with any object or the table plane `z = 0`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if ray.direction.z < 0.0 && ray.origin.z > 0.0 {
            let t = -ray.origin.z / ray.direction.z;
            let mut point = ray.at(t);
            point.z = 0.0;
            best = Some(Hit {
                t,
                point,
                normal: Vec3::z(),
                object_id: 0,
                part: 0,
                surface_coord: point,
            });
        }
        for part in &self.parts {
            let o = part.inverse.apply(&ray.origin);
            let d = part.inverse.apply_vector(&ray.direction);
            if let Some((t, n_local)) = intersect_primitive(&part.primitive, &o, &d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: ray.at(t),
                        normal: part.to_world.apply_vector(&n_local),
                        object_id: part.object_id,
                        part: part.index,
                        surface_coord: part.rest.apply(&(o + d * t)),
                    });
                }
            }
        }
        best
    }
}

impl Scene {
    pub fn prepare(&self) -> PreparedScene {
        PreparedScene::new(self)
    }

    /// Nearest intersection with any object or the table plane `z = 0`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.prepare().intersect(ray)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_hit_from_above() {
        let prim = Primitive::Box {
            half_extents: [0.5, 0.5, 0.5],
        };
        let (t, n) = intersect_primitive(&prim, &Vec3::new(0.1, 0.0, 2.0), &-Vec3::z()).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        assert_eq!(n, Vec3::z());
        assert!(intersect_primitive(&prim, &Vec3::new(2.0, 0.0, 2.0), &-Vec3::z()).is_none());
    }

    #[test]
    fn sphere_hit() {
        let prim = Primitive::Sphere { radius: 0.25 };
        let (t, n) = intersect_primitive(&prim, &Vec3::new(0.0, 0.0, -1.0), &Vec3::z()).unwrap();
        assert!((t - 0.75).abs() < 1e-12);
        assert!((n + Vec3::z()).norm() < 1e-12);
    }
}
