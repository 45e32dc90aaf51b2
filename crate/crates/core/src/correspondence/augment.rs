use rand::Rng;

use super::{CorrespondenceSet, PixelPair};
use crate::geometry::{Pixel, Pose, Vec3};
use crate::image::{Grid, Mask};
use crate::scene::RgbdFrame;

/// Replaces every off-mask color with one of: per-pixel uniform noise, a
/// random solid color, or a random two-color checkerboard.
pub fn randomize_background<R: Rng>(frame: &RgbdFrame, mask: &Mask, rng: &mut R) -> RgbdFrame {
    let mut color = || -> [f32; 3] { [rng.random(), rng.random(), rng.random()] };
    let (w, h) = (frame.rgb.width, frame.rgb.height);
    let background: Grid<[f32; 3]> = match color()[0] {
        c if c < 1.0 / 3.0 => Grid::from_fn(w, h, |_, _| color()),
        c if c < 2.0 / 3.0 => Grid::filled(w, h, color()),
        _ => {
            let (a, b) = (color(), color());
            let cell = 2 + (color()[0] * 10.0) as usize;
            Grid::from_fn(w, h, |x, y| if (x / cell + y / cell).is_multiple_of(2) { a } else { b })
        }
    };
    let mut out = frame.clone();
    for ((px, &m), bg) in out.rgb.data.iter_mut().zip(&mask.data).zip(background.data) {
        if !m {
            *px = bg;
        }
    }
    out
}

/// Pixel coordinates after turning a `width x height` image by 180 degrees.
fn rotate_pixel(p: Pixel, width: usize, height: usize) -> Pixel {
    Pixel::new((width - 1) as f64 - p.u, (height - 1) as f64 - p.v)
}

/// Rewrites the coordinates of every pair for the images that were rotated.
pub fn remap_rotate180(
    set: &CorrespondenceSet,
    rotate_a: bool,
    rotate_b: bool,
    size_a: (usize, usize),
    size_b: (usize, usize),
) -> CorrespondenceSet {
    let remap = |p: &PixelPair| PixelPair {
        u_a: if rotate_a {
            rotate_pixel(p.u_a, size_a.0, size_a.1)
        } else {
            p.u_a
        },
        u_b: if rotate_b {
            rotate_pixel(p.u_b, size_b.0, size_b.1)
        } else {
            p.u_b
        },
        ..*p
    };
    CorrespondenceSet {
        matches: set.matches.iter().map(remap).collect(),
        non_matches: set.non_matches.iter().map(remap).collect(),
        comparison_type: set.comparison_type,
    }
}

/// Rotating the image is a half turn of the camera about its optical axis,
/// provided the principal point is the image center.
fn rotate_frame(frame: &RgbdFrame) -> RgbdFrame {
    RgbdFrame {
        rgb: frame.rgb.rotated_180(),
        depth: frame.depth.rotated_180(),
        pose: frame
            .pose
            .compose(&Pose::from_axis_angle(&Vec3::z(), std::f64::consts::PI, Vec3::zeros())),
        intrinsics: frame.intrinsics,
    }
}

/// Rotates each image independently with probability `p` and remaps the
/// correspondences. Returns which images were rotated.
pub fn augment_rotate180<R: Rng>(
    frame_a: &RgbdFrame,
    frame_b: &RgbdFrame,
    set: &CorrespondenceSet,
    p: f64,
    rng: &mut R,
) -> (RgbdFrame, RgbdFrame, CorrespondenceSet, [bool; 2]) {
    let rot_a = rng.random::<f64>() < p;
    let rot_b = rng.random::<f64>() < p;
    let fa = if rot_a { rotate_frame(frame_a) } else { frame_a.clone() };
    let fb = if rot_b { rotate_frame(frame_b) } else { frame_b.clone() };
    let size = |f: &RgbdFrame| (f.rgb.width, f.rgb.height);
    let set = remap_rotate180(set, rot_a, rot_b, size(frame_a), size(frame_b));
    (fa, fb, set, [rot_a, rot_b])
}

/// Which image of a pair the composited frames stand for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchSide {
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct CompositeLayer {
    pub frame: RgbdFrame,
    pub mask: Mask,
    pub matches: Vec<PixelPair>,
}

#[derive(Debug, Clone)]
pub struct Composite {
    pub frame: RgbdFrame,
    /// Visible part of each layer's mask, indexed like the input layers.
    pub masks: Vec<Mask>,
    /// Surviving matches in layering order.
    pub matches: Vec<PixelPair>,
    pub pruned: usize,
}

/// Layers single-object frames in `order`: the first layer is copied whole,
/// each later layer overwrites color and depth inside its mask. Matches whose
/// `side` pixel is covered by a later layer are dropped.
pub fn composite_multi_object(layers: &[CompositeLayer], order: &[usize], side: MatchSide) -> Composite {
    let base = &layers[order[0]];
    let mut frame = base.frame.clone();
    for &i in &order[1..] {
        let layer = &layers[i];
        for (idx, &m) in layer.mask.data.iter().enumerate() {
            if m {
                frame.rgb.data[idx] = layer.frame.rgb.data[idx];
                frame.depth.data[idx] = layer.frame.depth.data[idx];
            }
        }
    }
    let mut masks: Vec<Mask> = layers.iter().map(|l| l.mask.clone()).collect();
    let mut matches = Vec::new();
    let mut pruned = 0;
    for (pos, &i) in order.iter().enumerate() {
        let mut covered = Mask::filled(base.mask.width, base.mask.height, false);
        for &later in &order[pos + 1..] {
            covered = covered.or(&layers[later].mask);
        }
        for (vis, &c) in masks[i].data.iter_mut().zip(&covered.data) {
            *vis &= !c;
        }
        for m in &layers[i].matches {
            let p = match side {
                MatchSide::A => m.u_a,
                MatchSide::B => m.u_b,
            };
            let hidden = p
                .round_in(covered.width, covered.height)
                .is_some_and(|(x, y)| *covered.get(x, y));
            if hidden {
                pruned += 1;
            } else {
                matches.push(*m);
            }
        }
    }
    Composite {
        frame,
        masks,
        matches,
        pruned,
    }
}
