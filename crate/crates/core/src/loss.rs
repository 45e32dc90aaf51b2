//! Pixelwise contrastive loss over matches and non-matches, with optional
//! hard-negative scaling, and its gradient with respect to both descriptor
//! images.

use serde::{Deserialize, Serialize};

use crate::correspondence::{ComparisonType, CorrespondenceSet, PixelPair};
use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::net::DescriptorImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub margin: f64,
    /// Divide the non-match term by the number of hard negatives instead of
    /// the number of non-matches.
    pub hard_negative_scaling: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            hard_negative_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_matches: f64,
    pub l_non_matches: f64,
    pub l_total: f64,
    pub n_matches: usize,
    pub n_non_matches: usize,
    pub n_hard_negatives: usize,
}

fn pixel_index(desc: &DescriptorImage, p: Pixel) -> Result<(usize, usize)> {
    p.round_in(desc.width, desc.height).ok_or(Error::OutOfBounds {
        u: p.u,
        v: p.v,
        width: desc.width,
        height: desc.height,
    })
}

/// Descriptor at the nearest integer pixel.
pub fn descriptor_at(desc: &DescriptorImage, p: Pixel) -> Result<&[f64]> {
    let (x, y) = pixel_index(desc, p)?;
    Ok(desc.at(x, y))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn pair_distance(desc_a: &DescriptorImage, p_a: Pixel, desc_b: &DescriptorImage, p_b: Pixel) -> Result<f64> {
    Ok(l2(descriptor_at(desc_a, p_a)?, descriptor_at(desc_b, p_b)?))
}

/// Mean squared descriptor distance over the matches.
pub fn match_loss(desc_a: &DescriptorImage, desc_b: &DescriptorImage, matches: &[PixelPair]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::NoMatches);
    }
    let mut sum = 0.0;
    for m in matches {
        sum += pair_distance(desc_a, m.u_a, desc_b, m.u_b)?.powi(2);
    }
    Ok(sum / matches.len() as f64)
}

/// Squared hinge `max(0, M - d)^2` summed over the non-matches and
/// normalized; returns the loss and the number of hard negatives.
pub fn nonmatch_loss(
    desc_a: &DescriptorImage,
    desc_b: &DescriptorImage,
    non_matches: &[PixelPair],
    cfg: &LossConfig,
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n_hard = 0;
    for nm in non_matches {
        let gap = cfg.margin - pair_distance(desc_a, nm.u_a, desc_b, nm.u_b)?;
        if gap > 0.0 {
            sum += gap * gap;
            n_hard += 1;
        }
    }
    let denom = if cfg.hard_negative_scaling {
        n_hard
    } else {
        non_matches.len()
    };
    Ok((if denom == 0 { 0.0 } else { sum / denom as f64 }, n_hard))
}

/// Loss and its gradient with respect to each descriptor image. Pixels
/// referenced by several pairs accumulate their contributions.
///
/// Cross-object comparisons carry no matches; every other comparison type
/// requires at least one.
pub fn total_loss_and_grad(
    desc_a: &DescriptorImage,
    desc_b: &DescriptorImage,
    set: &CorrespondenceSet,
    cfg: &LossConfig,
) -> Result<(LossReport, DescriptorImage, DescriptorImage)> {
    if cfg.margin <= 0.0 {
        return Err(Error::Config(format!("margin must be positive, got {}", cfg.margin)));
    }
    let cross = set.comparison_type == ComparisonType::DifferentObjectAcrossScene;
    if set.matches.is_empty() && (!cross || set.non_matches.is_empty()) {
        return Err(Error::NoMatches);
    }
    let dim = desc_a.dim;
    let mut grad_a = DescriptorImage::zeros(desc_a.width, desc_a.height, dim);
    let mut grad_b = DescriptorImage::zeros(desc_b.width, desc_b.height, dim);
    let mut diff = vec![0.0; dim];

    let mut accumulate = |pair: &PixelPair, scale: f64, diff: &[f64]| -> Result<()> {
        let (xa, ya) = pixel_index(desc_a, pair.u_a)?;
        let (xb, yb) = pixel_index(desc_b, pair.u_b)?;
        for (g, d) in grad_a.at_mut(xa, ya).iter_mut().zip(diff) {
            *g += scale * d;
        }
        for (g, d) in grad_b.at_mut(xb, yb).iter_mut().zip(diff) {
            *g -= scale * d;
        }
        Ok(())
    };

    let n_m = set.matches.len();
    let mut l_matches = 0.0;
    if n_m > 0 {
        for m in &set.matches {
            let fa = descriptor_at(desc_a, m.u_a)?;
            let fb = descriptor_at(desc_b, m.u_b)?;
            for i in 0..dim {
                diff[i] = fa[i] - fb[i];
            }
            l_matches += diff.iter().map(|d| d * d).sum::<f64>();
            accumulate(m, 2.0 / n_m as f64, &diff)?;
        }
        l_matches /= n_m as f64;
    }

    // First pass fixes the normalizer, second pass writes gradients.
    let mut hard = Vec::new();
    let mut sum = 0.0;
    for nm in &set.non_matches {
        let d = pair_distance(desc_a, nm.u_a, desc_b, nm.u_b)?;
        let gap = cfg.margin - d;
        if gap > 0.0 {
            sum += gap * gap;
            hard.push((nm, d));
        }
    }
    let n_nm = set.non_matches.len();
    let denom = if cfg.hard_negative_scaling { hard.len() } else { n_nm };
    let l_non_matches = if denom == 0 { 0.0 } else { sum / denom as f64 };
    for &(nm, d) in &hard {
        // d/df_a (M - d)^2 = -2 (M - d) (f_a - f_b) / d; zero at d = 0.
        if d == 0.0 {
            continue;
        }
        let fa = descriptor_at(desc_a, nm.u_a)?;
        let fb = descriptor_at(desc_b, nm.u_b)?;
        for i in 0..dim {
            diff[i] = fa[i] - fb[i];
        }
        accumulate(nm, -2.0 * (cfg.margin - d) / (d * denom as f64), &diff)?;
    }

    Ok((
        LossReport {
            l_matches,
            l_non_matches,
            l_total: l_matches + l_non_matches,
            n_matches: n_m,
            n_non_matches: n_nm,
            n_hard_negatives: hard.len(),
        },
        grad_a,
        grad_b,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::PairKind;
    use proptest::prelude::*;

    fn desc_from(w: usize, h: usize, dim: usize, f: impl Fn(usize, usize, usize) -> f64) -> DescriptorImage {
        let mut d = DescriptorImage::zeros(w, h, dim);
        for y in 0..h {
            for x in 0..w {
                for c in 0..dim {
                    d.at_mut(x, y)[c] = f(x, y, c);
                }
            }
        }
        d
    }

    fn pair(ua: (usize, usize), ub: (usize, usize), kind: PairKind) -> PixelPair {
        PixelPair {
            image_a: 0,
            image_b: 1,
            u_a: Pixel::at(ua.0, ua.1),
            u_b: Pixel::at(ub.0, ub.1),
            kind,
            object_a: 1,
            object_b: 1,
        }
    }

    /// Image whose descriptor at `(x, 0)` is `(values[x], 0)`.
    fn line(values: &[f64]) -> DescriptorImage {
        desc_from(values.len(), 1, 2, |x, _, c| if c == 0 { values[x] } else { 0.0 })
    }

    #[test]
    fn descriptor_lookup_rounds() {
        let d = desc_from(4, 3, 2, |x, y, c| (x * 100 + y * 10 + c) as f64);
        assert_eq!(descriptor_at(&d, Pixel::new(0.0, 0.0)).unwrap(), &[0.0, 1.0]);
        assert_eq!(descriptor_at(&d, Pixel::new(0.4, 0.6)).unwrap(), &[10.0, 11.0]);
        assert!(matches!(
            descriptor_at(&d, Pixel::new(4.0, 0.0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn distances() {
        let a = desc_from(1, 1, 2, |_, _, _| 0.0);
        let b = desc_from(1, 1, 2, |_, _, c| [3.0, 4.0][c]);
        let o = Pixel::at(0, 0);
        assert_eq!(pair_distance(&a, o, &a, o).unwrap(), 0.0);
        assert_eq!(pair_distance(&a, o, &b, o).unwrap(), 5.0);
        assert_eq!(pair_distance(&b, o, &a, o).unwrap(), 5.0);
    }

    #[test]
    fn match_loss_values() {
        let a = desc_from(1, 1, 2, |_, _, _| 0.0);
        let b = desc_from(1, 1, 2, |_, _, c| [3.0, 4.0][c]);
        let m = pair((0, 0), (0, 0), PairKind::Match);
        assert_eq!(match_loss(&a, &b, &[m]).unwrap(), 25.0);
        assert_eq!(match_loss(&a, &a, &[m, m]).unwrap(), 0.0);
        assert!(matches!(match_loss(&a, &b, &[]), Err(Error::NoMatches)));

        let a = line(&[0.0, 1.0, 2.0]);
        let b = line(&[0.5, 0.0, 4.0]);
        let ms = vec![
            pair((0, 0), (0, 0), PairKind::Match),
            pair((1, 0), (2, 0), PairKind::Match),
            pair((2, 0), (1, 0), PairKind::Match),
        ];
        let doubled: Vec<_> = ms.iter().chain(&ms).copied().collect();
        assert_eq!(match_loss(&a, &b, &ms).unwrap(), match_loss(&a, &b, &doubled).unwrap());
    }

    #[test]
    fn nonmatch_hand_values() {
        let a = line(&[0.0]);
        let b = line(&[0.1, 0.6, 0.4]);
        let nms: Vec<_> = (0..3).map(|x| pair((0, 0), (x, 0), PairKind::NonMatch)).collect();
        let (l, n) = nonmatch_loss(&a, &b, &nms, &LossConfig::default()).unwrap();
        assert_eq!(n, 2);
        assert!((l - 0.085).abs() < 1e-12);
        let off = LossConfig {
            hard_negative_scaling: false,
            ..LossConfig::default()
        };
        let (l, n) = nonmatch_loss(&a, &b, &nms, &off).unwrap();
        assert_eq!(n, 2);
        assert!((l - 0.17 / 3.0).abs() < 1e-12);

        let far = line(&[0.5, 0.9, 3.0]);
        assert_eq!(nonmatch_loss(&a, &far, &nms, &LossConfig::default()).unwrap(), (0.0, 0));
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let a = line(&[0.0, 1.0]);
        let mut set = CorrespondenceSet::new(ComparisonType::SingleObjectWithinScene);
        set.matches.push(pair((0, 0), (0, 0), PairKind::Match));
        set.non_matches.push(pair((0, 0), (1, 0), PairKind::NonMatch));
        let (r, ga, gb) = total_loss_and_grad(&a, &a, &set, &LossConfig::default()).unwrap();
        assert_eq!(r.l_total, 0.0);
        assert_eq!(r.n_hard_negatives, 0);
        assert!(ga.data.iter().chain(&gb.data).all(|&g| g == 0.0));
    }

    #[test]
    fn cross_object_sets_need_no_matches() {
        let a = line(&[0.0]);
        let b = line(&[0.2]);
        let mut set = CorrespondenceSet::new(ComparisonType::DifferentObjectAcrossScene);
        set.non_matches.push(pair((0, 0), (0, 0), PairKind::NonMatch));
        let (r, _, _) = total_loss_and_grad(&a, &b, &set, &LossConfig::default()).unwrap();
        assert_eq!(r.l_matches, 0.0);
        assert!((r.l_non_matches - 0.09).abs() < 1e-12);
        set.comparison_type = ComparisonType::SingleObjectWithinScene;
        assert!(matches!(
            total_loss_and_grad(&a, &b, &set, &LossConfig::default()),
            Err(Error::NoMatches)
        ));
    }

    fn loss_only(a: &DescriptorImage, b: &DescriptorImage, set: &CorrespondenceSet, cfg: &LossConfig) -> f64 {
        total_loss_and_grad(a, b, set, cfg).unwrap().0.l_total
    }

    /// Central differences over every descriptor entry of both images.
    fn check_gradient(a: &DescriptorImage, b: &DescriptorImage, set: &CorrespondenceSet, cfg: &LossConfig, tol: f64) {
        let (_, ga, gb) = total_loss_and_grad(a, b, set, cfg).unwrap();
        let h = 1e-6;
        for (which, grad) in [(0, &ga), (1, &gb)] {
            for i in 0..grad.data.len() {
                let (mut ap, mut am) = (a.clone(), a.clone());
                let (mut bp, mut bm) = (b.clone(), b.clone());
                if which == 0 {
                    ap.data[i] += h;
                    am.data[i] -= h;
                } else {
                    bp.data[i] += h;
                    bm.data[i] -= h;
                }
                let fd = (loss_only(&ap, &bp, set, cfg) - loss_only(&am, &bm, set, cfg)) / (2.0 * h);
                let an = grad.data[i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(err < tol || (fd - an).abs() < 1e-9, "entry {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn single_match_gradient() {
        let a = desc_from(2, 1, 3, |x, _, c| (x * 3 + c) as f64 * 0.1);
        let b = desc_from(2, 1, 3, |x, _, c| 0.7 - (x + c) as f64 * 0.2);
        let mut set = CorrespondenceSet::new(ComparisonType::SingleObjectWithinScene);
        set.matches.push(pair((1, 0), (0, 0), PairKind::Match));
        let (_, ga, _) = total_loss_and_grad(&a, &b, &set, &LossConfig::default()).unwrap();
        for c in 0..3 {
            let expect = 2.0 * (a.at(1, 0)[c] - b.at(0, 0)[c]);
            assert!((ga.at(1, 0)[c] - expect).abs() < 1e-12);
        }
        check_gradient(&a, &b, &set, &LossConfig::default(), 1e-5);
    }

    #[test]
    fn full_gradient_with_shared_pixels() {
        // Distances are kept away from the margin so the hard-negative count
        // is constant under the finite-difference perturbation.
        let a = desc_from(3, 2, 2, |x, y, c| ((x * 7 + y * 3 + c * 5) % 11) as f64 * 0.03);
        let b = desc_from(3, 2, 2, |x, y, c| ((x * 5 + y * 2 + c * 3) % 7) as f64 * 0.045);
        let mut set = CorrespondenceSet::new(ComparisonType::SingleObjectWithinScene);
        set.matches.push(pair((0, 0), (1, 1), PairKind::Match));
        set.matches.push(pair((0, 0), (2, 0), PairKind::Match));
        set.matches.push(pair((2, 1), (1, 1), PairKind::Match));
        for (ua, ub) in [
            ((0, 0), (0, 0)),
            ((1, 0), (1, 1)),
            ((2, 1), (0, 1)),
            ((1, 1), (2, 0)),
            ((0, 0), (2, 1)),
        ] {
            set.non_matches.push(pair(ua, ub, PairKind::NonMatch));
        }
        for scaling in [true, false] {
            let cfg = LossConfig {
                margin: 0.5,
                hard_negative_scaling: scaling,
            };
            for nm in &set.non_matches {
                let d = pair_distance(&a, nm.u_a, &b, nm.u_b).unwrap();
                assert!((d - cfg.margin).abs() > 1e-3 && d > 1e-3);
            }
            let (r, _, _) = total_loss_and_grad(&a, &b, &set, &cfg).unwrap();
            assert!(r.n_hard_negatives >= 2);
            check_gradient(&a, &b, &set, &cfg, 1e-5);
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<(usize, usize, bool)>)> {
        (
            prop::collection::vec(-1.0f64..1.0, 4 * 3 * 3),
            prop::collection::vec(-1.0f64..1.0, 4 * 3 * 3),
            prop::collection::vec((0usize..12, 0usize..12, any::<bool>()), 1..30),
        )
    }

    fn build(
        va: Vec<f64>,
        vb: Vec<f64>,
        pairs: &[(usize, usize, bool)],
    ) -> (DescriptorImage, DescriptorImage, CorrespondenceSet) {
        let img = |data| DescriptorImage {
            width: 4,
            height: 3,
            dim: 3,
            data,
        };
        let mut set = CorrespondenceSet::new(ComparisonType::SingleObjectWithinScene);
        set.matches.push(pair((0, 0), (0, 0), PairKind::Match));
        for &(i, j, is_match) in pairs {
            let p = pair(
                (i % 4, i / 4),
                (j % 4, j / 4),
                if is_match { PairKind::Match } else { PairKind::NonMatch },
            );
            if is_match {
                set.matches.push(p);
            } else {
                set.non_matches.push(p);
            }
        }
        (img(va), img(vb), set)
    }

    proptest! {
        #[test]
        fn report_invariants((va, vb, pairs) in arb_case(), scaling in any::<bool>()) {
            let (a, b, set) = build(va, vb, &pairs);
            let cfg = LossConfig { margin: 0.5, hard_negative_scaling: scaling };
            let (r, _, _) = total_loss_and_grad(&a, &b, &set, &cfg).unwrap();
            prop_assert!(r.n_hard_negatives <= r.n_non_matches);
            prop_assert!((r.l_total - (r.l_matches + r.l_non_matches)).abs() <= 1e-12);
            prop_assert!(r.l_matches >= 0.0 && r.l_non_matches >= 0.0);
            // Both normalizations vanish together.
            let other = LossConfig { hard_negative_scaling: !scaling, ..cfg };
            let (r2, _, _) = total_loss_and_grad(&a, &b, &set, &other).unwrap();
            prop_assert_eq!(r.l_non_matches == 0.0, r2.l_non_matches == 0.0);
            prop_assert_eq!(r.l_non_matches == 0.0, r.n_hard_negatives == 0);
        }

        #[test]
        fn gradient_vanishes_on_easy_negatives((va, vb, pairs) in arb_case()) {
            let (a, b, mut set) = build(va, vb, &pairs);
            set.matches.truncate(1);
            set.matches[0] = pair((0, 0), (0, 0), PairKind::Match);
            let cfg = LossConfig::default();
            let (_, ga, gb) = total_loss_and_grad(&a, &b, &set, &cfg).unwrap();
            let touched = |p: &PixelPair, hard_only: bool| {
                !hard_only || pair_distance(&a, p.u_a, &b, p.u_b).unwrap() < cfg.margin
            };
            for y in 0..3 {
                for x in 0..4 {
                    let px = Pixel::at(x, y);
                    let in_a = set.matches.iter().any(|m| m.u_a == px)
                        || set.non_matches.iter().any(|n| n.u_a == px && touched(n, true));
                    let in_b = set.matches.iter().any(|m| m.u_b == px)
                        || set.non_matches.iter().any(|n| n.u_b == px && touched(n, true));
                    if !in_a {
                        prop_assert!(ga.at(x, y).iter().all(|&g| g == 0.0));
                    }
                    if !in_b {
                        prop_assert!(gb.at(x, y).iter().all(|&g| g == 0.0));
                    }
                }
            }
        }

        #[test]
        fn isometry_invariance((va, vb, pairs) in arb_case(), angle in 0.0..std::f64::consts::TAU, shift in prop::array::uniform3(-2.0f64..2.0)) {
            let (a, b, set) = build(va, vb, &pairs);
            let (c, s) = (angle.cos(), angle.sin());
            let transform = |d: &DescriptorImage| {
                let mut out = d.clone();
                for px in out.data.chunks_exact_mut(3) {
                    let (x, y, z) = (px[0], px[1], px[2]);
                    px[0] = c * x - s * y + shift[0];
                    px[1] = s * x + c * y + shift[1];
                    px[2] = z + shift[2];
                }
                out
            };
            let cfg = LossConfig::default();
            let (r, _, _) = total_loss_and_grad(&a, &b, &set, &cfg).unwrap();
            let (rt, _, _) = total_loss_and_grad(&transform(&a), &transform(&b), &set, &cfg).unwrap();
            prop_assert!((r.l_total - rt.l_total).abs() <= 1e-9);
        }
    }
}
