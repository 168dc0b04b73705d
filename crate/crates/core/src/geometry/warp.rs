//! Depth-driven reprojection and forward splatting.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::{pose_distance, CameraIntrinsics, Pose};
use super::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

/// Splats below this bilinear weight are ignored entirely.
const MIN_SPLAT_WEIGHT: f64 = 1e-3;
/// A target pixel is valid once it has accumulated this much splat weight.
const MIN_COVER_WEIGHT: f64 = 0.25;
/// Largest admissible offset (pixels, per axis) between a target pixel centre
/// and the weighted centroid of the splats it received. Pixels on the rim of a
/// splatted region are only reached from one side and would otherwise take a
/// value from up to a pixel away.
const MAX_CENTROID_OFFSET: f64 = 0.25;
/// Splats within this relative depth of the nearest one blend; anything
/// farther is occluded.
const DEPTH_BAND: f64 = 0.05;

/// Per-pixel target coordinates of a source view under a relative pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Reprojection {
    pub width: usize,
    pub height: usize,
    /// Continuous `(u, v)` target coordinates, row-major over source pixels.
    pub coords: Vec<[f64; 2]>,
    /// Target-camera `z` of each transformed point.
    pub target_depth: Vec<f64>,
    /// False for undefined source depth, points behind the target camera, or
    /// points whose splat footprint cannot touch the target frame.
    pub valid: Vec<bool>,
}

impl Reprojection {
    /// Every pixel maps onto its own centre at the given depth order.
    pub fn identity(width: usize, height: usize, depth: &[f64]) -> Self {
        let coords = (0..height)
            .flat_map(|y| (0..width).map(move |x| [x as f64 + 0.5, y as f64 + 0.5]))
            .collect();
        Self {
            width,
            height,
            coords,
            target_depth: depth.to_vec(),
            valid: vec![true; width * height],
        }
    }
}

/// Back-project every source pixel with its depth, move it by `delta_pose`
/// (source camera frame to target camera frame) and project with the same
/// intrinsics.
pub fn reproject_pixels(
    intrinsics: &CameraIntrinsics,
    depth: &DepthMap,
    delta_pose: &Pose,
) -> Result<Reprojection> {
    if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
        return Err(Error::shape(
            (intrinsics.height, intrinsics.width),
            (depth.height(), depth.width()),
        ));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    if *delta_pose == Pose::identity() {
        let mut r = Reprojection::identity(w, h, depth.values());
        r.valid = depth.validity().to_vec();
        return Ok(r);
    }
    let mut coords = Vec::with_capacity(w * h);
    let mut target_depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let Some(z) = depth.get(p) else {
                coords.push([u, v]);
                target_depth.push(0.0);
                valid.push(false);
                continue;
            };
            let point = intrinsics.unproject(u, v) * z;
            let moved: Vector3<f64> = delta_pose.transform_point(&point);
            if moved.z <= 0.0 {
                coords.push([f64::NAN, f64::NAN]);
                target_depth.push(moved.z);
                valid.push(false);
                continue;
            }
            let (tu, tv) = intrinsics.project(&moved);
            let in_reach = tu > -0.5 && tu < w as f64 + 0.5 && tv > -0.5 && tv < h as f64 + 0.5;
            coords.push([tu, tv]);
            target_depth.push(moved.z);
            valid.push(in_reach && tu.is_finite() && tv.is_finite());
        }
    }
    Ok(Reprojection {
        width: w,
        height: h,
        coords,
        target_depth,
        valid,
    })
}

/// Warped image plus the mask of target pixels that received any splat.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub image: ImageGrid,
    pub validity: Vec<bool>,
    pub coverage: f64,
}

impl WarpResult {
    pub fn new(image: ImageGrid, validity: Vec<bool>) -> Result<Self> {
        if validity.len() != image.shape().pixels() {
            return Err(Error::shape(image.shape().pixels(), validity.len()));
        }
        let mut image = image;
        for (p, ok) in validity.iter().enumerate() {
            if !ok {
                image.pixel_mut(p).fill(0.0);
            }
        }
        let coverage = validity.iter().filter(|v| **v).count() as f64 / validity.len().max(1) as f64;
        Ok(Self {
            image,
            validity,
            coverage,
        })
    }

    /// A prior that is valid everywhere.
    pub fn full(image: ImageGrid) -> Self {
        let n = image.shape().pixels();
        Self {
            image,
            validity: vec![true; n],
            coverage: 1.0,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }
}

struct Splat {
    target: usize,
    weight: f64,
    offset: [f64; 2],
    depth: f64,
    source: usize,
}

fn splats(reproj: &Reprojection) -> Vec<Splat> {
    let (w, h) = (reproj.width as i64, reproj.height as i64);
    let mut out = Vec::with_capacity(reproj.coords.len() * 4);
    for (source, (&[u, v], &ok)) in reproj.coords.iter().zip(&reproj.valid).enumerate() {
        if !ok {
            continue;
        }
        // position relative to the pixel-centre lattice
        let (gx, gy) = (u - 0.5, v - 0.5);
        let (x0, y0) = (gx.floor(), gy.floor());
        let (ax, ay) = (gx - x0, gy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let corners = [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x0 + 1, y0, ax * (1.0 - ay)),
            (x0, y0 + 1, (1.0 - ax) * ay),
            (x0 + 1, y0 + 1, ax * ay),
        ];
        for (tx, ty, weight) in corners {
            if weight < MIN_SPLAT_WEIGHT || tx < 0 || ty < 0 || tx >= w || ty >= h {
                continue;
            }
            out.push(Splat {
                target: (ty * w + tx) as usize,
                weight,
                offset: [gx - tx as f64, gy - ty as f64],
                depth: reproj.target_depth[source],
                source,
            });
        }
    }
    out
}

/// Forward-splat `source` along `reproj` with a bilinear footprint.
///
/// Two passes: the first finds the nearest depth reaching each target pixel,
/// the second blends only splats within `DEPTH_BAND` of it. The result does
/// not depend on the order in which splats are visited beyond floating-point
/// summation order, which is fixed (row-major over source pixels).
pub fn forward_warp(source: &ImageGrid, reproj: &Reprojection) -> Result<WarpResult> {
    let shape = source.shape();
    if shape.width != reproj.width
        || shape.height != reproj.height
        || reproj.coords.len() != shape.pixels()
        || reproj.target_depth.len() != shape.pixels()
        || reproj.valid.len() != shape.pixels()
    {
        return Err(Error::shape(
            (shape.height, shape.width),
            (reproj.height, reproj.width, reproj.coords.len()),
        ));
    }
    let splats = splats(reproj);
    let n = shape.pixels();
    let mut nearest = vec![f64::INFINITY; n];
    for s in &splats {
        if s.depth < nearest[s.target] {
            nearest[s.target] = s.depth;
        }
    }
    let c = shape.channels;
    let mut acc = vec![0.0; n * c];
    let mut weight = vec![0.0; n];
    let mut centroid = vec![[0.0; 2]; n];
    for s in &splats {
        if s.depth > nearest[s.target] * (1.0 + DEPTH_BAND) {
            continue;
        }
        weight[s.target] += s.weight;
        centroid[s.target][0] += s.weight * s.offset[0];
        centroid[s.target][1] += s.weight * s.offset[1];
        let src = source.pixel(s.source);
        for (a, v) in acc[s.target * c..(s.target + 1) * c].iter_mut().zip(src) {
            *a += s.weight * v;
        }
    }
    let validity: Vec<bool> = weight
        .iter()
        .zip(&centroid)
        .map(|(&w, c)| {
            w >= MIN_COVER_WEIGHT
                && (c[0] / w).abs() <= MAX_CENTROID_OFFSET
                && (c[1] / w).abs() <= MAX_CENTROID_OFFSET
        })
        .collect();
    for p in 0..n {
        let slot = &mut acc[p * c..(p + 1) * c];
        if validity[p] {
            slot.iter_mut().for_each(|a| *a /= weight[p]);
        } else {
            slot.fill(0.0);
        }
    }
    WarpResult::new(ImageGrid::from_vec(Shape::new(shape.height, shape.width, c), acc)?, validity)
}

/// An input view: image, its depth, and its camera-to-world pose.
#[derive(Clone, Debug)]
pub struct SourceView {
    pub image: ImageGrid,
    pub depth: DepthMap,
    pub pose: Pose,
}

/// How the prior for one target pose is chosen among the input views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpStrategy {
    /// Warp the only input view.
    Single,
    /// Warp the input view closest to the target (ties go to the lowest index).
    NearestMulti,
    /// Warp the input view with the same timestamp as the target frame.
    PerTimestamp,
}

/// Warped prior for one target plus the bookkeeping the guidance needs.
#[derive(Clone, Debug)]
pub struct PriorWarp {
    pub warp: WarpResult,
    pub source_index: usize,
    pub pose_distance: f64,
}

/// Warps the selected input view to `target`. `frame` / `frame_count`
/// identify the target's timestamp and are only consulted by
/// [`WarpStrategy::PerTimestamp`].
pub fn warp_prior(
    sources: &[SourceView],
    target: &Pose,
    intrinsics: &CameraIntrinsics,
    strategy: WarpStrategy,
    frame: usize,
    frame_count: usize,
) -> Result<PriorWarp> {
    if sources.is_empty() {
        return Err(Error::invalid("warp_prior needs at least one source view"));
    }
    let source_index = match strategy {
        WarpStrategy::Single => {
            if sources.len() != 1 {
                return Err(Error::invalid(format!(
                    "single-view strategy given {} sources",
                    sources.len()
                )));
            }
            0
        }
        WarpStrategy::NearestMulti => {
            let mut best = (0, f64::INFINITY);
            for (i, s) in sources.iter().enumerate() {
                let d = pose_distance(&s.pose, target);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        }
        WarpStrategy::PerTimestamp => {
            if sources.len() != frame_count {
                return Err(Error::invalid(format!(
                    "per-timestamp warping needs one source per target frame ({} sources, {} frames)",
                    sources.len(),
                    frame_count
                )));
            }
            if frame >= frame_count {
                return Err(Error::invalid(format!("frame {frame} out of range")));
            }
            frame
        }
    };
    let source = &sources[source_index];
    if source.image.width() != intrinsics.width || source.image.height() != intrinsics.height {
        return Err(Error::shape(
            (intrinsics.height, intrinsics.width),
            (source.image.height(), source.image.width()),
        ));
    }
    let delta = Pose::relative(&source.pose, target);
    let reproj = reproject_pixels(intrinsics, &source.depth, &delta)?;
    Ok(PriorWarp {
        warp: forward_warp(&source.image, &reproj)?,
        source_index,
        pose_distance: pose_distance(&source.pose, target),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nvs_oracle::{nearest_depth_winner, reproject_point, Pinhole};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pinhole(k: &CameraIntrinsics) -> Pinhole {
        Pinhole {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        }
    }

    fn rows(p: &Pose) -> ([[f64; 3]; 3], [f64; 3]) {
        let r = p.rotation();
        let t = p.translation();
        (
            [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            [t.x, t.y, t.z],
        )
    }

    #[test]
    fn identity_reprojection_is_pixel_grid() {
        let k = CameraIntrinsics::canonical(9, 7);
        let depth = DepthMap::new(9, 7, (0..63).map(|i| 1.0 + i as f64 * 0.1).collect()).unwrap();
        let r = reproject_pixels(&k, &depth, &Pose::identity()).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                assert_eq!(r.coords[y * 9 + x], [x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
        assert!(r.valid.iter().all(|v| *v));
    }

    #[test]
    fn fronto_parallel_shift_matches_brute_force() {
        let k = CameraIntrinsics::canonical(16, 16);
        let (d, b) = (2.0, 0.25);
        let depth = DepthMap::constant(16, 16, d).unwrap();
        let delta = Pose::from_translation(Vector3::new(b, 0.0, 0.0));
        let r = reproject_pixels(&k, &depth, &delta).unwrap();
        let (rot, t) = rows(&delta);
        for y in 0..16 {
            for x in 0..16 {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let want = reproject_point(pinhole(&k), u, v, d, &rot, &t).unwrap();
                let got = r.coords[y * 16 + x];
                assert!((got[0] - want.0).abs() < 1e-12 && (got[1] - want.1).abs() < 1e-12);
                assert!((got[0] - u - k.fx * b / d).abs() < 1e-12);
                assert!((got[1] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn principal_point_stays_under_forward_motion() {
        let k = CameraIntrinsics::new(10.0, 10.0, 0.5, 0.5, 1, 1).unwrap();
        let depth = DepthMap::constant(1, 1, 1.0).unwrap();
        let delta = Pose::from_translation(Vector3::new(0.0, 0.0, -0.5));
        let r = reproject_pixels(&k, &depth, &delta).unwrap();
        assert_eq!(r.coords[0], [0.5, 0.5]);
        assert_eq!(r.target_depth[0], 0.5);
    }

    #[test]
    fn behind_camera_flagged_invalid() {
        let k = CameraIntrinsics::canonical(2, 2);
        let depth = DepthMap::constant(2, 2, 1.0).unwrap();
        let delta = Pose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let r = reproject_pixels(&k, &depth, &delta).unwrap();
        assert!(r.valid.iter().all(|v| !v));
    }

    #[test]
    fn random_poses_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(20.0, 22.0, 6.0, 5.0, 12, 10).unwrap();
        for _ in 0..20 {
            let depth =
                DepthMap::new(12, 10, (0..120).map(|_| rng.random_range(0.5..4.0)).collect()).unwrap();
            let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
            let delta = Pose::from_axis_angle(
                axis,
                rng.random_range(-0.3..0.3),
                Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.1),
            );
            let r = reproject_pixels(&k, &depth, &delta).unwrap();
            let (rot, t) = rows(&delta);
            for p in 0..120 {
                let (u, v) = ((p % 12) as f64 + 0.5, (p / 12) as f64 + 0.5);
                if let Some(want) = reproject_point(pinhole(&k), u, v, depth.values()[p], &rot, &t) {
                    let got = r.coords[p];
                    assert!((got[0] - want.0).abs() < 1e-9 && (got[1] - want.1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ImageGrid::from_fn(Shape::new(5, 6, 3), |y, x, c| (y * 31 + x * 7 + c) as f64 / 100.0);
        let reproj = Reprojection::identity(6, 5, &vec![1.0; 30]);
        let w = forward_warp(&img, &reproj).unwrap();
        assert_eq!(w.image, img);
        assert!(w.validity.iter().all(|v| *v));
        assert_eq!(w.coverage, 1.0);
    }

    #[test]
    fn everything_outside_is_empty() {
        let img = ImageGrid::filled(Shape::new(4, 4, 1), 0.7);
        let mut reproj = Reprojection::identity(4, 4, &[1.0; 16]);
        for c in &mut reproj.coords {
            c[0] += 100.0;
        }
        let w = forward_warp(&img, &reproj).unwrap();
        assert!(w.validity.iter().all(|v| !v));
        assert_eq!(w.coverage, 0.0);
        assert!(w.image.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nearer_splat_wins_collision() {
        let img = ImageGrid::from_vec(Shape::new(1, 2, 1), vec![0.25, 0.75]).unwrap();
        let reproj = Reprojection {
            width: 2,
            height: 1,
            coords: vec![[0.5, 0.5], [0.5, 0.5]],
            target_depth: vec![2.0, 1.0],
            valid: vec![true, true],
        };
        let w = forward_warp(&img, &reproj).unwrap();
        assert_eq!(w.image.get(0, 0, 0), 0.75);
        assert_eq!(w.validity, vec![true, false]);
        assert_eq!(w.coverage, 0.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = ImageGrid::zeros(Shape::new(2, 2, 1));
        let reproj = Reprojection::identity(3, 2, &[1.0; 6]);
        assert!(forward_warp(&img, &reproj).is_err());
    }

    proptest! {
        // Integer-centred targets make each splat a single-pixel footprint,
        // so the brute-force nearest-depth winner is the exact expectation.
        #[test]
        fn zbuffer_matches_brute_force(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let img = ImageGrid::from_fn(Shape::new(n, n, 2), |_, _, _| rng.random());
            let mut coords = Vec::new();
            let mut depth = Vec::new();
            for _ in 0..n * n {
                coords.push([rng.random_range(0..n) as f64 + 0.5, rng.random_range(0..n) as f64 + 0.5]);
                // well separated depth levels so the blend band never merges two
                depth.push(1.07f64.powi(rng.random_range(0..60)));
            }
            let reproj = Reprojection { width: n, height: n, coords: coords.clone(), target_depth: depth.clone(), valid: vec![true; n * n] };
            let warped = forward_warp(&img, &reproj).unwrap();
            let splats: Vec<_> = (0..n * n).map(|p| {
                let t = (coords[p][1] - 0.5) as usize * n + (coords[p][0] - 0.5) as usize;
                (t, depth[p], img.pixel(p).to_vec())
            }).collect();
            let want = nearest_depth_winner(n * n, &splats);
            for (t, w) in want.iter().enumerate() {
                // equal depths blend; skip those cells
                let ties = splats.iter().filter(|s| s.0 == t).map(|s| s.1).collect::<Vec<_>>();
                let min = ties.iter().cloned().fold(f64::INFINITY, f64::min);
                if ties.iter().filter(|d| **d == min).count() > 1 { continue; }
                match w {
                    None => prop_assert!(!warped.validity[t]),
                    Some(v) => {
                        prop_assert!(warped.validity[t]);
                        prop_assert_eq!(warped.image.pixel(t), v.as_slice());
                    }
                }
            }
        }
    }

    fn views() -> Vec<SourceView> {
        let k = CameraIntrinsics::canonical(8, 8);
        [0.1, -0.1]
            .iter()
            .map(|x| SourceView {
                image: ImageGrid::filled(Shape::new(8, 8, 1), 0.5),
                depth: DepthMap::constant(k.width, k.height, 2.0).unwrap(),
                pose: Pose::from_translation(Vector3::new(*x, 0.0, 0.0)),
            })
            .collect()
    }

    #[test]
    fn nearest_multi_picks_argmin_and_breaks_ties_low() {
        let k = CameraIntrinsics::canonical(8, 8);
        let v = views();
        let near_first = Pose::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let p = warp_prior(&v, &near_first, &k, WarpStrategy::NearestMulti, 0, 1).unwrap();
        assert_eq!(p.source_index, 0);
        let near_second = Pose::from_translation(Vector3::new(-0.6, 0.0, 0.0));
        let p = warp_prior(&v, &near_second, &k, WarpStrategy::NearestMulti, 0, 1).unwrap();
        assert_eq!(p.source_index, 1);
        let midway = Pose::identity();
        let p = warp_prior(&v, &midway, &k, WarpStrategy::NearestMulti, 0, 1).unwrap();
        assert_eq!(p.source_index, 0);
    }

    #[test]
    fn single_at_source_pose_is_identity() {
        let k = CameraIntrinsics::canonical(8, 8);
        let v = vec![views().remove(0)];
        let p = warp_prior(&v, &v[0].pose, &k, WarpStrategy::Single, 0, 1).unwrap();
        assert_eq!(p.warp.image, v[0].image);
        assert_eq!(p.warp.coverage, 1.0);
        assert_eq!(p.pose_distance, 0.0);
    }

    #[test]
    fn strategy_errors() {
        let k = CameraIntrinsics::canonical(8, 8);
        assert!(warp_prior(&[], &Pose::identity(), &k, WarpStrategy::Single, 0, 1).is_err());
        let v = views();
        assert!(warp_prior(&v, &Pose::identity(), &k, WarpStrategy::PerTimestamp, 0, 3).is_err());
        let p = warp_prior(&v, &Pose::identity(), &k, WarpStrategy::PerTimestamp, 1, 2).unwrap();
        assert_eq!(p.source_index, 1);
    }
}
