//! Deterministic synthetic multi-view datasets with exact ground truth:
//! clean static renders, transient masks, instance segmentations and static
//! depth, all reproducible from a single seed.
//!
//! The world is a plane of gaussian-cluster "objects". Static objects are
//! drawn once and shared by every view; transient objects are temporary
//! occluders in a nearer depth band whose lifetime follows a per-view
//! persistence process. Ground-truth masks and instances come from the
//! renderer's own per-object contribution rasters, so they are exact by
//! construction rather than annotated.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::{
    io as rio, DepthMap, FeatureMap, Image, Instance, InstanceSet, MaskMap, ScalarRaster,
};
use crate::splat::{
    inverse_sigmoid, render_grouped, Gaussian2D, GaussianScene, SplatError, ViewCamera,
};

#[derive(Debug, Error)]
pub enum SceneGenError {
    #[error("degenerate spec: {reason}")]
    DegenerateSpec { reason: String },
    #[error(transparent)]
    Splat(#[from] SplatError),
    #[error(transparent)]
    Io(#[from] rio::RasterIoError),
    #[error(transparent)]
    SceneIo(#[from] crate::splat::io::SceneIoError),
    #[error("dataset at {dir}: {reason}")]
    BadDataset { dir: PathBuf, reason: String },
}

/// Everything needed to draw one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub view_count: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// World units per pixel.
    pub pixel_scale: f64,
    pub static_objects: usize,
    /// Cluster radius range for static objects, world units.
    pub static_size: (f64, f64),
    pub transients_per_view: usize,
    /// Probability that a transient object recurs in the next view.
    pub p_persist: f64,
    /// Cluster radius range for transient objects, world units.
    pub transient_size: (f64, f64),
    /// Channel amplitude around mid-gray for transient colors.
    pub transient_contrast: (f64, f64),
    /// Camera center jitter, world units.
    pub camera_jitter: f64,
    /// Camera rotation jitter, radians.
    pub rotation_jitter: f64,
    /// Alpha-weighted contribution above which a pixel counts as covered.
    pub tau_vis: f64,
}

impl SceneSpec {
    /// Small desk-scale dataset used throughout the test suite.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            seed,
            view_count: 48,
            image_width: 128,
            image_height: 96,
            pixel_scale: 0.1,
            static_objects: 14,
            static_size: (0.7, 1.3),
            transients_per_view: 2,
            p_persist: 0.0,
            transient_size: (1.3, 1.7),
            transient_contrast: (0.44, 0.48),
            camera_jitter: 0.4,
            rotation_jitter: 0.05,
            tau_vis: 0.05,
        }
    }

    pub fn world_size(&self) -> [f64; 2] {
        [
            self.image_width as f64 * self.pixel_scale,
            self.image_height as f64 * self.pixel_scale,
        ]
    }

    fn validate(&self) -> Result<(), SceneGenError> {
        if self.view_count == 0 {
            return Err(SceneGenError::DegenerateSpec { reason: "zero views".into() });
        }
        if !(0.0..=1.0).contains(&self.p_persist) {
            return Err(SceneGenError::DegenerateSpec {
                reason: format!("p_persist {} outside [0, 1]", self.p_persist),
            });
        }
        if self.pixel_scale <= 0.0 {
            return Err(SceneGenError::DegenerateSpec { reason: "pixel scale <= 0".into() });
        }
        Ok(())
    }
}

/// One training view with its ground truth and provider cache slots.
#[derive(Debug, Clone)]
pub struct ViewFrame {
    pub view_id: usize,
    pub camera: ViewCamera,
    /// Static content plus transients, the training target.
    pub gt_image: Image,
    /// Static content only, the evaluation reference.
    pub clean_static: Image,
    /// Keep polarity: 0 where transient contribution exceeds tau_vis.
    pub gt_transient_mask: MaskMap,
    pub gt_static_depth: DepthMap,
    /// Every object, static and transient, visible in this view.
    pub gt_instances: InstanceSet,
    /// Provider caches, write-once per view.
    pub features: Option<FeatureMap>,
    pub provider_depth: Option<DepthMap>,
    pub provider_instances: Option<InstanceSet>,
}

/// A gaussian-cluster object.
#[derive(Debug, Clone)]
struct ClusterObject {
    gaussians: Vec<Gaussian2D>,
}

struct ClusterShape {
    count: std::ops::RangeInclusive<usize>,
    /// Per-gaussian scale as a fraction of the cluster radius.
    sigma_frac: (f64, f64),
    /// Center spread as a fraction of the cluster radius.
    spread: f64,
    opacity: f64,
}

/// Soft, fluffy scenery clusters.
const STATIC_SHAPE: ClusterShape =
    ClusterShape { count: 3..=8, sigma_frac: (0.35, 0.6), spread: 0.7, opacity: 0.95 };
/// Dense, sharp-edged occluders: many nearly-opaque splats packed into a
/// compact round footprint so the composite alpha saturates in the interior
/// and falls off within a few pixels.
const TRANSIENT_SHAPE: ClusterShape =
    ClusterShape { count: 6..=9, sigma_frac: (0.3, 0.45), spread: 0.55, opacity: 0.995 };

fn sample_cluster(
    rng: &mut ChaCha8Rng,
    center: [f64; 2],
    radius: f64,
    depth_band: (f64, f64),
    base_color: [f64; 3],
    shape: &ClusterShape,
) -> ClusterObject {
    let count = rng.gen_range(shape.count.clone());
    let depth = rng.gen_range(depth_band.0..depth_band.1);
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = radius * shape.spread * rng.gen_range(0.0f64..1.0).sqrt();
        // Shared luminance jitter keeps the saturation of the base color.
        let color_jitter = rng.gen_range(-0.05..0.05);
        let color = [
            (base_color[0] + color_jitter).clamp(0.02, 0.98),
            (base_color[1] + color_jitter).clamp(0.02, 0.98),
            (base_color[2] + color_jitter).clamp(0.02, 0.98),
        ];
        let scale = radius * rng.gen_range(shape.sigma_frac.0..shape.sigma_frac.1);
        gaussians.push(Gaussian2D {
            mu: [center[0] + dist * angle.cos(), center[1] + dist * angle.sin()],
            log_scale: [
                (scale * rng.gen_range(0.8..1.2)).ln(),
                (scale * rng.gen_range(0.8..1.2)).ln(),
            ],
            theta: rng.gen_range(-1.5..1.5),
            opacity_logit: inverse_sigmoid(shape.opacity),
            color_logit: [
                inverse_sigmoid(color[0]),
                inverse_sigmoid(color[1]),
                inverse_sigmoid(color[2]),
            ],
            // Gaussians of one object share a depth band.
            depth: depth + rng.gen_range(-0.05..0.05),
        })
    }
    ClusterObject { gaussians }
}

const STATIC_DEPTH_BAND: (f64, f64) = (5.0, 9.0);
const TRANSIENT_DEPTH_BAND: (f64, f64) = (1.5, 3.5);

fn centered_camera(spec: &SceneSpec, center: [f64; 2], rotation: f64) -> ViewCamera {
    let half = [
        spec.image_width as f64 * spec.pixel_scale * 0.5,
        spec.image_height as f64 * spec.pixel_scale * 0.5,
    ];
    let (c, s) = (rotation.cos(), rotation.sin());
    ViewCamera {
        origin: [
            center[0] - (c * half[0] - s * half[1]),
            center[1] - (s * half[0] + c * half[1]),
        ],
        rotation,
        pixel_scale: spec.pixel_scale,
        width: spec.image_width,
        height: spec.image_height,
    }
}

/// Keep-polarity mask from a summed transient contribution raster:
/// 0 strictly above `tau_vis`, 1 otherwise.
pub fn transient_mask_from_contribution(contrib: &ScalarRaster, tau_vis: f64) -> MaskMap {
    MaskMap {
        width: contrib.width,
        height: contrib.height,
        data: contrib.data.iter().map(|&v| if v > tau_vis { 0.0 } else { 1.0 }).collect(),
    }
}

/// Draws the full dataset. The static scene is drawn once from the seed;
/// each view renders it through a jittered camera and composites the
/// transient clusters active in that view.
pub fn generate(spec: &SceneSpec) -> Result<(Vec<ViewFrame>, GaussianScene), SceneGenError> {
    spec.validate()?;
    let world = spec.world_size();
    let margin = 0.08;

    let mut rng_static = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5354));
    let mut static_objects: Vec<ClusterObject> = Vec::with_capacity(spec.static_objects);
    for _ in 0..spec.static_objects {
        let center = [
            rng_static.gen_range(world[0] * margin..world[0] * (1.0 - margin)),
            rng_static.gen_range(world[1] * margin..world[1] * (1.0 - margin)),
        ];
        let radius = rng_static.gen_range(spec.static_size.0..=spec.static_size.1);
        // Low-saturation scenery palette: a shared luminance with a small
        // per-channel tint. Saturated hues are reserved for transients so
        // feature similarity separates the two reliably.
        let luminance = rng_static.gen_range(0.35..0.7);
        let color = [
            (luminance + rng_static.gen_range(-0.04..0.04f64)).clamp(0.05, 0.95),
            (luminance + rng_static.gen_range(-0.04..0.04f64)).clamp(0.05, 0.95),
            (luminance + rng_static.gen_range(-0.04..0.04f64)).clamp(0.05, 0.95),
        ];
        static_objects.push(sample_cluster(
            &mut rng_static,
            center,
            radius,
            STATIC_DEPTH_BAND,
            color,
            &STATIC_SHAPE,
        ));
    }
    let static_scene = GaussianScene::from_gaussians(
        static_objects.iter().flat_map(|o| o.gaussians.iter().copied()).collect(),
    );

    let mut rng_cam = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0xCA0A));
    let mut rng_trans = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x7A17));

    let mut active_transients: Vec<ClusterObject> = Vec::new();
    let mut views = Vec::with_capacity(spec.view_count);

    for view_id in 0..spec.view_count {
        let center = [
            world[0] * 0.5 + rng_cam.gen_range(-spec.camera_jitter..=spec.camera_jitter),
            world[1] * 0.5 + rng_cam.gen_range(-spec.camera_jitter..=spec.camera_jitter),
        ];
        let rotation = rng_cam.gen_range(-spec.rotation_jitter..=spec.rotation_jitter);
        let camera = centered_camera(spec, center, rotation);

        // Persistence process: survivors carry over, then top up to the
        // per-view count with fresh spawns.
        active_transients.retain(|_| rng_trans.gen::<f64>() < spec.p_persist);
        while active_transients.len() < spec.transients_per_view {
            let t_center = [
                rng_trans.gen_range(world[0] * 0.15..world[0] * 0.85),
                rng_trans.gen_range(world[1] * 0.15..world[1] * 0.85),
            ];
            let radius = rng_trans.gen_range(spec.transient_size.0..=spec.transient_size.1);
            let contrast =
                rng_trans.gen_range(spec.transient_contrast.0..=spec.transient_contrast.1);
            // Saturated single-hue colors: one channel up, two down. Gray-ish
            // transients would be invisible to scale-invariant feature
            // similarity.
            let hot = rng_trans.gen_range(0usize..3);
            let mut color = [0.5 - contrast; 3];
            color[hot] = 0.5 + contrast;
            active_transients.push(sample_cluster(
                &mut rng_trans,
                t_center,
                radius,
                TRANSIENT_DEPTH_BAND,
                color,
                &TRANSIENT_SHAPE,
            ));
        }

        // Object group ids: statics first, transients after.
        let n_static = static_objects.len();
        let n_groups = n_static + active_transients.len();
        let mut gaussians = Vec::new();
        let mut groups = Vec::new();
        for (oi, obj) in static_objects.iter().enumerate() {
            for g in &obj.gaussians {
                gaussians.push(*g);
                groups.push(oi as u32);
            }
        }
        for (ti, obj) in active_transients.iter().enumerate() {
            for g in &obj.gaussians {
                gaussians.push(*g);
                groups.push((n_static + ti) as u32);
            }
        }
        let combined = GaussianScene::from_gaussians(gaussians);
        let (combined_out, contrib) = render_grouped(&combined, &camera, &groups, n_groups)?;

        let static_out = crate::splat::render(&static_scene, &camera)?;

        let mut transient_contrib = MaskMap::new(camera.width, camera.height, 0.0);
        for c in &contrib[n_static..] {
            for (acc, v) in transient_contrib.data.iter_mut().zip(&c.data) {
                *acc += v;
            }
        }
        let gt_transient_mask = transient_mask_from_contribution(&transient_contrib, spec.tau_vis);

        // Dense instance ids: visible objects only, statics before
        // transients, matching the on-disk one-hot plane order.
        let mut instances = InstanceSet::new(camera.width, camera.height);
        for c in contrib.iter() {
            let pixels: Vec<u32> = c
                .data
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > spec.tau_vis)
                .map(|(i, _)| i as u32)
                .collect();
            if !pixels.is_empty() {
                let id = instances.instances.len() as u32;
                instances.instances.push(Instance { id, pixels });
            }
        }

        views.push(ViewFrame {
            view_id,
            camera,
            gt_image: combined_out.image,
            clean_static: static_out.image,
            gt_transient_mask,
            gt_static_depth: static_out.depth,
            gt_instances: instances,
            features: None,
            provider_depth: None,
            provider_instances: None,
        });
    }

    Ok((views, static_scene))
}

fn view_dir(dir: &Path, view_id: usize) -> PathBuf {
    dir.join(format!("view_{view_id:04}"))
}

fn write_camera(path: &Path, cam: &ViewCamera) -> std::io::Result<()> {
    let content = format!(
        "origin_x = {:.17e}\norigin_y = {:.17e}\nrotation = {:.17e}\npixel_scale = {:.17e}\nwidth = {}\nheight = {}\n",
        cam.origin[0], cam.origin[1], cam.rotation, cam.pixel_scale, cam.width, cam.height
    );
    std::fs::write(path, content)
}

fn read_camera(path: &Path) -> Result<ViewCamera, SceneGenError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneGenError::BadDataset {
        dir: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut cam = ViewCamera { origin: [0.0; 2], rotation: 0.0, pixel_scale: 0.0, width: 0, height: 0 };
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: String| SceneGenError::BadDataset { dir: path.to_path_buf(), reason: e };
        match key {
            "origin_x" => cam.origin[0] = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "origin_y" => cam.origin[1] = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "rotation" => cam.rotation = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "pixel_scale" => cam.pixel_scale = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "width" => cam.width = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "height" => cam.height = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            other => {
                return Err(SceneGenError::BadDataset {
                    dir: path.to_path_buf(),
                    reason: format!("unknown camera key {other}"),
                })
            }
        }
    }
    if cam.width == 0 || cam.height == 0 || cam.pixel_scale <= 0.0 {
        return Err(SceneGenError::BadDataset {
            dir: path.to_path_buf(),
            reason: "incomplete camera file".into(),
        });
    }
    Ok(cam)
}

/// Writes `view_XXXX/{gt.png, static.png, tmask.png, depth.ras1,
/// instances.ras1, camera.txt}` plus the true static scene checkpoint.
pub fn write_dataset(
    dir: &Path,
    views: &[ViewFrame],
    static_scene: &GaussianScene,
) -> Result<(), SceneGenError> {
    std::fs::create_dir_all(dir).map_err(|e| SceneGenError::BadDataset {
        dir: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    for view in views {
        let vdir = view_dir(dir, view.view_id);
        std::fs::create_dir_all(&vdir).map_err(|e| SceneGenError::BadDataset {
            dir: vdir.clone(),
            reason: e.to_string(),
        })?;
        rio::write_image_png(&vdir.join("gt.png"), &view.gt_image)?;
        rio::write_image_png(&vdir.join("static.png"), &view.clean_static)?;
        rio::write_mask_png(&vdir.join("tmask.png"), &view.gt_transient_mask)?;
        rio::write_depth_ras1(&vdir.join("depth.ras1"), &view.gt_static_depth)?;
        rio::write_instances_ras1(&vdir.join("instances.ras1"), &view.gt_instances)?;
        write_camera(&vdir.join("camera.txt"), &view.camera).map_err(|e| {
            SceneGenError::BadDataset { dir: vdir.clone(), reason: e.to_string() }
        })?;
    }
    crate::splat::io::write_scene(&dir.join("scene.gs2d"), static_scene, false)?;
    Ok(())
}

/// Loads a dataset directory written by [`write_dataset`]. Images come back
/// 8-bit quantized; every later phase consumes exactly these files.
pub fn read_dataset(dir: &Path) -> Result<(Vec<ViewFrame>, GaussianScene), SceneGenError> {
    let mut view_ids = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| SceneGenError::BadDataset {
        dir: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| SceneGenError::BadDataset {
            dir: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("view_").and_then(|s| s.parse::<usize>().ok()) {
            view_ids.push(id);
        }
    }
    if view_ids.is_empty() {
        return Err(SceneGenError::BadDataset {
            dir: dir.to_path_buf(),
            reason: "no view_XXXX directories".into(),
        });
    }
    view_ids.sort_unstable();

    let mut views = Vec::with_capacity(view_ids.len());
    for id in view_ids {
        let vdir = view_dir(dir, id);
        let camera = read_camera(&vdir.join("camera.txt"))?;
        let (w, h) = (camera.width, camera.height);
        let gt_image = rio::read_image_png(&vdir.join("gt.png"))?;
        let clean_static = rio::read_image_png(&vdir.join("static.png"))?;
        let gt_transient_mask = rio::read_mask_png(&vdir.join("tmask.png"))?;
        let gt_static_depth = rio::read_depth_ras1(&vdir.join("depth.ras1"), w, h)?;
        let gt_instances = rio::read_instances_ras1(&vdir.join("instances.ras1"), w, h)?;
        if gt_image.dims() != (w, h) || gt_transient_mask.dims() != (w, h) {
            return Err(SceneGenError::BadDataset {
                dir: vdir,
                reason: "raster dimensions disagree with camera".into(),
            });
        }
        views.push(ViewFrame {
            view_id: id,
            camera,
            gt_image,
            clean_static,
            gt_transient_mask,
            gt_static_depth,
            gt_instances,
            features: None,
            provider_depth: None,
            provider_instances: None,
        });
    }
    let static_scene = crate::splat::io::read_scene(&dir.join("scene.gs2d"))?;
    Ok((views, static_scene))
}
