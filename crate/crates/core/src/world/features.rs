use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rng_for, BBox, Scene, WorldConfig, STREAM_FEATURES};
use crate::error::{Error, Result};

pub const GEOMETRY_DIM: usize = 5;

/// Synthetic region feature: appearance `r`, geometry `g` and class distribution `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiFeature {
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub class_dist: Vec<f64>,
}

/// `(x_tl/W, y_tl/H, x_br/W, y_br/H, area/(W·H))`
pub fn geometry_feature(bbox: &BBox, width: u32, height: u32) -> Result<[f64; GEOMETRY_DIM]> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("canvas {width}x{height} has a zero extent")));
    }
    if !bbox.fits(width, height) {
        return Err(Error::Contract(format!("{bbox:?} outside {width}x{height} canvas")));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    Ok([
        f64::from(bbox.x_tl) / w,
        f64::from(bbox.y_tl) / h,
        f64::from(bbox.x_br) / w,
        f64::from(bbox.y_br) / h,
        bbox.area() as f64 / (w * h),
    ])
}

/// One feature per object, in object order. Noise is derived from the scene seed.
pub fn roi_features(scene: &Scene, config: &WorldConfig) -> Result<Vec<RoiFeature>> {
    let mut rng = rng_for(scene.seed, STREAM_FEATURES);
    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("positive sigma"));
    scene
        .objects
        .iter()
        .map(|o| {
            let mut appearance = vec![0.0; config.appearance_dim()];
            appearance[o.class_id] = 1.0;
            appearance[config.num_classes + o.color_id] = 1.0;
            appearance[config.num_classes + config.num_colors + o.size_id] = 1.0;
            if let Some(n) = &noise {
                appearance.iter_mut().for_each(|v| *v += n.sample(&mut rng));
            }

            let mut class_dist = vec![0.0; config.class_dim];
            let moved = config.class_smoothing * rng.gen::<f64>();
            class_dist[o.class_id] = 1.0 - moved;
            if moved > 0.0 && config.class_dim > 1 {
                let weights: Vec<f64> = (0..config.class_dim)
                    .map(|k| if k == o.class_id { 0.0 } else { rng.gen::<f64>() + 1e-3 })
                    .collect();
                let total: f64 = weights.iter().sum();
                for (c, w) in class_dist.iter_mut().zip(&weights) {
                    *c += moved * w / total;
                }
            } else {
                class_dist[o.class_id] = 1.0;
            }

            Ok(RoiFeature {
                appearance,
                geometry: geometry_feature(&o.bbox, scene.width, scene.height)?.to_vec(),
                class_dist,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scene, SceneObject};

    fn noiseless() -> WorldConfig {
        WorldConfig { noise_sigma: 0.0, class_smoothing: 0.0, ..Default::default() }
    }

    #[test]
    fn geometry_examples() {
        let full = BBox::new(0, 0, 64, 48).unwrap();
        assert_eq!(geometry_feature(&full, 64, 48).unwrap(), [0.0, 0.0, 1.0, 1.0, 1.0]);
        let half = BBox::new(0, 0, 50, 100).unwrap();
        assert_eq!(geometry_feature(&half, 100, 100).unwrap(), [0.0, 0.0, 0.5, 1.0, 0.5]);
        assert!(matches!(geometry_feature(&half, 0, 100), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_appearance_is_concatenated_one_hot() {
        let c = noiseless();
        let scene = generate_scene(11, &c).unwrap();
        for (o, f) in scene.objects.iter().zip(roi_features(&scene, &c).unwrap()) {
            let mut expect = vec![0.0; c.appearance_dim()];
            expect[o.class_id] = 1.0;
            expect[c.num_classes + o.color_id] = 1.0;
            expect[c.num_classes + c.num_colors + o.size_id] = 1.0;
            assert_eq!(f.appearance, expect);
            assert_eq!(f.class_dist[o.class_id], 1.0);
        }
    }

    #[test]
    fn identical_objects_identical_appearance_without_noise() {
        let c = noiseless();
        let obj = SceneObject { class_id: 2, color_id: 1, size_id: 0, bbox: BBox::new(0, 0, 10, 10).unwrap() };
        let other = SceneObject { bbox: BBox::new(50, 50, 62, 61).unwrap(), ..obj };
        let scene = Scene { width: 100, height: 100, objects: vec![obj, other], seed: 5 };
        let f = roi_features(&scene, &c).unwrap();
        assert_eq!(f[0].appearance, f[1].appearance);
    }

    #[test]
    fn class_distributions_are_simplex_vectors() {
        let c = WorldConfig::default();
        for seed in 0..50 {
            let scene = generate_scene(seed, &c).unwrap();
            for f in roi_features(&scene, &c).unwrap() {
                assert!(f.class_dist.iter().all(|&p| p >= 0.0));
                assert!((f.class_dist.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                assert_eq!(f.geometry.len(), GEOMETRY_DIM);
                assert!(f.geometry.iter().all(|g| (0.0..=1.0).contains(g)));
            }
        }
    }
}
