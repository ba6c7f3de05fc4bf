use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng_for, WorldConfig, STREAM_SCENE};
use crate::error::{Error, Result};

/// Pixel box with exclusive bottom-right corner: `x_tl < x_br <= W`, `y_tl < y_br <= H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_tl: u32,
    pub y_tl: u32,
    pub x_br: u32,
    pub y_br: u32,
}

impl BBox {
    pub fn new(x_tl: u32, y_tl: u32, x_br: u32, y_br: u32) -> Result<Self> {
        if x_tl >= x_br || y_tl >= y_br {
            return Err(Error::Contract(format!(
                "degenerate box ({x_tl},{y_tl})-({x_br},{y_br})"
            )));
        }
        Ok(Self { x_tl, y_tl, x_br, y_br })
    }

    pub fn width(&self) -> u32 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> u32 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x_tl + self.x_br) / 2.0,
            f64::from(self.y_tl + self.y_br) / 2.0,
        )
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_tl < self.x_br && self.x_br <= width && self.y_tl < self.y_br && self.y_br <= height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    pub color_id: usize,
    pub size_id: usize,
    pub bbox: BBox,
}

impl SceneObject {
    pub fn attributes(&self) -> (usize, usize, usize) {
        (self.class_id, self.color_id, self.size_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl Scene {
    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }
}

/// Side range in pixels for each size bucket.
fn side_range(size_id: usize) -> (u32, u32) {
    match size_id {
        0 => (10, 18),
        1 => (20, 28),
        _ => (30, 40),
    }
}

pub fn generate_scene(seed: u64, config: &WorldConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = rng_for(seed, STREAM_SCENE);
    let count = rng.gen_range(config.min_objects..=config.max_objects);
    let mut classes: Vec<usize> = (0..config.num_classes).collect();
    let mut objects = Vec::with_capacity(count);
    for k in 0..count {
        let class_id = if config.unique_classes {
            let pick = rng.gen_range(k..classes.len());
            classes.swap(k, pick);
            classes[k]
        } else {
            rng.gen_range(0..config.num_classes)
        };
        let color_id = rng.gen_range(0..config.num_colors);
        let size_id = rng.gen_range(0..config.num_sizes);
        let (lo, hi) = side_range(size_id);
        let w = rng.gen_range(lo..=hi) + rng.gen_range(0..=2);
        let h = rng.gen_range(lo..=hi) + rng.gen_range(0..=2);
        let x = rng.gen_range(0..=config.canvas_width - w);
        let y = rng.gen_range(0..=config.canvas_height - h);
        objects.push(SceneObject {
            class_id,
            color_id,
            size_id,
            bbox: BBox::new(x, y, x + w, y + h)?,
        });
    }
    if objects.is_empty() {
        return Err(Error::Config("scene generated with no objects".into()));
    }
    Ok(Scene {
        width: config.canvas_width,
        height: config.canvas_height,
        objects,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let c = WorldConfig::default();
        assert_eq!(generate_scene(3, &c).unwrap(), generate_scene(3, &c).unwrap());
        assert_ne!(generate_scene(3, &c).unwrap(), generate_scene(4, &c).unwrap());
    }

    #[test]
    fn boxes_are_valid_for_many_seeds() {
        let c = WorldConfig::default();
        for seed in 0..100 {
            let s = generate_scene(seed, &c).unwrap();
            assert!((1..=c.max_objects).contains(&s.objects.len()));
            for o in &s.objects {
                assert!(o.bbox.fits(s.width, s.height), "seed {seed}: {:?}", o.bbox);
            }
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let zero = WorldConfig { max_objects: 0, ..Default::default() };
        assert!(matches!(generate_scene(0, &zero), Err(Error::Config(_))));
        let too_many = WorldConfig {
            unique_classes: true,
            num_classes: 4,
            max_objects: 5,
            ..Default::default()
        };
        assert!(matches!(generate_scene(0, &too_many), Err(Error::Config(_))));
    }

    #[test]
    fn unique_classes_are_distinct() {
        let c = WorldConfig { unique_classes: true, min_objects: 6, ..Default::default() };
        for seed in 0..20 {
            let s = generate_scene(seed, &c).unwrap();
            let mut ids: Vec<_> = s.objects.iter().map(|o| o.class_id).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), s.objects.len());
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(5, 5, 5, 9).is_err());
    }
}
