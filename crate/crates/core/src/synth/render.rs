use nalgebra::Vector2;
use ndarray::Array2;

use super::SyntheticScene;
use crate::backbone::Image;
use crate::geometry::{project, CameraPose, DenseOutput, Intrinsics, Resolution};

pub const BACKGROUND: f32 = 0.5;

/// Z-buffered point splat. Each point lands on the pixel nearest to its
/// projection and the closest point wins. The stored scene coordinate is the
/// pixel-center ray at the winning depth, so depth and scene coordinates are
/// exactly consistent; points projecting onto a pixel center keep their
/// true world position.
pub fn render_frame(scene: &SyntheticScene, pose: &CameraPose, res: Resolution) -> (Image, DenseOutput) {
    let (h, w) = (res.height, res.width);
    let mut winner: Array2<Option<(f64, usize)>> = Array2::from_elem((h, w), None);
    for (i, p) in scene.points.iter().enumerate() {
        let Ok((px, z)) = project(&p.position, pose, res) else {
            continue;
        };
        let (x, y) = (px.x.round(), px.y.round());
        if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
            continue;
        }
        let slot = &mut winner[[y as usize, x as usize]];
        // Ties go to the lower index, which keeps renders order-stable.
        if slot.is_none_or(|(best, _)| z < best) {
            *slot = Some((z, i));
        }
    }

    let k = Intrinsics::from_fov(&pose.fov, res);
    let mut image = Image::from_elem((h, w, 3), BACKGROUND);
    let mut dense = DenseOutput::empty(res);
    for ((y, x), slot) in winner.indexed_iter() {
        let Some((z, i)) = *slot else { continue };
        let color = scene.points[i].color;
        for c in 0..3 {
            image[[y, x, c]] = color[c] as f32;
        }
        let world = pose.camera_to_world(&k.backproject(&Vector2::new(x as f64, y as f64), z));
        dense.depth[[y, x]] = z;
        for c in 0..3 {
            dense.scm[[y, x, c]] = world[c];
        }
        dense.valid[[y, x]] = true;
    }
    (image, dense)
}

/// Renders every trajectory frame.
pub fn render_all(scene: &SyntheticScene, res: Resolution) -> Vec<(Image, DenseOutput)> {
    use rayon::prelude::*;
    scene.trajectory.par_iter().map(|p| render_frame(scene, p, res)).collect()
}
