//! Anti-aliased shape rendering on noise-textured backgrounds.

use rand::Rng;

use crate::tensor::Tensor;

pub(crate) type Rgb = [f32; 3];

/// Signed distance to an outline; negative inside.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Shape {
    Circle { r: f32 },
    /// Half extents along the rotated axes.
    Rect { hw: f32, hh: f32 },
    Triangle { r: f32 },
    Cross { arm: f32, half_width: f32 },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Placement {
    pub cx: f32,
    pub cy: f32,
    pub angle: f32,
    pub scale: f32,
}

fn rect_sdf(x: f32, y: f32, hw: f32, hh: f32) -> f32 {
    let qx = x.abs() - hw;
    let qy = y.abs() - hh;
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0)
}

fn triangle_sdf(x: f32, y: f32, r: f32) -> f32 {
    // equilateral triangle with circumradius-ish size r, apex up
    let k = 3f32.sqrt();
    let mut px = x.abs() - r;
    let mut py = -y + r / k;
    if px + k * py > 0.0 {
        let nx = (px - k * py) / 2.0;
        let ny = (-k * px - py) / 2.0;
        px = nx;
        py = ny;
    }
    px -= px.clamp(-2.0 * r, 0.0);
    -(px * px + py * py).sqrt() * py.signum()
}

impl Shape {
    fn sdf(self, x: f32, y: f32) -> f32 {
        match self {
            Shape::Circle { r } => (x * x + y * y).sqrt() - r,
            Shape::Rect { hw, hh } => rect_sdf(x, y, hw, hh),
            Shape::Triangle { r } => triangle_sdf(x, y, r),
            Shape::Cross { arm, half_width } => {
                rect_sdf(x, y, arm, half_width).min(rect_sdf(x, y, half_width, arm))
            }
        }
    }
}

/// Smooth gray value noise with a faint per-channel tint.
pub(crate) fn background(h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    const GRID: usize = 5;
    let level: f32 = rng.gen_range(0.15..0.45);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-0.03..0.03));
    let coarse: Vec<f32> = (0..GRID * GRID).map(|_| rng.gen_range(-0.15..0.15)).collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = Tensor::zeros(&[3, h, w]);
    let d = out.data_mut();
    for y in 0..h {
        let gy = y as f32 / h as f32 * (GRID - 1) as f32;
        let (y0, ty) = (gy.floor() as usize, smooth(gy.fract()));
        let y1 = (y0 + 1).min(GRID - 1);
        for x in 0..w {
            let gx = x as f32 / w as f32 * (GRID - 1) as f32;
            let (x0, tx) = (gx.floor() as usize, smooth(gx.fract()));
            let x1 = (x0 + 1).min(GRID - 1);
            let top = coarse[y0 * GRID + x0] * (1.0 - tx) + coarse[y0 * GRID + x1] * tx;
            let bottom = coarse[y1 * GRID + x0] * (1.0 - tx) + coarse[y1 * GRID + x1] * tx;
            let v = level + top * (1.0 - ty) + bottom * ty;
            for (c, t) in tint.iter().enumerate() {
                d[(c * h + y) * w + x] = v + t;
            }
        }
    }
    out
}

/// Blends `shape` in `color` over a `[3,H,W]` canvas using pixel coverage
/// estimated from the signed distance at the pixel center.
pub(crate) fn draw(canvas: &mut [f32], h: usize, w: usize, shape: Shape, at: Placement, color: Rgb) {
    let (sin, cos) = at.angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f32 + 0.5 - at.cx;
            let dy = y as f32 + 0.5 - at.cy;
            let lx = (cos * dx + sin * dy) / at.scale;
            let ly = (-sin * dx + cos * dy) / at.scale;
            let coverage = (0.5 - shape.sdf(lx, ly) * at.scale).clamp(0.0, 1.0);
            if coverage == 0.0 {
                continue;
            }
            for (c, &value) in color.iter().enumerate() {
                let p = &mut canvas[(c * h + y) * w + x];
                *p = *p * (1.0 - coverage) + value * coverage;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_distances() {
        let c = Shape::Circle { r: 2.0 };
        assert_eq!(c.sdf(0.0, 0.0), -2.0);
        assert_eq!(c.sdf(3.0, 4.0), 3.0);
        let r = Shape::Rect { hw: 2.0, hh: 1.0 };
        assert_eq!(r.sdf(0.0, 0.0), -1.0);
        assert_eq!(r.sdf(5.0, 0.0), 3.0);
        assert_eq!(r.sdf(5.0, 5.0), 5.0);
        let t = Shape::Triangle { r: 4.0 };
        assert!(t.sdf(0.0, 0.0) < 0.0);
        assert!(t.sdf(0.0, -10.0) > 0.0);
        assert!(t.sdf(0.0, 10.0) > 0.0);
        let x = Shape::Cross { arm: 4.0, half_width: 1.0 };
        assert!(x.sdf(3.0, 0.0) < 0.0);
        assert!(x.sdf(3.0, 3.0) > 0.0);
    }

    #[test]
    fn full_coverage_paints_exact_color() {
        let mut canvas = vec![0.5; 3 * 8 * 8];
        let at = Placement { cx: 4.0, cy: 4.0, angle: 0.3, scale: 1.0 };
        draw(&mut canvas, 8, 8, Shape::Circle { r: 3.0 }, at, [1.0, 0.0, 0.25]);
        let center = 3 * 8 + 3;
        assert_eq!(canvas[center], 1.0);
        assert_eq!(canvas[64 + center], 0.0);
        assert_eq!(canvas[128 + center], 0.25);
        assert_eq!(canvas[0], 0.5);
    }
}
