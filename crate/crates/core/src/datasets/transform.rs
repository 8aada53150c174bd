//! Geometric transforms applied identically to scenes and label maps.

use ndarray::Array2;

/// Inverse-mapped affine transform about the image centre: an output pixel
/// at `p` samples the input at `centre + M⁻¹ (p − centre − t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Translation in pixels (rows, cols).
    pub translation: (f64, f64),
}

impl Affine {
    pub fn rotation(deg: f64) -> Self {
        Self { rotation_deg: deg, scale: 1.0, translation: (0.0, 0.0) }
    }

    fn source(&self, r: f64, c: f64, centre: (f64, f64)) -> (f64, f64) {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let y = r - centre.0 - self.translation.0;
        let x = c - centre.1 - self.translation.1;
        // inverse rotation then inverse scale
        let sx = (cos * x + sin * y) / self.scale;
        let sy = (-sin * x + cos * y) / self.scale;
        (sy + centre.0, sx + centre.1)
    }

    /// Bilinear warp with zero fill outside the frame.
    pub fn warp_bilinear(&self, src: &Array2<f64>) -> Array2<f64> {
        let (h, w) = src.dim();
        let centre = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let at = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                0.0
            } else {
                src[[r as usize, c as usize]]
            }
        };
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (y, x) = self.source(r as f64, c as f64, centre);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0)
        })
    }

    /// Nearest-neighbour warp; outside the frame takes `fill`.
    pub fn warp_nearest<T: Copy>(&self, src: &Array2<T>, fill: T) -> Array2<T> {
        let (h, w) = src.dim();
        let centre = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (y, x) = self.source(r as f64, c as f64, centre);
            let (y, x) = (y.round(), x.round());
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                fill
            } else {
                src[[y as usize, x as usize]]
            }
        })
    }
}

/// Element of the mirror group `{id, h, v, hv}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mirror {
    Identity,
    Horizontal,
    Vertical,
    Both,
}

impl Mirror {
    pub const ALL: [Mirror; 4] = [Mirror::Identity, Mirror::Horizontal, Mirror::Vertical, Mirror::Both];

    pub fn tag(self) -> &'static str {
        match self {
            Mirror::Identity => "id",
            Mirror::Horizontal => "h",
            Mirror::Vertical => "v",
            Mirror::Both => "hv",
        }
    }

    pub fn apply<T: Copy>(self, src: &Array2<T>) -> Array2<T> {
        let (h, w) = src.dim();
        let (flip_r, flip_c) = match self {
            Mirror::Identity => (false, false),
            Mirror::Horizontal => (false, true),
            Mirror::Vertical => (true, false),
            Mirror::Both => (true, true),
        };
        Array2::from_shape_fn((h, w), |(r, c)| {
            let rr = if flip_r { h - 1 - r } else { r };
            let cc = if flip_c { w - 1 - c } else { c };
            src[[rr, cc]]
        })
    }
}
