use super::ImageBuffer;

const LUMA_R: f32 = 0.299;
const LUMA_B: f32 = 0.114;

/// Rec.601 luma of one sRGB-encoded pixel.
///
/// Written as `G + wr·(R−G) + wb·(B−G)`, which is algebraically
/// `0.299R + 0.587G + 0.114B` but returns `v` exactly for a gray `(v, v, v)`.
#[inline]
pub fn luminance_pixel(rgb: [f32; 3]) -> f32 {
    let [r, g, b] = rgb;
    g + LUMA_R * (r - g) + LUMA_B * (b - g)
}

/// Per-pixel luma, row-major H×W.
pub fn luminance(img: &ImageBuffer) -> Vec<f32> {
    img.pixels().map(luminance_pixel).collect()
}

/// HSV saturation: `(max − min) / max`, zero for black.
#[inline]
pub fn saturation_pixel(rgb: [f32; 3]) -> f32 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// A CIELAB triple: `l` in `[0, 100]`, `a` and `b` signed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    /// CIE76 color difference.
    pub fn distance(&self, other: &Lab) -> f64 {
        ((self.l - other.l).powi(2) + (self.a - other.a).powi(2) + (self.b - other.b).powi(2)).sqrt()
    }
}

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];
// Row sums of RGB_TO_XYZ, so sRGB white lands exactly on the white point.
const WHITE_D65: [f64; 3] = [0.950456, 1.0, 1.088754];

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn rgb_to_lab_pixel(rgb: [f32; 3]) -> Lab {
    let lin = rgb.map(|c| srgb_to_linear(c as f64));
    let mut xyz = [0.0f64; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Inverse of [`rgb_to_lab_pixel`], clamped to the sRGB gamut.
pub fn lab_to_rgb_pixel(lab: Lab) -> [f32; 3] {
    const DELTA: f64 = 6.0 / 29.0;
    let finv = |t: f64| {
        if t > DELTA {
            t * t * t
        } else {
            3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
        }
    };
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [finv(fx) * WHITE_D65[0], finv(fy) * WHITE_D65[1], finv(fz) * WHITE_D65[2]];
    // Inverse of RGB_TO_XYZ.
    const XYZ_TO_RGB: [[f64; 3]; 3] = [
        [3.240481343200527, -1.537151516271318, -0.498536326168888],
        [-0.969254949996568, 1.875990001489891, 0.041555926558293],
        [0.055646639135177, -0.204041338366511, 1.057311069645344],
    ];
    let mut out = [0.0f32; 3];
    for (row, o) in XYZ_TO_RGB.iter().zip(out.iter_mut()) {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        let c = if lin <= 0.0031308 { 12.92 * lin } else { 1.055 * lin.powf(1.0 / 2.4) - 0.055 };
        *o = c.clamp(0.0, 1.0) as f32;
    }
    out
}

/// Per-pixel CIELAB conversion (sRGB → linear → XYZ/D65 → Lab).
pub fn rgb_to_lab(img: &ImageBuffer) -> Vec<Lab> {
    img.pixels().map(rgb_to_lab_pixel).collect()
}
