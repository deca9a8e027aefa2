use serde::{Deserialize, Serialize};

use super::color::{luminance_pixel, rgb_to_lab_pixel, saturation_pixel};
use super::{reflect_index, ImageBuffer};

/// Scalar summary of an image, as given to the critic alongside the pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub pixel_mean: f64,
    pub pixel_median: f64,
    pub pixel_std: f64,
    /// Mean of the darkest 10% of channel values.
    pub p10_low: f64,
    /// Mean of the brightest 10% of channel values.
    pub p10_high: f64,
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
    /// Variance of the 4-neighbour Laplacian of luma (sharpness proxy).
    pub laplacian_variance: f64,
    pub sat_mean: f64,
    pub sat_std: f64,
    pub sat_min: f64,
    pub sat_max: f64,
    pub lab_l_mean: f64,
    pub lab_b_mean: f64,
}

impl ImageStats {
    /// Field-wise mean, used to summarize a reference set.
    ///
    /// Returns `None` for an empty slice.
    pub fn mean_of(stats: &[ImageStats]) -> Option<ImageStats> {
        let first = stats.first()?;
        let n = stats.len() as f64;
        let mut acc = first.to_array();
        for s in &stats[1..] {
            for (a, v) in acc.iter_mut().zip(s.to_array()) {
                *a += v;
            }
        }
        Some(ImageStats::from_array(acc.map(|v| v / n)))
    }

    fn to_array(self) -> [f64; 15] {
        [
            self.pixel_mean,
            self.pixel_median,
            self.pixel_std,
            self.p10_low,
            self.p10_high,
            self.mean_r,
            self.mean_g,
            self.mean_b,
            self.laplacian_variance,
            self.sat_mean,
            self.sat_std,
            self.sat_min,
            self.sat_max,
            self.lab_l_mean,
            self.lab_b_mean,
        ]
    }

    fn from_array(a: [f64; 15]) -> Self {
        ImageStats {
            pixel_mean: a[0],
            pixel_median: a[1],
            pixel_std: a[2],
            p10_low: a[3],
            p10_high: a[4],
            mean_r: a[5],
            mean_g: a[6],
            mean_b: a[7],
            laplacian_variance: a[8],
            sat_mean: a[9],
            sat_std: a[10],
            sat_min: a[11],
            sat_max: a[12],
            lab_l_mean: a[13],
            lab_b_mean: a[14],
        }
    }

    /// One-line rendering used inside agent prompts.
    pub fn to_prompt_text(&self) -> String {
        format!(
            "pixel mean {:.4}, median {:.4}, std {:.4}; bottom 10% mean {:.4}, top 10% mean {:.4}; \
             RGB means ({:.4}, {:.4}, {:.4}); Laplacian variance {:.6}; \
             saturation mean {:.4}, std {:.4}, min {:.4}, max {:.4}; Lab L mean {:.3}, Lab b mean {:.3}",
            self.pixel_mean,
            self.pixel_median,
            self.pixel_std,
            self.p10_low,
            self.p10_high,
            self.mean_r,
            self.mean_g,
            self.mean_b,
            self.laplacian_variance,
            self.sat_mean,
            self.sat_std,
            self.sat_min,
            self.sat_max,
            self.lab_l_mean,
            self.lab_b_mean,
        )
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt())
}

fn laplacian_variance(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width(), img.height());
    let luma: Vec<f64> = img.pixels().map(|p| luminance_pixel(p) as f64).collect();
    let at = |x: isize, y: isize| luma[reflect_index(y, h) * w + reflect_index(x, w)];
    let mut responses = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            responses.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let (_, std) = mean_std(responses.into_iter());
    std * std
}

/// Computes every [`ImageStats`] field at full resolution.
pub fn compute_stats(img: &ImageBuffer) -> ImageStats {
    let data = img.data();
    let n = data.len();
    let (pixel_mean, pixel_std) = mean_std(data.iter().map(|&v| v as f64));

    let mut sorted: Vec<f32> = data.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let pixel_median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let tail = (n / 10).max(1);
    let p10_low = sorted[..tail].iter().map(|&v| v as f64).sum::<f64>() / tail as f64;
    let p10_high = sorted[n - tail..].iter().map(|&v| v as f64).sum::<f64>() / tail as f64;

    let mut channel_sums = [0.0f64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            channel_sums[c] += p[c] as f64;
        }
    }
    let count = img.pixel_count() as f64;
    let [mean_r, mean_g, mean_b] = channel_sums.map(|s| s / count);

    let sats: Vec<f64> = img.pixels().map(|p| saturation_pixel(p) as f64).collect();
    let (sat_mean, sat_std) = mean_std(sats.iter().copied());
    let sat_min = sats.iter().copied().fold(f64::INFINITY, f64::min);
    let sat_max = sats.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (mut l_sum, mut b_sum) = (0.0, 0.0);
    for p in img.pixels() {
        let lab = rgb_to_lab_pixel(p);
        l_sum += lab.l;
        b_sum += lab.b;
    }

    ImageStats {
        pixel_mean,
        pixel_median,
        pixel_std,
        p10_low,
        p10_high,
        mean_r,
        mean_g,
        mean_b,
        laplacian_variance: laplacian_variance(img),
        sat_mean: sat_mean.clamp(sat_min, sat_max),
        sat_std,
        sat_min,
        sat_max,
        lab_l_mean: l_sum / count,
        lab_b_mean: b_sum / count,
    }
}
