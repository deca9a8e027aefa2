//! Shared fixtures for the pipeline benchmarks.

use retouch_core::ImageBuffer;

/// A smooth colourful test image with a little deterministic texture.
pub fn test_image(width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |x, y| {
        let u = x as f32 / width as f32;
        let v = y as f32 / height as f32;
        let n = ((x * 7919 + y * 104_729) % 97) as f32 / 970.0;
        [0.2 + 0.6 * u + n, 0.3 + 0.4 * v, 0.7 - 0.5 * u * v + n]
    })
    .expect("valid dimensions")
}
