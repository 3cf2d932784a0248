use image::RgbImage;
use rayon::prelude::*;

use crate::{Error, Result};

/// Static background as the per-pixel, per-channel temporal median.
///
/// With an even number of frames the two middle values are averaged and
/// rounded half up, so `[10, 20]` gives 15 and `[10, 21]` gives 16.
pub fn estimate_background(frames: &[RgbImage]) -> Result<RgbImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidAsset("cannot estimate a background from zero frames".into()))?;
    let (w, h) = first.dimensions();
    if let Some(f) = frames.iter().find(|f| f.dimensions() != (w, h)) {
        return Err(Error::DimensionMismatch {
            path: "background input".into(),
            expected: (w, h),
            found: f.dimensions(),
        });
    }
    let n = frames.len();
    let row_len = (w * 3) as usize;
    let mut out = RgbImage::new(w, h);
    out.par_chunks_mut(row_len).enumerate().for_each(|(y, row)| {
        let mut hist = [0u32; 256];
        let offset = y * row_len;
        for (i, dst) in row.iter_mut().enumerate() {
            hist.fill(0);
            for f in frames {
                hist[f.as_raw()[offset + i] as usize] += 1;
            }
            *dst = median_from_histogram(&hist, n);
        }
    });
    Ok(out)
}

fn median_from_histogram(hist: &[u32; 256], n: usize) -> u8 {
    let nth = |k: usize| -> u32 {
        let mut acc = 0usize;
        for (v, &c) in hist.iter().enumerate() {
            acc += c as usize;
            if acc > k {
                return v as u32;
            }
        }
        255
    };
    if n % 2 == 1 {
        nth(n / 2) as u8
    } else {
        let (a, b) = (nth(n / 2 - 1), nth(n / 2));
        (a + b).div_ceil(2) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn one_pixel(values: &[u8]) -> Vec<RgbImage> {
        values
            .iter()
            .map(|&v| RgbImage::from_pixel(1, 1, Rgb([v, v, v])))
            .collect()
    }

    fn sorted_median(values: &[u8]) -> u8 {
        let mut v = values.to_vec();
        v.sort_unstable();
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] as u32 + v[n / 2] as u32).div_ceil(2) as u8
        }
    }

    #[test]
    fn constant_video_gives_that_image() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 10, y as u8 * 20, 7]));
        let bg = estimate_background(&vec![img.clone(); 4]).unwrap();
        assert_eq!(bg, img);
    }

    #[test]
    fn odd_and_even_medians() {
        let bg = estimate_background(&one_pixel(&[10, 200, 20])).unwrap();
        assert_eq!(bg.get_pixel(0, 0).0, [20, 20, 20]);
        let bg = estimate_background(&one_pixel(&[10, 20])).unwrap();
        assert_eq!(bg.get_pixel(0, 0).0, [15, 15, 15]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(estimate_background(&[]).is_err());
    }

    proptest! {
        #[test]
        fn matches_sort_oracle_and_is_order_invariant(
            mut values in proptest::collection::vec(any::<u8>(), 1..12),
            seed in any::<u64>(),
        ) {
            let expected = sorted_median(&values);
            let bg = estimate_background(&one_pixel(&values)).unwrap();
            prop_assert_eq!(bg.get_pixel(0, 0).0[0], expected);
            // rotate by a seed-dependent amount
            let k = (seed as usize) % values.len();
            values.rotate_left(k);
            values.reverse();
            let bg2 = estimate_background(&one_pixel(&values)).unwrap();
            prop_assert_eq!(bg2, bg);
        }
    }
}
