use image::RgbImage;

use super::{ContrastMethod, Frame, PreprocessParams};

/// Lower and upper percentiles used by the linear contrast stretch.
const STRETCH_LOW_PCT: f64 = 2.0;
const STRETCH_HIGH_PCT: f64 = 98.0;

/// Median denoise followed by contrast adjustment. Dimensions, sequence
/// number, and timestamp are carried over unchanged.
pub fn preprocess(frame: &Frame, params: &PreprocessParams) -> Frame {
    let mut img: Option<RgbImage> = None;
    if params.denoise_enabled && params.denoise_kernel() > 1 {
        img = Some(median_filter(&frame.pixels, params.denoise_kernel()));
    }
    let src = img.as_ref().unwrap_or(&frame.pixels);
    let adjusted = match params.contrast_method {
        ContrastMethod::None => None,
        ContrastMethod::LinearStretch => {
            Some(linear_stretch(src, STRETCH_LOW_PCT, STRETCH_HIGH_PCT))
        }
        ContrastMethod::HistogramEqualize => Some(equalize_histogram(src)),
    };
    match adjusted.or(img) {
        Some(pixels) => Frame {
            pixels: std::sync::Arc::new(pixels),
            ..frame.clone()
        },
        None => frame.clone(),
    }
}

/// Per-channel median filter with a square `kernel`×`kernel` window and
/// replicated borders.
///
/// Uses a running 256-bin histogram per row (Huang's method), so the cost per
/// pixel is O(kernel) instead of O(kernel²).
pub fn median_filter(img: &RgbImage, kernel: u32) -> RgbImage {
    assert!(kernel % 2 == 1, "median kernel must be odd");
    let (w, h) = img.dimensions();
    if kernel == 1 || w == 0 || h == 0 {
        return img.clone();
    }
    let r = (kernel / 2) as i64;
    let rank = (kernel * kernel / 2 + 1) as u32;
    let clamp_x = |x: i64| x.clamp(0, w as i64 - 1) as u32;
    let clamp_y = |y: i64| y.clamp(0, h as i64 - 1) as u32;
    let mut out = RgbImage::new(w, h);

    for c in 0..3 {
        for y in 0..h as i64 {
            let mut hist = [0u32; 256];
            for dy in -r..=r {
                for dx in -r..=r {
                    hist[img.get_pixel(clamp_x(dx), clamp_y(y + dy))[c] as usize] += 1;
                }
            }
            out.get_pixel_mut(0, y as u32)[c] = median_from_hist(&hist, rank);
            for x in 1..w as i64 {
                let leaving = clamp_x(x - r - 1);
                let entering = clamp_x(x + r);
                for dy in -r..=r {
                    let yy = clamp_y(y + dy);
                    hist[img.get_pixel(leaving, yy)[c] as usize] -= 1;
                    hist[img.get_pixel(entering, yy)[c] as usize] += 1;
                }
                out.get_pixel_mut(x as u32, y as u32)[c] = median_from_hist(&hist, rank);
            }
        }
    }
    out
}

fn median_from_hist(hist: &[u32; 256], rank: u32) -> u8 {
    let mut seen = 0;
    for (v, &n) in hist.iter().enumerate() {
        seen += n;
        if seen >= rank {
            return v as u8;
        }
    }
    255
}

fn channel_histograms(img: &RgbImage) -> [[u32; 256]; 3] {
    let mut hists = [[0u32; 256]; 3];
    for p in img.pixels() {
        for c in 0..3 {
            hists[c][p[c] as usize] += 1;
        }
    }
    hists
}

/// Smallest value whose cumulative count reaches `pct` percent of `total`.
fn percentile(hist: &[u32; 256], total: u32, pct: f64) -> u8 {
    let target = ((pct / 100.0) * total as f64).ceil().max(1.0) as u32;
    median_from_hist(hist, target)
}

/// Per-channel linear stretch mapping the `low_pct`..`high_pct` percentile
/// range onto 0..255. Channels with no spread are left alone.
pub fn linear_stretch(img: &RgbImage, low_pct: f64, high_pct: f64) -> RgbImage {
    let total = img.width() * img.height();
    if total == 0 {
        return img.clone();
    }
    let hists = channel_histograms(img);
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let lo = percentile(&hists[c], total, low_pct) as f64;
        let hi = percentile(&hists[c], total, high_pct) as f64;
        for v in 0..256 {
            luts[c][v] = if hi <= lo {
                v as u8
            } else {
                (((v as f64 - lo) * 255.0 / (hi - lo)).round()).clamp(0.0, 255.0) as u8
            };
        }
    }
    apply_luts(img, &luts)
}

/// Per-channel histogram equalization. A single-valued channel maps to itself.
pub fn equalize_histogram(img: &RgbImage) -> RgbImage {
    let total = img.width() * img.height();
    if total == 0 {
        return img.clone();
    }
    let hists = channel_histograms(img);
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let mut cdf = [0u32; 256];
        let mut acc = 0;
        for v in 0..256 {
            acc += hists[c][v];
            cdf[v] = acc;
        }
        let cdf_min = cdf.iter().copied().find(|&n| n > 0).unwrap_or(0);
        for v in 0..256 {
            luts[c][v] = if total == cdf_min {
                v as u8
            } else {
                let num = cdf[v].saturating_sub(cdf_min) as f64;
                ((num * 255.0) / (total - cdf_min) as f64).round() as u8
            };
        }
    }
    apply_luts(img, &luts)
}

fn apply_luts(img: &RgbImage, luts: &[[u8; 256]; 3]) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = luts[c][p[c] as usize];
        }
    }
    out
}
