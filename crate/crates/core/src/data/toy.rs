use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{grayscale_preprocess, rescale_resize, ImageDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MOTIFS: [&str; 3] = ["bar", "cross", "ring"];

fn fill_band(img: &mut [f64], s: usize, horizontal: bool, from: usize, width: usize) {
    for k in from..(from + width).min(s) {
        for j in 0..s {
            let (y, x) = if horizontal { (k, j) } else { (j, k) };
            img[y * s + x] = 1.0;
        }
    }
}

/// Binary motif of class `class` on an `s × s` canvas.
fn draw(class: usize, s: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut img = vec![0.0; s * s];
    let sf = s as f64;
    match class {
        0 => {
            let w = rng.gen_range((s / 8).max(1)..=(s / 3).max(1));
            let at = rng.gen_range(0..=s - w);
            fill_band(&mut img, s, rng.gen_bool(0.5), at, w);
        }
        1 => {
            for horizontal in [true, false] {
                let w = rng.gen_range((s / 8).max(1)..=(s / 4).max(1));
                let at = rng.gen_range(0..=s - w);
                fill_band(&mut img, s, horizontal, at, w);
            }
        }
        _ => {
            let cx = rng.gen_range(sf / 3.0..2.0 * sf / 3.0);
            let cy = rng.gen_range(sf / 3.0..2.0 * sf / 3.0);
            let r = rng.gen_range(0.25 * sf..0.45 * sf);
            let th = rng.gen_range(0.1 * sf..0.2 * sf);
            for y in 0..s {
                for x in 0..s {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    if d <= r && d >= r - th {
                        img[y * s + x] = 1.0;
                    }
                }
            }
        }
    }
    img
}

/// Bars, crosses and rings in equal proportion (class `i mod 3`), drawn at
/// twice the target resolution, blurred and downsampled.
pub fn synth_toy_dataset(n: usize, side: usize, seed: u64) -> Result<ImageDataset> {
    if ![8, 16, 32].contains(&side) {
        return Err(Error::contract(format!("toy corpus side must be 8, 16 or 32, got {side}")));
    }
    let canvas = 2 * side;
    let mut raw = Vec::with_capacity(n * canvas * canvas);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let class = i % 3;
        raw.extend(draw(class, canvas, &mut rng));
        labels.push(class as u8);
    }
    let raw = Tensor::from_vec(&[n, canvas, canvas], raw);
    let gray = grayscale_preprocess(&raw, 0.01, 1.2, seed)?;
    let mut ds = rescale_resize(&gray, side)?;
    ds.provenance = "synthetic motifs (bar, cross, ring)".into();
    ds.preprocessing.noise_std = Some(0.01);
    ds.preprocessing.filter_std = Some(1.2);
    ds.preprocessing.seed = Some(seed);
    ds.labels = Some(labels);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus() {
        assert!(synth_toy_dataset(0, 16, 0).unwrap().is_empty());
    }

    #[test]
    fn bounded_and_balanced() {
        let n = 300;
        let d = synth_toy_dataset(n, 16, 5).unwrap();
        assert!(d.images.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let labels = d.labels.unwrap();
        for c in 0..3u8 {
            let k = labels.iter().filter(|&&l| l == c).count() as f64;
            assert!((k - n as f64 / 3.0).abs() <= (n as f64).sqrt());
        }
    }

    #[test]
    fn unsupported_side() {
        assert!(synth_toy_dataset(3, 12, 0).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_toy_dataset(6, 8, 3).unwrap(), synth_toy_dataset(6, 8, 3).unwrap());
    }
}
