use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Record of the steps that produced a dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Preprocessing {
    pub noise_std: Option<f64>,
    pub filter_std: Option<f64>,
    pub seed: Option<u64>,
    pub resized_from: Option<usize>,
    pub side: usize,
}

/// Square images in [−1, 1], stored as `[n, side, side]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub provenance: String,
    pub preprocessing: Preprocessing,
    pub labels: Option<Vec<u8>>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn side(&self) -> usize {
        self.preprocessing.side
    }

    /// `[n, 1, side, side]` view for convolutional training.
    pub fn as_channels(&self) -> Tensor {
        let s = self.side();
        Tensor::from_vec(&[self.len(), 1, s, s], self.images.data().to_vec())
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.side() * self.side();
        &self.images.data()[i * s..(i + 1) * s]
    }

    /// Sidecar text with the preprocessing chain and seed.
    pub fn manifest(&self) -> String {
        let p = &self.preprocessing;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ = writeln!(s, "provenance={}", self.provenance);
        let _ = writeln!(s, "count={}", self.len());
        let _ = writeln!(s, "side={}", p.side);
        let _ = writeln!(s, "noise_std={}", opt(p.noise_std.map(|v| v.to_string())));
        let _ = writeln!(s, "filter_std={}", opt(p.filter_std.map(|v| v.to_string())));
        let _ = writeln!(s, "filter=gaussian,truncate=4sigma,boundary=reflect");
        let _ = writeln!(s, "resized_from={}", opt(p.resized_from.map(|v| v.to_string())));
        let _ = writeln!(s, "resize=bilinear");
        let _ = writeln!(s, "range=[-1,1]");
        let _ = writeln!(s, "seed={}", opt(p.seed.map(|v| v.to_string())));
        s
    }

    /// Writes `<stem>.idx3` (8-bit, [0,1] mapped) and `<stem>.manifest`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let unit = self.images.map(|v| 0.5 * (v + 1.0));
        super::idx::save_idx_images(&dir.join(format!("{stem}.idx3")), &unit)?;
        let m = dir.join(format!("{stem}.manifest"));
        std::fs::write(&m, self.manifest()).map_err(|e| Error::io(&m, e))
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Normalized 1D Gaussian kernel truncated at 4σ.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let r = (4.0 * std).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter with reflective boundary, one `h×w` image.
pub fn gaussian_blur(img: &[f64], h: usize, w: usize, std: f64) -> Vec<f64> {
    if std <= 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(std);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * img[y * w + reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Noise, Gaussian blur and clipping of `[n, h, w]` binary images.
/// Image `i` uses the RNG stream `seed ⊕ i`.
pub fn grayscale_preprocess(images: &Tensor, noise_std: f64, filter_std: f64, seed: u64) -> Result<Tensor> {
    if images.ndim() != 3 {
        return Err(Error::contract(format!("expected [n, h, w], got {:?}", images.shape())));
    }
    if let Some(v) = images.data().iter().find(|&&v| v.abs() > 1e-9 && (v - 1.0).abs() > 1e-9) {
        return Err(Error::contract(format!("input image is not binary (found {v})")));
    }
    let (h, w) = (images.shape()[1], images.shape()[2]);
    let out: Vec<Vec<f64>> = images
        .data()
        .par_chunks(h * w)
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let noisy: Vec<f64> = if noise_std > 0.0 {
                let d = Normal::new(0.0, noise_std).expect("positive std");
                img.iter().map(|v| v + d.sample(&mut rng)).collect()
            } else {
                img.to_vec()
            };
            gaussian_blur(&noisy, h, w, filter_std)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    Ok(Tensor::from_vec(images.shape(), out.concat()))
}

/// Bilinear resize with half-pixel centers.
pub fn bilinear_resize(img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let sample = |src: f64, n: usize| -> (usize, usize, f64) {
        let s = src.clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5, h);
        for x in 0..ow {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5, w);
            let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
            let bot = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Resizes `[n, h, w]` images in [0, 1] to `side × side` and maps to [−1, 1].
pub fn rescale_resize(images: &Tensor, side: usize) -> Result<ImageDataset> {
    if images.ndim() != 3 || side == 0 {
        return Err(Error::contract(format!("expected [n, h, w] images, got {:?}", images.shape())));
    }
    let (n, h, w) = (images.shape()[0], images.shape()[1], images.shape()[2]);
    let data: Vec<f64> = if h * w == 0 {
        vec![]
    } else {
        images
            .data()
            .par_chunks(h * w)
            .flat_map_iter(|img| {
                let r = if h == side && w == side {
                    img.to_vec()
                } else {
                    bilinear_resize(img, h, w, side, side)
                };
                r.into_iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0))
            })
            .collect()
    };
    Ok(ImageDataset {
        images: Tensor::from_vec(&[n, side, side], data),
        provenance: "rescaled".into(),
        preprocessing: Preprocessing {
            resized_from: (h != side || w != side).then_some(h.max(w)),
            side,
            ..Default::default()
        },
        labels: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_of_zero_is_zero() {
        let t = Tensor::zeros(&[1, 8, 8]);
        let g = grayscale_preprocess(&t, 0.0, 1.2, 0).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_conserves_mass() {
        let mut t = Tensor::zeros(&[1, 21, 21]);
        t.data_mut()[10 * 21 + 10] = 1.0;
        let g = grayscale_preprocess(&t, 0.0, 1.2, 0).unwrap();
        assert!((g.sum() - 1.0).abs() < 1e-9);
        let peak = g.data()[10 * 21 + 10];
        assert!(g.data().iter().all(|&v| v <= peak));
    }

    #[test]
    fn preprocessing_is_seeded() {
        let mut t = Tensor::zeros(&[3, 8, 8]);
        t.data_mut()[20] = 1.0;
        let a = grayscale_preprocess(&t, 0.01, 1.2, 9).unwrap();
        let b = grayscale_preprocess(&t, 0.01, 1.2, 9).unwrap();
        let c = grayscale_preprocess(&t, 0.01, 1.2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn non_binary_rejected() {
        let t = Tensor::full(&[1, 2, 2], 0.5);
        assert!(grayscale_preprocess(&t, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn midpoint_maps_to_zero() {
        let d = rescale_resize(&Tensor::full(&[1, 32, 32], 0.5), 32).unwrap();
        assert!(d.images.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upscaled_constant_stays_constant() {
        let d = rescale_resize(&Tensor::full(&[2, 28, 28], 0.3), 32).unwrap();
        assert!(d.images.data().iter().all(|&v| (v - (-0.4)).abs() < 1e-12));
        assert_eq!(d.preprocessing.resized_from, Some(28));
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(2, 4), 2);
    }
}
