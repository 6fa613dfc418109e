//! Background colorization of grayscale digits.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{assign_bias_label, BiasRenderer, Dataset, GrayImage, LabeledSample};
use crate::error::{Error, Result};

/// Pixels strictly below this byte value are background.
pub const BACKGROUND_THRESHOLD: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette(pub Vec<[u8; 3]>);

impl Palette {
    /// Ten well-separated colors.
    pub fn default_ten() -> Self {
        Palette(vec![
            [230, 25, 75],
            [60, 180, 75],
            [255, 225, 25],
            [0, 130, 200],
            [245, 130, 48],
            [145, 30, 180],
            [70, 240, 240],
            [240, 50, 230],
            [210, 245, 60],
            [128, 128, 128],
        ])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, n_targets: usize) -> Result<()> {
        if self.len() != n_targets {
            return Err(Error::param(format!(
                "palette has {} colors but there are {n_targets} target classes",
                self.len()
            )));
        }
        for (i, a) in self.0.iter().enumerate() {
            if self.0[..i].contains(a) {
                return Err(Error::param(format!("palette color {i} {a:?} is duplicated")));
            }
        }
        Ok(())
    }
}

/// Renders colorized images; keeps the grayscale sources so that bias
/// colors can be redrawn.
#[derive(Debug, Clone)]
pub struct Colorizer {
    images: Vec<GrayImage>,
    palette: Palette,
}

impl Colorizer {
    pub fn new(images: Vec<GrayImage>, palette: Palette) -> Self {
        Self { images, palette }
    }

    /// Channel-major (`3 x rows x cols`) features in `[0, 1]`.
    pub fn paint(&self, image: &GrayImage, bias: usize) -> Vec<f64> {
        let color = self.palette.0[bias];
        let plane = image.pixels.len();
        let mut out = vec![0.0; 3 * plane];
        for (p, &v) in image.pixels.iter().enumerate() {
            for ch in 0..3 {
                let byte = if v < BACKGROUND_THRESHOLD { color[ch] } else { v };
                out[ch * plane + p] = byte as f64 / 255.0;
            }
        }
        out
    }
}

impl BiasRenderer for Colorizer {
    fn render(&self, index: usize, _sample: &LabeledSample, bias: usize, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let image = self
            .images
            .get(index)
            .ok_or_else(|| Error::param(format!("no source image for sample {index}")))?;
        if bias >= self.palette.len() {
            return Err(Error::param(format!("bias {bias} has no palette color")));
        }
        Ok(self.paint(image, bias))
    }
}

/// Paints each image's background with the palette color of a bias class drawn at `rho`.
pub fn colorize<R: Rng + ?Sized>(
    images: &[GrayImage],
    targets: &[usize],
    rho: f64,
    palette: &Palette,
    n_targets: usize,
    rng: &mut R,
) -> Result<Dataset> {
    palette.check(n_targets)?;
    if images.len() != targets.len() {
        return Err(Error::param(format!("{} images but {} targets", images.len(), targets.len())));
    }
    let painter = Colorizer::new(Vec::new(), palette.clone());
    let mut samples = Vec::with_capacity(images.len());
    for (image, &target) in images.iter().zip(targets) {
        let bias = assign_bias_label(target, rho, n_targets, rng)?;
        samples.push(LabeledSample {
            features: painter.paint(image, bias),
            target,
            bias: Some(bias),
        });
    }
    Dataset::new(samples, n_targets, n_targets, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn digit(label: usize) -> GrayImage {
        let mut pixels = vec![0u8; 16];
        pixels[5] = 200;
        pixels[6] = 255;
        pixels[label % 16] = 120;
        GrayImage::new(4, 4, pixels).unwrap()
    }

    fn background_color(features: &[f64], plane: usize) -> [u8; 3] {
        [0, 1, 2].map(|ch| (features[ch * plane] * 255.0).round() as u8)
    }

    #[test]
    fn full_alignment_paints_digit_color() {
        let palette = Palette::default_ten();
        let targets: Vec<usize> = (0..50).map(|i| (i * 7) % 10).collect();
        let images: Vec<GrayImage> = (0..50).map(|_| digit(3)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = colorize(&images, &targets, 1.0, &palette, 10, &mut rng).unwrap();
        for s in data.samples() {
            assert_eq!(s.bias, Some(s.target));
            assert_eq!(background_color(&s.features, 16), palette.0[s.target]);
        }
    }

    #[test]
    fn blank_image_is_fully_painted() {
        let palette = Palette::default_ten();
        let blank = GrayImage::new(4, 4, vec![0; 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = colorize(&[blank], &[2], 1.0, &palette, 10, &mut rng).unwrap();
        let f = &data.samples()[0].features;
        for p in 0..16 {
            for ch in 0..3 {
                assert_eq!(f[ch * 16 + p], palette.0[2][ch] as f64 / 255.0);
            }
        }
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn foreground_stays_gray() {
        let palette = Palette::default_ten();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = colorize(&[digit(0)], &[0], 1.0, &palette, 10, &mut rng).unwrap();
        let f = &data.samples()[0].features;
        for ch in 0..3 {
            assert_eq!(f[ch * 16 + 6], 1.0);
            assert_eq!(f[ch * 16 + 5], 200.0 / 255.0);
        }
    }

    #[test]
    fn high_rho_alignment_rate() {
        let palette = Palette::default_ten();
        let n = 10_000;
        let targets: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let images: Vec<GrayImage> = (0..n).map(|i| digit(i % 10)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = colorize(&images, &targets, 0.999, &palette, 10, &mut rng).unwrap();
        let a = data.alignment().unwrap();
        let tol = 4.0 * (0.999f64 * 0.001 / n as f64).sqrt();
        assert!((a - 0.999).abs() < tol, "alignment {a}");
    }

    #[test]
    fn palette_size_must_match_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let small = Palette(Palette::default_ten().0[..9].to_vec());
        assert!(colorize(&[digit(0)], &[0], 0.5, &small, 10, &mut rng).is_err());
        let mut dup = Palette::default_ten();
        dup.0[9] = dup.0[0];
        assert!(colorize(&[digit(0)], &[0], 0.5, &dup, 10, &mut rng).is_err());
    }

    #[test]
    fn renderer_recolors_from_source() {
        let palette = Palette::default_ten();
        let images = vec![digit(1), digit(2)];
        let c = Colorizer::new(images.clone(), palette.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = colorize(&images, &[1, 2], 1.0, &palette, 10, &mut rng).unwrap();
        let f = c.render(1, &data.samples()[1], 7, &mut rng).unwrap();
        assert_eq!(background_color(&f, 16), palette.0[7]);
    }
}
