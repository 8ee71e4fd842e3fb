use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tint {
    TruePositive,
    FalsePositive,
    FalseNegative,
    /// Prediction drawn without a reference mask.
    Predicted,
}

impl Tint {
    pub fn color(self) -> [u8; 3] {
        match self {
            Tint::TruePositive => [0, 210, 0],
            Tint::FalsePositive => [235, 0, 0],
            Tint::FalseNegative => [0, 80, 255],
            Tint::Predicted => [255, 205, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlayCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub predicted: usize,
}

fn blend(gray: u8, tint: [u8; 3]) -> Rgb<u8> {
    Rgb(tint.map(|c| ((gray as u16 + c as u16 + 1) / 2) as u8))
}

/// Tints prediction outcomes over the grayscale image at 50% opacity.
///
/// With a reference mask, true positives, false positives and false
/// negatives get distinct colours; without one every predicted pixel gets
/// [`Tint::Predicted`].
pub fn render_overlay(image: &GrayImage, predicted: &Mask, truth: Option<&Mask>) -> Result<(RgbImage, OverlayCounts)> {
    let dims = (image.width() as usize, image.height() as usize);
    if (predicted.width(), predicted.height()) != dims || truth.is_some_and(|t| !t.same_dims(predicted)) {
        return Err(Error::shape(format!(
            "overlay needs aligned sizes: image {}x{}, prediction {}x{}",
            dims.0,
            dims.1,
            predicted.width(),
            predicted.height()
        )));
    }
    let mut counts = OverlayCounts::default();
    let out = RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let g = image.get_pixel(x, y)[0];
        let p = predicted.get(x as usize, y as usize);
        let tint = match truth.map(|t| t.get(x as usize, y as usize)) {
            None if p => Some(Tint::Predicted),
            None => None,
            Some(true) if p => Some(Tint::TruePositive),
            Some(false) if p => Some(Tint::FalsePositive),
            Some(true) => Some(Tint::FalseNegative),
            Some(false) => None,
        };
        match tint {
            Some(t) => {
                match t {
                    Tint::TruePositive => counts.true_positive += 1,
                    Tint::FalsePositive => counts.false_positive += 1,
                    Tint::FalseNegative => counts.false_negative += 1,
                    Tint::Predicted => counts.predicted += 1,
                }
                blend(g, t.color())
            }
            None => Rgb([g, g, g]),
        }
    });
    Ok((out, counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(px: &Rgb<u8>, g: u8) -> Option<Tint> {
        [Tint::TruePositive, Tint::FalsePositive, Tint::FalseNegative, Tint::Predicted]
            .into_iter()
            .find(|t| blend(g, t.color()) == *px)
            .or_else(|| {
                assert_eq!(*px, Rgb([g, g, g]));
                None
            })
    }

    fn scene() -> (GrayImage, Mask, Mask) {
        let img = GrayImage::from_fn(12, 9, |x, y| image::Luma([(x * 20 + y * 3) as u8]));
        let pred = Mask::from_fn(12, 9, |x, y| x < 7 && y > 2);
        let truth = Mask::from_fn(12, 9, |x, y| x > 3 && y > 1);
        (img, pred, truth)
    }

    #[test]
    fn identical_masks_use_only_true_positive_tint() {
        let (img, pred, _) = scene();
        let (out, counts) = render_overlay(&img, &pred, Some(&pred)).unwrap();
        assert_eq!(counts.true_positive, pred.count());
        assert_eq!(counts.false_positive + counts.false_negative + counts.predicted, 0);
        for (x, y, px) in out.enumerate_pixels() {
            let t = classify(px, img.get_pixel(x, y)[0]);
            assert!(t.is_none() || t == Some(Tint::TruePositive));
        }
    }

    #[test]
    fn prediction_only_uses_single_tint() {
        let (img, pred, _) = scene();
        let (out, counts) = render_overlay(&img, &pred, None).unwrap();
        assert_eq!(counts.predicted, pred.count());
        let tinted = out
            .enumerate_pixels()
            .filter(|(x, y, px)| classify(px, img.get_pixel(*x, *y)[0]) == Some(Tint::Predicted))
            .count();
        assert_eq!(tinted, pred.count());
    }

    #[test]
    fn tint_counts_match_confusion_matrix() {
        let (img, pred, truth) = scene();
        let (out, _) = render_overlay(&img, &pred, Some(&truth)).unwrap();
        let mut seen = [0usize; 3];
        for (x, y, px) in out.enumerate_pixels() {
            match classify(px, img.get_pixel(x, y)[0]) {
                Some(Tint::TruePositive) => seen[0] += 1,
                Some(Tint::FalsePositive) => seen[1] += 1,
                Some(Tint::FalseNegative) => seen[2] += 1,
                _ => {}
            }
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in pred.bits().iter().zip(truth.bits()) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        assert_eq!(seen, [tp, fp, fn_]);
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let (img, pred, _) = scene();
        assert!(matches!(render_overlay(&img, &Mask::new(3, 3), None), Err(Error::Shape(_))));
        assert!(matches!(render_overlay(&img, &pred, Some(&Mask::new(2, 2))), Err(Error::Shape(_))));
    }
}
