use image::{ImageBuffer, Luma};
use imageproc::geometric_transformations::{rotate_about_center, Border, Interpolation};
use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use super::Sample;
use crate::config::RotationMode;

/// Geometric transform applied identically to image and mask.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Augmentation {
    pub flip_lr: bool,
    pub flip_tb: bool,
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    /// Arbitrary counter-clockwise angle in degrees.
    pub angle_degrees: Option<f64>,
}

impl Augmentation {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, rotation: RotationMode, max_degrees: f64) -> Self {
        let flip_lr = rng.random_bool(0.5);
        let flip_tb = rng.random_bool(0.5);
        let (quarter_turns, angle_degrees) = match rotation {
            RotationMode::None => (0, None),
            RotationMode::Quarter => (rng.random_range(0..4u8), None),
            RotationMode::Arbitrary => {
                let m = max_degrees.abs();
                (0, Some(if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 }))
            }
        };
        Self {
            flip_lr,
            flip_tb,
            quarter_turns,
            angle_degrees,
        }
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut s = sample.clone();
        if self.flip_lr {
            s = flip_horizontal(&s);
        }
        if self.flip_tb {
            s = flip_vertical(&s);
        }
        if self.quarter_turns % 4 != 0 {
            s = rotate_quarter(&s, self.quarter_turns);
        }
        if let Some(deg) = self.angle_degrees {
            s = rotate_arbitrary(&s, deg);
        }
        s
    }
}

/// Draws a random [`Augmentation`] and applies it.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, rotation: RotationMode, max_degrees: f64) -> Sample {
    Augmentation::sample(rng, rotation, max_degrees).apply(sample)
}

/// Mirrors left-right.
pub fn flip_horizontal(s: &Sample) -> Sample {
    Sample {
        image: s.image.slice(s![.., .., ..;-1]).to_owned(),
        mask: s.mask.slice(s![.., ..;-1]).to_owned(),
        id: s.id.clone(),
    }
}

/// Mirrors top-bottom.
pub fn flip_vertical(s: &Sample) -> Sample {
    Sample {
        image: s.image.slice(s![.., ..;-1, ..]).to_owned(),
        mask: s.mask.slice(s![..;-1, ..]).to_owned(),
        id: s.id.clone(),
    }
}

/// Rotates by `turns` x 90 degrees counter-clockwise:
/// `out[i][j] = in[j][W-1-i]` per turn.
pub fn rotate_quarter(s: &Sample, turns: u8) -> Sample {
    let mut image = s.image.clone();
    let mut mask = s.mask.clone();
    for _ in 0..turns % 4 {
        image = image
            .permuted_axes([0, 2, 1])
            .slice(s![.., ..;-1, ..])
            .to_owned();
        mask = mask.t().slice(s![..;-1, ..]).to_owned();
    }
    Sample {
        image,
        mask,
        id: s.id.clone(),
    }
}

/// Rotates about the centre by `degrees` (counter-clockwise), bilinear for the
/// image, nearest for the mask; uncovered pixels become 0.
pub fn rotate_arbitrary(s: &Sample, degrees: f64) -> Sample {
    let (h, w) = s.size();
    // image coordinates have y pointing down, so a visual counter-clockwise
    // turn is a negative angle
    let theta = -(degrees.to_radians()) as f32;
    let channels: Vec<Array2<f32>> = s
        .image
        .axis_iter(Axis(0))
        .map(|plane| {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([plane[[y as usize, x as usize]]]));
            let out = rotate_about_center(&buf, theta, Interpolation::Bilinear, Border::Constant(Luma([0.0])));
            Array2::from_shape_vec((h, w), out.into_raw()).expect("rotation keeps size")
        })
        .collect();
    let views: Vec<_> = channels.iter().map(|c| c.view()).collect();
    let image: Array3<f32> = ndarray::stack(Axis(0), &views).expect("equal channel shapes");
    let mbuf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([s.mask[[y as usize, x as usize]]]));
    let mout = rotate_about_center(&mbuf, theta, Interpolation::Nearest, Border::Constant(Luma([0])));
    Sample {
        image,
        mask: Array2::from_shape_vec((h, w), mout.into_raw()).expect("rotation keeps size"),
        id: s.id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize) -> Sample {
        Sample {
            image: Array3::from_shape_fn((3, h, w), |(c, y, x)| (c * 100 + y * w + x) as f32),
            mask: Array2::from_shape_fn((h, w), |(y, x)| u8::from((y * w + x) % 3 == 0)),
            id: "g".into(),
        }
    }

    #[test]
    fn flips_are_involutions() {
        let s = grid(5, 7);
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
        assert_eq!(flip_vertical(&flip_vertical(&s)), s);
        assert_eq!(flip_horizontal(&s).foreground_pixels(), s.foreground_pixels());
    }

    #[test]
    fn quarter_turn_index_map() {
        let s = grid(3, 4);
        let r = rotate_quarter(&s, 1);
        assert_eq!(r.size(), (4, 3));
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(r.image[[0, i, j]], s.image[[0, j, 3 - i]]);
                assert_eq!(r.mask[[i, j]], s.mask[[j, 3 - i]]);
            }
        }
        assert_eq!(rotate_quarter(&s, 4), s);
    }

    #[test]
    fn half_turn_is_double_flip() {
        let s = grid(4, 4);
        assert_eq!(rotate_quarter(&s, 2), flip_vertical(&flip_horizontal(&s)));
    }

    #[test]
    fn arbitrary_rotation_keeps_mask_binary() {
        let s = grid(16, 16);
        for deg in [0.0, 17.0, 45.0, -80.0] {
            let r = rotate_arbitrary(&s, deg);
            assert_eq!(r.size(), (16, 16));
            assert!(r.mask.iter().all(|&v| v <= 1));
        }
        let r = rotate_arbitrary(&s, 0.0);
        assert_eq!(r.mask, s.mask);
    }

    #[test]
    fn random_augmentation_is_seeded() {
        let s = grid(8, 8);
        let a = augment(&s, &mut ChaCha8Rng::seed_from_u64(3), RotationMode::Quarter, 0.0);
        let b = augment(&s, &mut ChaCha8Rng::seed_from_u64(3), RotationMode::Quarter, 0.0);
        assert_eq!(a, b);
        assert_eq!(a.foreground_pixels(), s.foreground_pixels());
    }
}
