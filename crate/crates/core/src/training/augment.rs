use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exact, label-preserving symmetries of a square image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::FlipHorizontal,
        Augmentation::FlipVertical,
        Augmentation::Rotate90,
        Augmentation::Rotate180,
        Augmentation::Rotate270,
    ];

    /// Maps output `(row, col)` to the source pixel for side length `n`.
    fn source(self, n: usize, r: usize, c: usize) -> (usize, usize) {
        let last = n - 1;
        match self {
            Augmentation::Identity => (r, c),
            Augmentation::FlipHorizontal => (r, last - c),
            Augmentation::FlipVertical => (last - r, c),
            // counter-clockwise quarter turn
            Augmentation::Rotate90 => (c, last - r),
            Augmentation::Rotate180 => (last - r, last - c),
            Augmentation::Rotate270 => (last - c, r),
        }
    }

    /// Applies the transform to the two trailing axes of `image`.
    pub fn apply(self, image: &Tensor) -> Result<Tensor> {
        let shape = image.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
            return Err(Error::contract("augment", format!("image {shape:?} is not square")));
        }
        let n = shape[shape.len() - 1];
        let plane = n * n;
        let src = image.data();
        let mut out = vec![0.0f32; src.len()];
        for (dst, s) in out.chunks_mut(plane).zip(src.chunks(plane)) {
            for r in 0..n {
                for c in 0..n {
                    let (sr, sc) = self.source(n, r, c);
                    dst[r * n + c] = s[sr * n + sc];
                }
            }
        }
        Tensor::new(shape, out)
    }
}

/// Applies one of the six symmetries, chosen uniformly.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Result<Tensor> {
    let pick = Augmentation::ALL[rng.random_range(0..Augmentation::ALL.len())];
    pick.apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ramp() -> Tensor {
        Tensor::new(&[2, 3, 3], (0..18).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn flips_are_involutions_and_rotation_has_order_four() {
        let x = ramp();
        for f in [Augmentation::FlipHorizontal, Augmentation::FlipVertical, Augmentation::Rotate180] {
            assert_eq!(f.apply(&f.apply(&x).unwrap()).unwrap(), x);
        }
        let mut y = x.clone();
        for _ in 0..4 {
            y = Augmentation::Rotate90.apply(&y).unwrap();
        }
        assert_eq!(y, x);
        let r3 = Augmentation::Rotate270.apply(&x).unwrap();
        assert_eq!(Augmentation::Rotate90.apply(&r3).unwrap(), x);
    }

    #[test]
    fn rotate90_layout() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Augmentation::Rotate90.apply(&x).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(Augmentation::FlipHorizontal.apply(&x).unwrap().data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn pixel_mass_is_preserved() {
        let x = ramp();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for a in Augmentation::ALL {
            assert_eq!(a.apply(&x).unwrap().sum(), x.sum());
        }
        for _ in 0..10 {
            assert_eq!(augment(&x, &mut rng).unwrap().sum(), x.sum());
        }
    }

    #[test]
    fn non_square_rejected() {
        let x = Tensor::zeros(&[3, 2, 4]);
        assert!(Augmentation::Rotate90.apply(&x).is_err());
    }
}
