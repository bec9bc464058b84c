//! The eight symmetries of the square acting on images and planar buffers.

use crate::image::Image;

/// `k` in `0..8`: an optional horizontal flip (k ≥ 4) followed by `k % 4`
/// counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(k: u8) -> Self {
        assert!(k < 8, "dihedral index {k} out of range");
        Dihedral(k)
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    fn turns(self) -> usize {
        (self.0 % 4) as usize
    }

    fn flipped(self) -> bool {
        self.0 >= 4
    }

    pub fn inverse(self) -> Self {
        if self.flipped() {
            self
        } else {
            Dihedral(((4 - self.turns()) % 4) as u8)
        }
    }

    /// Output extents `(h, w)` for an input of `(h, w)`.
    pub fn output_extent(self, h: usize, w: usize) -> (usize, usize) {
        if self.turns() % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Destination coordinate `(y, x)` of input coordinate `(y, x)`.
    fn target(self, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
        let (mut y, mut x) = if self.flipped() { (y, w - 1 - x) } else { (y, x) };
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.turns() {
            // a CCW turn sends (y, x) of an (h, w) array to (w-1-x, y) of a (w, h) array
            (y, x) = (cw - 1 - x, y);
            (ch, cw) = (cw, ch);
        }
        (y, x)
    }

    /// Applies the transform to a planar `[C, H, W]` buffer; returns the new `(h, w)`.
    pub fn apply_planar<T: Copy>(self, data: &[T], channels: usize, h: usize, w: usize) -> (Vec<T>, usize, usize) {
        assert_eq!(data.len(), channels * h * w);
        let (oh, ow) = self.output_extent(h, w);
        let mut out = data.to_vec();
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    let (ty, tx) = self.target(h, w, y, x);
                    out[(c * oh + ty) * ow + tx] = data[(c * h + y) * w + x];
                }
            }
        }
        (out, oh, ow)
    }

    pub fn apply(self, img: &Image) -> Image {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let (_, ow) = self.output_extent(h, w);
        let mut out = img.samples().to_vec();
        for y in 0..h {
            for x in 0..w {
                let (ty, tx) = self.target(h, w, y, x);
                let (src, dst) = ((y * w + x) * c, (ty * ow + tx) * c);
                out[dst..dst + c].copy_from_slice(&img.samples()[src..src + c]);
            }
        }
        let (oh, ow) = self.output_extent(h, w);
        Image::new(ow, oh, c, out).expect("dihedral preserves sample count")
    }
}
