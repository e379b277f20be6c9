use rand::Rng;

pub const AUG_PAD: usize = 4;

/// Crops a `3×h×w` image out of its zero-padded canvas at offset `(dy, dx)`
/// (each in `0..=2·AUG_PAD`), then mirrors horizontally if `flip`.
pub fn augment_with(img: &[f64], h: usize, w: usize, dy: usize, dx: usize, flip: bool) -> Vec<f64> {
    let c = img.len() / (h * w);
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy).wrapping_sub(AUG_PAD);
            if sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx).wrapping_sub(AUG_PAD);
                if sx >= w {
                    continue;
                }
                let tx = if flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + tx] = img[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Random crop from the padded canvas plus a coin-flip mirror.
pub fn augment<R: Rng>(img: &[f64], h: usize, w: usize, rng: &mut R) -> Vec<f64> {
    let dy = rng.gen_range(0..=2 * AUG_PAD);
    let dx = rng.gen_range(0..=2 * AUG_PAD);
    let flip = rng.gen_bool(0.5);
    augment_with(img, h, w, dy, dx, flip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image() -> Vec<f64> {
        (0..3 * 32 * 32).map(|i| i as f64).collect()
    }

    #[test]
    fn centre_crop_is_identity() {
        let img = image();
        assert_eq!(augment_with(&img, 32, 32, 4, 4, false), img);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = image();
        let once = augment_with(&img, 32, 32, 4, 4, true);
        assert_ne!(once, img);
        assert_eq!(augment_with(&once, 32, 32, 4, 4, true), img);
    }

    #[test]
    fn shift_fills_with_zeros() {
        let img = image();
        let out = augment_with(&img, 32, 32, 0, 4, false);
        assert!(out[..32].iter().all(|&v| v == 0.0));
        assert_eq!(out[4 * 32], img[0]);
        assert_eq!(out[31 * 32 + 5], img[27 * 32 + 5]);
    }

    #[test]
    fn seeded_calls_repeat() {
        let img = image();
        let a = augment(&img, 32, 32, &mut ChaCha8Rng::seed_from_u64(5));
        let b = augment(&img, 32, 32, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
