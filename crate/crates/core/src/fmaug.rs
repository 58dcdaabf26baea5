//! Frequency-mixed augmentation.
//!
//! Rectangular patches from one frequency view are pasted over another view
//! of the same image. Every ordered pair of perturbed views `(i, j)`, `i != j`,
//! yields one mixed image, and all of them share the anchor view as the
//! reconstruction target.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency_views::{extract_view_bank, sample_view_params, FrequencyView, GaussianParams};
use crate::image::{Image, Mask};

/// Sampling law for mix masks: a union of axis-aligned rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Inclusive range for the number of rectangles.
    pub patch_count: (usize, usize),
    /// Inclusive range for each rectangle side as a fraction of the image side.
    pub patch_frac: (f64, f64),
    /// Accepted coverage range; masks outside it are redrawn.
    pub coverage: (f64, f64),
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            patch_count: (1, 4),
            patch_frac: (0.2, 0.5),
            coverage: (0.0, 1.0),
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        let (pmin, pmax) = self.patch_count;
        if pmin < 1 || pmin > pmax {
            return Err(Error::param(format!("bad patch count range {pmin}..={pmax}")));
        }
        let (fmin, fmax) = self.patch_frac;
        if !(fmin > 0.0 && fmin <= fmax && fmax <= 1.0) {
            return Err(Error::param(format!("bad patch fraction range {fmin}..={fmax}")));
        }
        let (cmin, cmax) = self.coverage;
        if !(0.0..=1.0).contains(&cmin) || !(0.0..=1.0).contains(&cmax) || cmin > cmax {
            return Err(Error::param(format!("bad coverage range {cmin}..={cmax}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixMask {
    pub mask: Mask,
    pub coverage: f64,
}

const MAX_MASK_ATTEMPTS: usize = 1000;

pub fn generate_mix_mask<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    cfg: &MaskConfig,
) -> Result<MixMask> {
    cfg.validate()?;
    if height < 8 || width < 8 {
        return Err(Error::param(format!(
            "mix masks need at least 8x8 images, got {height}x{width}"
        )));
    }
    for _ in 0..MAX_MASK_ATTEMPTS {
        let mut mask = Mask::zeros(height, width)?;
        let patches = rng.random_range(cfg.patch_count.0..=cfg.patch_count.1);
        for _ in 0..patches {
            let fh = rng.random_range(cfg.patch_frac.0..=cfg.patch_frac.1);
            let fw = rng.random_range(cfg.patch_frac.0..=cfg.patch_frac.1);
            let ph = ((fh * height as f64).round() as usize).clamp(1, height);
            let pw = ((fw * width as f64).round() as usize).clamp(1, width);
            let y0 = rng.random_range(0..=height - ph);
            let x0 = rng.random_range(0..=width - pw);
            for y in y0..y0 + ph {
                for x in x0..x0 + pw {
                    mask.set(y, x, true);
                }
            }
        }
        let coverage = mask.coverage();
        if coverage >= cfg.coverage.0 && coverage <= cfg.coverage.1 {
            return Ok(MixMask { mask, coverage });
        }
    }
    Err(Error::param(format!(
        "no mask within coverage {:?} after {MAX_MASK_ATTEMPTS} draws",
        cfg.coverage
    )))
}

/// `M ⊙ a + (1 - M) ⊙ b` for a binary mask, realized as per-pixel selection.
pub fn mix_images(a: &Image, b: &Image, mask: &Mask) -> Result<Image> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!("views differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if (a.height(), a.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(format!(
            "mask is {}x{}, views are {}x{}",
            mask.height(),
            mask.width(),
            a.height(),
            a.width()
        )));
    }
    let c = a.channels();
    let data = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .zip(mask.data())
        .flat_map(|((pa, pb), m)| if *m == 1 { pa } else { pb }.iter().copied())
        .collect();
    Image::new(a.height(), a.width(), c, data)
}

pub fn mix_views(view_i: &FrequencyView, view_j: &FrequencyView, mask: &MixMask) -> Result<Image> {
    mix_images(&view_i.pixels, &view_j.pixels, &mask.mask)
}

/// Ordered view pair `(i, j)` with its dense index `k` in `1..=N(N-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewPair {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

/// All ordered pairs of distinct views in lexicographic order.
pub fn enumerate_pairs(n: usize) -> Result<Vec<ViewPair>> {
    if n < 2 {
        return Err(Error::param(format!("need at least 2 views to pair, got {n}")));
    }
    let mut out = Vec::with_capacity(n * (n - 1));
    for i in 1..=n {
        for j in (1..=n).filter(|j| *j != i) {
            out.push(ViewPair { i, j, k: out.len() + 1 });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub mixed: Image,
    pub target: Arc<Image>,
    pub seg_mask: Arc<Mask>,
    pub pair: ViewPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmaugConfig {
    /// Number of perturbed views `N`.
    pub views: usize,
    /// Keep only this many of the `N(N-1)` pairs, drawn without replacement.
    pub subsample: Option<usize>,
    pub mask: MaskConfig,
}

impl Default for FmaugConfig {
    fn default() -> Self {
        Self {
            views: 3,
            subsample: None,
            mask: MaskConfig::default(),
        }
    }
}

/// Samples `N` perturbed parameter sets and builds the mixed samples.
pub fn build_training_samples<R: Rng + ?Sized>(
    image: &Image,
    seg_mask: &Mask,
    anchor: &GaussianParams,
    cfg: &FmaugConfig,
    rng: &mut R,
) -> Result<Vec<AugmentedSample>> {
    let perturbed = sample_view_params(rng, cfg.views)?;
    build_training_samples_with_params(image, seg_mask, anchor, &perturbed, cfg, rng)
}

/// Like [`build_training_samples`] with caller-chosen perturbed views.
pub fn build_training_samples_with_params<R: Rng + ?Sized>(
    image: &Image,
    seg_mask: &Mask,
    anchor: &GaussianParams,
    perturbed: &[GaussianParams],
    cfg: &FmaugConfig,
    rng: &mut R,
) -> Result<Vec<AugmentedSample>> {
    if (image.height(), image.width()) != (seg_mask.height(), seg_mask.width()) {
        return Err(Error::shape("segmentation mask does not match image"));
    }
    let bank = extract_view_bank(image, anchor, perturbed)?;
    let mut pairs = enumerate_pairs(perturbed.len())?;
    if let Some(keep) = cfg.subsample {
        if keep == 0 {
            return Err(Error::param("subsample must be >= 1"));
        }
        if keep < pairs.len() {
            let mut chosen = index::sample(rng, pairs.len(), keep).into_vec();
            chosen.sort_unstable();
            pairs = chosen.into_iter().map(|c| pairs[c]).collect();
        }
    }
    let target = Arc::new(bank[0].pixels.clone());
    let seg_mask = Arc::new(seg_mask.clone());
    pairs
        .into_iter()
        .map(|pair| {
            let m = generate_mix_mask(rng, image.height(), image.width(), &cfg.mask)?;
            Ok(AugmentedSample {
                mixed: mix_views(&bank[pair.i], &bank[pair.j], &m)?,
                target: Arc::clone(&target),
                seg_mask: Arc::clone(&seg_mask),
                pair,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    fn bits(img: &Image) -> Vec<u64> {
        img.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn full_cover_mask() {
        let cfg = MaskConfig {
            patch_count: (1, 1),
            patch_frac: (1.0, 1.0),
            ..MaskConfig::default()
        };
        let m = generate_mix_mask(&mut ChaCha8Rng::seed_from_u64(0), 16, 24, &cfg).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert!(m.mask.data().iter().all(|v| *v == 1));
    }

    #[test]
    fn masks_are_deterministic() {
        let cfg = MaskConfig::default();
        let a = generate_mix_mask(&mut ChaCha8Rng::seed_from_u64(9), 32, 32, &cfg).unwrap();
        let b = generate_mix_mask(&mut ChaCha8Rng::seed_from_u64(9), 32, 32, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coverage_always_positive() {
        let cfg = MaskConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let m = generate_mix_mask(&mut rng, 64, 48, &cfg).unwrap();
            assert!(m.coverage > 0.0 && m.coverage <= 1.0);
            assert_eq!(m.coverage, m.mask.coverage());
        }
    }

    #[test]
    fn coverage_bounds_are_enforced() {
        let cfg = MaskConfig {
            coverage: (0.3, 0.6),
            ..MaskConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = generate_mix_mask(&mut rng, 32, 32, &cfg).unwrap();
            assert!((0.3..=0.6).contains(&m.coverage));
        }
    }

    #[test]
    fn degenerate_mask_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_mix_mask(&mut rng, 7, 32, &MaskConfig::default()).is_err());
        let bad = MaskConfig {
            patch_count: (0, 2),
            ..MaskConfig::default()
        };
        assert!(generate_mix_mask(&mut rng, 32, 32, &bad).is_err());
        let bad = MaskConfig {
            patch_frac: (0.6, 0.2),
            ..MaskConfig::default()
        };
        assert!(generate_mix_mask(&mut rng, 32, 32, &bad).is_err());
    }

    #[test]
    fn identity_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_image(&mut rng, 12, 10, 3);
        let b = rand_image(&mut rng, 12, 10, 3);
        let ones = Mask::new(12, 10, vec![1; 120]).unwrap();
        let zeros = Mask::zeros(12, 10).unwrap();
        assert_eq!(bits(&mix_images(&a, &b, &ones).unwrap()), bits(&a));
        assert_eq!(bits(&mix_images(&a, &b, &zeros).unwrap()), bits(&b));
        let m = generate_mix_mask(&mut rng, 12, 10, &MaskConfig::default()).unwrap();
        assert_eq!(bits(&mix_images(&a, &a, &m.mask).unwrap()), bits(&a));
    }

    #[test]
    fn mix_shape_mismatch() {
        let a = Image::filled(8, 8, 1, 0.0).unwrap();
        let b = Image::filled(8, 9, 1, 0.0).unwrap();
        let c = Image::filled(8, 8, 3, 0.0).unwrap();
        let m = Mask::zeros(8, 8).unwrap();
        assert!(mix_images(&a, &b, &m).is_err());
        assert!(mix_images(&a, &c, &m).is_err());
        assert!(mix_images(&b, &b, &m).is_err());
    }

    #[test]
    fn pair_enumeration() {
        let p = enumerate_pairs(3).unwrap();
        let got: Vec<_> = p.iter().map(|v| (v.i, v.j, v.k)).collect();
        assert_eq!(
            got,
            vec![(1, 2, 1), (1, 3, 2), (2, 1, 3), (2, 3, 4), (3, 1, 5), (3, 2, 6)]
        );
        assert_eq!(enumerate_pairs(2).unwrap().len(), 2);
        assert!(enumerate_pairs(1).is_err());

        // Brute force: filter the full N x N grid.
        let n = 5;
        let brute: HashSet<(usize, usize)> = (1..=n)
            .flat_map(|i| (1..=n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .collect();
        let pairs = enumerate_pairs(n).unwrap();
        assert_eq!(pairs.len(), 20);
        let ours: HashSet<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(ours, brute);
        assert_eq!(pairs.iter().map(|p| p.k).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn training_samples_share_target_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Image::from_fn(64, 64, 3, |_, _, _| rng.random()).unwrap();
        let seg = Mask::from_fn(64, 64, |y, x| (y * 7 + x) % 5 == 0).unwrap();
        let s = build_training_samples(&img, &seg, &GaussianParams::ANCHOR, &FmaugConfig::default(), &mut rng).unwrap();
        assert_eq!(s.len(), 6);
        for x in &s {
            assert!(Arc::ptr_eq(&x.target, &s[0].target));
            assert_eq!(*x.seg_mask, seg);
        }

        let cfg = FmaugConfig {
            subsample: Some(2),
            ..FmaugConfig::default()
        };
        let s = build_training_samples(&img, &seg, &GaussianParams::ANCHOR, &cfg, &mut rng).unwrap();
        assert_eq!(s.len(), 2);
        assert_ne!(s[0].pair, s[1].pair);
    }

    #[test]
    fn equal_views_make_identical_mixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = Image::from_fn(48, 48, 1, |_, _, _| rng.random()).unwrap();
        let seg = Mask::zeros(48, 48).unwrap();
        let p = GaussianParams::new(9, 3.0).unwrap();
        let s = build_training_samples_with_params(
            &img,
            &seg,
            &GaussianParams::ANCHOR,
            &[p, p, p],
            &FmaugConfig::default(),
            &mut rng,
        )
        .unwrap();
        let common = crate::frequency_views::high_pass_view(&img, &p).unwrap();
        for x in &s {
            assert_eq!(x.mixed, common.pixels);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mask_algebra_and_range(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_image(&mut rng, 16, 12, 3);
            let b = rand_image(&mut rng, 16, 12, 3);
            let m = generate_mix_mask(&mut rng, 16, 12, &MaskConfig::default()).unwrap();
            let ab = mix_images(&a, &b, &m.mask).unwrap();
            let ba = mix_images(&b, &a, &m.mask).unwrap();
            for i in 0..a.data().len() {
                let (x, y) = (a.data()[i], b.data()[i]);
                prop_assert_eq!(ab.data()[i] + ba.data()[i], x + y);
                prop_assert!(ab.data()[i] >= x.min(y) && ab.data()[i] <= x.max(y));
            }
        }

        #[test]
        fn sample_count_matches_enumeration(n in 2usize..=6, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(56, 56, 1, |_, _, _| rng.random()).unwrap();
            let seg = Mask::zeros(56, 56).unwrap();
            let cfg = FmaugConfig { views: n, ..FmaugConfig::default() };
            let s = build_training_samples(&img, &seg, &GaussianParams::ANCHOR, &cfg, &mut rng).unwrap();
            let brute = (1..=n).flat_map(|i| (1..=n).map(move |j| (i, j))).filter(|(i, j)| i != j).count();
            prop_assert_eq!(s.len(), brute);
        }
    }
}
