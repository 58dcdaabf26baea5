//! Gaussian high-pass frequency views.
//!
//! A view keeps what a Gaussian low-pass filter throws away:
//! `view = x - blur(x; radius, sigma)`. Borders are handled with reflective
//! padding, so constant images map to exactly zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Radius range used when perturbing view parameters.
pub const SAMPLED_RADIUS: (usize, usize) = (5, 50);
/// Sigma range used when perturbing view parameters.
pub const SAMPLED_SIGMA: (f64, f64) = (2.0, 22.0);

/// Parameters of a truncated Gaussian low-pass kernel.
///
/// `radius` is the kernel half-width, so the kernel is `(2r+1)×(2r+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    radius: usize,
    sigma: f64,
}

impl GaussianParams {
    /// The fixed view used as reconstruction target and inference input.
    pub const ANCHOR: GaussianParams = GaussianParams {
        radius: 27,
        sigma: 9.0,
    };

    pub fn new(radius: usize, sigma: f64) -> Result<Self> {
        if radius < 1 {
            return Err(Error::param(format!("radius must be >= 1, got {radius}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { radius, sigma })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Normalized 1-D profile of length `2r+1`. The 2-D kernel is its outer
    /// product with itself.
    pub fn profile(&self) -> Vec<f64> {
        let r = self.radius as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (-r..=r)
            .map(|u| (-((u * u) as f64) / denom).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyView {
    pub pixels: Image,
    pub params: GaussianParams,
    pub view_index: usize,
}

/// Builds the normalized `(2r+1)×(2r+1)` kernel, row-major.
pub fn build_gaussian_kernel(params: &GaussianParams) -> Vec<Vec<f64>> {
    let p = params.profile();
    p.iter()
        .map(|a| p.iter().map(|b| a * b).collect())
        .collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

fn blur_plane(plane: &[f64], height: usize, width: usize, profile: &[f64]) -> Vec<f64> {
    let r = (profile.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in profile.iter().enumerate() {
                acc += w * row[reflect(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for (k, w) in profile.iter().enumerate() {
            let src = reflect(y as isize + k as isize - r, height);
            let src_row = &tmp[src * width..(src + 1) * width];
            let dst_row = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

fn check_fits(image: &Image, params: &GaussianParams) -> Result<()> {
    let limit = image.height().min(image.width());
    if params.radius >= limit {
        return Err(Error::param(format!(
            "kernel radius {} does not fit a {}x{} image",
            params.radius,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Gaussian low-pass filtering with reflective borders.
pub fn gaussian_blur(image: &Image, params: &GaussianParams) -> Result<Image> {
    check_fits(image, params)?;
    let (h, w, c) = image.dims();
    let profile = params.profile();
    let mut out = image.clone();
    for ch in 0..c {
        let blurred = blur_plane(&image.plane(ch), h, w, &profile);
        out.set_plane(ch, &blurred);
    }
    Ok(out)
}

/// `image - blur(image)`; signed, not clamped.
pub fn high_pass_view(image: &Image, params: &GaussianParams) -> Result<FrequencyView> {
    let low = gaussian_blur(image, params)?;
    let mut pixels = image.clone();
    for (p, l) in pixels.data_mut().iter_mut().zip(low.data()) {
        *p -= l;
    }
    Ok(FrequencyView {
        pixels,
        params: *params,
        view_index: 0,
    })
}

/// Draws `count` perturbed parameter pairs uniformly from the sampling ranges.
pub fn sample_view_params<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Result<Vec<GaussianParams>> {
    if count < 2 {
        return Err(Error::param(format!(
            "need at least 2 perturbed views, got {count}"
        )));
    }
    Ok((0..count)
        .map(|_| GaussianParams {
            radius: rng.random_range(SAMPLED_RADIUS.0..=SAMPLED_RADIUS.1),
            sigma: rng.random_range(SAMPLED_SIGMA.0..=SAMPLED_SIGMA.1),
        })
        .collect())
}

/// Anchor view at index 0 followed by one view per perturbed parameter set.
pub fn extract_view_bank(
    image: &Image,
    anchor: &GaussianParams,
    perturbed: &[GaussianParams],
) -> Result<Vec<FrequencyView>> {
    if perturbed.is_empty() {
        return Err(Error::param("perturbed parameter list is empty"));
    }
    std::iter::once(anchor)
        .chain(perturbed)
        .enumerate()
        .map(|(n, p)| {
            let mut v = high_pass_view(image, p)?;
            v.view_index = n;
            Ok(v)
        })
        .collect()
}
