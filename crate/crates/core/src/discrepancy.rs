//! Embedding-space measures of domain discrepancy and the high-pass
//! hypothesis check.
//!
//! Images are embedded, standardized per coordinate, and summarized by the
//! mean pairwise distance inside each domain (inner dispersion) and the
//! distance between domain centroids (inter distance).

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_pipeline::Dataset;
use crate::error::{Error, Result};
use crate::frequency_views::{high_pass_view, GaussianParams, SAMPLED_RADIUS, SAMPLED_SIGMA};
use crate::image::Image;

/// Maps one image to a fixed-length feature vector.
pub trait Embedder {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

/// 16×16 downsampled grayscale concatenated with a 32-bin histogram of
/// gradient magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandcraftedEmbedder {
    pub thumb: usize,
    pub bins: usize,
    /// Upper edge of the histogram; larger magnitudes land in the last bin.
    pub max_gradient: f64,
}

impl Default for HandcraftedEmbedder {
    fn default() -> Self {
        Self {
            thumb: 16,
            bins: 32,
            max_gradient: 0.5,
        }
    }
}

impl Embedder for HandcraftedEmbedder {
    fn id(&self) -> &str {
        "handcrafted-thumb16-gradhist32"
    }

    fn dim(&self) -> usize {
        self.thumb * self.thumb + self.bins
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let (h, w) = (image.height(), image.width());
        if h < 2 || w < 2 {
            return Err(Error::shape("embedding needs at least a 2x2 image"));
        }
        let gray = Image::new(h, w, 1, image.gray())?;
        let mut out = gray.resized(self.thumb, self.thumb)?.into_data();

        let g = gray.data();
        let at = |y: usize, x: usize| g[y * w + x];
        let mut hist = vec![0.0; self.bins];
        for y in 0..h {
            for x in 0..w {
                // One-sided differences on the borders.
                let gx = (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1)))
                    / ((x + 1).min(w - 1) - x.saturating_sub(1)) as f64;
                let gy = (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x))
                    / ((y + 1).min(h - 1) - y.saturating_sub(1)) as f64;
                let mag = gx.hypot(gy);
                let bin = ((mag / self.max_gradient) * self.bins as f64) as usize;
                hist[bin.min(self.bins - 1)] += 1.0;
            }
        }
        let n = (h * w) as f64;
        out.extend(hist.into_iter().map(|c| c / n));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub domain_labels: Vec<String>,
    pub embedder_id: String,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, domain_labels: Vec<String>, embedder_id: impl Into<String>) -> Result<Self> {
        if vectors.len() != domain_labels.len() {
            return Err(Error::shape(format!(
                "{} vectors but {} labels",
                vectors.len(),
                domain_labels.len()
            )));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::shape("embedding vectors differ in dimension"));
            }
        }
        Ok(Self {
            vectors,
            domain_labels,
            embedder_id: embedder_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// Rescales every coordinate to zero mean and unit (population) variance.
/// Coordinates that are constant over the set become zero.
pub fn standardize(vectors: &mut [Vec<f64>]) {
    let Some(dim) = vectors.first().map(Vec::len) else {
        return;
    };
    let n = vectors.len() as f64;
    for j in 0..dim {
        let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n;
        let var = vectors.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n;
        // Relative cutoff: tiny variances are rounding noise around a constant.
        let scale = mean.abs().max(1.0);
        let sd = var.sqrt();
        for v in vectors.iter_mut() {
            v[j] = if sd > 1e-12 * scale { (v[j] - mean) / sd } else { 0.0 };
        }
    }
}

fn raw_embeddings(images: &[&Image], embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    if images.is_empty() {
        return Err(Error::param("no images to embed"));
    }
    images.iter().map(|img| embedder.embed(img)).collect()
}

/// Embeds and standardizes `images` as one set.
pub fn embed_images(images: &[&Image], labels: &[String], embedder: &dyn Embedder) -> Result<EmbeddingSet> {
    let mut vectors = raw_embeddings(images, embedder)?;
    standardize(&mut vectors);
    EmbeddingSet::new(vectors, labels.to_vec(), embedder.id())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Raw,
    UniformHp,
    DiscriminativeHp,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Raw => "raw",
            Condition::UniformHp => "uniform_hp",
            Condition::DiscriminativeHp => "discriminative_hp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterDistance {
    pub a: String,
    pub b: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub condition: Condition,
    /// Mean pairwise distance per domain; `None` for single-image domains.
    pub inner: BTreeMap<String, Option<f64>>,
    pub inter: Vec<InterDistance>,
}

impl DispersionReport {
    /// Mean of the defined inner dispersions.
    pub fn mean_inner(&self) -> Option<f64> {
        let vals: Vec<f64> = self.inner.values().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_inter(&self) -> Option<f64> {
        (!self.inter.is_empty())
            .then(|| self.inter.iter().map(|d| d.distance).sum::<f64>() / self.inter.len() as f64)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn dispersion_stats(set: &EmbeddingSet, condition: Condition) -> Result<DispersionReport> {
    if set.is_empty() {
        return Err(Error::param("empty embedding set"));
    }
    let mut groups: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
    for (v, label) in set.vectors.iter().zip(&set.domain_labels) {
        groups.entry(label.clone()).or_default().push(v);
    }
    let dim = set.dim();
    let mut inner = BTreeMap::new();
    let mut centroids = Vec::new();
    for (label, members) in &groups {
        let n = members.len();
        let mut c = vec![0.0; dim];
        for m in members {
            c.iter_mut().zip(*m).for_each(|(a, b)| *a += b / n as f64);
        }
        let pairs = n * (n - 1) / 2;
        let disp = (pairs > 0).then(|| {
            let mut total = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    total += distance(members[i], members[j]);
                }
            }
            total / pairs as f64
        });
        inner.insert(label.clone(), disp);
        centroids.push((label, c));
    }
    let mut inter = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter.push(InterDistance {
                a: centroids[i].0.clone(),
                b: centroids[j].0.clone(),
                distance: distance(&centroids[i].1, &centroids[j].1),
            });
        }
    }
    Ok(DispersionReport {
        condition,
        inner,
        inter,
    })
}

/// Coordinates on the two leading principal axes. Each axis is oriented so
/// its largest-magnitude loading is positive.
pub fn principal_projection(set: &EmbeddingSet) -> Result<Vec<[f64; 2]>> {
    let (n, d) = (set.len(), set.dim());
    if n < 2 || d < 2 {
        return Err(Error::shape("projection needs at least 2 points of dimension >= 2"));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| set.vectors[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::shape("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut axes = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut axis: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0_f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        axes.push(axis);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}

/// Direction check between two statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub before: f64,
    pub after: f64,
    /// `after / before`, or 1 when both are zero.
    pub ratio: f64,
    pub holds: bool,
}

impl Verdict {
    fn decrease(before: f64, after: f64) -> Self {
        Self::new(before, after, after < before)
    }

    fn increase(before: f64, after: f64) -> Self {
        Self::new(before, after, after > before)
    }

    fn new(before: f64, after: f64, holds: bool) -> Self {
        let ratio = if before == 0.0 {
            if after == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            after / before
        };
        Self {
            before,
            after,
            ratio,
            holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub embedder_id: String,
    pub anchor: GaussianParams,
    pub raw: DispersionReport,
    pub uniform: DispersionReport,
    pub discriminative: DispersionReport,
    /// Mean centroid distance, raw → uniform high-pass.
    pub h1_inter: Verdict,
    /// Mean inner dispersion, raw → uniform high-pass.
    pub h1_inner: Verdict,
    /// Mean inner dispersion, uniform → discriminative high-pass.
    pub h2_inner: Verdict,
    /// Real multi-dataset clustering is not checked here.
    pub real_data: String,
    /// Leading two principal coordinates of every embedding, grouped by
    /// condition (raw, uniform, discriminative) in dataset order.
    pub projection: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub condition: Condition,
    pub id: String,
    pub domain: String,
    pub x: f64,
    pub y: f64,
}

/// Runs [`hypothesis_check_with_params`] with per-image parameters drawn
/// uniformly from the sampling ranges.
pub fn hypothesis_check<R: Rng + ?Sized>(
    dataset: &Dataset,
    anchor: &GaussianParams,
    embedder: &dyn Embedder,
    rng: &mut R,
) -> Result<HypothesisReport> {
    let params: Vec<GaussianParams> = dataset
        .samples
        .iter()
        .map(|_| {
            GaussianParams::new(
                rng.random_range(SAMPLED_RADIUS.0..=SAMPLED_RADIUS.1),
                rng.random_range(SAMPLED_SIGMA.0..=SAMPLED_SIGMA.1),
            )
        })
        .collect::<Result<_>>()?;
    hypothesis_check_with_params(dataset, anchor, &params, embedder)
}

/// Compares raw images, one shared high-pass filter and one filter per image
/// (`per_image[i]` for sample `i`). All three conditions are standardized
/// jointly so their statistics share one scale.
pub fn hypothesis_check_with_params(
    dataset: &Dataset,
    anchor: &GaussianParams,
    per_image: &[GaussianParams],
    embedder: &dyn Embedder,
) -> Result<HypothesisReport> {
    if dataset.domains().len() < 2 {
        return Err(Error::param("hypothesis check needs at least 2 domains"));
    }
    if per_image.len() != dataset.len() {
        return Err(Error::param(format!(
            "{} parameter sets for {} images",
            per_image.len(),
            dataset.len()
        )));
    }
    let raw: Vec<Image> = dataset.samples.iter().map(|s| s.image.clone()).collect();
    let uniform: Vec<Image> = raw
        .iter()
        .map(|img| Ok(high_pass_view(img, anchor)?.pixels))
        .collect::<Result<_>>()?;
    let discriminative: Vec<Image> = raw
        .iter()
        .zip(per_image)
        .map(|(img, p)| Ok(high_pass_view(img, p)?.pixels))
        .collect::<Result<_>>()?;

    let all: Vec<&Image> = raw.iter().chain(&uniform).chain(&discriminative).collect();
    let mut vectors = raw_embeddings(&all, embedder)?;
    standardize(&mut vectors);

    let n = dataset.len();
    let labels: Vec<String> = dataset.samples.iter().map(|s| s.domain.clone()).collect();
    let conditions = [Condition::Raw, Condition::UniformHp, Condition::DiscriminativeHp];
    let mut reports = Vec::with_capacity(3);
    for (c, cond) in conditions.iter().enumerate() {
        let set = EmbeddingSet::new(vectors[c * n..(c + 1) * n].to_vec(), labels.clone(), embedder.id())?;
        reports.push(dispersion_stats(&set, *cond)?);
    }

    let joint = EmbeddingSet::new(
        vectors,
        conditions.iter().flat_map(|_| labels.iter().cloned()).collect(),
        embedder.id(),
    )?;
    let coords = principal_projection(&joint)?;
    let projection = coords
        .into_iter()
        .enumerate()
        .map(|(i, [x, y])| {
            let s = &dataset.samples[i % n];
            ProjectedPoint {
                condition: conditions[i / n],
                id: s.id.clone(),
                domain: s.domain.clone(),
                x,
                y,
            }
        })
        .collect();

    let [raw_r, uni_r, dis_r]: [DispersionReport; 3] = reports.try_into().expect("three conditions");
    let inner = |r: &DispersionReport| {
        r.mean_inner()
            .ok_or_else(|| Error::param("every domain has a single image; inner dispersion undefined"))
    };
    let inter = |r: &DispersionReport| r.mean_inter().unwrap_or(0.0);
    Ok(HypothesisReport {
        embedder_id: embedder.id().to_string(),
        anchor: *anchor,
        h1_inter: Verdict::decrease(inter(&raw_r), inter(&uni_r)),
        h1_inner: Verdict::decrease(inner(&raw_r)?, inner(&uni_r)?),
        h2_inner: Verdict::increase(inner(&uni_r)?, inner(&dis_r)?),
        raw: raw_r,
        uniform: uni_r,
        discriminative: dis_r,
        real_data: "untested: multi-dataset clustering requires the real retinal datasets".to_string(),
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(points: &[&[f64]], labels: &[&str]) -> EmbeddingSet {
        EmbeddingSet::new(
            points.iter().map(|p| p.to_vec()).collect(),
            labels.iter().map(|s| s.to_string()).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn default_embedder_dimension() {
        let e = HandcraftedEmbedder::default();
        let img = Image::from_fn(40, 40, 3, |y, x, c| ((y * 3 + x * 7 + c) % 11) as f64 / 11.0).unwrap();
        assert_eq!(e.dim(), 288);
        assert_eq!(e.embed(&img).unwrap().len(), 288);
    }

    #[test]
    fn identical_images_embed_identically() {
        let img = Image::from_fn(32, 32, 1, |y, x, _| ((x * y) % 5) as f64 / 5.0).unwrap();
        let other = Image::from_fn(32, 32, 1, |y, _, _| y as f64 / 32.0).unwrap();
        let labels = vec!["a".to_string(); 3];
        let s = embed_images(&[&img, &img, &other], &labels, &HandcraftedEmbedder::default()).unwrap();
        assert_eq!(s.vectors[0], s.vectors[1]);
        assert_eq!(distance(&s.vectors[0], &s.vectors[1]), 0.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(embed_images(&[], &[], &HandcraftedEmbedder::default()).is_err());
    }

    #[test]
    fn standardized_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..5).map(|j| rng.random::<f64>() * (j as f64 + 1.0) + 10.0).collect())
            .collect();
        v.iter_mut().for_each(|r| r[4] = 2.5);
        standardize(&mut v);
        for j in 0..4 {
            let mean = v.iter().map(|r| r[j]).sum::<f64>() / 9.0;
            let var = v.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
        assert!(v.iter().all(|r| r[4] == 0.0));
    }

    #[test]
    fn identical_points_give_zero_statistics() {
        let p: &[f64] = &[1.0, 2.0];
        let s = set(&[p; 4], &["a", "a", "b", "b"]);
        let r = dispersion_stats(&s, Condition::Raw).unwrap();
        assert!(r.inner.values().all(|v| *v == Some(0.0)));
        assert_eq!(r.inter[0].distance, 0.0);
    }

    #[test]
    fn translated_domain_distance() {
        let d = [3.0, -4.0];
        let a: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 2.0], &[-2.0, 1.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + d[0], p[1] + d[1]]).collect();
        let pts: Vec<&[f64]> = a.iter().copied().chain(b.iter().map(|v| v.as_slice())).collect();
        let r = dispersion_stats(&set(&pts, &["a", "a", "a", "b", "b", "b"]), Condition::Raw).unwrap();
        assert!((r.inter[0].distance - 5.0).abs() < 1e-12);
        assert!((r.inner["a"].unwrap() - r.inner["b"].unwrap()).abs() < 1e-12);
    }

    #[test]
    fn singleton_domain_has_no_inner() {
        let r = dispersion_stats(&set(&[&[0.0], &[1.0], &[3.0]], &["a", "a", "b"]), Condition::Raw).unwrap();
        assert_eq!(r.inner["b"], None);
        assert_eq!(r.inner["a"], Some(1.0));
    }

    #[test]
    fn projection_recovers_dominant_axis() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.01 * ((i * 7) % 3) as f64, 0.0]).collect();
        let s = EmbeddingSet::new(pts, vec!["a".into(); 6], "t").unwrap();
        let p = principal_projection(&s).unwrap();
        for (i, q) in p.iter().enumerate() {
            assert!((q[0] - (i as f64 - 2.5)).abs() < 0.05);
        }
    }
}
