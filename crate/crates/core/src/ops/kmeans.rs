//! Lloyd's k-means with k-means++ seeding for color quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::OpsError;
use crate::maps::{ClassInfo, LabelMap, Palette};
use crate::raster::{unit_to_u8, ImageBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    /// Append `(x / width, y / height)` to each pixel's feature vector.
    pub use_position: bool,
    pub max_iter: usize,
    /// Stop once the relative SSE decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            use_position: false,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_position(mut self, use_position: bool) -> Self {
        self.use_position = use_position;
        self
    }

    fn validate(&self, pixels: usize) -> Result<(), OpsError> {
        if self.k == 0 {
            return Err(OpsError::ZeroClusters);
        }
        if self.k > pixels {
            return Err(OpsError::TooManyClusters { k: self.k, pixels });
        }
        if self.k > 256 {
            return Err(OpsError::KMeansConfig("k must not exceed 256"));
        }
        if self.max_iter == 0 {
            return Err(OpsError::KMeansConfig("max_iter must be at least 1"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(OpsError::KMeansConfig("tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOutput {
    /// Input with every pixel's color replaced by its centroid color.
    pub image: ImageBuffer,
    /// Cluster index per pixel.
    pub labels: LabelMap,
    /// Final centroids in feature space (color, then position if enabled).
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansOutput {
    pub fn iterations(&self) -> usize {
        self.sse_history.len()
    }

    pub fn final_sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn extract_features(image: &ImageBuffer, use_position: bool) -> Features {
    let c = image.channels();
    let dim = c + if use_position { 2 } else { 0 };
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = Vec::with_capacity(w * h * dim);
    for (i, px) in image.pixels().enumerate() {
        data.extend(px.iter().map(|&v| f64::from(v)));
        if use_position {
            data.push((i % w) as f64 / w as f64);
            data.push((i / w) as f64 / h as f64);
        }
    }
    Features { dim, data }
}

fn seed_centroids(features: &Features, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut centroids = vec![features.point(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| dist2(features.point(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..n)
        };
        let c = features.point(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(features.point(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point; ties go to the lowest index.
fn assign(features: &Features, centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) {
    for i in 0..features.len() {
        let p = features.point(i);
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = dist2(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
    }
}

/// Moves each empty centroid onto the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn reseed_empty(
    features: &Features,
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[labels[i]] >= 2 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        // k <= n guarantees a cluster with two or more members exists.
        let (i, _) = best.expect("k does not exceed the point count");
        counts[labels[i]] -= 1;
        counts[empty] = 1;
        labels[i] = empty;
        dists[i] = 0.0;
        centroids[empty] = features.point(i).to_vec();
    }
}

fn update_means(features: &Features, labels: &[usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sums = vec![vec![0.0f64; features.dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(features.point(i)) {
            *s += v;
        }
    }
    for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

/// Clusters pixels (color, optionally position) and repaints each pixel with
/// its centroid color.
pub fn kmeans_cluster(image: &ImageBuffer, cfg: &KMeansConfig) -> Result<KMeansOutput, OpsError> {
    let channels = image.channels();
    if !matches!(channels, 1 | 3) {
        return Err(OpsError::Channels {
            op: "kmeans",
            channels,
        });
    }
    cfg.validate(image.pixel_count())?;

    let features = extract_features(image, cfg.use_position);
    let n = features.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_centroids(&features, cfg.k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut previous_labels: Option<Vec<usize>> = None;
    let mut dists = vec![0.0f64; n];
    let mut sse_history = Vec::new();

    for _ in 0..cfg.max_iter {
        assign(&features, &centroids, &mut labels, &mut dists);
        reseed_empty(&features, &mut centroids, &mut labels, &mut dists);
        let sse: f64 = dists.iter().sum();
        let converged = sse == 0.0
            || previous_labels.as_deref() == Some(labels.as_slice())
            || sse_history
                .last()
                .is_some_and(|&prev: &f64| (prev - sse) < cfg.tol * prev);
        sse_history.push(sse);
        update_means(&features, &labels, &mut centroids);
        if converged {
            break;
        }
        previous_labels = Some(labels.clone());
    }

    let colors: Vec<Vec<f32>> = centroids
        .iter()
        .map(|c| {
            c[..channels]
                .iter()
                .map(|&v| v.clamp(0.0, 1.0) as f32)
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * channels);
    for &l in &labels {
        data.extend_from_slice(&colors[l]);
    }
    let image_out = ImageBuffer::new(image.width(), image.height(), channels, data)?;

    let palette = Palette::new(
        colors
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rgb = if c.len() == 1 {
                    [c[0]; 3]
                } else {
                    [c[0], c[1], c[2]]
                };
                ClassInfo::new(format!("cluster {i}"), rgb.map(unit_to_u8))
            })
            .collect(),
    )
    .expect("k <= 256");
    let label_map = LabelMap::new(
        image.width(),
        image.height(),
        labels.iter().map(|&l| l as u8).collect(),
        palette,
    )
    .expect("labels index the palette");

    Ok(KMeansOutput {
        image: image_out,
        labels: label_map,
        centroids,
        sse_history,
    })
}
