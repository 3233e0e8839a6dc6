//! Identity model learning: a low-rank identity basis fitted to registered
//! scans, and a multivariate normal over the fitted identity coefficients.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::IdentityParams;
use crate::seed::content_hash;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const DISTRIBUTION_FORMAT_VERSION: u32 = 1;

/// Truncation applied to standard-normal draws unless the caller overrides it.
pub const DEFAULT_TRUNCATION_SIGMA: f64 = 3.0;

/// Registered scans sharing the rig topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCorpus {
    pub format_version: u32,
    pub vertex_count: usize,
    /// Hash of the face list the scans were registered to.
    pub topology_hash: String,
    pub scans: Vec<Vec<[f64; 3]>>,
}

pub fn topology_hash(faces: &[[u32; 3]]) -> String {
    let bytes: Vec<u8> = faces.iter().flatten().flat_map(|i| i.to_le_bytes()).collect();
    content_hash(&bytes)
}

impl ScanCorpus {
    pub fn new(scans: Vec<Vec<[f64; 3]>>, faces: &[[u32; 3]]) -> Result<Self> {
        let vertex_count = scans.first().map_or(0, Vec::len);
        let corpus = Self {
            format_version: CORPUS_FORMAT_VERSION,
            vertex_count,
            topology_hash: topology_hash(faces),
            scans,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::param(format!(
                "corpus format_version {} unsupported",
                self.format_version
            )));
        }
        if let Some(i) = self.scans.iter().position(|s| s.len() != self.vertex_count) {
            return Err(Error::param(format!(
                "scan {i} has {} vertices, corpus declares {}",
                self.scans[i].len(),
                self.vertex_count
            )));
        }
        if self.scans.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::param("corpus contains non-finite coordinates"));
        }
        Ok(())
    }

    /// Rejects corpora registered to a different mesh topology.
    pub fn check_topology(&self, faces: &[[u32; 3]]) -> Result<()> {
        if self.topology_hash != topology_hash(faces) {
            return Err(Error::param(
                "corpus topology hash does not match the rig faces (mis-registered scans)",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corpus: ScanCorpus =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("corpus serializes");
        crate::dataset::write_atomic(path, json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Per-scan RMS over all coordinates of the reconstruction residual.
    pub residual_rms: Vec<f64>,
    /// Fraction of total centered variance captured by each component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    /// Set when the corpus has no variation around the template.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityFit {
    /// Flattened `[component][vertex][xyz]`, orthonormal as 3N-vectors.
    pub basis: Vec<f64>,
    pub components: usize,
    /// One coefficient vector per scan.
    pub betas: Vec<Vec<f64>>,
    pub report: FitReport,
}

/// Fits a `k`-component identity basis and per-scan coefficients minimising
/// the Frobenius reconstruction error of the template-centered scans.
///
/// The optimum is the truncated SVD of the `M x 3N` centered data matrix.
/// Each component is sign-normalized so its largest-magnitude entry is positive.
pub fn fit_identity_basis(
    corpus: &ScanCorpus,
    k: usize,
    template: &[[f64; 3]],
) -> Result<IdentityFit> {
    corpus.validate()?;
    let m = corpus.scans.len();
    let n = template.len();
    let cols = 3 * n;
    if corpus.vertex_count != n {
        return Err(Error::param(format!(
            "template has {n} vertices, corpus has {}",
            corpus.vertex_count
        )));
    }
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 scans, got {m}"
        )));
    }
    if k == 0 || k > (m - 1).min(cols) {
        return Err(Error::param(format!(
            "component count {k} must be in 1..={}",
            (m - 1).min(cols)
        )));
    }

    let centered = DMatrix::from_fn(m, cols, |r, c| {
        corpus.scans[r][c / 3][c % 3] - template[c / 3][c % 3]
    });
    let total: f64 = centered.iter().map(|x| x * x).sum();
    let degenerate = total == 0.0;

    let mut basis_rows: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut sq_singular: Vec<f64> = Vec::new();
    if !degenerate {
        let svd = centered.clone().svd(false, true);
        let vt = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        sq_singular = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
        basis_rows.extend(order.iter().take(k).map(|&i| vt.row(i).transpose()));
    }
    orthonormalize(&mut basis_rows, k, cols);

    for row in basis_rows.iter_mut() {
        let pivot = row.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            *row = -row.clone();
        }
    }

    let basis_mat = DMatrix::from_fn(k, cols, |r, c| basis_rows[r][c]);
    let betas_mat = &centered * basis_mat.transpose();
    let residual = &centered - &betas_mat * &basis_mat;

    let residual_rms = (0..m)
        .map(|r| (residual.row(r).iter().map(|x| x * x).sum::<f64>() / cols as f64).sqrt())
        .collect();
    let explained_variance_ratio = (0..k)
        .map(|i| {
            if degenerate {
                0.0
            } else {
                sq_singular.get(i).copied().unwrap_or(0.0) / total
            }
        })
        .collect();

    Ok(IdentityFit {
        basis: basis_mat.transpose().as_slice().to_vec(),
        components: k,
        betas: (0..m)
            .map(|r| betas_mat.row(r).iter().copied().collect())
            .collect(),
        report: FitReport {
            residual_rms,
            explained_variance_ratio,
            degenerate,
        },
    })
}

/// Gram-Schmidt over the given rows, topping up with coordinate axes until
/// `k` orthonormal rows exist.
fn orthonormalize(rows: &mut Vec<DVector<f64>>, k: usize, dim: usize) {
    let candidates: Vec<DVector<f64>> = std::mem::take(rows)
        .into_iter()
        .chain((0..dim).map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 })))
        .collect();
    for mut v in candidates {
        if rows.len() == k {
            break;
        }
        for _ in 0..2 {
            for u in rows.iter() {
                let d = u.dot(&v);
                v.axpy(-d, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            rows.push(v / norm);
        }
    }
}

/// Multivariate normal over identity coefficients with a cached lower-triangular factor.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityDistribution {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionFile {
    format_version: u32,
    dim: usize,
    mean: Vec<f64>,
    /// Row-major `dim x dim`.
    covariance: Vec<f64>,
}

impl IdentityDistribution {
    /// Builds the distribution, adding diagonal jitter `1e-10 * trace / k`
    /// (escalating tenfold if needed) when the covariance is not positive definite.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 || covariance.len() != k * k {
            return Err(Error::param(format!(
                "covariance must be {k}x{k} for a {k}-dimensional mean"
            )));
        }
        if mean.iter().chain(&covariance).any(|x| !x.is_finite()) {
            return Err(Error::param("distribution has non-finite entries"));
        }
        let mut cov = DMatrix::from_row_slice(k, k, &covariance);
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::param(format!("covariance is not symmetric ({asym:e})")));
        }
        cov = (&cov + cov.transpose()) * 0.5;
        let trace = cov.trace();
        if cov.iter().all(|x| *x == 0.0) {
            return Ok(Self {
                mean: DVector::from_vec(mean),
                factor: DMatrix::zeros(k, k),
                covariance: cov,
            });
        }
        let mut jitter = 1e-10 * trace.abs() / k as f64;
        let mut attempt = cov.clone();
        for _ in 0..12 {
            if let Some(chol) = Cholesky::new(attempt.clone()) {
                return Ok(Self {
                    mean: DVector::from_vec(mean),
                    factor: chol.l(),
                    covariance: attempt,
                });
            }
            attempt = &cov + DMatrix::identity(k, k) * jitter;
            jitter *= 10.0;
        }
        Err(Error::param("covariance is not positive semi-definite"))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DistributionFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.format_version != DISTRIBUTION_FORMAT_VERSION || file.mean.len() != file.dim {
            return Err(Error::format(path, "unsupported version or inconsistent dim"));
        }
        Self::new(file.mean, file.covariance)
    }

    pub fn to_json(&self) -> String {
        let k = self.dim();
        let file = DistributionFile {
            format_version: DISTRIBUTION_FORMAT_VERSION,
            dim: k,
            mean: self.mean.iter().copied().collect(),
            covariance: (0..k * k).map(|i| self.covariance[(i / k, i % k)]).collect(),
        };
        serde_json::to_string(&file).expect("distribution serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, self.to_json().as_bytes())
    }
}

/// Sample mean and unbiased covariance of fitted identity coefficients.
pub fn fit_identity_distribution(betas: &[Vec<f64>]) -> Result<IdentityDistribution> {
    let m = betas.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 coefficient vectors, got {m}"
        )));
    }
    let k = betas[0].len();
    if betas.iter().any(|b| b.len() != k) {
        return Err(Error::param("coefficient vectors differ in length"));
    }
    let mut mean = vec![0.0; k];
    for b in betas {
        for (acc, x) in mean.iter_mut().zip(b) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let mut cov = vec![0.0; k * k];
    for b in betas {
        for i in 0..k {
            let di = b[i] - mean[i];
            for j in 0..k {
                cov[i * k + j] += di * (b[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|x| *x /= (m - 1) as f64);
    IdentityDistribution::new(mean, cov)
}

/// Draws `mean + factor * z` with standard-normal `z`, each entry clamped to
/// `±truncation` when given.
pub fn sample_identity<R: Rng + ?Sized>(
    dist: &IdentityDistribution,
    rng: &mut R,
    truncation: Option<f64>,
) -> IdentityParams {
    let k = dist.dim();
    let z = DVector::from_fn(k, |_, _| {
        let x: f64 = rng.sample(StandardNormal);
        match truncation {
            Some(t) => x.clamp(-t, t),
            None => x,
        }
    });
    let sample = &dist.mean + &dist.factor * z;
    IdentityParams(sample.iter().copied().collect())
}
