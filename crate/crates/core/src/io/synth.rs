//! Seeded synthetic point sets.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::points::PointMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Uniform,
    GaussianMixture,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SynthKind::Uniform),
            "gaussian-mixture" | "mixture" => Ok(SynthKind::GaussianMixture),
            other => Err(Error::Usage(format!("unknown data kind {other:?}"))),
        }
    }
}

/// Dimensionalities of the photometric feature sets the engine was tuned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PsfMag,
    PsfModelMag,
    AllMag,
}

impl Preset {
    pub fn dim(self) -> usize {
        match self {
            Preset::PsfMag => 5,
            Preset::PsfModelMag => 10,
            Preset::AllMag => 15,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psf_mag" => Ok(Preset::PsfMag),
            "psf_model_mag" => Ok(Preset::PsfModelMag),
            "all_mag" => Ok(Preset::AllMag),
            other => Err(Error::Usage(format!("unknown preset {other:?}"))),
        }
    }
}

pub const DEFAULT_COMPONENTS: usize = 4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points drawn uniformly from `[0, 1)^d`.
pub fn uniform(n: usize, d: usize, seed: u64) -> PointMatrix {
    let mut r = rng(seed);
    let data = (0..n * d).map(|_| r.gen::<f32>()).collect();
    PointMatrix::new(d, data).expect("uniform sample")
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub points: PointMatrix,
    /// Component of each point.
    pub labels: Vec<u32>,
    pub centers: PointMatrix,
}

/// `n` points from `components` isotropic Gaussians with centers in
/// `[0.2, 0.8)^d` and standard deviation `0.05`.
pub fn gaussian_mixture(n: usize, d: usize, components: usize, seed: u64) -> Mixture {
    assert!(components >= 1);
    let mut r = rng(seed);
    let centers: Vec<f32> = (0..components * d)
        .map(|_| r.gen_range(0.2f32..0.8))
        .collect();
    let noise = Normal::new(0.0f32, 0.05).unwrap();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.gen_range(0..components);
        labels.push(c as u32);
        for j in 0..d {
            data.push(centers[c * d + j] + noise.sample(&mut r));
        }
    }
    Mixture {
        points: PointMatrix::new(d, data).expect("mixture sample"),
        labels,
        centers: PointMatrix::new(d, centers).expect("centers"),
    }
}

pub fn generate(kind: SynthKind, n: usize, d: usize, seed: u64) -> PointMatrix {
    match kind {
        SynthKind::Uniform => uniform(n, d, seed),
        SynthKind::GaussianMixture => gaussian_mixture(n, d, DEFAULT_COMPONENTS, seed).points,
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub points: PointMatrix,
    /// Indices of the planted outliers, ascending.
    pub outliers: Vec<u32>,
}

/// A Gaussian mixture of `n - outliers` points plus `outliers` points placed
/// 3 to 3 + `outliers` units from the center of the unit cube in random
/// directions, shuffled into random positions.
pub fn planted_outliers(n: usize, d: usize, outliers: usize, seed: u64) -> Planted {
    assert!(outliers < n);
    let base = gaussian_mixture(n - outliers, d, DEFAULT_COMPONENTS, seed);
    let mut r = rng(seed ^ 0xa5a5_a5a5_a5a5_a5a5);
    let mut rows: Vec<(bool, Vec<f32>)> = base.points.rows().map(|p| (false, p.to_vec())).collect();
    for i in 0..outliers {
        let dir: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
        let radius = 3.0 + i as f32;
        rows.push((true, dir.iter().map(|v| 0.5 + v / norm * radius).collect()));
    }
    rows.shuffle(&mut r);
    let outliers = rows
        .iter()
        .enumerate()
        .filter(|(_, (o, _))| *o)
        .map(|(i, _)| i as u32)
        .collect();
    let data = rows.into_iter().flat_map(|(_, p)| p).collect();
    Planted {
        points: PointMatrix::new(d, data).expect("planted sample"),
        outliers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_reproducible() {
        assert_eq!(uniform(100, 5, 7), uniform(100, 5, 7));
        assert_ne!(uniform(100, 5, 7), uniform(100, 5, 8));
        let a = gaussian_mixture(300, 4, 4, 11);
        let b = gaussian_mixture(300, 4, 4, 11);
        assert_eq!(a.points, b.points);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn uniform_in_unit_cube() {
        let u = uniform(2000, 3, 1);
        assert!(u.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn mixture_labels_match_nearest_center() {
        // components are well separated relative to the noise, so the
        // nearest center recovers almost every label
        let m = gaussian_mixture(1000, 10, 4, 3);
        assert!(m.labels.iter().all(|&l| l < 4));
        let agree = m
            .points
            .rows()
            .zip(&m.labels)
            .filter(|(p, &l)| {
                let best = (0..4)
                    .min_by(|&a, &b| {
                        crate::points::sq_euclidean(p, m.centers.row(a))
                            .total_cmp(&crate::points::sq_euclidean(p, m.centers.row(b)))
                    })
                    .unwrap();
                best as u32 == l
            })
            .count();
        assert!(agree > 900, "{agree}");
    }

    #[test]
    fn planted_positions() {
        let p = planted_outliers(500, 5, 5, 42);
        assert_eq!(p.points.n(), 500);
        assert_eq!(p.outliers.len(), 5);
        for &i in &p.outliers {
            let r = p.points.row(i as usize);
            let dist = r.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f32>().sqrt();
            assert!(dist >= 2.99, "{dist}");
        }
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::PsfMag.dim(), 5);
        assert_eq!("all_mag".parse::<Preset>().unwrap().dim(), 15);
    }
}
