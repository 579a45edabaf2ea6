use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::kernels::{design_stats, DesignStats};

/// Default number of swap proposals in the maximin exchange search.
pub const DEFAULT_MAXIMIN_ITERS: usize = 10_000;

/// A set of input locations on the unit cube, with spread statistics.
#[derive(Debug, Clone)]
pub struct Design {
    points: DMatrix<f64>,
    kind: String,
    seed: Option<u64>,
    stats: DesignStats,
}

impl Design {
    /// Wraps explicit points, validating them and computing spread statistics.
    pub fn from_points(points: DMatrix<f64>, kind: impl Into<String>) -> Result<Design> {
        Self::build(points, kind, None)
    }

    fn build(points: DMatrix<f64>, kind: impl Into<String>, seed: Option<u64>) -> Result<Design> {
        if points.nrows() < 2 || points.ncols() == 0 {
            return Err(Error::invalid(
                "a design needs at least two points and one dimension",
            ));
        }
        for v in points.iter() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::invalid(format!(
                    "design coordinate {v} lies outside the unit cube"
                )));
            }
        }
        let stats = design_stats(&points)?;
        Ok(Design {
            points,
            kind: kind.into(),
            seed,
            stats,
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn p(&self) -> usize {
        self.points.ncols()
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn stats(&self) -> DesignStats {
        self.stats
    }

    /// Points as row vectors, convenient for building datasets.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.points.row(i).iter().copied().collect())
            .collect()
    }
}

/// Latin hypercube sample: every column places exactly one point in each of
/// the `n` equal strata of the unit interval.
pub fn random_lhd(n: usize, p: usize, seed: u64) -> Result<Design> {
    let points = lhd_points(n, p, &mut ChaCha20Rng::seed_from_u64(seed))?;
    Design::build(points, "random-lhd", Some(seed))
}

fn lhd_points(n: usize, p: usize, rng: &mut ChaCha20Rng) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::invalid("a Latin hypercube needs at least two runs"));
    }
    if p == 0 {
        return Err(Error::invalid("a Latin hypercube needs at least one dimension"));
    }
    let mut points = DMatrix::zeros(n, p);
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..p {
        strata.shuffle(rng);
        for i in 0..n {
            let u: f64 = rng.gen();
            points[(i, j)] = (strata[i] as f64 + u) / n as f64;
        }
    }
    Ok(points)
}

/// Latin hypercube improved by an exchange search that maximizes the minimum
/// inter-point distance. Column-wise swaps keep the one-per-stratum property.
pub fn maximin_lhd(n: usize, p: usize, seed: u64, iters: usize) -> Result<Design> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut points = lhd_points(n, p, &mut rng)?;
    let mut best_min = min_sq_distance(&points);
    for _ in 0..iters {
        let j = rng.gen_range(0..p);
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n);
        if a == b {
            b = (b + 1) % n;
        }
        points.swap((a, j), (b, j));
        let candidate = min_sq_distance(&points);
        if candidate > best_min {
            best_min = candidate;
        } else {
            points.swap((a, j), (b, j));
        }
    }
    Design::build(points, "maximin-lhd", Some(seed))
}

fn min_sq_distance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let p = points.ncols();
    let rows = crate::kernels::row_major(points);
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = &rows[i * p..(i + 1) * p];
        for k in (i + 1)..n {
            let b = &rows[k * p..(k + 1) * p];
            let mut d2 = 0.0;
            for j in 0..p {
                let d = a[j] - b[j];
                d2 += d * d;
            }
            if d2 < best {
                best = d2;
            }
        }
    }
    best
}

/// One cluster of a 1-D design: `count` evenly spaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Deterministic 1-D design from cluster descriptions.
///
/// Without clusters the result is `n` evenly spaced points spanning the unit
/// interval. Cluster counts must add up to `n`; clusters must not overlap.
pub fn sparse_1d_design(n: usize, clusters: &[Cluster]) -> Result<Design> {
    if n < 2 {
        return Err(Error::invalid("a 1-D design needs at least two points"));
    }
    if clusters.is_empty() {
        let points = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        return Design::build(points, "sparse-1d", None);
    }
    let total: usize = clusters.iter().map(|c| c.count).sum();
    if total != n {
        return Err(Error::invalid(format!(
            "cluster counts add to {total}, expected {n}"
        )));
    }
    let mut prev_hi = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(n);
    for c in clusters {
        if !(c.lo.is_finite() && c.hi.is_finite()) || c.lo < 0.0 || c.hi > 1.0 || c.lo >= c.hi {
            return Err(Error::invalid(format!(
                "cluster [{}, {}] must sit inside the unit interval with lo < hi",
                c.lo, c.hi
            )));
        }
        if c.lo <= prev_hi {
            return Err(Error::invalid(
                "clusters must be disjoint and in increasing order",
            ));
        }
        if c.count == 0 {
            return Err(Error::invalid("clusters need at least one point"));
        }
        prev_hi = c.hi;
        if c.count == 1 {
            values.push(0.5 * (c.lo + c.hi));
        } else {
            for k in 0..c.count {
                let v = c.lo + (c.hi - c.lo) * k as f64 / (c.count - 1) as f64;
                values.push(v.min(c.hi));
            }
        }
    }
    let points = DMatrix::from_fn(n, 1, |i, _| values[i]);
    Design::build(points, "sparse-1d", None)
}

/// Bundled named designs used by the benchmark suites and shipped datasets.
pub fn bundled_design(name: &str) -> Result<Design> {
    let mut design = match name {
        "xiong17" => sparse_1d_design(
            17,
            &[
                Cluster {
                    lo: 0.0,
                    hi: 0.40,
                    count: 12,
                },
                Cluster {
                    lo: 0.52,
                    hi: 1.0,
                    count: 5,
                },
            ],
        )?,
        "gramacy20" => sparse_1d_design(
            20,
            &[
                Cluster {
                    lo: 0.0,
                    hi: 0.35,
                    count: 14,
                },
                Cluster {
                    lo: 0.40,
                    hi: 1.0,
                    count: 6,
                },
            ],
        )?,
        "damped24" => sparse_1d_design(
            24,
            &[
                Cluster {
                    lo: 0.0,
                    hi: 0.5,
                    count: 17,
                },
                Cluster {
                    lo: 0.56,
                    hi: 1.0,
                    count: 7,
                },
            ],
        )?,
        other => {
            return Err(Error::invalid(format!(
                "unknown bundled design `{other}`; available: xiong17, gramacy20, damped24"
            )))
        }
    };
    design.kind = name.to_string();
    Ok(design)
}

/// Names accepted by [`bundled_design`].
pub const BUNDLED_DESIGNS: [&str; 3] = ["xiong17", "gramacy20", "damped24"];
