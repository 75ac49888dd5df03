//! Uniform spatial hash over a static point cloud.

use std::collections::HashMap;

use nalgebra::Point3;

type CellKey = (i64, i64, i64);

/// Buckets points into cubic cells of a fixed side for radius and
/// nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct SpatialHash<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    buckets: HashMap<CellKey, Vec<u32>>,
    min_key: CellKey,
    max_key: CellKey,
}

impl<'a> SpatialHash<'a> {
    /// `cell` must be positive and finite.
    pub fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        assert!(cell.is_finite() && cell > 0.0, "cell size must be positive");
        assert!(points.len() <= u32::MAX as usize);
        let mut buckets: HashMap<CellKey, Vec<u32>> = HashMap::new();
        let mut min_key = (i64::MAX, i64::MAX, i64::MAX);
        let mut max_key = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let k = key_of(p, cell);
            min_key = (min_key.0.min(k.0), min_key.1.min(k.1), min_key.2.min(k.2));
            max_key = (max_key.0.max(k.0), max_key.1.max(k.1), max_key.2.max(k.2));
            buckets.entry(k).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            buckets,
            min_key,
            max_key,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &'a [Point3<f64>] {
        self.points
    }

    pub fn key(&self, p: &Point3<f64>) -> CellKey {
        key_of(p, self.cell)
    }

    /// Indices stored in the cells within `reach` cells (Chebyshev) of `key`.
    pub fn neighborhood(&self, key: CellKey, reach: i64) -> impl Iterator<Item = usize> + '_ {
        let (kx, ky, kz) = key;
        (-reach..=reach).flat_map(move |dx| {
            (-reach..=reach).flat_map(move |dy| {
                (-reach..=reach).flat_map(move |dz| {
                    self.buckets
                        .get(&(kx + dx, ky + dy, kz + dz))
                        .into_iter()
                        .flatten()
                        .map(|&i| i as usize)
                })
            })
        })
    }

    /// True if some point satisfies `|p - q|^2 < radius^2`. Requires `radius <= cell`.
    pub fn any_within(&self, q: &Point3<f64>, radius: f64) -> bool {
        debug_assert!(radius <= self.cell);
        let r2 = radius * radius;
        self.neighborhood(self.key(q), 1)
            .any(|i| (self.points[i] - q).norm_squared() < r2)
    }

    /// Nearest point with `|p - q| <= radius`, lowest index on ties. Requires `radius <= cell`.
    pub fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<(usize, f64)> {
        debug_assert!(radius <= self.cell);
        let mut best: Option<(usize, f64)> = None;
        for i in self.neighborhood(self.key(q), 1) {
            let d2 = (self.points[i] - q).norm_squared();
            let better = match best {
                None => true,
                Some((j, b)) => d2 < b || (d2 == b && i < j),
            };
            if better {
                best = Some((i, d2));
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt())).filter(|&(_, d)| d <= radius)
    }

    /// Nearest stored point as `(index, distance)`; `None` for an empty cloud.
    ///
    /// Ties are broken by the lowest index, so results do not depend on the
    /// bucket iteration order.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let k = self.key(q);
        // Beyond this ring every occupied cell has already been visited.
        let max_ring = [
            (k.0 - self.min_key.0).abs(),
            (k.0 - self.max_key.0).abs(),
            (k.1 - self.min_key.1).abs(),
            (k.1 - self.max_key.1).abs(),
            (k.2 - self.min_key.2).abs(),
            (k.2 - self.max_key.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            for (dx, dy, dz) in ring_offsets(ring) {
                let Some(bucket) = self.buckets.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) else {
                    continue;
                };
                for &i in bucket {
                    let i = i as usize;
                    let d2 = (self.points[i] - q).norm_squared();
                    best = match best {
                        Some((bi, bd2)) if bd2 < d2 || (bd2 == d2 && bi < i) => Some((bi, bd2)),
                        _ => Some((i, d2)),
                    };
                }
            }
            // Points in ring + 1 or further are at least `ring * cell` away.
            if let Some((_, bd2)) = best {
                let bound = ring as f64 * self.cell;
                if bd2 <= bound * bound {
                    break;
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

fn key_of(p: &Point3<f64>, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Offsets on the surface of the Chebyshev ball of radius `ring`.
fn ring_offsets(ring: i64) -> impl Iterator<Item = (i64, i64, i64)> {
    (-ring..=ring).flat_map(move |dx| {
        (-ring..=ring).flat_map(move |dy| {
            let on_face = dx.abs() == ring || dy.abs() == ring;
            let dzs: Vec<i64> = if on_face {
                (-ring..=ring).collect()
            } else if ring == 0 {
                vec![0]
            } else {
                vec![-ring, ring]
            };
            dzs.into_iter().map(move |dz| (dx, dy, dz))
        })
    })
}

/// Linear-scan nearest neighbor, lowest index on ties.
pub fn nearest_bruteforce(points: &[Point3<f64>], q: &Point3<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if best.is_none_or(|(_, bd2)| d2 < bd2) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}
