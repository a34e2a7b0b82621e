//! Great-circle distance, the compact Epanechnikov kernel, and a lat/lon grid
//! index whose cells are sized to the kernel bandwidth.

use std::collections::HashMap;

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Haversine great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Epanechnikov profile `max(0, 1 - u^2)` evaluated at `u = dist / bandwidth`.
#[inline]
pub fn epanechnikov(dist: f64, bandwidth: f64) -> f64 {
    let u = dist / bandwidth;
    (1.0 - u * u).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Cell {
    band: i64,
    col: i64,
}

/// Bucket grid over the sphere. Latitude bands are one bandwidth tall; each
/// band is cut into longitude columns at least one bandwidth wide at the
/// band's poleward edge, so every point within `bandwidth` of a query lies in
/// one of the scanned cells.
#[derive(Debug, Clone)]
pub struct SpatialGrid<T> {
    bandwidth: f64,
    band_deg: f64,
    cells: HashMap<Cell, Vec<T>>,
}

impl<T: Copy + PartialEq> SpatialGrid<T> {
    pub fn new(bandwidth_m: f64) -> Self {
        assert!(bandwidth_m > 0.0, "bandwidth must be positive");
        Self {
            bandwidth: bandwidth_m,
            band_deg: (bandwidth_m / EARTH_RADIUS_M).to_degrees(),
            cells: HashMap::new(),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn band_of(&self, lat: f64) -> i64 {
        ((lat + 90.0) / self.band_deg).floor() as i64
    }

    /// Number of longitude columns in a band; 1 when the band is near a pole.
    fn columns(&self, band: i64) -> i64 {
        let lo = -90.0 + band as f64 * self.band_deg;
        let hi = lo + self.band_deg;
        let edge = lo.abs().max(hi.abs()).min(90.0);
        let circumference = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M * edge.to_radians().cos();
        ((circumference / self.bandwidth).floor() as i64).max(1)
    }

    fn column_of(&self, band: i64, lon: f64) -> i64 {
        let cols = self.columns(band);
        let width = 360.0 / cols as f64;
        (((lon + 180.0) / width).floor() as i64).rem_euclid(cols)
    }

    fn cell_of(&self, lat: f64, lon: f64) -> Cell {
        let band = self.band_of(lat);
        Cell {
            band,
            col: self.column_of(band, lon),
        }
    }

    pub fn insert(&mut self, lat: f64, lon: f64, item: T) {
        let cell = self.cell_of(lat, lon);
        self.cells.entry(cell).or_default().push(item);
    }

    pub fn remove(&mut self, lat: f64, lon: f64, item: T) -> bool {
        let cell = self.cell_of(lat, lon);
        if let Some(bucket) = self.cells.get_mut(&cell) {
            if let Some(pos) = bucket.iter().position(|x| *x == item) {
                bucket.swap_remove(pos);
                if bucket.is_empty() {
                    self.cells.remove(&cell);
                }
                return true;
            }
        }
        false
    }

    /// Calls `visit` for every stored item that may lie within one bandwidth
    /// of `(lat, lon)`. The result is a superset; callers apply the exact
    /// distance predicate.
    pub fn for_each_candidate(&self, lat: f64, lon: f64, mut visit: impl FnMut(T)) {
        let center = self.band_of(lat);
        let angular = self.bandwidth / EARTH_RADIUS_M;
        let poleward = (lat.abs().to_radians() + angular).min(std::f64::consts::FRAC_PI_2);
        let full_circle = poleward.cos() <= angular.sin();
        let dlon = if full_circle {
            180.0
        } else {
            (angular.sin() / poleward.cos()).min(1.0).asin().to_degrees()
        };
        for band in center - 1..=center + 1 {
            let cols = self.columns(band);
            let width = 360.0 / cols as f64;
            let (first, last) = if full_circle || 2.0 * dlon + 2.0 * width >= 360.0 {
                (0, cols - 1)
            } else {
                (
                    ((lon - dlon + 180.0) / width).floor() as i64,
                    ((lon + dlon + 180.0) / width).floor() as i64,
                )
            };
            for raw in first..=last {
                let cell = Cell {
                    band,
                    col: raw.rem_euclid(cols),
                };
                if let Some(bucket) = self.cells.get(&cell) {
                    bucket.iter().copied().for_each(&mut visit);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
