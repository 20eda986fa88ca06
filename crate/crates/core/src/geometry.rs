//! Domains, coarse grids, microstates, macrostates, and the coarse-graining
//! map between them. All values here are immutable after construction and
//! safe to share across workers.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Planar point or vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Real> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(&self, other: &Self) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }
}

/// Axis-aligned square domain [0, side]^2 confining the vortices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain<S> {
    side: S,
}

impl<S: Real> Domain<S> {
    pub fn new(side: S) -> Result<Self> {
        if side.is_nan() || !side.is_finite() || side <= S::zero() {
            return Err(Error::InvalidParameter(format!(
                "domain side must be positive and finite, got {side}"
            )));
        }
        Ok(Self { side })
    }

    /// Unit square.
    pub fn unit() -> Self {
        Self { side: S::one() }
    }

    pub fn side(&self) -> S {
        self.side
    }

    pub fn area(&self) -> S {
        self.side * self.side
    }

    pub fn contains(&self, p: &Point<S>) -> bool {
        p.x >= S::zero() && p.x <= self.side && p.y >= S::zero() && p.y <= self.side
    }
}

/// Partition of the domain into mx * my equal boxes with their centers.
///
/// The equal-area boxes are side/mx wide and side/my tall; `h` is the side of
/// the equivalent square box, h = sqrt(area / M), so that M h^2 = A holds for
/// every partition. A square partition (`mx == my`) has square boxes of side
/// h exactly; the 1-D splits (mx x 1) that the small-M ensembles use have
/// rectangular boxes of the same area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrid<S> {
    domain: Domain<S>,
    mx: usize,
    my: usize,
    centers: Vec<Point<S>>,
}

impl<S: Real> CoarseGrid<S> {
    /// m x m partition into M = m^2 square boxes of side h = side/m.
    pub fn square(domain: Domain<S>, m: usize) -> Result<Self> {
        Self::new(domain, m, m)
    }

    /// General mx x my partition into M = mx * my equal boxes.
    pub fn new(domain: Domain<S>, mx: usize, my: usize) -> Result<Self> {
        if mx == 0 || my == 0 {
            return Err(Error::InvalidParameter(
                "grid must have at least one box per direction".into(),
            ));
        }
        let wx = domain.side() / S::of_usize(mx);
        let wy = domain.side() / S::of_usize(my);
        let half = S::of(0.5);
        let mut centers = Vec::with_capacity(mx * my);
        for iy in 0..my {
            for ix in 0..mx {
                centers.push(Point::new(
                    (S::of_usize(ix) + half) * wx,
                    (S::of_usize(iy) + half) * wy,
                ));
            }
        }
        Ok(Self {
            domain,
            mx,
            my,
            centers,
        })
    }

    /// Partition with M boxes total, factored as close to square as possible
    /// (mx >= my, mx * my = M).
    pub fn with_box_count(domain: Domain<S>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("box count must be positive".into()));
        }
        let mut my = (m as f64).sqrt().floor() as usize;
        while my > 1 && !m.is_multiple_of(my) {
            my -= 1;
        }
        Self::new(domain, m / my, my)
    }

    pub fn domain(&self) -> &Domain<S> {
        &self.domain
    }

    pub fn boxes_x(&self) -> usize {
        self.mx
    }

    pub fn boxes_y(&self) -> usize {
        self.my
    }

    /// Total number of boxes M.
    pub fn box_count(&self) -> usize {
        self.mx * self.my
    }

    /// Box area h^2 = A / M.
    pub fn box_area(&self) -> S {
        self.domain.area() / S::of_usize(self.box_count())
    }

    /// Equivalent square box side h = sqrt(A / M).
    pub fn h(&self) -> S {
        self.box_area().sqrt()
    }

    /// Box width along x.
    pub fn box_width_x(&self) -> S {
        self.domain.side() / S::of_usize(self.mx)
    }

    /// Box width along y.
    pub fn box_width_y(&self) -> S {
        self.domain.side() / S::of_usize(self.my)
    }

    /// Lower-left corner of box `i`.
    pub fn box_origin(&self, i: usize) -> Point<S> {
        let ix = i % self.mx;
        let iy = i / self.mx;
        Point::new(
            S::of_usize(ix) * self.box_width_x(),
            S::of_usize(iy) * self.box_width_y(),
        )
    }

    /// Box centers in flat row-major order (y-major).
    pub fn centers(&self) -> &[Point<S>] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> Point<S> {
        self.centers[i]
    }

    /// Flat box index of a point inside the domain. Points on a shared box
    /// edge belong to the lower-indexed box.
    pub fn box_index(&self, p: &Point<S>) -> usize {
        let wx = self.domain.side() / S::of_usize(self.mx);
        let wy = self.domain.side() / S::of_usize(self.my);
        let ix = Self::coord_index(p.x, wx, self.mx);
        let iy = Self::coord_index(p.y, wy, self.my);
        iy * self.mx + ix
    }

    #[inline]
    fn coord_index(x: S, w: S, m: usize) -> usize {
        // ceil(x/w) - 1 assigns exact edge points downward
        let idx = (x / w).ceil() - S::one();
        let idx = idx.max(S::zero()).min(S::of_usize(m - 1));
        idx.to_usize().unwrap_or(0).min(m - 1)
    }

    /// Coarse-graining map: per-box occupation counts of a configuration.
    pub fn assign_boxes(&self, config: &VortexConfiguration<S>) -> Result<Macrostate> {
        let mut occupations = vec![0u64; self.box_count()];
        for p in config.positions() {
            if !self.domain.contains(p) {
                return Err(Error::DomainViolation {
                    x: p.x.to_f64().unwrap_or(f64::NAN),
                    y: p.y.to_f64().unwrap_or(f64::NAN),
                    side: self.domain.side().to_f64().unwrap_or(f64::NAN),
                });
            }
            occupations[self.box_index(p)] += 1;
        }
        Ok(Macrostate::new(occupations))
    }

    /// Offset of each vortex from the center of its assigned box.
    pub fn box_relative_offsets(&self, config: &VortexConfiguration<S>) -> Result<Vec<Point<S>>> {
        let mut offsets = Vec::with_capacity(config.len());
        for p in config.positions() {
            if !self.domain.contains(p) {
                return Err(Error::DomainViolation {
                    x: p.x.to_f64().unwrap_or(f64::NAN),
                    y: p.y.to_f64().unwrap_or(f64::NAN),
                    side: self.domain.side().to_f64().unwrap_or(f64::NAN),
                });
            }
            let c = self.centers[self.box_index(p)];
            offsets.push(p.sub(&c));
        }
        Ok(offsets)
    }

    /// Vortex indices grouped by box, in input order within each box.
    pub fn members_by_box(&self, config: &VortexConfiguration<S>) -> Result<Vec<Vec<usize>>> {
        let mut members = vec![Vec::new(); self.box_count()];
        for (j, p) in config.positions().iter().enumerate() {
            if !self.domain.contains(p) {
                return Err(Error::DomainViolation {
                    x: p.x.to_f64().unwrap_or(f64::NAN),
                    y: p.y.to_f64().unwrap_or(f64::NAN),
                    side: self.domain.side().to_f64().unwrap_or(f64::NAN),
                });
            }
            members[self.box_index(p)].push(j);
        }
        Ok(members)
    }
}

/// Microstate: N vortex positions plus the common circulation strength.
#[derive(Debug, Clone, PartialEq)]
pub struct VortexConfiguration<S> {
    positions: Vec<Point<S>>,
    lambda: S,
}

impl<S: Real> VortexConfiguration<S> {
    pub fn new(positions: Vec<Point<S>>, lambda: S) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter(
                "configuration needs at least one vortex".into(),
            ));
        }
        if lambda == S::zero() || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "vortex strength must be nonzero and finite, got {lambda}"
            )));
        }
        Ok(Self { positions, lambda })
    }

    /// N vortices placed uniformly at random in the domain.
    pub fn random_uniform<R: rand::Rng>(
        domain: &Domain<S>,
        n: usize,
        lambda: S,
        rng: &mut R,
    ) -> Result<Self> {
        use rand::distr::{Distribution, Uniform};
        let side = Uniform::new(S::zero(), domain.side())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let positions = (0..n)
            .map(|_| Point::new(side.sample(rng), side.sample(rng)))
            .collect();
        Self::new(positions, lambda)
    }

    pub fn positions(&self) -> &[Point<S>] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [Point<S>] {
        &mut self.positions
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate_in(&self, domain: &Domain<S>) -> Result<()> {
        for p in &self.positions {
            if !domain.contains(p) {
                return Err(Error::DomainViolation {
                    x: p.x.to_f64().unwrap_or(f64::NAN),
                    y: p.y.to_f64().unwrap_or(f64::NAN),
                    side: domain.side().to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Wire form carrying the domain side alongside the configuration.
    pub fn to_record(&self, domain: &Domain<S>) -> ConfigRecord<S> {
        ConfigRecord {
            side: domain.side(),
            lambda: self.lambda,
            positions: self.positions.iter().map(|p| (p.x, p.y)).collect(),
        }
    }
}

/// JSON wire format for a configuration:
/// `{"side": f, "lambda": f, "positions": [[x, y], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRecord<S> {
    pub side: S,
    pub lambda: S,
    pub positions: Vec<(S, S)>,
}

impl<S: Real> ConfigRecord<S> {
    pub fn into_parts(self) -> Result<(Domain<S>, VortexConfiguration<S>)> {
        let domain = Domain::new(self.side)?;
        let config = VortexConfiguration::new(
            self.positions
                .into_iter()
                .map(|(x, y)| Point::new(x, y))
                .collect(),
            self.lambda,
        )?;
        config.validate_in(&domain)?;
        Ok((domain, config))
    }
}

/// Coarse-grained state: per-box occupation numbers.
/// Serializes as `{"N": int, "occupations": [int, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Macrostate {
    #[serde(rename = "N")]
    n: u64,
    occupations: Vec<u64>,
}

impl Macrostate {
    pub fn new(occupations: Vec<u64>) -> Self {
        let n = occupations.iter().sum();
        Self { n, occupations }
    }

    pub fn occupations(&self) -> &[u64] {
        &self.occupations
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn box_count(&self) -> usize {
        self.occupations.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn grid_tiles_area_exactly() {
        for (mx, my) in [(1, 1), (2, 2), (4, 4), (2, 1), (3, 1), (16, 8)] {
            let grid = CoarseGrid::<f64>::new(Domain::unit(), mx, my).unwrap();
            let m = grid.box_count() as f64;
            assert!((m * grid.h() * grid.h() - 1.0).abs() < 1e-12);
            for c in grid.centers() {
                assert!(grid.domain().contains(c));
            }
        }
    }

    #[test]
    fn single_center_vortex_lands_in_one_box() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 2).unwrap();
        let config = VortexConfiguration::new(vec![Point::new(0.5, 0.5)], 1.0).unwrap();
        let s = grid.assign_boxes(&config).unwrap();
        assert_eq!(s.total(), 1);
        assert_eq!(s.occupations().iter().filter(|&&n| n == 1).count(), 1);
        // centre sits on the shared edges: the tie-break picks box 0
        assert_eq!(s.occupations(), &[1, 0, 0, 0]);
    }

    #[test]
    fn all_points_in_first_box() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 2).unwrap();
        let pts = (0..7)
            .map(|i| Point::new(0.1 + 0.01 * i as f64, 0.2))
            .collect();
        let config = VortexConfiguration::new(pts, 1.0).unwrap();
        let s = grid.assign_boxes(&config).unwrap();
        assert_eq!(s.occupations(), &[7, 0, 0, 0]);
    }

    #[test]
    fn occupation_conserves_count() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let config = VortexConfiguration::random_uniform(&domain, 100, 1.0, &mut rng).unwrap();
        let s = grid.assign_boxes(&config).unwrap();
        assert_eq!(s.total(), 100);
        assert_eq!(s.occupations().iter().sum::<u64>(), 100);
    }

    #[test]
    fn outside_position_is_rejected() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 2).unwrap();
        let config = VortexConfiguration::new(vec![Point::new(1.5, 0.5)], 1.0).unwrap();
        assert!(matches!(
            grid.assign_boxes(&config),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn offset_at_center_is_zero() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 2).unwrap();
        let config = VortexConfiguration::new(vec![Point::new(0.25, 0.25)], 1.0).unwrap();
        let offs = grid.box_relative_offsets(&config).unwrap();
        assert_eq!(offs[0].x, 0.0);
        assert_eq!(offs[0].y, 0.0);
    }

    #[test]
    fn offset_at_corner_is_half_h() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 2).unwrap();
        let h = grid.h();
        // corner of box 0 at (0,0): offset components -h/2
        let config = VortexConfiguration::new(vec![Point::new(0.0, 0.0)], 1.0).unwrap();
        let offs = grid.box_relative_offsets(&config).unwrap();
        assert!((offs[0].x + h / 2.0).abs() < 1e-15);
        assert!((offs[0].y + h / 2.0).abs() < 1e-15);
    }

    #[test]
    fn edge_points_assigned_to_lower_index() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::square(domain, 4).unwrap();
        // x exactly on the 0.25 edge between boxes 0 and 1
        let config = VortexConfiguration::new(vec![Point::new(0.25, 0.1)], 1.0).unwrap();
        let s = grid.assign_boxes(&config).unwrap();
        assert_eq!(s.occupations()[0], 1);
    }

    #[test]
    fn one_d_split_uses_x_only() {
        let domain = Domain::<f64>::unit();
        let grid = CoarseGrid::new(domain, 2, 1).unwrap();
        assert_eq!(grid.box_count(), 2);
        assert!((grid.h() - 0.5f64.sqrt()).abs() < 1e-15);
        let config =
            VortexConfiguration::new(vec![Point::new(0.2, 0.9), Point::new(0.8, 0.1)], 1.0)
                .unwrap();
        let s = grid.assign_boxes(&config).unwrap();
        assert_eq!(s.occupations(), &[1, 1]);
    }

    #[test]
    fn config_record_round_trips() {
        let domain = Domain::<f64>::new(2.0).unwrap();
        let config =
            VortexConfiguration::new(vec![Point::new(0.5, 1.5), Point::new(1.25, 0.75)], -2.0)
                .unwrap();
        let json = serde_json::to_string(&config.to_record(&domain)).unwrap();
        let rec: ConfigRecord<f64> = serde_json::from_str(&json).unwrap();
        let (d2, c2) = rec.into_parts().unwrap();
        assert_eq!(d2.side(), 2.0);
        assert_eq!(c2, config);
    }

    #[test]
    fn macrostate_serializes_with_capital_n() {
        let s = Macrostate::new(vec![2, 0, 1]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"N":3,"occupations":[2,0,1]}"#);
    }
}
