//! Arakawa C-grid geometry and staggered field storage.
//!
//! Every kind of field is stored as a dense `nx * ny` array, row-major with
//! the zonal index `i` fastest. A grid box `(i, j)` holds one point of each
//! kind:
//!
//! * `H` (elevation, depth) at the cell centre `((i + 1/2) dx, (j + 1/2) dy)`,
//! * `U` (zonal velocity) half a cell west, at `(i dx, (j + 1/2) dy)`,
//! * `V` (meridional velocity) half a cell south, at `((i + 1/2) dx, j dy)`,
//! * `Z` (vorticity, stream function, Coriolis) at the south-west corner `(i dx, j dy)`.
//!
//! The channel is periodic east-west. Rows `0` and `ny - 1` of the `H` and
//! `U` grids are ghost rows; the physical cells are rows `1..=ny-2`. The
//! channel walls run along `V` rows `1` and `ny - 1`, and `V` row `0` lies
//! outside the domain, so `v` is held at zero on rows `0`, `1` and `ny - 1`.

use crate::error::{Error, Result};

/// Domain geometry and resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Zonal extent in metres.
    pub lx: f64,
    /// Meridional extent in metres.
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!("need nx >= 4 and ny >= 4, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!("domain size must be positive, got {lx} x {ly}")));
        }
        Ok(GridSpec { lx, ly, nx, ny })
    }

    /// The 2224 x 320 channel of 27787.5 km by 3975 km.
    pub fn full_scale() -> Self {
        GridSpec { lx: 27_787.5e3, ly: 3_975.0e3, nx: 2224, ny: 320 }
    }

    /// Same domain at a quarter of the full resolution (556 x 80).
    pub fn desk_default() -> Self {
        GridSpec { nx: 556, ny: 80, ..Self::full_scale() }
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Periodic zonal index.
    #[inline]
    pub fn wrap_east_west(&self, i: isize) -> usize {
        i.rem_euclid(self.nx as isize) as usize
    }

    /// Meridional index clamped to the stored rows.
    #[inline]
    pub fn clamp_row(&self, j: isize) -> usize {
        j.clamp(0, self.ny as isize - 1) as usize
    }

    /// Rows holding physical `H`/`U` cells.
    pub fn interior_rows(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.ny - 2
    }

    /// Grid coarsened by `c` in both directions over the same domain.
    pub fn coarsened(&self, c: usize) -> Result<Self> {
        if c == 0 || !self.nx.is_multiple_of(c) || !self.ny.is_multiple_of(c) {
            return Err(Error::NotDivisible { c, nx: self.nx, ny: self.ny });
        }
        GridSpec::new(self.lx, self.ly, self.nx / c, self.ny / c)
    }
}

/// Staggering of a field on the C-grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    H,
    U,
    V,
    Z,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::H, Kind::U, Kind::V, Kind::Z];

    /// Offset of the point inside its grid box, in cell units.
    pub fn offset(self) -> (f64, f64) {
        match self {
            Kind::H => (0.5, 0.5),
            Kind::U => (0.0, 0.5),
            Kind::V => (0.5, 0.0),
            Kind::Z => (0.0, 0.0),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Kind::H => 0,
            Kind::U => 1,
            Kind::V => 2,
            Kind::Z => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.code() == code)
    }
}

/// One scalar field on one of the staggered sub-grids.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    kind: Kind,
    grid: GridSpec,
    values: Vec<f64>,
}

impl StaggeredField {
    pub fn zeros(kind: Kind, grid: GridSpec) -> Self {
        StaggeredField { kind, grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(kind: Kind, grid: GridSpec, value: f64) -> Self {
        StaggeredField { kind, grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(kind: Kind, grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(StaggeredField { kind, grid, values })
    }

    /// Field built from grid indices.
    pub fn from_index_fn(kind: Kind, grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(i, j));
            }
        }
        StaggeredField { kind, grid, values }
    }

    /// Field sampled from a function of physical coordinates `(x, y)`.
    pub fn from_fn(kind: Kind, grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        Self::from_index_fn(kind, grid, |i, j| {
            let (x, y) = point(kind, &grid, i, j);
            f(x, y)
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = value;
    }

    /// Value with periodic zonal wrap and clamped meridional index.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let g = &self.grid;
        self.values[g.clamp_row(j) * g.nx + g.wrap_east_west(i)]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.values[j * nx..(j + 1) * nx]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let nx = self.grid.nx;
        &mut self.values[j * nx..(j + 1) * nx]
    }

    pub fn fill_row(&mut self, j: usize, value: f64) {
        self.row_mut(j).fill(value);
    }

    pub fn copy_row(&mut self, from: usize, to: usize) {
        let nx = self.grid.nx;
        self.values.copy_within(from * nx..(from + 1) * nx, to * nx);
    }

    pub fn check_compatible(&self, other: &StaggeredField) -> Result<()> {
        if self.kind != other.kind || self.grid != other.grid {
            return Err(Error::FieldMismatch(format!(
                "{:?} field on {}x{} vs {:?} field on {}x{}",
                self.kind, self.grid.nx, self.grid.ny, other.kind, other.grid.nx, other.grid.ny
            )));
        }
        Ok(())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &StaggeredField) -> Result<()> {
        self.check_compatible(other)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> StaggeredField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &StaggeredField) -> Result<StaggeredField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values.iter().position(|v| !v.is_finite()).map(|k| (k % self.grid.nx, k / self.grid.nx))
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// Shift all columns east by `shift` (periodic).
    pub fn roll_east(&self, shift: isize) -> StaggeredField {
        let g = self.grid;
        StaggeredField::from_index_fn(self.kind, g, |i, j| self.at(i as isize - shift, j as isize))
    }
}

/// Physical coordinates of point `(i, j)` of a given kind.
pub fn point(kind: Kind, grid: &GridSpec, i: usize, j: usize) -> (f64, f64) {
    let (ox, oy) = kind.offset();
    ((i as f64 + ox) * grid.dx(), (j as f64 + oy) * grid.dy())
}

/// Periodic zonal index for a grid of `nx` columns.
pub fn wrap_east_west(i: isize, nx: usize) -> usize {
    i.rem_euclid(nx as isize) as usize
}

/// Average a field onto another staggering.
///
/// Points of different kinds are at most half a cell apart in each
/// direction, so each target value is the mean of the one, two or four
/// surrounding source points. Columns wrap periodically; rows outside the
/// array take the nearest stored row.
pub fn interpolate(field: &StaggeredField, target: Kind) -> StaggeredField {
    let (sx, sy) = field.kind().offset();
    let (tx, ty) = target.offset();
    let xs: &[isize] = neighbour_offsets(tx - sx);
    let ys: &[isize] = neighbour_offsets(ty - sy);
    let weight = 1.0 / (xs.len() * ys.len()) as f64;
    StaggeredField::from_index_fn(target, *field.grid(), |i, j| {
        let mut acc = 0.0;
        for &dj in ys {
            for &di in xs {
                acc += field.at(i as isize + di, j as isize + dj);
            }
        }
        acc * weight
    })
}

fn neighbour_offsets(shift: f64) -> &'static [isize] {
    if shift > 0.25 {
        &[0, 1]
    } else if shift < -0.25 {
        &[-1, 0]
    } else {
        &[0]
    }
}

/// Physical constants of the single-layer model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Coriolis parameter at y = 0 (1/s).
    pub f0: f64,
    /// Meridional Coriolis gradient (1/(m s)).
    pub beta: f64,
    /// Mean layer depth (m).
    pub h_mean: f64,
    /// Eddy viscosity (m^2/s).
    pub viscosity: f64,
    /// Linear (Rayleigh) friction (1/s).
    pub friction: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams { g: 9.81, f0: 1.0e-4, beta: 2.0e-11, h_mean: 1000.0, viscosity: 100.0, friction: 0.0 }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.g > 0.0) {
            problems.push(format!("g must be positive, got {}", self.g));
        }
        if !(self.h_mean > 0.0) {
            problems.push(format!("h_mean must be positive, got {}", self.h_mean));
        }
        if !(self.viscosity >= 0.0) {
            problems.push(format!("viscosity must be non-negative, got {}", self.viscosity));
        }
        if !(self.friction >= 0.0) {
            problems.push(format!("friction must be non-negative, got {}", self.friction));
        }
        if !(self.f0.is_finite() && self.beta.is_finite()) {
            problems.push("f0 and beta must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    /// Beta-plane Coriolis parameter `f0 + beta * y`.
    #[inline]
    pub fn coriolis(&self, y: f64) -> f64 {
        self.f0 + self.beta * y
    }

    /// The inviscid, frictionless variant.
    pub fn inviscid(self) -> Self {
        PhysicalParams { viscosity: 0.0, friction: 0.0, ..self }
    }
}

/// Prognostic variables at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub u: StaggeredField,
    pub v: StaggeredField,
    /// Surface elevation; the layer depth is `h_mean + eta`.
    pub eta: StaggeredField,
    /// Model time in seconds.
    pub time: f64,
}

impl ModelState {
    pub fn rest(grid: GridSpec) -> Self {
        ModelState {
            u: StaggeredField::zeros(Kind::U, grid),
            v: StaggeredField::zeros(Kind::V, grid),
            eta: StaggeredField::zeros(Kind::H, grid),
            time: 0.0,
        }
    }

    pub fn new(u: StaggeredField, v: StaggeredField, eta: StaggeredField, time: f64) -> Result<Self> {
        let grid = *eta.grid();
        for (field, kind) in [(&u, Kind::U), (&v, Kind::V), (&eta, Kind::H)] {
            if field.kind() != kind || *field.grid() != grid {
                return Err(Error::FieldMismatch(format!(
                    "expected {:?} field on {}x{}, got {:?} on {}x{}",
                    kind,
                    grid.nx,
                    grid.ny,
                    field.kind(),
                    field.grid().nx,
                    field.grid().ny
                )));
            }
        }
        Ok(ModelState { u, v, eta, time })
    }

    pub fn grid(&self) -> &GridSpec {
        self.eta.grid()
    }

    /// Fill ghost rows and zero the wall-normal velocity.
    ///
    /// Ghost elevation and zonal velocity copy the adjacent physical row
    /// (free slip); `v` is zero on the walls and outside the domain.
    pub fn apply_boundary_conditions(&mut self) {
        let ny = self.grid().ny;
        self.eta.copy_row(1, 0);
        self.eta.copy_row(ny - 2, ny - 1);
        self.u.copy_row(1, 0);
        self.u.copy_row(ny - 2, ny - 1);
        for j in wall_rows(ny) {
            self.v.fill_row(j, 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.eta.is_finite()
    }

    /// Error if the layer depth is not positive somewhere.
    pub fn check_depth(&self, h_mean: f64) -> Result<()> {
        let g = self.grid();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let depth = h_mean + self.eta.get(i, j);
                if !(depth > 0.0) {
                    return Err(Error::NonPositiveDepth { kind: Kind::H, i, j, depth });
                }
            }
        }
        Ok(())
    }

    /// Shift every field east by `shift` columns.
    pub fn roll_east(&self, shift: isize) -> ModelState {
        ModelState {
            u: self.u.roll_east(shift),
            v: self.v.roll_east(shift),
            eta: self.eta.roll_east(shift),
            time: self.time,
        }
    }
}

/// `V` rows that carry no flow: outside row, south wall, north wall.
pub fn wall_rows(ny: usize) -> [usize; 3] {
    [0, 1, ny - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridSpec {
        GridSpec::new(8.0, 6.0, 8, 6).unwrap()
    }

    #[test]
    fn wrap_examples() {
        let g = GridSpec::full_scale();
        assert_eq!(g.wrap_east_west(g.nx as isize), 0);
        assert_eq!(g.wrap_east_west(-1), g.nx - 1);
        assert_eq!(g.wrap_east_west(3), 3);
        assert_eq!(wrap_east_west(-9, 8), 7);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 1.0, 3, 10).is_err());
        assert!(GridSpec::new(1.0, 1.0, 10, 3).is_err());
        assert!(GridSpec::new(0.0, 1.0, 10, 10).is_err());
        let g = GridSpec::full_scale();
        assert!((g.dx() - 12_494.379_496_402_877).abs() < 1e-6);
        assert!((g.dy() - 12_421.875).abs() < 1e-9);
        assert!(g.coarsened(5).is_err());
        assert_eq!(g.coarsened(8).unwrap().nx, 278);
    }

    #[test]
    fn interpolate_constant_is_exact() {
        let g = small();
        for from in Kind::ALL {
            for to in Kind::ALL {
                let f = StaggeredField::constant(from, g, 3.25);
                let out = interpolate(&f, to);
                assert_eq!(out.kind(), to);
                assert!(out.values().iter().all(|&v| v == 3.25));
            }
        }
    }

    #[test]
    fn interpolate_two_point_mean() {
        let g = small();
        let f = StaggeredField::from_index_fn(Kind::H, g, |i, _| if i % 2 == 0 { 0.0 } else { 2.0 });
        let u = interpolate(&f, Kind::U);
        assert!(u.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interpolate_four_corners() {
        let g = small();
        let mut f = StaggeredField::zeros(Kind::H, g);
        // Z point (3, 2) averages H points (2..=3, 1..=2).
        f.set(2, 1, 1.0);
        f.set(3, 1, 2.0);
        f.set(2, 2, 3.0);
        f.set(3, 2, 4.0);
        let z = interpolate(&f, Kind::Z);
        assert_eq!(z.get(3, 2), 2.5);
    }

    #[test]
    fn interpolate_linear_field_hits_midpoints() {
        let g = GridSpec::new(100.0, 50.0, 20, 10).unwrap();
        let f = StaggeredField::from_fn(Kind::H, g, |x, y| 2.0 * x - 0.5 * y);
        for to in [Kind::U, Kind::V, Kind::Z] {
            let out = interpolate(&f, to);
            for j in 1..g.ny - 1 {
                for i in 1..g.nx {
                    let (x, y) = point(to, &g, i, j);
                    assert!((out.get(i, j) - (2.0 * x - 0.5 * y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn boundary_conditions_fill_ghosts() {
        let g = small();
        let mut s = ModelState::rest(g);
        s.u = StaggeredField::from_index_fn(Kind::U, g, |i, j| (i + 10 * j) as f64);
        s.v = StaggeredField::constant(Kind::V, g, 1.0);
        s.eta = StaggeredField::from_index_fn(Kind::H, g, |i, j| (i * j) as f64);
        s.apply_boundary_conditions();
        assert_eq!(s.u.row(0), s.u.row(1));
        assert_eq!(s.eta.row(g.ny - 1), s.eta.row(g.ny - 2));
        for j in wall_rows(g.ny) {
            assert!(s.v.row(j).iter().all(|&v| v == 0.0));
        }
        assert!(s.v.row(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn incompatible_fields_rejected() {
        let g = small();
        let mut a = StaggeredField::zeros(Kind::H, g);
        let b = StaggeredField::zeros(Kind::U, g);
        assert!(a.axpy(1.0, &b).is_err());
        let other = GridSpec::new(8.0, 6.0, 8, 8).unwrap();
        let c = StaggeredField::zeros(Kind::H, other);
        assert!(a.check_compatible(&c).is_err());
    }

    #[test]
    fn roll_is_periodic() {
        let g = small();
        let f = StaggeredField::from_index_fn(Kind::H, g, |i, j| (i * 7 + j) as f64);
        assert_eq!(f.roll_east(g.nx as isize), f);
        assert_eq!(f.roll_east(1).get(1, 3), f.get(0, 3));
    }

    proptest::proptest! {
        #[test]
        fn wrap_is_periodic(i in -100_000isize..100_000, nx in 4usize..5000) {
            proptest::prop_assert_eq!(wrap_east_west(i + nx as isize, nx), wrap_east_west(i, nx));
            proptest::prop_assert!(wrap_east_west(i, nx) < nx);
        }
    }
}
