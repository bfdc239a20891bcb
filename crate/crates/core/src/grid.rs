//! Cell-centered uniform meshes with zero-flux (Neumann) faces.
//!
//! Three domain shapes share one data structure: a 1D interval, an axis-aligned
//! rectangle, and a disc discretized in the radius only. The radial mesh uses
//! exact annulus areas as quadrature weights, so integrals of radially symmetric
//! functions carry no geometric bias. All transport operators downstream are
//! built from [`Grid::face_gradient`] and [`Grid::divergence`]; boundary faces
//! carry zero flux by construction, which makes every divergence conservative.

use crate::error::Error;
use crate::Result;
use std::io::Write;
use std::sync::Arc;

/// Continuous domain the mesh covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval { length: f64 },
    Rectangle { lx: f64, ly: f64 },
    RadialDisc { radius: f64 },
}

impl Domain {
    /// Lebesgue measure (length or area) of the domain.
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Interval { length } => length,
            Domain::Rectangle { lx, ly } => lx * ly,
            Domain::RadialDisc { radius } => std::f64::consts::PI * radius * radius,
        }
    }

    /// Spatial dimension of the underlying PDE domain.
    pub fn dimension(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } | Domain::RadialDisc { .. } => 2,
        }
    }

    /// Short machine-readable shape tag used in snapshot headers.
    pub fn shape_name(&self) -> &'static str {
        match self {
            Domain::Interval { .. } => "interval",
            Domain::Rectangle { .. } => "rectangle",
            Domain::RadialDisc { .. } => "radial_disc",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Domain::Interval { length } => length.is_finite() && length > 0.0,
            Domain::Rectangle { lx, ly } => lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0,
            Domain::RadialDisc { radius } => radius.is_finite() && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDomain(format!("{self:?}")))
        }
    }
}

const MIN_CELLS_PER_AXIS: usize = 4;

/// Uniform cell-centered mesh. `ny == 1` for the interval and the radial disc;
/// the radial coordinate is stored along x.
#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    /// Quadrature weight per cell (length, area or exact annulus area).
    weights: Vec<f64>,
    /// Area of each x-face, `(nx + 1) * ny` entries. For the radial mesh this
    /// is the circumference `2 pi r` of the face, zero at the axis.
    face_area_x: Vec<f64>,
    /// Area of each y-face, `nx * (ny + 1)` entries; empty for 1D shapes.
    face_area_y: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.nx == other.nx && self.ny == other.ny
    }
}

/// Build a mesh over `domain`. `n_cells` holds one entry per mesh axis:
/// `[n]` for the interval and the radial disc, `[nx, ny]` for the rectangle.
pub fn build_grid(domain: Domain, n_cells: &[usize]) -> Result<Arc<Grid>> {
    domain.validate()?;
    match domain {
        Domain::Interval { length } => match n_cells {
            &[n] => Grid::new_1d(domain, length, n),
            _ => Err(Error::InvalidGrid("interval takes one cell count".into())),
        },
        Domain::RadialDisc { radius } => match n_cells {
            &[n] => Grid::new_1d(domain, radius, n),
            _ => Err(Error::InvalidGrid("radial disc takes one cell count".into())),
        },
        Domain::Rectangle { .. } => match n_cells {
            &[nx, ny] => Grid::new_2d(domain, nx, ny),
            _ => Err(Error::InvalidGrid("rectangle takes two cell counts".into())),
        },
    }
}

impl Grid {
    /// Interval `(0, length)` split into `n` cells.
    pub fn interval(length: f64, n: usize) -> Result<Arc<Grid>> {
        build_grid(Domain::Interval { length }, &[n])
    }

    /// Rectangle `(0, lx) x (0, ly)` split into `nx * ny` cells.
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Arc<Grid>> {
        build_grid(Domain::Rectangle { lx, ly }, &[nx, ny])
    }

    /// Disc of the given radius, discretized in the radius into `n` annuli.
    pub fn radial_disc(radius: f64, n: usize) -> Result<Arc<Grid>> {
        build_grid(Domain::RadialDisc { radius }, &[n])
    }

    fn new_1d(domain: Domain, extent: f64, n: usize) -> Result<Arc<Grid>> {
        if n < MIN_CELLS_PER_AXIS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_CELLS_PER_AXIS} cells per axis, got {n}"
            )));
        }
        let h = extent / n as f64;
        let (weights, face_area_x) = match domain {
            Domain::Interval { .. } => (vec![h; n], vec![1.0; n + 1]),
            Domain::RadialDisc { .. } => {
                // exact annulus areas pi (r_{i+1}^2 - r_i^2) and face circumferences
                let weights = (0..n)
                    .map(|i| std::f64::consts::PI * (2 * i + 1) as f64 * h * h)
                    .collect();
                let areas = (0..=n)
                    .map(|i| 2.0 * std::f64::consts::PI * (i as f64 * h))
                    .collect();
                (weights, areas)
            }
            Domain::Rectangle { .. } => unreachable!(),
        };
        Ok(Arc::new(Grid {
            domain,
            nx: n,
            ny: 1,
            hx: h,
            hy: 0.0,
            weights,
            face_area_x,
            face_area_y: Vec::new(),
        }))
    }

    fn new_2d(domain: Domain, nx: usize, ny: usize) -> Result<Arc<Grid>> {
        if nx < MIN_CELLS_PER_AXIS || ny < MIN_CELLS_PER_AXIS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_CELLS_PER_AXIS} cells per axis, got {nx} x {ny}"
            )));
        }
        let (lx, ly) = match domain {
            Domain::Rectangle { lx, ly } => (lx, ly),
            _ => unreachable!(),
        };
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        Ok(Arc::new(Grid {
            domain,
            nx,
            ny,
            hx,
            hy,
            weights: vec![hx * hy; nx * ny],
            face_area_x: vec![hy; (nx + 1) * ny],
            face_area_y: vec![hx; nx * (ny + 1)],
        }))
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Total number of cells.
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Smallest cell width, the mesh scale entering stability bounds.
    pub fn h_min(&self) -> f64 {
        if self.ny > 1 {
            self.hx.min(self.hy)
        } else {
            self.hx
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Quadrature weights, one per cell. They sum to the domain measure.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coordinates of the cell center; y is zero on 1D shapes (x is the
    /// radius on the radial mesh).
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let i = cell % self.nx;
        let j = cell / self.nx;
        let x = (i as f64 + 0.5) * self.hx;
        let y = if self.ny > 1 { (j as f64 + 0.5) * self.hy } else { 0.0 };
        (x, y)
    }

    pub fn measure(&self) -> f64 {
        self.domain.measure()
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Per-face difference quotient of a cell field. Boundary faces are zero,
    /// which encodes the no-flux condition once the gradient is used as a flux.
    pub fn face_gradient(&self, f: &Field) -> FaceField {
        self.check_same(f.grid()).expect("field built on another grid");
        let mut out = FaceField::zeros(f.grid.clone());
        let v = &f.values;
        for j in 0..self.ny {
            for i in 1..self.nx {
                out.x[j * (self.nx + 1) + i] =
                    (v[self.idx(i, j)] - v[self.idx(i - 1, j)]) / self.hx;
            }
        }
        if self.ny > 1 {
            for j in 1..self.ny {
                for i in 0..self.nx {
                    out.y[j * self.nx + i] = (v[self.idx(i, j)] - v[self.idx(i, j - 1)]) / self.hy;
                }
            }
        }
        out
    }

    /// Flux-form divergence: per cell, the signed sum of `area * flux` over its
    /// faces divided by the cell weight. The weighted sum over all cells
    /// telescopes to the boundary faces and therefore vanishes identically.
    pub fn divergence(&self, flux: &FaceField) -> Vec<f64> {
        self.check_same(&flux.grid).expect("flux built on another grid");
        let mut out = vec![0.0; self.n_cells()];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = self.idx(i, j);
                let fr = j * (self.nx + 1) + i;
                out[c] = (self.face_area_x[fr + 1] * flux.x[fr + 1]
                    - self.face_area_x[fr] * flux.x[fr])
                    / self.weights[c];
            }
        }
        if self.ny > 1 {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let c = self.idx(i, j);
                    out[c] += (self.face_area_y[(j + 1) * self.nx + i] * flux.y[(j + 1) * self.nx + i]
                        - self.face_area_y[j * self.nx + i] * flux.y[j * self.nx + i])
                        / self.weights[c];
                }
            }
        }
        out
    }

    /// Discrete Neumann Laplacian: divergence of the face gradient.
    pub fn div_grad(&self, f: &Field) -> Vec<f64> {
        self.divergence(&self.face_gradient(f))
    }

    pub(crate) fn face_area_x(&self) -> &[f64] {
        &self.face_area_x
    }

    pub(crate) fn face_area_y(&self) -> &[f64] {
        &self.face_area_y
    }
}

/// Scalar field sampled at cell centers. Construction rejects non-finite
/// values; everything downstream may assume finiteness.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: &Arc<Grid>, c: f64) -> Result<Field> {
        if !c.is_finite() {
            return Err(Error::NonFinite("constant field value"));
        }
        Ok(Field { grid: grid.clone(), values: vec![c; grid.n_cells()] })
    }

    /// Sample `f(x, y)` at cell centers (`f(r, 0)` on the radial mesh).
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        let values: Vec<f64> = (0..grid.n_cells())
            .map(|c| {
                let (x, y) = grid.cell_center(c);
                f(x, y)
            })
            .collect();
        Field::from_values(grid, values)
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "value count {} does not match cell count {}",
                values.len(),
                grid.n_cells()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Field { grid: grid.clone(), values })
    }

    /// Internal constructor for hot paths that have already checked finiteness.
    pub(crate) fn from_values_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.n_cells());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weighted quadrature of the field over the domain.
    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Weighted quadrature of `value^p`; meant for nonnegative fields.
    pub fn integrate_pow(&self, p: f64) -> f64 {
        if p == 0.0 {
            return self.grid.measure();
        }
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v.powf(p) * w)
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Quadrature-weighted 2-norm, the norm used in residual contracts.
    pub fn weighted_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * v * w)
            .sum::<f64>()
            .sqrt()
    }

    /// Snapshot serialization: a comment header with the mesh descriptor, then
    /// one `index,coord(s),value` row per cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let g = &self.grid;
        match g.domain() {
            Domain::Rectangle { .. } => {
                writeln!(out, "# rectangle,{}x{},{}x{}", g.nx(), g.ny(), g.hx(), g.hy())?;
                for (c, v) in self.values.iter().enumerate() {
                    let (x, y) = g.cell_center(c);
                    writeln!(out, "{c},{x},{y},{v}")?;
                }
            }
            shape => {
                writeln!(out, "# {},{},{}", shape.shape_name(), g.nx(), g.hx())?;
                for (c, v) in self.values.iter().enumerate() {
                    let (x, _) = g.cell_center(c);
                    writeln!(out, "{c},{x},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Convenience free function mirroring [`Field::integrate`].
pub fn integrate(f: &Field) -> f64 {
    f.integrate()
}

/// Convenience free function mirroring [`Grid::face_gradient`].
pub fn face_gradient(f: &Field) -> FaceField {
    f.grid().face_gradient(f)
}

/// Values attached to mesh faces: x-faces first (`(nx+1) * ny`), then y-faces
/// (`nx * (ny+1)`, rectangle only).
#[derive(Debug, Clone)]
pub struct FaceField {
    grid: Arc<Grid>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: Arc<Grid>) -> FaceField {
        let nxf = (grid.nx() + 1) * grid.ny();
        let nyf = if grid.ny() > 1 { grid.nx() * (grid.ny() + 1) } else { 0 };
        FaceField { grid, x: vec![0.0; nxf], y: vec![0.0; nyf] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Largest absolute face value across both axes.
    pub fn linf(&self) -> f64 {
        let mx = self.x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.y.iter().fold(mx, |a, v| a.max(v.abs()))
    }
}
