//! Lattice geometries and the dual formulations of the Z2 gauge Hamiltonian.
//!
//! Degrees of freedom live on the links of an `N_x x N_y` lattice of sites.
//! The original formulation keeps one qubit per link together with local
//! Gauss-law operators; it is retained here purely as a correctness oracle.
//! The dual formulations eliminate the bulk Gauss laws in favor of plaquette
//! spins `mu` plus winding spins, keeping original link variables only along
//! physical or virtual (entanglement-cut) boundaries.
//!
//! All three dual geometries are generated from a single substitution table
//! mapping each original link's electric operator and each plaquette's
//! magnetic operator to a Pauli string on the dual register. Hamiltonians,
//! boundary Gauss operators, flux-sector operators and the canonical-map
//! verification all derive from that table, so a single bug cannot pass the
//! spectrum-equivalence checks.

use crate::pauli::{OperatorSum, PauliError, PauliString, QubitIndex};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("unsupported geometry kind for this operation: {0:?}")]
    UnsupportedGeometry(GeometryKind),
    #[error("geometry too small: {0}")]
    GeometryTooSmall(String),
    #[error("coupling must be non-negative, got {0}")]
    NegativeCoupling(f64),
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GeometryKind {
    PeriodicTorus,
    OpenCylinder,
    CutTorus,
}

/// Lattice extent and entanglement-cut layout.
///
/// For `CutTorus` the x-direction splits into `nx_a` columns of subsystem A
/// and `nx_b` columns of subsystem B; for the other kinds `nx_b = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatticeGeometry {
    pub kind: GeometryKind,
    pub nx_a: usize,
    pub nx_b: usize,
    pub ny: usize,
}

impl LatticeGeometry {
    pub fn torus(nx: usize, ny: usize) -> Self {
        LatticeGeometry { kind: GeometryKind::PeriodicTorus, nx_a: nx, nx_b: 0, ny }
    }

    pub fn cylinder(nx: usize, ny: usize) -> Self {
        LatticeGeometry { kind: GeometryKind::OpenCylinder, nx_a: nx, nx_b: 0, ny }
    }

    pub fn cut_torus(nx_a: usize, nx_b: usize, ny: usize) -> Self {
        LatticeGeometry { kind: GeometryKind::CutTorus, nx_a, nx_b, ny }
    }

    /// Total number of site columns.
    pub fn nx(&self) -> usize {
        self.nx_a + self.nx_b
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        let err = |m: &str| Err(LatticeError::GeometryTooSmall(m.to_string()));
        match self.kind {
            GeometryKind::PeriodicTorus | GeometryKind::OpenCylinder => {
                if self.nx_b != 0 {
                    return err("nx_b must be 0 for uncut geometries");
                }
                if self.nx_a < 2 || self.ny < 2 {
                    return err("uncut geometries need nx >= 2 and ny >= 2");
                }
            }
            GeometryKind::CutTorus => {
                if self.nx_a < 2 || self.nx_b < 2 || self.ny < 2 {
                    return err("cut torus needs nx_a >= 2, nx_b >= 2, ny >= 2");
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.kind {
            GeometryKind::PeriodicTorus => format!("{}x{} torus", self.nx_a, self.ny),
            GeometryKind::OpenCylinder => format!("{}x{} cylinder", self.nx_a, self.ny),
            GeometryKind::CutTorus => format!("({}+{})x{}", self.nx_a, self.nx_b, self.ny),
        }
    }
}

/// Gauge coupling, with the pure-electric limit kept exact instead of
/// overflowing a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Coupling {
    Finite(f64),
    Infinite,
}

impl Coupling {
    /// (magnetic coefficient, electric coefficient) entering
    /// `H = -mag * sum(plaquettes) - elec * sum(links)`.
    pub fn weights(&self) -> Result<(f64, f64), LatticeError> {
        match *self {
            Coupling::Finite(e) if e < 0.0 => Err(LatticeError::NegativeCoupling(e)),
            Coupling::Finite(e) => Ok((1.0, e)),
            Coupling::Infinite => Ok((0.0, 1.0)),
        }
    }
}

impl From<f64> for Coupling {
    fn from(e: f64) -> Self {
        Coupling::Finite(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    X,
    Y,
}

/// A link of the original lattice; `x = -1` labels the dangling electric
/// links on the open boundary of a cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub x: isize,
    pub y: usize,
    pub dir: Dir,
}

pub type Plaq = (usize, usize);

/// How the winding spins `V_x`, `V_y` enter the dual register.
///
/// `Fixed` substitutes classical signs for the winding operators, which
/// commute with every dual Hamiltonian; the full spectrum is recovered by
/// concatenating the four (or two, on a cylinder) sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindingMode {
    Explicit,
    Fixed { vx: i8, vy: i8 },
}

/// Side of the bipartition a qubit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// The enumerated dual register: geometry, qubit assignments and the A/B
/// partition.
///
/// Qubit order is chosen so that for a `CutTorus` the A side occupies the
/// low bits of the basis index contiguously: A-bulk `mu` spins (x-major),
/// then the retained boundary `sigma` links of the left cut (`n_y >= 1`),
/// then those of the right cut, then B-bulk `mu` spins, then winding spins
/// when explicit. The partial trace over B is then an index reshape.
#[derive(Debug, Clone)]
pub struct DualRegister {
    pub geometry: LatticeGeometry,
    pub mode: WindingMode,
    mu: BTreeMap<Plaq, QubitIndex>,
    sigma: BTreeMap<Link, QubitIndex>,
    vy: Option<QubitIndex>,
    vx: Option<QubitIndex>,
    register: usize,
    a_size: usize,
}

impl DualRegister {
    pub fn new(geometry: LatticeGeometry, mode: WindingMode) -> Result<Self, LatticeError> {
        geometry.validate()?;
        let nx = geometry.nx();
        let ny = geometry.ny;
        let mut mu = BTreeMap::new();
        let mut sigma = BTreeMap::new();
        let mut next = 0usize;
        fn take(next: &mut usize) -> QubitIndex {
            let q = QubitIndex(*next);
            *next += 1;
            q
        }
        let mut a_size = 0usize;
        match geometry.kind {
            GeometryKind::PeriodicTorus => {
                for px in 0..nx {
                    for py in 0..ny {
                        if (px, py) != (nx - 1, 0) {
                            mu.insert((px, py), take(&mut next));
                        }
                    }
                }
            }
            GeometryKind::OpenCylinder => {
                // Plaquettes exist between site columns only.
                for px in 0..nx - 1 {
                    for py in 0..ny {
                        mu.insert((px, py), take(&mut next));
                    }
                }
                for py in 1..ny {
                    sigma.insert(Link { x: 0, y: py, dir: Dir::Y }, take(&mut next));
                }
                for py in 0..ny {
                    sigma.insert(Link { x: nx as isize - 1, y: py, dir: Dir::Y }, take(&mut next));
                }
                // Dangling electric flux links on both open boundaries.
                for py in 0..ny {
                    sigma.insert(Link { x: -1, y: py, dir: Dir::X }, take(&mut next));
                }
                for py in 0..ny {
                    sigma.insert(Link { x: nx as isize - 1, y: py, dir: Dir::X }, take(&mut next));
                }
            }
            GeometryKind::CutTorus => {
                let nxa = geometry.nx_a;
                for px in 0..nxa - 1 {
                    for py in 0..ny {
                        mu.insert((px, py), take(&mut next));
                    }
                }
                for py in 1..ny {
                    sigma.insert(Link { x: 0, y: py, dir: Dir::Y }, take(&mut next));
                }
                for py in 0..ny {
                    sigma.insert(Link { x: nxa as isize - 1, y: py, dir: Dir::Y }, take(&mut next));
                }
                a_size = next;
                for px in nxa - 1..nx {
                    for py in 0..ny {
                        if (px, py) != (nx - 1, 0) {
                            mu.insert((px, py), take(&mut next));
                        }
                    }
                }
            }
        }
        let (vy, vx) = match mode {
            WindingMode::Fixed { .. } => (None, None),
            WindingMode::Explicit => {
                let vy = Some(take(&mut next));
                let vx = match geometry.kind {
                    GeometryKind::OpenCylinder => None,
                    _ => Some(take(&mut next)),
                };
                (vy, vx)
            }
        };
        if matches!(geometry.kind, GeometryKind::PeriodicTorus | GeometryKind::OpenCylinder) {
            a_size = next;
        }
        Ok(DualRegister { geometry, mode, mu, sigma, vy, vx, register: next, a_size })
    }

    pub fn register_size(&self) -> usize {
        self.register
    }

    /// Number of qubits in subsystem A (the low-bit prefix of the register).
    pub fn a_size(&self) -> usize {
        self.a_size
    }

    pub fn side(&self, q: QubitIndex) -> Side {
        if q.0 < self.a_size {
            Side::A
        } else {
            Side::B
        }
    }

    pub fn mu_qubit(&self, p: Plaq) -> Option<QubitIndex> {
        self.mu.get(&p).copied()
    }

    pub fn sigma_qubit(&self, l: Link) -> Option<QubitIndex> {
        self.sigma.get(&l).copied()
    }

    pub fn mu_qubits(&self) -> &BTreeMap<Plaq, QubitIndex> {
        &self.mu
    }

    pub fn sigma_qubits(&self) -> &BTreeMap<Link, QubitIndex> {
        &self.sigma
    }

    pub fn vx_qubit(&self) -> Option<QubitIndex> {
        self.vx
    }

    pub fn vy_qubit(&self) -> Option<QubitIndex> {
        self.vy
    }

    fn identity(&self) -> PauliString {
        PauliString::identity(self.register)
    }

    fn mu_x(&self, p: Plaq) -> PauliString {
        PauliString::x(self.register, self.mu[&p])
    }

    fn mu_z(&self, p: Plaq) -> PauliString {
        PauliString::z(self.register, self.mu[&p])
    }

    /// `X` on the winding spin `V_x`, or the fixed sign in a fixed sector.
    fn v_x(&self) -> PauliString {
        match (self.mode, self.vx) {
            (_, Some(q)) => PauliString::x(self.register, q),
            (WindingMode::Fixed { vx, .. }, None) => self.identity().with_sign(vx as f64),
            _ => panic!("geometry has no V_x"),
        }
    }

    fn v_y(&self) -> PauliString {
        match (self.mode, self.vy) {
            (_, Some(q)) => PauliString::x(self.register, q),
            (WindingMode::Fixed { vy, .. }, None) => self.identity().with_sign(vy as f64),
            _ => panic!("geometry has no V_y"),
        }
    }

    /// `mu^x` with the excluded plaquette `(N_x-1, 0)` standing in for `V_x`
    /// on periodic-in-x geometries.
    fn mu_x_or_vx(&self, p: Plaq) -> PauliString {
        if let Some(q) = self.mu.get(&p) {
            PauliString::x(self.register, *q)
        } else {
            debug_assert_eq!(p, (self.geometry.nx() - 1, 0));
            self.v_x()
        }
    }

    /// All links of the original lattice, including dangling boundary links
    /// for the cylinder.
    pub fn links(&self) -> Vec<Link> {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let mut out = Vec::new();
        match self.geometry.kind {
            GeometryKind::PeriodicTorus | GeometryKind::CutTorus => {
                for x in 0..nx {
                    for y in 0..ny {
                        out.push(Link { x: x as isize, y, dir: Dir::X });
                        out.push(Link { x: x as isize, y, dir: Dir::Y });
                    }
                }
            }
            GeometryKind::OpenCylinder => {
                for y in 0..ny {
                    out.push(Link { x: -1, y, dir: Dir::X });
                }
                for x in 0..nx {
                    for y in 0..ny {
                        if x < nx - 1 {
                            out.push(Link { x: x as isize, y, dir: Dir::X });
                        }
                        out.push(Link { x: x as isize, y, dir: Dir::Y });
                    }
                }
                for y in 0..ny {
                    out.push(Link { x: nx as isize - 1, y, dir: Dir::X });
                }
            }
        }
        out
    }

    /// All plaquettes, including the constrained one on periodic geometries.
    pub fn plaquettes(&self) -> Vec<Plaq> {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let cols = match self.geometry.kind {
            GeometryKind::OpenCylinder => nx - 1,
            _ => nx,
        };
        let mut out = Vec::new();
        for x in 0..cols {
            for y in 0..ny {
                out.push((x, y));
            }
        }
        out
    }

    /// Dual image of the electric operator `sigma^x` on `link`.
    ///
    /// Retained boundary links map to their own `X`; bulk links follow the
    /// substitution tables of the dual formulation, with `V_y` inserted on
    /// x-links wrapping the y-cycle and `V_x` on y-links wrapping the
    /// x-cycle. In a fixed winding sector the winding factors become signs.
    pub fn electric_image(&self, link: Link) -> PauliString {
        if let Some(q) = self.sigma.get(&link) {
            return PauliString::x(self.register, *q);
        }
        self.bulk_electric_image(link)
    }

    /// The substitution-table image ignoring link retention; coincides with
    /// [`Self::electric_image`] on bulk links.
    fn bulk_electric_image(&self, link: Link) -> PauliString {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let open = matches!(self.geometry.kind, GeometryKind::OpenCylinder);
        let x = link.x as usize;
        match link.dir {
            Dir::X => {
                // Plaquettes above and below the link; wrapping in y inserts V_y.
                let above = (x, link.y);
                let below = (x, (link.y + ny - 1) % ny);
                let mut op = if open {
                    self.mu_x(above).multiply(&self.mu_x(below)).unwrap()
                } else {
                    self.mu_x_or_vx(above).multiply(&self.mu_x_or_vx(below)).unwrap()
                };
                if link.y == 0 {
                    op = op.multiply(&self.v_y()).unwrap();
                }
                op
            }
            Dir::Y => {
                // Plaquettes right and left of the link; wrapping in x inserts V_x.
                if open && x == 0 && link.y == 0 {
                    return self.mu_x((0, 0));
                }
                let right = (x, link.y);
                let left = ((x + nx - 1) % nx, link.y);
                if open {
                    // No wrap on a cylinder; boundary y-links are retained and
                    // handled above.
                    return self.mu_x(right).multiply(&self.mu_x(left)).unwrap();
                }
                let mut op = self.mu_x_or_vx(right).multiply(&self.mu_x_or_vx(left)).unwrap();
                if x == 0 {
                    op = op.multiply(&self.v_x()).unwrap();
                }
                op
            }
        }
    }

    /// The four links bounding plaquette `p` (with periodic wrapping where
    /// the geometry has it).
    pub fn plaquette_links(&self, p: Plaq) -> [Link; 4] {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let (px, py) = p;
        [
            Link { x: px as isize, y: py, dir: Dir::X },
            Link { x: ((px + 1) % nx) as isize, y: py, dir: Dir::Y },
            Link { x: px as isize, y: (py + 1) % ny, dir: Dir::X },
            Link { x: px as isize, y: py, dir: Dir::Y },
        ]
    }

    /// Dual image of the plaquette (magnetic) operator at `p`.
    ///
    /// Ordinary plaquettes map to `mu^z` times the retained boundary
    /// `sigma^z` links on their edges; the constrained plaquette of a
    /// periodic geometry maps to the product of all other magnetic images.
    pub fn magnetic_image(&self, p: Plaq) -> PauliString {
        if self.mu.contains_key(&p) {
            let mut op = self.mu_z(p);
            for l in self.plaquette_links(p) {
                if l.dir == Dir::Y {
                    if let Some(q) = self.sigma.get(&l) {
                        op = op.multiply(&PauliString::z(self.register, *q)).unwrap();
                    }
                }
            }
            op
        } else {
            let mut op = self.identity();
            for q in self.plaquettes() {
                if q != p {
                    op = op.multiply(&self.magnetic_image(q)).unwrap();
                }
            }
            op
        }
    }

    /// Full dual Hamiltonian `H = -mag * sum(plaquettes) - elec * sum(links)`.
    pub fn hamiltonian(&self, coupling: Coupling) -> Result<OperatorSum, LatticeError> {
        let (mag, elec) = coupling.weights()?;
        let mut h = OperatorSum::new(self.register);
        if mag != 0.0 {
            for p in self.plaquettes() {
                h.add(-mag, self.magnetic_image(p))?;
            }
        }
        for l in self.links() {
            h.add(-elec, self.electric_image(l))?;
        }
        Ok(h)
    }

    /// Residual boundary Gauss operators: one per boundary site, the product
    /// of the images of its four links.
    ///
    /// On the open cylinder these are the physical Gauss laws left over at
    /// the two open edges. On the cut torus the same construction at the
    /// virtual-boundary sites yields the constraints that select the
    /// physical sector of the enlarged register; the other joint eigenspaces
    /// carry electric boundary defects. Bulk sites need no operators, their
    /// Gauss images collapse to the identity.
    pub fn boundary_gauss_ops(&self) -> Result<Vec<PauliString>, LatticeError> {
        let ny = self.geometry.ny;
        // (site column, incoming x-link column, outgoing x-link column).
        let columns: [(isize, isize, isize); 2] = match self.geometry.kind {
            GeometryKind::OpenCylinder => {
                let nx = self.geometry.nx() as isize;
                [(0, -1, 0), (nx - 1, nx - 2, nx - 1)]
            }
            GeometryKind::CutTorus => {
                let nx = self.geometry.nx() as isize;
                let nxa = self.geometry.nx_a as isize;
                [(0, nx - 1, 0), (nxa - 1, nxa - 2, nxa - 1)]
            }
            GeometryKind::PeriodicTorus => {
                return Err(LatticeError::UnsupportedGeometry(self.geometry.kind))
            }
        };
        let mut out = Vec::new();
        for (bx, x_in, x_out) in columns {
            for y in 0..ny {
                let yd = (y + ny - 1) % ny;
                let links = [
                    Link { x: x_in, y, dir: Dir::X },
                    Link { x: x_out, y, dir: Dir::X },
                    Link { x: bx, y, dir: Dir::Y },
                    Link { x: bx, y: yd, dir: Dir::Y },
                ];
                let mut g = self.identity();
                for l in links {
                    g = g.multiply(&self.electric_image(l)).unwrap();
                }
                out.push(g);
            }
        }
        Ok(out)
    }

    /// The complete physical-sector constraints of the cut torus: one per
    /// retained boundary link, `X` on its sigma qubit times the plaquette
    /// image the link would have carried without retention.
    ///
    /// States of the enlarged register describing actual torus states are
    /// joint `+1` eigenstates of all of these; the residual site Gauss
    /// operators of [`Self::boundary_gauss_ops`] are products of them.
    pub fn retained_link_constraints(&self) -> Result<Vec<PauliString>, LatticeError> {
        if self.geometry.kind != GeometryKind::CutTorus {
            return Err(LatticeError::UnsupportedGeometry(self.geometry.kind));
        }
        let mut out = Vec::new();
        for (link, q) in &self.sigma {
            let c = PauliString::x(self.register, *q)
                .multiply(&self.bulk_electric_image(*link))
                .unwrap();
            out.push(c);
        }
        Ok(out)
    }

    /// A-supported electric-flux operators through both entanglement cuts,
    /// obtained from the boundary Gauss laws, followed by the open string
    /// `V~_x` connecting the two cuts.
    ///
    /// Order: left cut `n_y = 0..N_y-1`, right cut `n_y = 0..N_y-1`, `V~_x`.
    /// All returned strings are X-type on A qubits (with a possible sign from
    /// a fixed winding sector), mutually commuting, and commuting with every
    /// term of `H_A`.
    pub fn flux_sector_ops(&self) -> Result<Vec<PauliString>, LatticeError> {
        let ny = self.geometry.ny;
        match self.geometry.kind {
            GeometryKind::CutTorus => {
                let nxa = self.geometry.nx_a as isize;
                let mut out = Vec::new();
                // Left cut: Gauss at site (0, y) rewrites the incoming flux
                // sigma^x_{(Nx-1,y),x} in terms of A operators.
                for y in 0..ny {
                    let yd = (y + ny - 1) % ny;
                    let mut f = self.electric_image(Link { x: 0, y, dir: Dir::X });
                    f = f.multiply(&self.electric_image(Link { x: 0, y, dir: Dir::Y })).unwrap();
                    f = f.multiply(&self.electric_image(Link { x: 0, y: yd, dir: Dir::Y })).unwrap();
                    out.push(f);
                }
                // Right cut: Gauss at site (nxa-1, y).
                for y in 0..ny {
                    let yd = (y + ny - 1) % ny;
                    let mut f = self.electric_image(Link { x: nxa - 2, y, dir: Dir::X });
                    f = f
                        .multiply(&self.electric_image(Link { x: nxa - 1, y, dir: Dir::Y }))
                        .unwrap();
                    f = f
                        .multiply(&self.electric_image(Link { x: nxa - 1, y: yd, dir: Dir::Y }))
                        .unwrap();
                    out.push(f);
                }
                out.push(self.vtilde_x()?);
                Ok(out)
            }
            GeometryKind::OpenCylinder => {
                let nx = self.geometry.nx() as isize;
                let mut out = Vec::new();
                for y in 0..ny {
                    out.push(self.electric_image(Link { x: -1, y, dir: Dir::X }));
                }
                for y in 0..ny {
                    out.push(self.electric_image(Link { x: nx - 1, y, dir: Dir::X }));
                }
                out.push(self.vtilde_x()?);
                Ok(out)
            }
            GeometryKind::PeriodicTorus => {
                Err(LatticeError::UnsupportedGeometry(self.geometry.kind))
            }
        }
    }

    /// The open electric string `V~_x` from one boundary to the other.
    pub fn vtilde_x(&self) -> Result<PauliString, LatticeError> {
        let right_col = match self.geometry.kind {
            GeometryKind::CutTorus => self.geometry.nx_a as isize - 1,
            GeometryKind::OpenCylinder => self.geometry.nx() as isize - 1,
            GeometryKind::PeriodicTorus => {
                return Err(LatticeError::UnsupportedGeometry(self.geometry.kind))
            }
        };
        // Row n_y = 1 avoids the special-cased n_y = 0 images; ny >= 2 always
        // holds for these geometries.
        let y = 1usize;
        let mut op = self.electric_image(Link { x: 0, y, dir: Dir::Y });
        op = op.multiply(&self.mu_x((0, y))).unwrap();
        op = op.multiply(&self.electric_image(Link { x: right_col, y, dir: Dir::Y })).unwrap();
        op = op.multiply(&self.mu_x((right_col as usize - 1, y))).unwrap();
        Ok(op)
    }

    /// Aliases two plaquette spins onto one qubit, breaking the canonical
    /// algebra; only used as a negative control for the verification
    /// pipeline. (A mere swap would be a harmless relabeling.)
    #[doc(hidden)]
    pub fn corrupt_for_test(&mut self) {
        let keys: Vec<Plaq> = self.mu.keys().copied().collect();
        let qb = self.mu[&keys[1]];
        self.mu.insert(keys[0], qb);
    }
}

/// Original gauge-variant formulation on the full link register, used as a
/// dense oracle on small tori.
pub struct OriginalLattice {
    pub geometry: LatticeGeometry,
    register: usize,
}

impl OriginalLattice {
    pub fn new(geometry: LatticeGeometry) -> Result<Self, LatticeError> {
        geometry.validate()?;
        if geometry.kind == GeometryKind::OpenCylinder {
            return Err(LatticeError::UnsupportedGeometry(geometry.kind));
        }
        let register = 2 * geometry.nx() * geometry.ny;
        Ok(OriginalLattice { geometry, register })
    }

    pub fn register_size(&self) -> usize {
        self.register
    }

    pub fn link_qubit(&self, l: Link) -> QubitIndex {
        let nx = self.geometry.nx();
        let d = if l.dir == Dir::X { 0 } else { 1 };
        QubitIndex(2 * (l.y * nx + l.x as usize) + d)
    }

    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for x in 0..self.geometry.nx() {
            for y in 0..self.geometry.ny {
                out.push(Link { x: x as isize, y, dir: Dir::X });
                out.push(Link { x: x as isize, y, dir: Dir::Y });
            }
        }
        out
    }

    pub fn plaquettes(&self) -> Vec<Plaq> {
        let mut out = Vec::new();
        for x in 0..self.geometry.nx() {
            for y in 0..self.geometry.ny {
                out.push((x, y));
            }
        }
        out
    }

    pub fn electric_op(&self, l: Link) -> PauliString {
        PauliString::x(self.register, self.link_qubit(l))
    }

    /// `W_n`: product of `sigma^z` around plaquette `n`.
    pub fn plaquette_op(&self, p: Plaq) -> PauliString {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let (px, py) = p;
        let links = [
            Link { x: px as isize, y: py, dir: Dir::X },
            Link { x: ((px + 1) % nx) as isize, y: py, dir: Dir::Y },
            Link { x: px as isize, y: (py + 1) % ny, dir: Dir::X },
            Link { x: px as isize, y: py, dir: Dir::Y },
        ];
        let mut z = PauliString::identity(self.register);
        for l in links {
            z = z
                .multiply(&PauliString::z(self.register, self.link_qubit(l)))
                .unwrap();
        }
        z
    }

    /// Gauss operator at site `n`: product of `sigma^x` on the four links
    /// touching the site.
    pub fn gauss_op(&self, site: (usize, usize)) -> PauliString {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let (sx, sy) = site;
        let links = [
            Link { x: sx as isize, y: sy, dir: Dir::X },
            Link { x: ((sx + nx - 1) % nx) as isize, y: sy, dir: Dir::X },
            Link { x: sx as isize, y: sy, dir: Dir::Y },
            Link { x: sx as isize, y: (sy + ny - 1) % ny, dir: Dir::Y },
        ];
        let mut g = PauliString::identity(self.register);
        for l in links {
            g = g
                .multiply(&PauliString::x(self.register, self.link_qubit(l)))
                .unwrap();
        }
        g
    }

    pub fn gauss_ops(&self) -> Vec<PauliString> {
        let mut out = Vec::new();
        for x in 0..self.geometry.nx() {
            for y in 0..self.geometry.ny {
                out.push(self.gauss_op((x, y)));
            }
        }
        out
    }

    pub fn hamiltonian(&self, coupling: Coupling) -> Result<OperatorSum, LatticeError> {
        let (mag, elec) = coupling.weights()?;
        let mut h = OperatorSum::new(self.register);
        if mag != 0.0 {
            for p in self.plaquettes() {
                h.add(-mag, self.plaquette_op(p))?;
            }
        }
        for l in self.links() {
            h.add(-elec, self.electric_op(l))?;
        }
        Ok(h)
    }

    /// Winding ("ribbon") operators: products of `sigma^x` around the two
    /// cycles of the torus.
    pub fn ribbon_ops(&self) -> (PauliString, PauliString) {
        let nx = self.geometry.nx();
        let ny = self.geometry.ny;
        let mut vx = PauliString::identity(self.register);
        for x in 0..nx {
            vx = vx
                .multiply(&self.electric_op(Link { x: x as isize, y: 0, dir: Dir::X }))
                .unwrap();
        }
        let mut vy = PauliString::identity(self.register);
        for y in 0..ny {
            vy = vy.multiply(&self.electric_op(Link { x: 0, y, dir: Dir::Y })).unwrap();
        }
        (vx, vy)
    }
}

/// Builds the original Hamiltonian and its Gauss operators on a periodic
/// torus (the oracle side of the duality checks).
pub fn build_original(
    geometry: LatticeGeometry,
    coupling: Coupling,
) -> Result<(OperatorSum, Vec<PauliString>), LatticeError> {
    if geometry.kind != GeometryKind::PeriodicTorus {
        return Err(LatticeError::UnsupportedGeometry(geometry.kind));
    }
    let lat = OriginalLattice::new(geometry)?;
    let h = lat.hamiltonian(coupling)?;
    Ok((h, lat.gauss_ops()))
}

/// Dual Hamiltonian on the periodic torus.
pub fn build_dual_torus(
    geometry: LatticeGeometry,
    coupling: Coupling,
    mode: WindingMode,
) -> Result<(OperatorSum, DualRegister), LatticeError> {
    if geometry.kind != GeometryKind::PeriodicTorus {
        return Err(LatticeError::UnsupportedGeometry(geometry.kind));
    }
    let reg = DualRegister::new(geometry, mode)?;
    let h = reg.hamiltonian(coupling)?;
    Ok((h, reg))
}

/// Dual Hamiltonian on the open cylinder, plus the residual boundary Gauss
/// operators for projector construction.
pub fn build_dual_cylinder(
    geometry: LatticeGeometry,
    coupling: Coupling,
    mode: WindingMode,
) -> Result<(OperatorSum, Vec<PauliString>, DualRegister), LatticeError> {
    if geometry.kind != GeometryKind::OpenCylinder {
        return Err(LatticeError::UnsupportedGeometry(geometry.kind));
    }
    let reg = DualRegister::new(geometry, mode)?;
    let h = reg.hamiltonian(coupling)?;
    let gauss = reg.boundary_gauss_ops()?;
    Ok((h, gauss, reg))
}

/// The cut-torus decomposition `H = H_A + H_B + H_AB`.
pub struct CutTorusHamiltonian {
    pub h_a: OperatorSum,
    pub h_b: OperatorSum,
    pub h_ab: OperatorSum,
    pub register: DualRegister,
}

impl CutTorusHamiltonian {
    pub fn total(&self) -> OperatorSum {
        let mut h = OperatorSum::new(self.register.register_size());
        h.extend(&self.h_a).unwrap();
        h.extend(&self.h_b).unwrap();
        h.extend(&self.h_ab).unwrap();
        h
    }
}

/// Dual Hamiltonian on the torus with entanglement cuts, split into terms
/// supported in A, in B, and straddling the cuts.
pub fn build_dual_cut_torus(
    geometry: LatticeGeometry,
    coupling: Coupling,
    mode: WindingMode,
) -> Result<CutTorusHamiltonian, LatticeError> {
    if geometry.kind != GeometryKind::CutTorus {
        return Err(LatticeError::UnsupportedGeometry(geometry.kind));
    }
    let reg = DualRegister::new(geometry, mode)?;
    let h = reg.hamiltonian(coupling)?;
    let a_mask: u64 = if reg.a_size() == 64 { !0 } else { (1u64 << reg.a_size()) - 1 };
    let mut h_a = OperatorSum::new(reg.register_size());
    let mut h_b = OperatorSum::new(reg.register_size());
    let mut h_ab = OperatorSum::new(reg.register_size());
    for (c, p) in h.terms() {
        let support = p.x_mask() | p.z_mask();
        // Winding spins commute with everything and carry no dynamics of
        // their own; terms whose only B-support is a winding spin still act
        // on A, so classify by the non-winding support.
        let mut winding_mask = 0u64;
        if let Some(q) = reg.vx_qubit() {
            winding_mask |= 1 << q.0;
        }
        if let Some(q) = reg.vy_qubit() {
            winding_mask |= 1 << q.0;
        }
        let core = support & !winding_mask;
        let in_a = core & a_mask != 0;
        let in_b = core & !a_mask != 0;
        let target = match (in_a, in_b) {
            (true, false) => &mut h_a,
            (false, true) => &mut h_b,
            (true, true) => &mut h_ab,
            (false, false) => &mut h_b, // pure winding term (does not occur)
        };
        target.add(*c, *p)?;
    }
    Ok(CutTorusHamiltonian { h_a, h_b, h_ab, register: reg })
}

/// Outcome of the canonical-transformation check: every pair of mapped
/// original operators must reproduce its original (anti)commutation pattern.
#[derive(Debug, Default)]
pub struct CanonicalMapReport {
    pub pairs_checked: usize,
    pub violations: Vec<String>,
}

impl CanonicalMapReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies that the dual substitution tables form a canonical
/// transformation: the images of all electric link operators and all
/// plaquette operators pairwise commute or anticommute exactly as the
/// originals do. Also checks that the image of every bulk Gauss operator is
/// the identity (bulk gauge redundancy eliminated) on uncut geometries.
pub fn verify_canonical_map(geometry: LatticeGeometry) -> Result<CanonicalMapReport, LatticeError> {
    let reg = DualRegister::new(geometry, WindingMode::Explicit)?;
    verify_canonical_map_of(&reg)
}

pub fn verify_canonical_map_of(reg: &DualRegister) -> Result<CanonicalMapReport, LatticeError> {
    let geometry = reg.geometry;
    let mut report = CanonicalMapReport::default();
    // Original-side operators on an abstract link register.
    let links = reg.links();
    let link_index: BTreeMap<Link, usize> =
        links.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let n_links = links.len();
    let mut originals: Vec<(String, PauliString)> = Vec::new();
    let mut images: Vec<PauliString> = Vec::new();
    for l in &links {
        originals.push((
            format!("E({},{},{:?})", l.x, l.y, l.dir),
            PauliString::x(n_links, QubitIndex(link_index[l])),
        ));
        images.push(reg.electric_image(*l));
    }
    for p in reg.plaquettes() {
        let mut w = PauliString::identity(n_links);
        for l in reg.plaquette_links(p) {
            if let Some(i) = link_index.get(&l) {
                w = w.multiply(&PauliString::z(n_links, QubitIndex(*i))).unwrap();
            }
        }
        originals.push((format!("W({},{})", p.0, p.1), w));
        images.push(reg.magnetic_image(p));
    }
    for i in 0..originals.len() {
        for j in i + 1..originals.len() {
            report.pairs_checked += 1;
            let orig = originals[i].1.commutes(&originals[j].1)?;
            let dual = images[i].commutes(&images[j])?;
            if orig != dual {
                report.violations.push(format!(
                    "{} vs {}: original {} but dual image {}",
                    originals[i].0,
                    originals[j].0,
                    if orig { "commutes" } else { "anticommutes" },
                    if dual { "commutes" } else { "anticommutes" },
                ));
            }
        }
    }
    // Bulk Gauss laws must map to the identity on the torus; each bulk site's
    // four link images multiply to +1.
    if geometry.kind == GeometryKind::PeriodicTorus {
        let nx = geometry.nx();
        let ny = geometry.ny;
        for sx in 0..nx {
            for sy in 0..ny {
                let g_links = [
                    Link { x: sx as isize, y: sy, dir: Dir::X },
                    Link { x: ((sx + nx - 1) % nx) as isize, y: sy, dir: Dir::X },
                    Link { x: sx as isize, y: sy, dir: Dir::Y },
                    Link { x: sx as isize, y: (sy + ny - 1) % ny, dir: Dir::Y },
                ];
                let mut img = PauliString::identity(reg.register_size());
                for l in g_links {
                    img = img.multiply(&reg.electric_image(l)).unwrap();
                }
                report.pairs_checked += 1;
                if !(img.is_identity() && img.phase_exp() == 0) {
                    report
                        .violations
                        .push(format!("Gauss image at site ({sx},{sy}) is {img}, not +I"));
                }
            }
        }
    }
    Ok(report)
}
