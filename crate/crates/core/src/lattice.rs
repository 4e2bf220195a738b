//! Ring and square lattices with staggered G/E sublattices.
//!
//! Positions are in absolute units (`a` times lattice-constant units). Ring
//! sites are numbered counterclockwise from the site at azimuth 0; square
//! sites are row-major with `index = row * side + col`, `x = col * a`,
//! `y = row * a`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Reduce an angle to the principal interval (-π, π].
pub fn principal_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    G,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Site {
    pub index: usize,
    pub position: Vec2,
    pub sublattice: Sublattice,
    /// Azimuth about the beam centre; 0 for a site sitting on the centre.
    pub azimuth: f64,
}

/// Nearest-neighbour bond, stored in its canonical G→E orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Link {
    pub g: usize,
    pub e: usize,
}

/// Elementary square cell. `sites` run counterclockwise starting from the
/// lower-left corner `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Plaquette {
    pub row: usize,
    pub col: usize,
    pub sites: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeKind {
    Ring { sites: usize, a: f64 },
    Square { side: usize, a: f64 },
    /// Two sites joined by one bond; used for analytic checks.
    Dimer { a: f64 },
}

#[derive(Debug, Clone)]
pub struct Lattice {
    kind: LatticeKind,
    sites: Vec<Site>,
    links: Vec<Link>,
    plaquettes: Vec<Plaquette>,
    beam_center: Vec2,
}

fn check_spacing(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("lattice_geometry", "a", format!("lattice constant must be finite and > 0, got {a}")))
    }
}

fn site_at(index: usize, position: Vec2, sublattice: Sublattice, center: Vec2) -> Site {
    let azimuth = azimuth(position, center).unwrap_or(0.0);
    Site {
        index,
        position,
        sublattice,
        azimuth,
    }
}

fn canonical(sites: &[Site], i: usize, j: usize) -> Link {
    match sites[i].sublattice {
        Sublattice::G => Link { g: i, e: j },
        Sublattice::E => Link { g: j, e: i },
    }
}

/// Ring of `n` sites on a circle of radius `n a / 2π` about the beam axis.
pub fn build_ring(n: usize, a: f64) -> Result<Lattice> {
    check_spacing(a)?;
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::invalid(
            "lattice_geometry",
            "N_L",
            format!("ring needs an even site count >= 4 so G/E sublattices alternate around the loop, got {n}"),
        ));
    }
    let radius = n as f64 * a / (2.0 * PI);
    let center = Vec2::new(0.0, 0.0);
    let sites: Vec<Site> = (0..n)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            let sub = if j % 2 == 0 { Sublattice::G } else { Sublattice::E };
            let mut s = site_at(j, Vec2::new(radius * t.cos(), radius * t.sin()), sub, center);
            s.azimuth = principal_angle(t);
            s
        })
        .collect();
    let links = (0..n).map(|j| canonical(&sites, j, (j + 1) % n)).collect();
    Ok(Lattice {
        kind: LatticeKind::Ring { sites: n, a },
        sites,
        links,
        plaquettes: Vec::new(),
        beam_center: center,
    })
}

/// `side × side` grid with the beam axis at the geometric centre shifted by
/// `center_offset`.
pub fn build_square(side: usize, a: f64, center_offset: Vec2) -> Result<Lattice> {
    check_spacing(a)?;
    if side < 2 {
        return Err(Error::invalid("lattice_geometry", "N_S", format!("square side must be >= 2, got {side}")));
    }
    if !center_offset.is_finite() {
        return Err(Error::invalid("lattice_geometry", "center_offset", "must be finite"));
    }
    let mid = (side - 1) as f64 * a / 2.0;
    let center = Vec2::new(mid, mid) + center_offset;
    let mut sites = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let sub = if (row + col) % 2 == 0 { Sublattice::G } else { Sublattice::E };
            let pos = Vec2::new(col as f64 * a, row as f64 * a);
            sites.push(site_at(row * side + col, pos, sub, center));
        }
    }
    let mut links = Vec::with_capacity(2 * side * (side - 1));
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            if col + 1 < side {
                links.push(canonical(&sites, i, i + 1));
            }
            if row + 1 < side {
                links.push(canonical(&sites, i, i + side));
            }
        }
    }
    let mut plaquettes = Vec::with_capacity((side - 1) * (side - 1));
    for row in 0..side - 1 {
        for col in 0..side - 1 {
            let ll = row * side + col;
            plaquettes.push(Plaquette {
                row,
                col,
                sites: [ll, ll + 1, ll + side + 1, ll + side],
            });
        }
    }
    Ok(Lattice {
        kind: LatticeKind::Square { side, a },
        sites,
        links,
        plaquettes,
        beam_center: center,
    })
}

/// Two sites at `(±a/2, r)` placed one lattice constant above the beam axis.
pub fn build_dimer(a: f64) -> Result<Lattice> {
    check_spacing(a)?;
    let center = Vec2::new(0.0, 0.0);
    let sites = vec![
        site_at(0, Vec2::new(-a / 2.0, a), Sublattice::G, center),
        site_at(1, Vec2::new(a / 2.0, a), Sublattice::E, center),
    ];
    Ok(Lattice {
        kind: LatticeKind::Dimer { a },
        sites,
        links: vec![Link { g: 0, e: 1 }],
        plaquettes: Vec::new(),
        beam_center: center,
    })
}

/// Principal azimuth of `point` about `center`, in (-π, π].
pub fn azimuth(point: Vec2, center: Vec2) -> Result<f64> {
    let d = point - center;
    if d.x == 0.0 && d.y == 0.0 {
        return Err(Error::invalid("lattice_geometry", "point", "azimuth is undefined at the beam centre"));
    }
    let t = d.y.atan2(d.x);
    Ok(if t == -PI { PI } else { t })
}

/// First-order azimuth of `r0 + delta` about the origin, valid for
/// `|delta| << |r0|`. Returns `(linearized, exact)`.
pub fn linearized_azimuth(r0: Vec2, delta: Vec2) -> Result<(f64, f64)> {
    let r = r0.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::invalid("lattice_geometry", "r0", "cell centre must be away from the beam centre"));
    }
    let phi0 = r0.y.atan2(r0.x);
    let lin = phi0 + (phi0.cos() * delta.y - phi0.sin() * delta.x) / r;
    let exact = azimuth(r0 + delta, Vec2::new(0.0, 0.0))?;
    Ok((lin, exact))
}

impl Lattice {
    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn lattice_constant(&self) -> f64 {
        match self.kind {
            LatticeKind::Ring { a, .. } | LatticeKind::Square { a, .. } | LatticeKind::Dimer { a } => a,
        }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    pub fn beam_center(&self) -> Vec2 {
        self.beam_center
    }

    pub fn link_midpoint(&self, link: Link) -> Vec2 {
        (self.sites[link.g].position + self.sites[link.e].position) * 0.5
    }

    pub fn ring_radius(&self) -> Option<f64> {
        match self.kind {
            LatticeKind::Ring { sites, a } => Some(sites as f64 * a / (2.0 * PI)),
            _ => None,
        }
    }

    /// Whether `i` and `j` share a bond.
    pub fn are_linked(&self, i: usize, j: usize) -> bool {
        if i >= self.len() || j >= self.len() || self.sites[i].sublattice == self.sites[j].sublattice {
            return false;
        }
        let l = canonical(&self.sites, i, j);
        self.links.contains(&l)
    }

    /// Neighbour lists in ascending index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for l in &self.links {
            adj[l.g].push(l.e);
            adj[l.e].push(l.g);
        }
        for v in &mut adj {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }

    /// Breadth-first hop distance from `from`; `usize::MAX` for unreachable sites.
    pub fn graph_distances(&self, from: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        dist
    }

    /// Site diametrically opposite `site` on a ring.
    pub fn antipode(&self, site: usize) -> Result<usize> {
        match self.kind {
            LatticeKind::Ring { sites, .. } if site < sites => Ok((site + sites / 2) % sites),
            LatticeKind::Ring { .. } => Err(Error::invalid("lattice_geometry", "site", format!("site {site} is out of range"))),
            _ => Err(Error::unsupported("lattice_geometry", "antipodal site is defined for ring lattices only")),
        }
    }

    /// Square-lattice site at `(row, col)`.
    pub fn square_index(&self, row: usize, col: usize) -> Option<usize> {
        match self.kind {
            LatticeKind::Square { side, .. } if row < side && col < side => Some(row * side + col),
            _ => None,
        }
    }

    /// Square site reflected through the beam centre, rounded to the grid.
    pub fn point_reflection(&self, site: usize) -> Option<usize> {
        let LatticeKind::Square { side, a } = self.kind else {
            return None;
        };
        let p = self.sites.get(site)?.position;
        let q = self.beam_center * 2.0 - p;
        let col = (q.x / a).round();
        let row = (q.y / a).round();
        if col < 0.0 || row < 0.0 || col >= side as f64 || row >= side as f64 {
            return None;
        }
        self.square_index(row as usize, col as usize)
    }

    /// Plaquette whose centre lies closest to the beam axis.
    pub fn central_plaquette(&self) -> Option<&Plaquette> {
        let c = self.beam_center;
        self.plaquettes.iter().min_by(|p, q| {
            let dp = (self.plaquette_center(p) - c).norm();
            let dq = (self.plaquette_center(q) - c).norm();
            dp.total_cmp(&dq)
        })
    }

    pub fn plaquette_center(&self, p: &Plaquette) -> Vec2 {
        let s = p.sites.iter().fold(Vec2::default(), |acc, &i| acc + self.sites[i].position);
        s * 0.25
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn small_ring() {
        let lat = build_ring(4, 1.0).unwrap();
        assert_eq!(lat.len(), 4);
        let want = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
        for (s, w) in lat.sites().iter().zip(want) {
            assert!((s.position.norm() - 2.0 / PI).abs() < 1e-15);
            assert!((s.azimuth - w).abs() < 1e-15, "{} vs {}", s.azimuth, w);
        }
        let subs: Vec<_> = lat.sites().iter().map(|s| s.sublattice).collect();
        assert_eq!(subs, [Sublattice::G, Sublattice::E, Sublattice::G, Sublattice::E]);
        assert!(lat.plaquettes().is_empty());
    }

    #[test]
    fn hundred_site_ring() {
        let lat = build_ring(100, 1.0).unwrap();
        assert_eq!(lat.len(), 100);
        assert_eq!(lat.links().len(), 100);
        for l in lat.links() {
            assert_eq!(lat.sites()[l.g].sublattice, Sublattice::G);
            assert_eq!(lat.sites()[l.e].sublattice, Sublattice::E);
        }
        assert_eq!(lat.antipode(0).unwrap(), 50);
        assert_eq!(lat.antipode(75).unwrap(), 25);
    }

    #[test]
    fn odd_ring_rejected() {
        let err = build_ring(5, 1.0).unwrap_err();
        assert!(err.to_string().contains("alternate"), "{err}");
        assert!(build_ring(2, 1.0).is_err());
        assert!(build_ring(6, -1.0).is_err());
    }

    #[test]
    fn ring_closure() {
        for n in [4, 10, 100, 512] {
            let lat = build_ring(n, 0.7).unwrap();
            let total: f64 = (0..n)
                .map(|j| {
                    let a = lat.sites()[j].azimuth;
                    let b = lat.sites()[(j + 1) % n].azimuth;
                    principal_angle(b - a)
                })
                .sum();
            assert!((total - 2.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn square_counts() {
        let l2 = build_square(2, 1.0, Vec2::default()).unwrap();
        assert_eq!((l2.len(), l2.links().len(), l2.plaquettes().len()), (4, 4, 1));
        let l40 = build_square(40, 1.0, Vec2::default()).unwrap();
        assert_eq!((l40.len(), l40.links().len(), l40.plaquettes().len()), (1600, 3120, 1521));
        assert_eq!(l40.beam_center(), Vec2::new(19.5, 19.5));
        let l3 = build_square(3, 1.0, Vec2::default()).unwrap();
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(l3.sites()[l3.square_index(r, c).unwrap()].sublattice, Sublattice::G);
        }
        assert!(build_square(1, 1.0, Vec2::default()).is_err());
    }

    #[test]
    fn checkerboard_and_plaquettes_alternate() {
        let lat = build_square(9, 1.0, Vec2::new(0.1, -0.2)).unwrap();
        for l in lat.links() {
            assert_ne!(lat.sites()[l.g].sublattice, lat.sites()[l.e].sublattice);
        }
        for p in lat.plaquettes() {
            for k in 0..4 {
                let a = lat.sites()[p.sites[k]].sublattice;
                let b = lat.sites()[p.sites[(k + 1) % 4]].sublattice;
                assert_ne!(a, b);
                assert!(lat.are_linked(p.sites[k], p.sites[(k + 1) % 4]));
            }
        }
    }

    #[test]
    fn azimuth_examples() {
        let o = Vec2::new(0.0, 0.0);
        assert_eq!(azimuth(Vec2::new(1.0, 0.0), o).unwrap(), 0.0);
        assert_eq!(azimuth(Vec2::new(0.0, -1.0), o).unwrap(), -FRAC_PI_2);
        let plus = azimuth(Vec2::new(-1.0, 0.0), o).unwrap();
        let minus = azimuth(Vec2::new(-1.0, -0.0), o).unwrap();
        let tiny = azimuth(Vec2::new(-1.0, -1e-300), o).unwrap();
        for t in [plus, minus, tiny] {
            assert!(t > -PI && t <= PI);
        }
        assert_eq!(minus, PI);
        assert!(azimuth(o, o).is_err());
    }

    #[test]
    fn linearized_examples() {
        let (lin, exact) = linearized_azimuth(Vec2::new(10.0, 0.0), Vec2::new(0.5, 0.5)).unwrap();
        assert!((lin - 0.05).abs() < 1e-15);
        assert!((exact - 0.5f64.atan2(10.5)).abs() < 1e-15);
        assert!((exact - 0.04758).abs() < 1e-5);

        let (lin, _) = linearized_azimuth(Vec2::new(10.0, 0.0), Vec2::new(0.0, 0.0)).unwrap();
        assert_eq!(lin, 0.0);

        let (lin, _) = linearized_azimuth(Vec2::new(0.0, 10.0), Vec2::new(0.5, 0.0)).unwrap();
        assert!((lin - (FRAC_PI_2 - 0.05)).abs() < 1e-15);

        assert!(linearized_azimuth(Vec2::new(0.0, 0.0), Vec2::new(0.5, 0.0)).is_err());
    }

    #[test]
    fn linearized_error_is_second_order() {
        let worst = |r0: f64| {
            let mut m: f64 = 0.0;
            for k in 0..64 {
                let phi0 = 2.0 * PI * k as f64 / 64.0;
                let c = Vec2::new(r0 * phi0.cos(), r0 * phi0.sin());
                for (dx, dy) in [(0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5)] {
                    let (lin, exact) = linearized_azimuth(c, Vec2::new(dx, dy)).unwrap();
                    m = m.max(principal_angle(lin - exact).abs());
                }
            }
            m
        };
        let (e5, e10, e20) = (worst(5.0), worst(10.0), worst(20.0));
        // quadratic scaling: halving a/r0 divides the error by ~4
        assert!(e5 / e10 > 3.5 && e5 / e10 < 4.5, "{e5} {e10}");
        assert!(e10 / e20 > 3.5 && e10 / e20 < 4.5, "{e10} {e20}");
        assert!(e5 < 0.5 / 25.0);
    }

    #[test]
    fn graph_distance_on_ring() {
        let lat = build_ring(10, 1.0).unwrap();
        let d = lat.graph_distances(0);
        assert_eq!(d, vec![0, 1, 2, 3, 4, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn square_point_reflection() {
        let lat = build_square(40, 1.0, Vec2::default()).unwrap();
        let s = lat.square_index(10, 20).unwrap();
        assert_eq!(lat.point_reflection(s), lat.square_index(29, 19));
        let c = lat.central_plaquette().unwrap();
        assert_eq!((c.row, c.col), (19, 19));
    }

    #[test]
    fn principal_angle_range() {
        assert_eq!(principal_angle(-PI), PI);
        assert_eq!(principal_angle(PI), PI);
        assert!((principal_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((principal_angle(-5.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }
}
