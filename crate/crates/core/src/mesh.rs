//! Staggered discretization of the box (Yee edges/faces) and of the 1-D slab.
//!
//! Field families and their locations:
//! - `E`: one scalar per edge (box) or three components per node (slab).
//!   Tangential edges on PEC faces are constrained to zero.
//! - `B`: one scalar per face (box) or `B_y, B_z` per half node (slab).
//! - `J_s`: a full 3-vector per site. Box sites are the edges; slab sites are
//!   the nodes. `R` reconstructs site vectors from edge values and
//!   `K* = W_E^{-1} R^T W_J` feeds currents back, so the coupling is
//!   energy-neutral by construction.

use serde::{Deserialize, Serialize};

use crate::linalg::Csr;
use crate::stix::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceKind {
    Pec,
    SilverMuller,
}

/// Boundary tags ordered `x_lo, x_hi, y_lo, y_hi, z_lo, z_hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryTags(pub [FaceKind; 6]);

impl BoundaryTags {
    pub fn all(kind: FaceKind) -> Self {
        BoundaryTags([kind; 6])
    }

    pub fn get(&self, axis: usize, side: usize) -> FaceKind {
        self.0[2 * axis + side]
    }

    pub fn with(mut self, axis: usize, side: usize, kind: FaceKind) -> Self {
        self.0[2 * axis + side] = kind;
        self
    }

    pub fn face_name(axis: usize, side: usize) -> String {
        format!("{}_{}", ["x", "y", "z"][axis], ["lo", "hi"][side])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Box,
    Slab,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub eps0: f64,
    pub c: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { eps0: 1.0, c: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub extents: [f64; 3],
    pub cells: [usize; 3],
}

impl Grid {
    pub fn spacing(&self) -> [f64; 3] {
        [
            self.extents[0] / self.cells[0] as f64,
            self.extents[1] / self.cells[1] as f64,
            self.extents[2] / self.cells[2] as f64,
        ]
    }

    pub fn min_spacing(&self) -> f64 {
        let h = self.spacing();
        match self.kind {
            GridKind::Box => h[0].min(h[1]).min(h[2]),
            GridKind::Slab => h[0],
        }
    }
}

/// A tangential boundary edge on a Silver-Muller face, paired with the
/// interior tangential face carrying `B` along `s = t x n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmEntry {
    pub edge: usize,
    pub axis: usize,
    pub side: usize,
    pub s_axis: usize,
    pub s_sign: f64,
    pub face: usize,
    /// Closure coefficient `2c/h_n`.
    pub kappa: f64,
    /// Boundary area associated with the edge.
    pub area: f64,
    pub pos: Vec3,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub grid: Grid,
    pub bc: BoundaryTags,
    pub consts: Constants,
    pub n_edges: usize,
    pub n_faces: usize,
    pub n_sites: usize,
    pub edge_axis: Vec<usize>,
    pub edge_pos: Vec<Vec3>,
    pub edge_w: Vec<f64>,
    pub edge_free: Vec<bool>,
    pub face_axis: Vec<usize>,
    pub face_pos: Vec<Vec3>,
    pub face_w: Vec<f64>,
    pub site_pos: Vec<Vec3>,
    pub site_w: Vec<f64>,
    /// Faces x edges.
    pub curl: Csr,
    /// Edges x faces, `W_E^{-1} C^T W_F` with constrained rows removed.
    pub curl_star: Csr,
    /// `3 n_sites` x edges.
    pub recon: Csr,
    /// Edges x `3 n_sites`.
    pub feedback: Csr,
    /// Weighted divergence of edge fields, rows restricted to interior nodes.
    pub div_e: Csr,
    pub div_e_nodes: Vec<usize>,
    pub n_nodes: usize,
    /// Cells x faces.
    pub div_b: Csr,
    /// Faces lying on PEC walls with normal along the wall normal.
    pub pec_normal_faces: Vec<usize>,
    pub sm: Vec<SmEntry>,
    /// Per-edge sum of closure coefficients.
    pub kappa: Vec<f64>,
}

struct BoxIndex {
    n: [usize; 3],
    edge_off: [usize; 4],
    face_off: [usize; 4],
}

impl BoxIndex {
    fn new(n: [usize; 3]) -> Self {
        let mut edge_off = [0; 4];
        let mut face_off = [0; 4];
        for a in 0..3 {
            let mut ce = 1;
            let mut cf = 1;
            for d in 0..3 {
                ce *= if d == a { n[d] } else { n[d] + 1 };
                cf *= if d == a { n[d] + 1 } else { n[d] };
            }
            edge_off[a + 1] = edge_off[a] + ce;
            face_off[a + 1] = face_off[a] + cf;
        }
        BoxIndex { n, edge_off, face_off }
    }

    fn edge_dims(&self, a: usize) -> [usize; 3] {
        let mut d = [0; 3];
        for k in 0..3 {
            d[k] = if k == a { self.n[k] } else { self.n[k] + 1 };
        }
        d
    }

    fn face_dims(&self, a: usize) -> [usize; 3] {
        let mut d = [0; 3];
        for k in 0..3 {
            d[k] = if k == a { self.n[k] + 1 } else { self.n[k] };
        }
        d
    }

    fn edge(&self, a: usize, ijk: [usize; 3]) -> usize {
        let d = self.edge_dims(a);
        self.edge_off[a] + (ijk[0] * d[1] + ijk[1]) * d[2] + ijk[2]
    }

    fn face(&self, a: usize, ijk: [usize; 3]) -> usize {
        let d = self.face_dims(a);
        self.face_off[a] + (ijk[0] * d[1] + ijk[1]) * d[2] + ijk[2]
    }

    fn node(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * (self.n[1] + 1) + ijk[1]) * (self.n[2] + 1) + ijk[2]
    }

    fn cell(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n[1] + ijk[1]) * self.n[2] + ijk[2]
    }

    fn unravel(d: [usize; 3], mut r: usize) -> [usize; 3] {
        let k = r % d[2];
        r /= d[2];
        let j = r % d[1];
        [r / d[1], j, k]
    }
}

fn dual(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i == n {
        0.5 * h
    } else {
        h
    }
}

impl Mesh {
    pub fn box3(extents: [f64; 3], cells: [usize; 3], bc: BoundaryTags, consts: Constants) -> Mesh {
        assert!(cells.iter().all(|&n| n >= 1), "grid needs at least one cell per axis");
        let grid = Grid { kind: GridKind::Box, extents, cells };
        let h = grid.spacing();
        let ix = BoxIndex::new(cells);
        let n_edges = ix.edge_off[3];
        let n_faces = ix.face_off[3];
        let n_nodes = (cells[0] + 1) * (cells[1] + 1) * (cells[2] + 1);

        let mut edge_axis = vec![0; n_edges];
        let mut edge_pos = vec![[0.0; 3]; n_edges];
        let mut edge_w = vec![0.0; n_edges];
        let mut edge_free = vec![true; n_edges];
        let mut kappa = vec![0.0; n_edges];
        let mut sm = Vec::new();
        for a in 0..3 {
            let d = ix.edge_dims(a);
            for r in 0..d[0] * d[1] * d[2] {
                let ijk = BoxIndex::unravel(d, r);
                let e = ix.edge_off[a] + r;
                edge_axis[e] = a;
                let mut w = 1.0;
                for k in 0..3 {
                    if k == a {
                        edge_pos[e][k] = (ijk[k] as f64 + 0.5) * h[k];
                        w *= h[k];
                    } else {
                        edge_pos[e][k] = ijk[k] as f64 * h[k];
                        w *= dual(ijk[k], cells[k], h[k]);
                    }
                }
                edge_w[e] = w;
                for k in (0..3).filter(|&k| k != a) {
                    for side in 0..2 {
                        let on = if side == 0 { ijk[k] == 0 } else { ijk[k] == cells[k] };
                        if on && bc.get(k, side) == FaceKind::Pec {
                            edge_free[e] = false;
                        }
                    }
                }
            }
        }
        // Silver-Muller entries on free tangential boundary edges
        for e in 0..n_edges {
            if !edge_free[e] {
                continue;
            }
            let a = edge_axis[e];
            let d = ix.edge_dims(a);
            let ijk = BoxIndex::unravel(d, e - ix.edge_off[a]);
            for k in (0..3).filter(|&k| k != a) {
                for side in 0..2 {
                    let on = if side == 0 { ijk[k] == 0 } else { ijk[k] == cells[k] };
                    if !(on && bc.get(k, side) == FaceKind::SilverMuller) {
                        continue;
                    }
                    let mut nvec = [0.0; 3];
                    nvec[k] = if side == 0 { -1.0 } else { 1.0 };
                    let mut t = [0.0; 3];
                    t[a] = 1.0;
                    let s = crate::stix::cross(t, nvec);
                    let s_axis = 3 - a - k;
                    let s_sign = s[s_axis];
                    let mut f = ijk;
                    f[k] = if side == 0 { 0 } else { cells[k] - 1 };
                    let face = ix.face(s_axis, f);
                    let kap = 2.0 * consts.c / h[k];
                    kappa[e] += kap;
                    sm.push(SmEntry {
                        edge: e,
                        axis: k,
                        side,
                        s_axis,
                        s_sign,
                        face,
                        kappa: kap,
                        area: 2.0 * edge_w[e] / h[k],
                        pos: edge_pos[e],
                    });
                }
            }
        }

        let mut face_axis = vec![0; n_faces];
        let mut face_pos = vec![[0.0; 3]; n_faces];
        let mut face_w = vec![0.0; n_faces];
        let mut pec_normal_faces = Vec::new();
        let mut curl_t = Vec::new();
        for a in 0..3 {
            let d = ix.face_dims(a);
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            for r in 0..d[0] * d[1] * d[2] {
                let ijk = BoxIndex::unravel(d, r);
                let f = ix.face_off[a] + r;
                face_axis[f] = a;
                let mut w = 1.0;
                for k in 0..3 {
                    if k == a {
                        face_pos[f][k] = ijk[k] as f64 * h[k];
                        w *= dual(ijk[k], cells[k], h[k]);
                    } else {
                        face_pos[f][k] = (ijk[k] as f64 + 0.5) * h[k];
                        w *= h[k];
                    }
                }
                face_w[f] = w;
                if (ijk[a] == 0 && bc.get(a, 0) == FaceKind::Pec) || (ijk[a] == cells[a] && bc.get(a, 1) == FaceKind::Pec) {
                    pec_normal_faces.push(f);
                }
                // (curl E)_a = d_b E_c - d_c E_b
                let mut lo = ijk;
                let mut hi = ijk;
                hi[b] += 1;
                curl_t.push((f, ix.edge(c, hi), 1.0 / h[b]));
                curl_t.push((f, ix.edge(c, lo), -1.0 / h[b]));
                lo = ijk;
                hi = ijk;
                hi[c] += 1;
                curl_t.push((f, ix.edge(b, hi), -1.0 / h[c]));
                curl_t.push((f, ix.edge(b, lo), 1.0 / h[c]));
            }
        }
        let curl = Csr::from_triplets(n_faces, n_edges, &curl_t);

        // sites = edges, each carrying a full vector
        let n_sites = n_edges;
        let site_pos = edge_pos.clone();
        let site_w: Vec<f64> = edge_w.iter().map(|w| w / 3.0).collect();
        let mut rt = Vec::new();
        for e in 0..n_edges {
            let a = edge_axis[e];
            let ijk = BoxIndex::unravel(ix.edge_dims(a), e - ix.edge_off[a]);
            rt.push((3 * e + a, e, 1.0));
            for b in (0..3).filter(|&b| b != a) {
                let mut nb = Vec::new();
                for da in 0..2 {
                    for db in 0..2usize {
                        let mut q = ijk;
                        q[a] = ijk[a] + da;
                        if db == 0 {
                            if ijk[b] == 0 {
                                continue;
                            }
                            q[b] = ijk[b] - 1;
                        } else {
                            if ijk[b] >= cells[b] {
                                continue;
                            }
                            q[b] = ijk[b];
                        }
                        nb.push(ix.edge(b, q));
                    }
                }
                let wgt = 1.0 / nb.len() as f64;
                for q in nb {
                    rt.push((3 * e + b, q, wgt));
                }
            }
        }
        let rt: Vec<_> = rt.into_iter().filter(|t| edge_free[t.1]).collect();
        let recon = Csr::from_triplets(3 * n_sites, n_edges, &rt);

        // gradient nodes -> edges, divergence = -W_N^{-1} G^T W_E
        let mut node_w = vec![0.0; n_nodes];
        let mut interior = Vec::new();
        for i in 0..=cells[0] {
            for j in 0..=cells[1] {
                for k in 0..=cells[2] {
                    let p = [i, j, k];
                    let nd = ix.node(p);
                    node_w[nd] = (0..3).map(|d| dual(p[d], cells[d], h[d])).product();
                    if (0..3).all(|d| p[d] > 0 && p[d] < cells[d]) {
                        interior.push(nd);
                    }
                }
            }
        }
        let mut gt = Vec::new();
        for e in 0..n_edges {
            let a = edge_axis[e];
            let ijk = BoxIndex::unravel(ix.edge_dims(a), e - ix.edge_off[a]);
            let mut hi = ijk;
            hi[a] += 1;
            gt.push((e, ix.node(hi), 1.0 / h[a]));
            gt.push((e, ix.node(ijk), -1.0 / h[a]));
        }
        let grad = Csr::from_triplets(n_edges, n_nodes, &gt);
        let mut row_of = vec![usize::MAX; n_nodes];
        for (r, &nd) in interior.iter().enumerate() {
            row_of[nd] = r;
        }
        let mut dt_ = Vec::new();
        for e in 0..n_edges {
            for (nd, g) in grad.row(e) {
                if row_of[nd] != usize::MAX {
                    dt_.push((row_of[nd], e, -g * edge_w[e] / node_w[nd]));
                }
            }
        }
        let div_e = Csr::from_triplets(interior.len(), n_edges, &dt_);

        let n_cells = cells[0] * cells[1] * cells[2];
        let mut db = Vec::new();
        for i in 0..cells[0] {
            for j in 0..cells[1] {
                for k in 0..cells[2] {
                    let p = [i, j, k];
                    let cidx = ix.cell(p);
                    for a in 0..3 {
                        let mut hi = p;
                        hi[a] += 1;
                        db.push((cidx, ix.face(a, hi), 1.0 / h[a]));
                        db.push((cidx, ix.face(a, p), -1.0 / h[a]));
                    }
                }
            }
        }
        let div_b = Csr::from_triplets(n_cells, n_faces, &db);

        let mut m = Mesh {
            grid,
            bc,
            consts,
            n_edges,
            n_faces,
            n_sites,
            edge_axis,
            edge_pos,
            edge_w,
            edge_free,
            face_axis,
            face_pos,
            face_w,
            site_pos,
            site_w,
            curl,
            curl_star: Csr::identity(0),
            recon,
            feedback: Csr::identity(0),
            div_e,
            div_e_nodes: interior,
            n_nodes,
            div_b,
            pec_normal_faces,
            sm,
            kappa,
        };
        m.finish();
        m
    }

    /// 1-D slab on `[0, length]` with `n` cells; only the `x_lo`/`x_hi` tags matter.
    pub fn slab(length: f64, n: usize, lo: FaceKind, hi: FaceKind, consts: Constants) -> Mesh {
        assert!(n >= 1);
        let grid = Grid { kind: GridKind::Slab, extents: [length, 1.0, 1.0], cells: [n, 1, 1] };
        let bc = BoundaryTags([lo, hi, FaceKind::Pec, FaceKind::Pec, FaceKind::Pec, FaceKind::Pec]);
        let h = length / n as f64;
        let n_nodes = n + 1;
        let n_edges = 3 * n_nodes;
        let n_faces = 2 * n;
        let mut edge_axis = vec![0; n_edges];
        let mut edge_pos = vec![[0.0; 3]; n_edges];
        let mut edge_w = vec![0.0; n_edges];
        let mut edge_free = vec![true; n_edges];
        for i in 0..n_nodes {
            for a in 0..3 {
                let e = 3 * i + a;
                edge_axis[e] = a;
                edge_pos[e] = [i as f64 * h, 0.0, 0.0];
                edge_w[e] = dual(i, n, h);
                if a > 0 && ((i == 0 && lo == FaceKind::Pec) || (i == n && hi == FaceKind::Pec)) {
                    edge_free[e] = false;
                }
            }
        }
        // faces: 2i -> B_y(i+1/2), 2i+1 -> B_z(i+1/2)
        let mut face_axis = vec![0; n_faces];
        let mut face_pos = vec![[0.0; 3]; n_faces];
        let face_w = vec![h; n_faces];
        let mut ct = Vec::new();
        for i in 0..n {
            let (fy, fz) = (2 * i, 2 * i + 1);
            face_axis[fy] = 1;
            face_axis[fz] = 2;
            face_pos[fy] = [(i as f64 + 0.5) * h, 0.0, 0.0];
            face_pos[fz] = face_pos[fy];
            ct.push((fy, 3 * (i + 1) + 2, -1.0 / h));
            ct.push((fy, 3 * i + 2, 1.0 / h));
            ct.push((fz, 3 * (i + 1) + 1, 1.0 / h));
            ct.push((fz, 3 * i + 1, -1.0 / h));
        }
        let curl = Csr::from_triplets(n_faces, n_edges, &ct);
        let mut kappa = vec![0.0; n_edges];
        let mut sm = Vec::new();
        for (side, kind) in [(0usize, lo), (1usize, hi)] {
            if kind != FaceKind::SilverMuller {
                continue;
            }
            let i = if side == 0 { 0 } else { n };
            let cell = if side == 0 { 0 } else { n - 1 };
            let nx = if side == 0 { -1.0 } else { 1.0 };
            for a in 1..3 {
                let mut t = [0.0; 3];
                t[a] = 1.0;
                let s = crate::stix::cross(t, [nx, 0.0, 0.0]);
                let s_axis = 3 - a;
                let e = 3 * i + a;
                let kap = 2.0 * consts.c / h;
                kappa[e] += kap;
                sm.push(SmEntry {
                    edge: e,
                    axis: 0,
                    side,
                    s_axis,
                    s_sign: s[s_axis],
                    face: 2 * cell + (s_axis - 1),
                    kappa: kap,
                    area: 1.0,
                    pos: edge_pos[e],
                });
            }
        }
        let rt: Vec<_> = (0..n_edges).filter(|&e| edge_free[e]).map(|e| (e, e, 1.0)).collect();
        let recon = Csr::from_triplets(n_edges, n_edges, &rt);
        let site_pos = (0..n_nodes).map(|i| [i as f64 * h, 0.0, 0.0]).collect();
        let site_w = (0..n_nodes).map(|i| dual(i, n, h)).collect();
        let mut m = Mesh {
            grid,
            bc,
            consts,
            n_edges,
            n_faces,
            n_sites: n_nodes,
            edge_axis,
            edge_pos,
            edge_w,
            edge_free,
            face_axis,
            face_pos,
            face_w,
            site_pos,
            site_w,
            curl,
            curl_star: Csr::identity(0),
            recon,
            feedback: Csr::identity(0),
            div_e: Csr::from_triplets(0, n_edges, &[]),
            div_e_nodes: Vec::new(),
            n_nodes,
            div_b: Csr::from_triplets(0, n_faces, &[]),
            pec_normal_faces: Vec::new(),
            sm,
            kappa,
        };
        m.finish();
        m
    }

    fn finish(&mut self) {
        let we_inv: Vec<f64> = (0..self.n_edges)
            .map(|e| if self.edge_free[e] { 1.0 / self.edge_w[e] } else { 0.0 })
            .collect();
        self.curl_star = self.curl.transpose().scaled(&we_inv, &self.face_w);
        let wj: Vec<f64> = (0..3 * self.n_sites).map(|r| self.site_w[r / 3]).collect();
        self.feedback = self.recon.transpose().scaled(&we_inv, &wj);
    }

    pub fn h(&self) -> [f64; 3] {
        self.grid.spacing()
    }

    pub fn is_slab(&self) -> bool {
        self.grid.kind == GridKind::Slab
    }

    /// Indices of the free edge unknowns, in order.
    pub fn free_edges(&self) -> Vec<usize> {
        (0..self.n_edges).filter(|&e| self.edge_free[e]).collect()
    }

    pub fn has_silver_muller(&self) -> bool {
        !self.sm.is_empty()
    }

    /// Vacuum Courant bound.
    pub fn cfl_max_dt(&self) -> f64 {
        cfl_max_dt(&self.grid, self.consts.c)
    }

    pub fn curl_e<T: crate::linalg::Scalar>(&self, e: &[T]) -> Vec<T> {
        self.curl.apply(e)
    }

    pub fn curl_b<T: crate::linalg::Scalar>(&self, b: &[T]) -> Vec<T> {
        self.curl_star.apply(b)
    }

    /// Edge-located discrete gradient of a nodal potential (box only).
    pub fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.grid.cells;
        let h = self.h();
        let ix = BoxIndex::new(n);
        let mut out = vec![0.0; self.n_edges];
        for e in 0..self.n_edges {
            let a = self.edge_axis[e];
            let ijk = BoxIndex::unravel(ix.edge_dims(a), e - ix.edge_off[a]);
            let mut hi = ijk;
            hi[a] += 1;
            out[e] = (phi[ix.node(hi)] - phi[ix.node(ijk)]) / h[a];
        }
        out
    }

    pub fn node_positions(&self) -> Vec<Vec3> {
        let n = self.grid.cells;
        let h = self.h();
        let mut p = Vec::with_capacity(self.n_nodes);
        for i in 0..=n[0] {
            for j in 0..=n[1] {
                for k in 0..=n[2] {
                    p.push([i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]]);
                }
            }
        }
        p
    }
}

pub fn cfl_max_dt(grid: &Grid, c: f64) -> f64 {
    let h = grid.spacing();
    let s = match grid.kind {
        GridKind::Box => 1.0 / (h[0] * h[0]) + 1.0 / (h[1] * h[1]) + 1.0 / (h[2] * h[2]),
        GridKind::Slab => 1.0 / (h[0] * h[0]),
    };
    1.0 / (c * s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pec_box(n: usize) -> Mesh {
        Mesh::box3([1.0, 1.2, 0.9], [n, n + 1, n - 1], BoundaryTags::all(FaceKind::Pec), Constants::default())
    }

    fn masked_random(m: &Mesh, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..m.n_edges).map(|e| if m.edge_free[e] { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()
    }

    #[test]
    fn curl_of_gradient_vanishes() {
        // dyadic spacings and integer potentials keep every operation exact
        let m = Mesh::box3([1.0, 2.0, 0.5], [4, 4, 4], BoundaryTags::all(FaceKind::Pec), Constants::default());
        let phi: Vec<f64> = (0..m.n_nodes).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let e = m.gradient(&phi);
        assert!(m.curl_e(&e).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn div_of_curl_vanishes() {
        let m = pec_box(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = masked_random(&m, &mut rng);
        let b = m.curl_e(&e);
        let d = m.div_b.apply(&b);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn uniform_b_has_zero_curl() {
        let m = pec_box(3);
        let b: Vec<f64> = m.face_axis.iter().map(|&a| [0.3, -1.0, 2.0][a]).collect();
        assert!(m.curl_b(&b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn curl_adjointness() {
        for m in [pec_box(3), Mesh::slab(1.0, 7, FaceKind::Pec, FaceKind::Pec, Constants::default())] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let u = masked_random(&m, &mut rng);
            let v: Vec<f64> = (0..m.n_faces).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cu = m.curl_e(&u);
            let cv = m.curl_b(&v);
            let lhs: f64 = (0..m.n_faces).map(|f| m.face_w[f] * cu[f] * v[f]).sum();
            let rhs: f64 = (0..m.n_edges).map(|e| m.edge_w[e] * u[e] * cv[e]).sum();
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn divergence_of_curl_star_vanishes_inside() {
        let m = pec_box(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..m.n_faces).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = m.div_e.apply(&m.curl_b(&b));
        assert!(d.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn silver_muller_entries() {
        let bc = BoundaryTags::all(FaceKind::Pec).with(0, 1, FaceKind::SilverMuller);
        let m = Mesh::box3([1.0; 3], [3; 3], bc, Constants::default());
        // tangential edges on x = 1 not touching a PEC face: 2 * 2 * 3
        assert_eq!(m.sm.len(), 12);
        for s in &m.sm {
            assert_eq!(m.face_axis[s.face], s.s_axis);
            assert!((m.face_pos[s.face][0] - (1.0 - 1.0 / 6.0)).abs() < 1e-14);
        }
        let slab = Mesh::slab(1.0, 4, FaceKind::SilverMuller, FaceKind::SilverMuller, Constants::default());
        assert_eq!(slab.sm.len(), 4);
        let hi_y = slab.sm.iter().find(|s| s.side == 1 && slab.edge_axis[s.edge] == 1).unwrap();
        assert_eq!((hi_y.s_axis, hi_y.s_sign), (2, -1.0));
    }

    #[test]
    fn site_weights_cover_the_volume_once_per_component() {
        let m = pec_box(3);
        let v: f64 = m.site_w.iter().sum();
        assert!((v - 1.0 * 1.2 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn cfl_bound() {
        let g = Grid { kind: GridKind::Box, extents: [1.0; 3], cells: [10; 3] };
        assert!((cfl_max_dt(&g, 1.0) - 0.1 / 3f64.sqrt()).abs() < 1e-15);
    }
}
