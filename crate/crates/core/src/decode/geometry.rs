use super::{offset_u, OffsetU};
use crate::mesh::Vec3;

/// Geometry of one Gaussian face on one set of deformed vertices.
#[derive(Debug, Clone)]
pub(super) struct Geo {
    pub v: [Vec3; 3],
    pub nv: [Vec3; 3],
    pub q: [Vec3; 3],
    /// `q1 - q0`, `q2 - q1`, `q0 - q2`
    pub edge: [Vec3; 3],
    pub e: [f64; 3],
    pub root_edge: [Vec3; 3],
    pub root_e: [f64; 3],
    /// Mean root-face edge length.
    pub ep: f64,
    /// Mean Gaussian-face edge length.
    pub eg: f64,
    pub uu: f64,
    pub x0: Vec3,
    pub nraw: Vec3,
    pub n: Vec3,
}

#[derive(Debug, Clone)]
pub(super) struct GeoGrad {
    pub corners: [Vec3; 3],
    pub bary: Vec3,
    pub v: [Vec3; 3],
    pub nv: [Vec3; 3],
}

fn cycle(p: &[Vec3; 3]) -> [Vec3; 3] {
    [p[1] - p[0], p[2] - p[1], p[0] - p[2]]
}

fn unit_or_zero(x: Vec3, len: f64) -> Vec3 {
    if len > 0.0 {
        x / len
    } else {
        Vec3::zeros()
    }
}

impl Geo {
    pub fn new(corners: &[Vec3; 3], bary: Vec3, v: [Vec3; 3], nv: [Vec3; 3], mode: OffsetU) -> Geo {
        let q = corners.map(|c| v[0] * c.x + v[1] * c.y + v[2] * c.z);
        let edge = cycle(&q);
        let e = edge.map(|x| x.norm());
        let root_edge = cycle(&v);
        let root_e = root_edge.map(|x| x.norm());
        let ep = root_e.iter().sum::<f64>() / 3.0;
        let eg = e.iter().sum::<f64>() / 3.0;
        let uu = if eg > 0.0 { offset_u(mode, ep, eg) } else { 0.0 };
        let x0 = v[0] * bary.x + v[1] * bary.y + v[2] * bary.z;
        let nraw = nv[0] * bary.x + nv[1] * bary.y + nv[2] * bary.z;
        let len = nraw.norm();
        let n = if len > 0.0 { nraw / len } else { Vec3::z() };
        Geo {
            v,
            nv,
            q,
            edge,
            e,
            root_edge,
            root_e,
            ep,
            eg,
            uu,
            x0,
            nraw,
            n,
        }
    }

    /// Pulls gradients on the Gaussian-face edge vectors and lengths, the
    /// root mean edge length, `u`, the surface point and the normal back to
    /// corner barycentrics, the Gaussian barycentric, vertices and vertex normals.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        corners: &[Vec3; 3],
        bary: Vec3,
        g_edge: [Vec3; 3],
        mut g_e: [f64; 3],
        mut g_ep: f64,
        g_uu: f64,
        g_x0: Vec3,
        g_n: Vec3,
    ) -> GeoGrad {
        if self.eg > 0.0 {
            let gq = g_uu * (1.0 - self.uu * self.uu);
            g_ep += gq / self.eg;
            let g_eg = -gq * self.ep / (self.eg * self.eg);
            for x in g_e.iter_mut() {
                *x += g_eg / 3.0;
            }
        }
        let mut out = self.backward_edges(corners, g_edge, g_e);
        for i in 0..3 {
            let g = unit_or_zero(self.root_edge[i], self.root_e[i]) * (g_ep / 3.0);
            out.v[(i + 1) % 3] += g;
            out.v[i] -= g;
        }
        for j in 0..3 {
            out.bary[j] += g_x0.dot(&self.v[j]);
            out.v[j] += g_x0 * bary[j];
        }
        let len = self.nraw.norm();
        if len > 0.0 {
            let g_raw = (g_n - self.n * self.n.dot(&g_n)) / len;
            for j in 0..3 {
                out.bary[j] += g_raw.dot(&self.nv[j]);
                out.nv[j] += g_raw * bary[j];
            }
        }
        out
    }

    pub fn backward_edge_lengths(&self, corners: &[Vec3; 3], g_e: [f64; 3]) -> GeoGrad {
        self.backward_edges(corners, [Vec3::zeros(); 3], g_e)
    }

    fn backward_edges(&self, corners: &[Vec3; 3], mut g_edge: [Vec3; 3], g_e: [f64; 3]) -> GeoGrad {
        for i in 0..3 {
            g_edge[i] += unit_or_zero(self.edge[i], self.e[i]) * g_e[i];
        }
        let mut gq = [Vec3::zeros(); 3];
        for i in 0..3 {
            gq[(i + 1) % 3] += g_edge[i];
            gq[i] -= g_edge[i];
        }
        let mut out = GeoGrad {
            corners: [Vec3::zeros(); 3],
            bary: Vec3::zeros(),
            v: [Vec3::zeros(); 3],
            nv: [Vec3::zeros(); 3],
        };
        for i in 0..3 {
            for j in 0..3 {
                out.corners[i][j] = gq[i].dot(&self.v[j]);
                out.v[j] += gq[i] * corners[i][j];
            }
        }
        out
    }
}
