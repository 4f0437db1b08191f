//! Wavefront OBJ reading and writing. Supports `v x y z [r g b]`, `vn`, and
//! `f` records in every index form; polygons are fan-triangulated. Normals in
//! the file are ignored on read since they are always recomputed.

use std::fmt::Write as _;
use std::path::Path;

use super::{vertex_normals, Mesh, Vec3};
use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s}: {e}"))))
                    .collect::<Result<_>>()?;
                match nums.len() {
                    3 | 4 => {
                        vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                        colors.push(None);
                    }
                    6 | 7 => {
                        vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                        let c = &nums[nums.len() - 3..];
                        colors.push(Some(Vec3::new(c[0], c[1], c[2])));
                    }
                    n => return Err(err(format!("vertex record with {n} numbers"))),
                }
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|e| err(format!("{tok}: {e}")))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face with fewer than 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = Mesh::new(vertices, faces)?;
    if !colors.is_empty() && colors.iter().all(Option::is_some) {
        mesh.with_colors(colors.into_iter().flatten().collect())
    } else {
        Ok(mesh)
    }
}

pub fn to_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    let normals = vertex_normals(mesh.vertices(), mesh.faces());
    for (i, v) in mesh.vertices().iter().enumerate() {
        match mesh.vertex_colors() {
            Some(c) => writeln!(
                out,
                "v {} {} {} {} {} {}",
                v.x, v.y, v.z, c[i].x, c[i].y, c[i].z
            ),
            None => writeln!(out, "v {} {} {}", v.x, v.y, v.z),
        }
        .expect("writing to String");
    }
    for n in &normals {
        writeln!(out, "vn {} {} {}", n.x, n.y, n.z).expect("writing to String");
    }
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| i + 1);
        writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}").expect("writing to String");
    }
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<Mesh> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn write(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, to_string(mesh))?;
    Ok(())
}
