use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Bottom,
    Right,
    Top,
    Left,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Bottom,
        BoundaryTag::Right,
        BoundaryTag::Top,
        BoundaryTag::Left,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Right => "right",
            BoundaryTag::Top => "top",
            BoundaryTag::Left => "left",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundaryTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown boundary tag '{s}'")))
    }
}

/// Conforming triangulation with subdomain and boundary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Zero-based subdomain label of each triangle.
    pub subdomains: Vec<usize>,
    pub boundary_edges: Vec<([usize; 2], BoundaryTag)>,
    pub dirichlet: Vec<bool>,
}

impl SpaceMesh {
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        subdomains: Vec<usize>,
        boundary_edges: Vec<([usize; 2], BoundaryTag)>,
        dirichlet: Vec<bool>,
    ) -> Result<Self> {
        let mesh = SpaceMesh {
            vertices,
            triangles,
            subdomains,
            boundary_edges,
            dirichlet,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_subdomains(&self) -> usize {
        self.subdomains.iter().max().map_or(0, |m| m + 1)
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Checks orientation, labelling and conformity.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        let bad = |msg: String| Err(Error::InvalidArgument(format!("invalid mesh: {msg}")));
        if self.subdomains.len() != self.triangles.len() {
            return bad("one subdomain label per triangle required".into());
        }
        if self.dirichlet.len() != nv {
            return bad("one Dirichlet flag per vertex required".into());
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return bad("non-finite vertex coordinate".into());
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return bad(format!("triangle {t} references a missing vertex"));
            }
            if !(self.area(t) > 0.0) {
                return bad(format!("triangle {t} is degenerate or clockwise"));
            }
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for ([a, b], _) in &self.boundary_edges {
            match edges.get(&((*a).min(*b), (*a).max(*b))) {
                Some(1) => {}
                _ => {
                    return bad(format!(
                        "boundary edge ({a}, {b}) is not a boundary edge of the triangulation"
                    ))
                }
            }
        }
        if let Some((e, _)) = edges.iter().find(|(_, &c)| c > 2) {
            return bad(format!("edge {e:?} is shared by more than two triangles"));
        }
        Ok(())
    }

    /// Line-oriented text export.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# strb mesh v1")?;
        writeln!(w, "vertices {}", self.vertices.len())?;
        for (v, d) in self.vertices.iter().zip(&self.dirichlet) {
            writeln!(w, "{:e} {:e} {}", v[0], v[1], u8::from(*d))?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for (t, s) in self.triangles.iter().zip(&self.subdomains) {
            writeln!(w, "{} {} {} {}", t[0], t[1], t[2], s)?;
        }
        writeln!(w, "boundary {}", self.boundary_edges.len())?;
        for ([a, b], tag) in &self.boundary_edges {
            writeln!(w, "{a} {b} {tag}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, msg: &str| Error::InvalidArgument(format!("mesh text line {line}: {msg}"));
        let count = |lines: &mut dyn Iterator<Item = (usize, &str)>, name: &str| -> Result<usize> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(0, &format!("missing '{name}' section")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(err(ln, &format!("expected '{name} <count>'")));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(ln, "missing count"))
        };
        let nv = count(&mut lines, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        let mut dirichlet = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated vertex list"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            let parsed = (f.len() == 3)
                .then(|| {
                    Some((
                        f[0].parse::<f64>().ok()?,
                        f[1].parse::<f64>().ok()?,
                        f[2].parse::<u8>().ok()?,
                    ))
                })
                .flatten();
            let (x, y, d) = parsed.ok_or_else(|| err(ln, "expected 'x y dirichlet'"))?;
            vertices.push([x, y]);
            dirichlet.push(d != 0);
        }
        let nt = count(&mut lines, "triangles")?;
        let mut triangles = Vec::with_capacity(nt);
        let mut subdomains = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated triangle list"))?;
            let f: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| err(ln, "expected integers")))
                .collect::<Result<_>>()?;
            let [a, b, c, s] = f[..] else {
                return Err(err(ln, "expected 'v0 v1 v2 subdomain'"));
            };
            triangles.push([a, b, c]);
            subdomains.push(s);
        }
        let nb = count(&mut lines, "boundary")?;
        let mut boundary_edges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated boundary list"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            let [a, b, tag] = f[..] else {
                return Err(err(ln, "expected 'v0 v1 tag'"));
            };
            let a = a.parse().map_err(|_| err(ln, "bad vertex index"))?;
            let b = b.parse().map_err(|_| err(ln, "bad vertex index"))?;
            boundary_edges.push(([a, b], tag.parse()?));
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content"));
        }
        SpaceMesh::new(vertices, triangles, subdomains, boundary_edges, dirichlet)
    }
}

/// Unit square split into 3 x 3 subdomain blocks, labelled row-major from
/// the bottom-left corner, with Dirichlet vertices on the top edge.
pub fn build_thermal_block_mesh(vertices_per_side: usize) -> Result<SpaceMesh> {
    let n = vertices_per_side;
    if n < 4 || !(n - 1).is_multiple_of(3) {
        return Err(Error::InvalidArgument(format!(
            "vertices per side must be at least 4 with (vertices_per_side - 1) divisible by 3, got {n}"
        )));
    }
    let cells = n - 1;
    let h = 1.0 / cells as f64;
    let per_block = cells / 3;
    let idx = |i: usize, j: usize| j * n + i;
    let mut vertices = Vec::with_capacity(n * n);
    let mut dirichlet = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = if i == cells { 1.0 } else { i as f64 * h };
            let y = if j == cells { 1.0 } else { j as f64 * h };
            vertices.push([x, y]);
            dirichlet.push(j == cells);
        }
    }
    let mut triangles = Vec::with_capacity(2 * cells * cells);
    let mut subdomains = Vec::with_capacity(2 * cells * cells);
    for cj in 0..cells {
        for ci in 0..cells {
            let (v00, v10, v01, v11) = (idx(ci, cj), idx(ci + 1, cj), idx(ci, cj + 1), idx(ci + 1, cj + 1));
            let label = (cj / per_block) * 3 + ci / per_block;
            if (ci + cj) % 2 == 0 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
            subdomains.extend([label, label]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * cells);
    for c in 0..cells {
        boundary_edges.push(([idx(c, 0), idx(c + 1, 0)], BoundaryTag::Bottom));
        boundary_edges.push(([idx(cells, c), idx(cells, c + 1)], BoundaryTag::Right));
        boundary_edges.push(([idx(c + 1, cells), idx(c, cells)], BoundaryTag::Top));
        boundary_edges.push(([idx(0, c + 1), idx(0, c)], BoundaryTag::Left));
    }
    SpaceMesh::new(vertices, triangles, subdomains, boundary_edges, dirichlet)
}
