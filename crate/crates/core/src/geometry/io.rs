//! Mesh file ingestion. Parsers accept untrusted bytes: they never panic,
//! never allocate more than the input size justifies, and reject non-finite
//! coordinates.

use super::TriangleMesh;
use nalgebra::Point3;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Malformed(String),
    #[error("unsupported mesh extension: {0:?}")]
    UnsupportedExtension(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse {
        line,
        msg: msg.into(),
    }
}

fn finite(v: f64, line: usize) -> Result<f64, MeshIoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, "non-finite coordinate"))
    }
}

/// Parse Wavefront OBJ. Understands `v` and `f` (with `v`, `v/vt`, `v//vn`,
/// `v/vt/vn` references, negative indices, and fan triangulation); all other
/// directives are ignored.
pub fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (ln, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = ln + 1;
        let line = String::from_utf8_lossy(raw);
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for slot in &mut c {
                    let t = tok
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs 3 coordinates"))?;
                    *slot = finite(
                        t.parse::<f64>()
                            .map_err(|_| parse_err(line_no, format!("bad float {t:?}")))?,
                        line_no,
                    )?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut refs: Vec<u32> = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad face index {t:?}")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(line_no, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(line_no, format!("face index {idx} out of range")));
                    }
                    refs.push(resolved as u32);
                }
                if refs.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least 3 vertices"));
                }
                for i in 1..refs.len() - 1 {
                    triangles.push([refs[0], refs[i], refs[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

/// Serialise to OBJ text (vertices then faces, 1-based indices).
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

/// Parse STL, either flavour. Exact-size binary layout wins the sniff; a
/// leading `solid` keyword falls back to the ASCII grammar. Coincident
/// vertices are merged so the result carries real connectivity.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        if let Some(expected) = n.checked_mul(50).and_then(|b| b.checked_add(84)) {
            if expected == bytes.len() {
                return parse_stl_binary(&bytes[84..], n);
            }
        }
    }
    let head = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .unwrap_or(0);
    if bytes[head..].starts_with(b"solid") {
        return parse_stl_ascii(bytes);
    }
    Err(MeshIoError::Malformed(
        "neither a complete binary STL nor an ASCII solid".into(),
    ))
}

struct VertexPool {
    vertices: Vec<Point3<f64>>,
    seen: HashMap<[u64; 3], u32>,
}

impl VertexPool {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            seen: HashMap::new(),
        }
    }

    fn intern(&mut self, p: Point3<f64>) -> u32 {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        *self.seen.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            (self.vertices.len() - 1) as u32
        })
    }
}

fn parse_stl_binary(body: &[u8], n: usize) -> Result<TriangleMesh, MeshIoError> {
    let mut pool = VertexPool::new();
    let mut triangles = Vec::with_capacity(n.min(1 << 22));
    for t in 0..n {
        let rec = &body[t * 50..t * 50 + 50];
        let mut tri = [0u32; 3];
        for v in 0..3 {
            let base = 12 + v * 12; // skip the facet normal
            let mut c = [0.0f64; 3];
            for (axis, slot) in c.iter_mut().enumerate() {
                let o = base + axis * 4;
                let raw = f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
                if !raw.is_finite() {
                    return Err(MeshIoError::Malformed(format!(
                        "triangle {t}: non-finite vertex"
                    )));
                }
                *slot = raw as f64;
            }
            tri[v] = pool.intern(Point3::new(c[0], c[1], c[2]));
        }
        triangles.push(tri);
    }
    Ok(TriangleMesh::new(pool.vertices, triangles))
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    let text = String::from_utf8_lossy(bytes);
    let mut tok = text.split_whitespace().peekable();
    let expect = |tok: &mut std::iter::Peekable<std::str::SplitWhitespace>, kw: &str| {
        match tok.next() {
            Some(t) if t.eq_ignore_ascii_case(kw) => Ok(()),
            Some(t) => Err(MeshIoError::Malformed(format!(
                "expected {kw:?}, found {t:?}"
            ))),
            None => Err(MeshIoError::Malformed(format!(
                "expected {kw:?}, found end of input"
            ))),
        }
    };
    expect(&mut tok, "solid")?;
    // Optional solid name: anything up to the first facet/endsolid keyword.
    while let Some(&t) = tok.peek() {
        if t.eq_ignore_ascii_case("facet") || t.eq_ignore_ascii_case("endsolid") {
            break;
        }
        tok.next();
    }
    let mut pool = VertexPool::new();
    let mut triangles = Vec::new();
    loop {
        match tok.peek() {
            Some(&t) if t.eq_ignore_ascii_case("facet") => {
                tok.next();
                expect(&mut tok, "normal")?;
                for _ in 0..3 {
                    let t = tok
                        .next()
                        .ok_or_else(|| MeshIoError::Malformed("truncated facet normal".into()))?;
                    t.parse::<f64>().map_err(|_| {
                        MeshIoError::Malformed(format!("bad normal component {t:?}"))
                    })?;
                }
                expect(&mut tok, "outer")?;
                expect(&mut tok, "loop")?;
                let mut tri = [0u32; 3];
                for v in &mut tri {
                    expect(&mut tok, "vertex")?;
                    let mut c = [0.0f64; 3];
                    for slot in &mut c {
                        let t = tok
                            .next()
                            .ok_or_else(|| MeshIoError::Malformed("truncated vertex".into()))?;
                        let f = t.parse::<f64>().map_err(|_| {
                            MeshIoError::Malformed(format!("bad vertex component {t:?}"))
                        })?;
                        if !f.is_finite() {
                            return Err(MeshIoError::Malformed("non-finite vertex".into()));
                        }
                        *slot = f;
                    }
                    *v = pool.intern(Point3::new(c[0], c[1], c[2]));
                }
                expect(&mut tok, "endloop")?;
                expect(&mut tok, "endfacet")?;
                triangles.push(tri);
            }
            Some(&t) if t.eq_ignore_ascii_case("endsolid") => break,
            Some(t) => {
                return Err(MeshIoError::Malformed(format!(
                    "unexpected token {t:?} in solid body"
                )))
            }
            None => return Err(MeshIoError::Malformed("missing endsolid".into())),
        }
    }
    Ok(TriangleMesh::new(pool.vertices, triangles))
}

/// Load a mesh file, dispatching on the extension (`.obj`, `.stl`).
pub fn load_mesh(path: &Path) -> Result<TriangleMesh, MeshIoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = std::fs::read(path)?;
    match ext.as_str() {
        "obj" => parse_obj(&bytes),
        "stl" => parse_stl(&bytes),
        other => Err(MeshIoError::UnsupportedExtension(other.to_string())),
    }
}
