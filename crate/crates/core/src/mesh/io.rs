use std::fs;
use std::io::Write;
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            _ => Err(Error::Parse(format!("unknown mesh extension for {}", path.display()))),
        }
    }
}

/// Loads and validates a mesh. Vertex order is preserved exactly as stored in the file.
pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    let bytes = fs::read(path.as_ref())?;
    read_mesh(&bytes, format)
}

pub fn read_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriMesh> {
    let (vertices, faces) = match format {
        MeshFormat::Off => parse_off(text(bytes)?)?,
        MeshFormat::Obj => parse_obj(text(bytes)?)?,
        MeshFormat::Ply => parse_ply(bytes)?,
    };
    check_indices(vertices.len(), &faces)?;
    TriMesh::new(vertices, faces)
}

/// Writes ASCII OFF with full `f64` round-trip precision.
pub fn write_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", mesh.vertex_count(), mesh.face_count())?;
    for v in mesh.vertices() {
        writeln!(out, "{:?} {:?} {:?}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    fs::write(path, out)?;
    Ok(())
}

fn text(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Parse(format!("not utf-8: {e}")))
}

fn check_indices(n: usize, faces: &[[usize; 3]]) -> Result<()> {
    for (fi, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&v| v >= n) {
            return Err(Error::Parse(format!("face {fi} index {bad} out of range for {n} vertices")));
        }
    }
    Ok(())
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::Parse(format!("face with {} vertices", poly.len())));
    }
    for i in 1..poly.len() - 1 {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
    Ok(())
}

fn num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    tok.parse().map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
}

fn parse_off(src: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut tokens = src.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    let head = tokens.next().ok_or_else(|| Error::Parse("empty OFF file".into()))?;
    if head != "OFF" {
        return Err(Error::Parse(format!("expected OFF header, found {head:?}")));
    }
    let nv: usize = num(tokens.next(), "vertex count")?;
    let nf: usize = num(tokens.next(), "face count")?;
    let _ne: usize = num(tokens.next(), "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push([
            num(tokens.next(), "coordinate")?,
            num(tokens.next(), "coordinate")?,
            num(tokens.next(), "coordinate")?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    let mut poly = Vec::new();
    for _ in 0..nf {
        let deg: usize = num(tokens.next(), "face degree")?;
        poly.clear();
        for _ in 0..deg {
            poly.push(num(tokens.next(), "face index")?);
        }
        fan(&poly, &mut faces)?;
    }
    Ok((vertices, faces))
}

fn parse_obj(src: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut poly = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                vertices.push([
                    num(tok.next(), "coordinate")?,
                    num(tok.next(), "coordinate")?,
                    num(tok.next(), "coordinate")?,
                ]);
            }
            Some("f") => {
                poly.clear();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad face index {t:?}", lineno + 1)))?;
                    let resolved = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => vertices.len() as i64 + i,
                        _ => -1,
                    };
                    if resolved < 0 {
                        return Err(Error::Parse(format!("line {}: face index {idx} out of range", lineno + 1)));
                    }
                    poly.push(resolved as usize);
                }
                fan(&poly, &mut faces)?;
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Parse(format!("unknown PLY type {name:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?;
    let mut body = end + END.len();
    while body < bytes.len() && bytes[body] != b'\n' {
        body += 1;
    }
    body += 1;
    let header = text(&bytes[..end])?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut ascii = false;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => ascii = false,
            ["format", "ascii", _] => ascii = true,
            ["format", other, _] => return Err(Error::Parse(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: num(Some(count), "element count")?,
                props: Vec::new(),
            }),
            ["property", "list", len, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(len)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }
    let mut reader: Box<dyn PlyReader> = if ascii {
        Box::new(AsciiReader { tokens: text(&bytes[body.min(bytes.len())..])?.split_whitespace().collect(), pos: 0 })
    } else {
        Box::new(BinaryReader { data: &bytes[body.min(bytes.len())..], pos: 0 })
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut poly = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = reader.read(*ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, len_ty, item_ty) => {
                        let len = reader.read(*len_ty)? as usize;
                        poly.clear();
                        for _ in 0..len {
                            let v = reader.read(*item_ty)?;
                            if v < 0.0 {
                                return Err(Error::Parse(format!("negative face index {v}")));
                            }
                            poly.push(v as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            fan(&poly, &mut faces)?;
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(xyz);
            }
        }
    }
    Ok((vertices, faces))
}

trait PlyReader {
    fn read(&mut self, ty: Scalar) -> Result<f64>;
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl PlyReader for BinaryReader<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return Err(Error::Parse("truncated PLY body".into()));
        }
        let v = ty.read_le(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

struct AsciiReader<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl PlyReader for AsciiReader<'_> {
    fn read(&mut self, _ty: Scalar) -> Result<f64> {
        let tok = self.tokens.get(self.pos).copied();
        self.pos += 1;
        num(tok, "PLY value")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn off_minimal() {
        let src = "OFF\n# comment\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = read_mesh(src.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (3, 1));
    }

    #[test]
    fn off_index_out_of_range() {
        let src = "OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n3 0 1 2\n3 1 99 2\n";
        assert!(matches!(read_mesh(src.as_bytes(), MeshFormat::Off), Err(Error::Parse(_))));
    }

    #[test]
    fn off_truncated() {
        let src = "OFF\n3 1 0\n0 0 0\n1 0 0\n";
        assert!(matches!(read_mesh(src.as_bytes(), MeshFormat::Off), Err(Error::Parse(_))));
    }

    #[test]
    fn off_quads_are_fanned() {
        let src = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = read_mesh(src.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_with_slashes_and_negative_indices() {
        let src = "# cube corner\nv 0 0 0\nv 1 0 0\nvt 0 0\nv 0 1 0\nv 0 0 1\nf 1/1/1 2/1/1 3/1/1\nf -4 -1 -3\n";
        let m = read_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 3, 1]]);
    }

    #[test]
    fn binary_ply() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [[0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            bytes.push(255);
        }
        bytes.push(3);
        for i in [0i32, 1, 2] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let m = read_mesh(&bytes, MeshFormat::Ply).unwrap();
        assert_eq!(m.vertices()[1], [1.0, 0.0, 0.0]);
        assert_eq!(m.faces(), &[[0, 1, 2]]);

        bytes.truncate(bytes.len() - 2);
        assert!(matches!(read_mesh(&bytes, MeshFormat::Ply), Err(Error::Parse(_))));
    }

    #[test]
    fn ascii_ply() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar uint vertex_index\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = read_mesh(src.as_bytes(), MeshFormat::Ply).unwrap();
        assert_eq!(m.face_count(), 1);
    }

    #[test]
    fn off_round_trip_is_exact() {
        let mesh = shapes::icosphere(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.off");
        write_off(&mesh, &path).unwrap();
        let back = load_mesh(&path, MeshFormat::from_path(&path).unwrap()).unwrap();
        assert_eq!(back, mesh);
        assert_eq!((back.vertex_count(), back.face_count()), (162, 320));
    }
}
