//! Wavefront OBJ subset (`v`, `vt`, `f`, `mtllib`) plus the landmark sidecar files.
//!
//! Face indices are 1-based. `vt` records use the OBJ convention (`v` up) on disk and are
//! flipped to the texel convention of [`super::texture`] on load. Vertex colors may follow
//! the position on `v` lines (`v x y z r g b`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ColorSource, GeometryVector, ScanMesh, TemplateTopology, TextureImage, Vec3, LANDMARK_COUNT};
use crate::error::{Error, Result};

/// Everything the OBJ reader understands, with UVs resolved to one per vertex.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    pub uv: Option<Vec<[f64; 2]>>,
    pub faces: Vec<[usize; 3]>,
    /// `map_Kd` of the first material library, resolved against the OBJ's directory.
    pub texture_path: Option<PathBuf>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats<'a>(path: &Path, line: usize, it: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    it.map(|t| {
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(path, line, format!("bad number {t:?}")))
    })
    .collect()
}

fn parse_index(path: &Path, line: usize, tok: &str, count: usize, what: &'static str) -> Result<usize> {
    let raw: i64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} index {tok:?}")))?;
    if raw < 1 || raw as usize > count {
        return Err(Error::IndexOutOfRange {
            index: raw.max(0) as usize,
            count,
            context: what,
        });
    }
    Ok(raw as usize - 1)
}

pub fn load_obj(path: &Path) -> Result<ObjMesh> {
    let text = read_to_string(path)?;
    let mut mesh = ObjMesh::default();
    let mut colors: Vec<Option<[f64; 3]>> = Vec::new();
    let mut tex_coords: Vec<[f64; 2]> = Vec::new();
    let mut face_tex: Vec<[Option<usize>; 3]> = Vec::new();
    let mut mtllib = None;
    let mut pending_faces: Vec<(usize, Vec<String>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut toks = body.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            "v" => {
                let vals = parse_floats(path, line, toks)?;
                match vals.len() {
                    3 => colors.push(None),
                    6 => colors.push(Some([vals[3], vals[4], vals[5]])),
                    n => return Err(parse_err(path, line, format!("v record has {n} values"))),
                }
                mesh.vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            "vt" => {
                let vals = parse_floats(path, line, toks)?;
                if vals.len() < 2 || vals.len() > 3 {
                    return Err(parse_err(path, line, "vt record needs 2 values"));
                }
                tex_coords.push([vals[0], 1.0 - vals[1]]);
            }
            "f" => {
                // resolved after all v/vt records are known
                pending_faces.push((line, toks.map(str::to_owned).collect()));
            }
            "mtllib" => {
                if mtllib.is_none() {
                    mtllib = toks.next().map(str::to_owned);
                }
            }
            _ => {}
        }
    }

    for (line, toks) in pending_faces {
        if toks.len() != 3 {
            return Err(parse_err(path, line, format!("only triangles are supported, got {} vertices", toks.len())));
        }
        let mut face = [0usize; 3];
        let mut ft = [None; 3];
        for (k, tok) in toks.iter().enumerate() {
            let mut parts = tok.split('/');
            face[k] = parse_index(path, line, parts.next().unwrap_or(""), mesh.vertices.len(), "obj face vertex")?;
            if let Some(t) = parts.next().filter(|t| !t.is_empty()) {
                ft[k] = Some(parse_index(path, line, t, tex_coords.len(), "obj face texcoord")?);
            }
        }
        mesh.faces.push(face);
        face_tex.push(ft);
    }

    let n = mesh.vertices.len();
    if colors.iter().any(Option::is_some) {
        if colors.iter().any(Option::is_none) {
            return Err(parse_err(path, 0, "vertex colors present on some v records only"));
        }
        let c: Vec<[f64; 3]> = colors.into_iter().flatten().collect();
        if c.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(parse_err(path, 0, "vertex color outside [0, 1]"));
        }
        mesh.vertex_colors = Some(c);
    }

    if face_tex.iter().flatten().any(Option::is_some) {
        let mut uv: Vec<Option<[f64; 2]>> = vec![None; n];
        for (face, ft) in mesh.faces.iter().zip(&face_tex) {
            for k in 0..3 {
                let Some(t) = ft[k] else {
                    return Err(parse_err(path, 0, "faces mix records with and without texcoords"));
                };
                let coord = tex_coords[t];
                match uv[face[k]] {
                    None => uv[face[k]] = Some(coord),
                    Some(prev) if (prev[0] - coord[0]).abs() > 1e-9 || (prev[1] - coord[1]).abs() > 1e-9 => {
                        return Err(parse_err(
                            path,
                            0,
                            format!("vertex {} has several texcoords (UV seams are not supported)", face[k] + 1),
                        ));
                    }
                    Some(_) => {}
                }
            }
        }
        // vertices not referenced by any face keep their positional vt, if any
        let resolved: Vec<[f64; 2]> = uv
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.or_else(|| tex_coords.get(i).copied()).unwrap_or([0.0, 0.0]))
            .collect();
        mesh.uv = Some(resolved);
    } else if !tex_coords.is_empty() && tex_coords.len() == n {
        mesh.uv = Some(tex_coords);
    }

    if let Some(lib) = mtllib {
        let dir = path.parent().unwrap_or(Path::new("."));
        let mtl_path = dir.join(&lib);
        if let Ok(mtl) = fs::read_to_string(&mtl_path) {
            mesh.texture_path = mtl.lines().find_map(|l| {
                let mut t = l.split_whitespace();
                (t.next() == Some("map_Kd")).then(|| t.last().map(|f| dir.join(f))).flatten()
            });
        }
    }
    Ok(mesh)
}

/// Writes `v`, optional `vt`, and `f` records. UV indices equal vertex indices.
pub fn save_obj(
    path: &Path,
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    uv: Option<&[[f64; 2]]>,
    colors: Option<&[[f64; 3]]>,
    mtllib: Option<&str>,
) -> Result<()> {
    let mut out = String::with_capacity(64 * vertices.len());
    if let Some(lib) = mtllib {
        writeln!(out, "mtllib {lib}").unwrap();
        writeln!(out, "usemtl face").unwrap();
    }
    for (i, p) in vertices.iter().enumerate() {
        match colors {
            Some(c) => writeln!(out, "v {} {} {} {} {} {}", p.x, p.y, p.z, c[i][0], c[i][1], c[i][2]).unwrap(),
            None => writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap(),
        }
    }
    if let Some(uv) = uv {
        for t in uv {
            writeln!(out, "vt {} {}", t[0], 1.0 - t[1]).unwrap();
        }
    }
    for f in faces {
        let [a, b, c] = f.map(|i| i + 1);
        if uv.is_some() {
            writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}").unwrap();
        } else {
            writeln!(out, "f {a} {b} {c}").unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn landmark_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<String> = body.split_whitespace().map(str::to_owned).collect();
        let ordinal: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad ordinal {:?}", toks[0])))?;
        if ordinal != rows.len() + 1 {
            return Err(parse_err(path, lineno + 1, format!("expected ordinal {}, got {ordinal}", rows.len() + 1)));
        }
        rows.push((lineno + 1, toks[1..].to_vec()));
    }
    if rows.len() != LANDMARK_COUNT {
        return Err(parse_err(
            path,
            0,
            format!("expected {LANDMARK_COUNT} landmarks, found {}", rows.len()),
        ));
    }
    Ok(rows)
}

/// `ordinal x y z` per line.
pub fn read_scan_landmarks(path: &Path) -> Result<Vec<Vec3>> {
    landmark_lines(path)?
        .into_iter()
        .map(|(line, toks)| {
            if toks.len() != 3 {
                return Err(parse_err(path, line, "scan landmark needs x y z"));
            }
            let v = parse_floats(path, line, toks.iter().map(String::as_str))?;
            Ok(Vec3::new(v[0], v[1], v[2]))
        })
        .collect()
}

/// `ordinal vertex_index` per line; indices are 0-based vertex positions.
pub fn read_template_landmarks(path: &Path) -> Result<Vec<usize>> {
    landmark_lines(path)?
        .into_iter()
        .map(|(line, toks)| {
            if toks.len() != 1 {
                return Err(parse_err(path, line, "template landmark needs one vertex index"));
            }
            toks[0]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad vertex index {:?}", toks[0])))
        })
        .collect()
}

pub fn write_scan_landmarks(path: &Path, landmarks: &[Vec3]) -> Result<()> {
    let mut out = String::new();
    for (i, p) in landmarks.iter().enumerate() {
        writeln!(out, "{} {} {} {}", i + 1, p.x, p.y, p.z).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_template_landmarks(path: &Path, indices: &[usize]) -> Result<()> {
    let mut out = String::new();
    for (i, v) in indices.iter().enumerate() {
        writeln!(out, "{} {v}", i + 1).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a scan OBJ with its landmark sidecar. The color source is, in order of
/// preference: `texture` if given, the material's `map_Kd`, then per-vertex colors.
pub fn load_scan(obj: &Path, landmarks: &Path, texture: Option<&Path>) -> Result<ScanMesh> {
    let mesh = load_obj(obj)?;
    let lms = read_scan_landmarks(landmarks)?;
    let tex_path = texture.map(Path::to_path_buf).or(mesh.texture_path.clone());
    let colors = match (tex_path, &mesh.uv, mesh.vertex_colors) {
        (Some(p), Some(uv), _) => Some(ColorSource::Texture {
            image: TextureImage::load_png(&p)?,
            uv: uv.clone(),
        }),
        (Some(p), None, _) => {
            return Err(Error::invalid(format!(
                "{}: texture {} given but the mesh has no texcoords",
                obj.display(),
                p.display()
            )))
        }
        (None, _, Some(c)) => Some(ColorSource::VertexColors(c)),
        (None, _, None) => None,
    };
    ScanMesh::new(mesh.vertices, mesh.faces, colors, lms)
}

/// Loads the template OBJ (texcoords required) and its vertex-index landmark sidecar.
pub fn load_template(obj: &Path, landmarks: &Path) -> Result<(TemplateTopology, GeometryVector)> {
    let mesh = load_obj(obj)?;
    let uv = mesh
        .uv
        .ok_or_else(|| Error::invalid(format!("{}: template needs vt records", obj.display())))?;
    let lms = read_template_landmarks(landmarks)?;
    let topo = TemplateTopology::new(mesh.vertices.len(), mesh.faces, uv, lms)?;
    Ok((topo, GeometryVector::from_points(&mesh.vertices)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.obj", "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        let m = load_obj(&p).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert!(m.uv.is_none() && m.vertex_colors.is_none());
    }

    #[test]
    fn zero_and_overflow_indices_fail() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["f 0 1 2", "f 1 2 4"] {
            let p = write(dir.path(), "t.obj", &format!("v 0 0 0\nv 1 0 0\nv 0 1 0\n{f}\n"));
            assert!(matches!(load_obj(&p), Err(Error::IndexOutOfRange { .. })), "{f}");
        }
    }

    #[test]
    fn malformed_records_fail() {
        let dir = tempfile::tempdir().unwrap();
        for body in ["v 0 0\n", "v 0 0 x\n", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n"] {
            let p = write(dir.path(), "t.obj", body);
            assert!(matches!(load_obj(&p), Err(Error::Parse { .. })), "{body}");
        }
    }

    #[test]
    fn seams_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 0.5 0.5\nf 1/1 2/2 3/3\nf 2/4 4/2 3/3\n",
        );
        assert!(load_obj(&p).is_err());
    }

    #[test]
    fn landmark_sidecar_rules() {
        let dir = tempfile::tempdir().unwrap();
        let good: String = (1..=43).map(|i| format!("{i} {i}.0 0 1\n")).collect();
        let p = write(dir.path(), "s.lmk", &good);
        assert_eq!(read_scan_landmarks(&p).unwrap()[42], Vec3::new(43.0, 0.0, 1.0));
        let short: String = (1..=42).map(|i| format!("{i} 0 0 0\n")).collect();
        assert!(read_scan_landmarks(&write(dir.path(), "s.lmk", &short)).is_err());
        let unordered = good.replacen("2 2.0", "3 2.0", 1);
        assert!(read_scan_landmarks(&write(dir.path(), "s.lmk", &unordered)).is_err());
        let template: String = (1..=43).map(|i| format!("{i} {}\n", i * 2)).collect();
        assert_eq!(read_template_landmarks(&write(dir.path(), "t.lmk", &template)).unwrap()[0], 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_obj(Path::new("/nonexistent/x.obj")), Err(Error::Io { .. })));
    }

    fn arb_mesh() -> impl Strategy<Value = (Vec<Vec3>, Vec<[usize; 3]>, Vec<[f64; 2]>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), n),
                prop::collection::vec((0..n, 0..n, 0..n), 1..60),
                prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), n),
            )
                .prop_map(|(v, f, uv)| {
                    (
                        v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect(),
                        f.into_iter().map(|(a, b, c)| [a, b, c]).collect(),
                        uv.into_iter().map(|(u, v)| [u, v]).collect(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_round_trip((verts, faces, uv) in arb_mesh()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.obj");
            save_obj(&p, &verts, &faces, Some(&uv), None, None).unwrap();
            let m = load_obj(&p).unwrap();
            prop_assert_eq!(&m.faces, &faces);
            for (a, b) in m.vertices.iter().zip(&verts) {
                prop_assert!((a - b).norm() < 1e-6);
            }
            for (a, b) in m.uv.unwrap().iter().zip(&uv) {
                prop_assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
            }
        }
    }
}
