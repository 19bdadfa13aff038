use super::{build_sdf_grid, FieldSource, PrimitiveSpec, SdfError, SdfField};
use crate::geometry::{load_mesh, marching_cubes_values, Aabb, GridSpec, OrientedPoint, TriangleMesh};
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Class id carried by objects outside the known set.
pub const NOVEL_CLASS: usize = usize::MAX;

/// Surface features attached to each model, used for alignment proposals.
pub const FEATURE_COUNT: usize = 200;

/// 64-bit FNV-1a. Used for cache names and per-model sampling seeds, so it
/// must stay stable across runs and platforms.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One shape the engine can recognize or has learned: a distance field plus
/// the derived artifacts every consumer needs (a mesh for display and metric
/// sampling, a sparse set of oriented surface features for alignment).
pub struct ObjectModel {
    pub name: String,
    pub class_id: usize,
    pub novel: bool,
    pub field: SdfField,
    pub display_mesh: TriangleMesh,
    pub features: Vec<OrientedPoint>,
}

impl ObjectModel {
    /// Derive mesh and features from a finished field.
    ///
    /// Features are spread by Poisson disc sampling (seeded from the model
    /// name, so a library loads identically every time) and then projected
    /// onto the zero level set of the field itself, since the mesh vertices
    /// only approximate it.
    pub fn from_field(
        name: impl Into<String>,
        class_id: usize,
        novel: bool,
        field: SdfField,
    ) -> Result<Self, SdfError> {
        let name = name.into();
        let values: Vec<f64> = field.values.iter().map(|&v| v as f64).collect();
        let mut display_mesh = marching_cubes_values(&values, &field.grid, 0.0);
        display_mesh.remove_degenerate(1e-12);
        let display_mesh = display_mesh.largest_component();
        if display_mesh.triangles.is_empty() {
            return Err(SdfError::Primitive(format!(
                "field for {name:?} has no zero level set"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(name.as_bytes()));
        let mut features = crate::geometry::poisson_disc_sample(&display_mesh, FEATURE_COUNT, &mut rng)?;
        let tol = 1e-4 * field.grid.cell;
        for f in &mut features {
            f.position = project_to_surface(&field, f.position, tol);
        }
        Ok(Self {
            name,
            class_id,
            novel,
            field,
            display_mesh,
            features,
        })
    }

    /// Features carried into a given pose.
    pub fn posed_features(&self, pose: &crate::geometry::Pose) -> Vec<OrientedPoint> {
        self.features.iter().map(|f| f.transformed(pose)).collect()
    }
}

/// Newton steps along the field gradient until |f| is tiny or progress stalls.
fn project_to_surface(field: &SdfField, mut p: Point3<f64>, tol: f64) -> Point3<f64> {
    for _ in 0..20 {
        let d = field.sample(&p);
        if d.abs() <= tol {
            break;
        }
        let g = field.gradient(&p);
        let n2 = g.norm_squared();
        if n2 < 1e-12 {
            break;
        }
        p -= g * (d / n2);
    }
    p
}

fn default_scale() -> f64 {
    1.0
}

/// One object in a library manifest. Exactly one of `mesh` (a path relative
/// to the manifest) or `primitive` (a shape, possibly a union) must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitive: Option<PrimitiveSpec>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub novel: bool,
}

impl ManifestEntry {
    fn validate(&self) -> Result<(), SdfError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(SdfError::Manifest(format!(
                "object name {:?} must be non-empty [A-Za-z0-9_-] (it names cache files)",
                self.name
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(SdfError::Manifest(format!(
                "{}: scale must be a positive number",
                self.name
            )));
        }
        match (&self.mesh, &self.primitive) {
            (Some(_), None) => Ok(()),
            (None, Some(spec)) => spec
                .validate()
                .map_err(|e| SdfError::Manifest(format!("{}: {e}", self.name))),
            _ => Err(SdfError::Manifest(format!(
                "{}: give exactly one of \"mesh\" or \"primitive\"",
                self.name
            ))),
        }
    }
}

/// Top-level structure of `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub objects: Vec<ManifestEntry>,
}

/// A loaded object library. Non-novel entries become the known classes, in
/// manifest order; novel entries carry [`NOVEL_CLASS`] and exist only as
/// ground truth for the simulator.
pub struct Library {
    pub models: Vec<ObjectModel>,
}

impl Library {
    /// Load (building and caching distance fields as needed) from a directory
    /// holding `manifest.json`. Cache files live in `<dir>/cache/` and are
    /// keyed by a hash of the entry, its source bytes, and the grid settings,
    /// so any edit rebuilds the field.
    pub fn load(dir: &Path, resolution: usize, padding: f64) -> Result<Self, SdfError> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: LibraryManifest = serde_json::from_str(&text)
            .map_err(|e| SdfError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        if manifest.objects.is_empty() {
            return Err(SdfError::Manifest("manifest lists no objects".into()));
        }
        let mut models = Vec::with_capacity(manifest.objects.len());
        let mut next_class = 0usize;
        for entry in &manifest.objects {
            entry.validate()?;
            if models.iter().any(|m: &ObjectModel| m.name == entry.name) {
                return Err(SdfError::Manifest(format!(
                    "duplicate object name {:?}",
                    entry.name
                )));
            }
            let field = load_or_build_field(dir, entry, resolution, padding)?;
            let class_id = if entry.novel {
                NOVEL_CLASS
            } else {
                let id = next_class;
                next_class += 1;
                id
            };
            models.push(ObjectModel::from_field(
                entry.name.clone(),
                class_id,
                entry.novel,
                field,
            )?);
        }
        Ok(Self { models })
    }

    /// The recognizable classes, ordered by class id.
    pub fn known(&self) -> Vec<&ObjectModel> {
        self.models.iter().filter(|m| !m.novel).collect()
    }

    pub fn get(&self, name: &str) -> Result<&ObjectModel, SdfError> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| SdfError::UnknownObject(name.to_string()))
    }

    pub fn class(&self, class_id: usize) -> Option<&ObjectModel> {
        self.models
            .iter()
            .find(|m| !m.novel && m.class_id == class_id)
    }
}

fn load_or_build_field(
    dir: &Path,
    entry: &ManifestEntry,
    resolution: usize,
    padding: f64,
) -> Result<SdfField, SdfError> {
    let cache_path = cache_path(dir, entry, resolution, padding)?;
    if cache_path.exists() {
        // A corrupt or stale-format cache file is not an error, just a miss.
        if let Ok(field) = SdfField::load(&cache_path) {
            return Ok(field);
        }
    }
    let field = build_field(dir, entry, resolution, padding)?;
    if let Some(parent) = cache_path.parent() {
        fs::create_dir_all(parent)?;
    }
    field.save(&cache_path)?;
    Ok(field)
}

fn cache_path(
    dir: &Path,
    entry: &ManifestEntry,
    resolution: usize,
    padding: f64,
) -> Result<PathBuf, SdfError> {
    let mut key = serde_json::to_vec(entry)
        .map_err(|e| SdfError::Manifest(format!("{}: {e}", entry.name)))?;
    key.extend_from_slice(&(resolution as u64).to_le_bytes());
    key.extend_from_slice(&padding.to_le_bytes());
    if let Some(mesh_path) = &entry.mesh {
        key.extend_from_slice(&fs::read(dir.join(mesh_path))?);
    }
    let hash = fnv1a(&key);
    Ok(dir.join("cache").join(format!("{}-{hash:016x}.sdf", entry.name)))
}

fn build_field(
    dir: &Path,
    entry: &ManifestEntry,
    resolution: usize,
    padding: f64,
) -> Result<SdfField, SdfError> {
    if let Some(mesh_path) = &entry.mesh {
        let mut mesh = load_mesh(&dir.join(mesh_path))?;
        if entry.scale != 1.0 {
            for v in &mut mesh.vertices {
                *v *= entry.scale;
            }
        }
        return build_sdf_grid(&mesh, resolution, padding);
    }
    let spec = entry.primitive.as_ref().expect("validated");
    let s = entry.scale;
    let pb = spec.aabb();
    let aabb = Aabb::new(pb.min * s, pb.max * s).padded(padding);
    if resolution < 16 {
        return Err(SdfError::ResolutionTooCoarse(resolution));
    }
    let grid = GridSpec::from_aabb(&aabb, resolution);
    let field = SdfField::from_fn(grid, FieldSource::AnalyticPrimitive, |p| {
        s * spec.distance(&Point3::from(p.coords / s))
    });
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::write_obj;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn sphere_entry_json(name: &str, radius: f64) -> String {
        format!(
            r#"{{ "name": "{name}", "primitive": {{ "kind": "sphere", "radius": {radius} }} }}"#
        )
    }

    fn write_manifest(dir: &Path, objects: &[String]) {
        let body = format!(r#"{{ "objects": [ {} ] }}"#, objects.join(", "));
        fs::write(dir.join("manifest.json"), body).unwrap();
    }

    fn load_err(dir: &Path) -> SdfError {
        match Library::load(dir, 32, 1.0) {
            Ok(_) => panic!("expected the manifest to be rejected"),
            Err(e) => e,
        }
    }

    #[test]
    fn fnv1a_matches_published_test_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn primitive_library_builds_and_reloads_from_cache() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(tmp.path(), &[sphere_entry_json("ball", 1.0)]);
        let lib = Library::load(tmp.path(), 32, 1.0).unwrap();
        assert_eq!(lib.models.len(), 1);
        let m = lib.get("ball").unwrap();
        assert_eq!(m.class_id, 0);
        assert!(!m.novel);
        // Probe away from the origin: the distance cone's apex interpolates
        // with O(cell) error, smooth regions with O(cell^2).
        assert_relative_eq!(
            m.field.sample(&Point3::new(0.5, 0.0, 0.0)),
            -0.5,
            epsilon = 0.02
        );
        let cache: Vec<_> = fs::read_dir(tmp.path().join("cache"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(cache.len(), 1);
        let first_bytes = fs::read(&cache[0]).unwrap();
        // Second load must hit the cache and leave the file untouched.
        let again = Library::load(tmp.path(), 32, 1.0).unwrap();
        assert_eq!(fs::read(&cache[0]).unwrap(), first_bytes);
        // Same seed path, so features come out identical.
        let (a, b) = (&lib.models[0].features, &again.models[0].features);
        assert_eq!(a.len(), FEATURE_COUNT);
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.position, y.position);
        }
    }

    #[test]
    fn changing_settings_or_entry_invalidates_the_cache() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(tmp.path(), &[sphere_entry_json("ball", 1.0)]);
        Library::load(tmp.path(), 32, 1.0).unwrap();
        Library::load(tmp.path(), 40, 1.0).unwrap();
        write_manifest(tmp.path(), &[sphere_entry_json("ball", 1.2)]);
        Library::load(tmp.path(), 32, 1.0).unwrap();
        let count = fs::read_dir(tmp.path().join("cache")).unwrap().count();
        assert_eq!(count, 3);
    }

    #[test]
    fn mesh_entries_scale_and_hash_source_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::cuboid(Vector3::repeat(0.5));
        fs::write(tmp.path().join("box.obj"), write_obj(&mesh)).unwrap();
        let entry = r#"{ "name": "grown", "mesh": "box.obj", "scale": 2.0 }"#.to_string();
        write_manifest(tmp.path(), &[entry]);
        let lib = Library::load(tmp.path(), 48, 1.0).unwrap();
        let m = lib.get("grown").unwrap();
        // Half-extent 0.5 scaled by 2 puts the face at x = 1.
        assert_relative_eq!(
            m.field.sample(&Point3::new(1.5, 0.0, 0.0)),
            0.5,
            epsilon = 0.05
        );
        // Editing the OBJ must invalidate the cache even though the entry
        // text is unchanged.
        let bigger = TriangleMesh::cuboid(Vector3::repeat(0.6));
        fs::write(tmp.path().join("box.obj"), write_obj(&bigger)).unwrap();
        Library::load(tmp.path(), 48, 1.0).unwrap();
        assert_eq!(fs::read_dir(tmp.path().join("cache")).unwrap().count(), 2);
    }

    #[test]
    fn novel_entries_get_no_class_id() {
        let tmp = tempfile::tempdir().unwrap();
        let novel = r#"{ "name": "mystery", "primitive": { "kind": "sphere", "radius": 0.8 }, "novel": true }"#;
        write_manifest(
            tmp.path(),
            &[sphere_entry_json("ball", 1.0), novel.to_string()],
        );
        let lib = Library::load(tmp.path(), 32, 1.0).unwrap();
        assert_eq!(lib.known().len(), 1);
        let m = lib.get("mystery").unwrap();
        assert_eq!(m.class_id, NOVEL_CLASS);
        assert!(lib.class(NOVEL_CLASS).is_none());
        assert_eq!(lib.class(0).unwrap().name, "ball");
    }

    #[test]
    fn manifest_errors_are_specific() {
        let tmp = tempfile::tempdir().unwrap();
        let both = r#"{ "name": "x", "mesh": "a.obj", "primitive": { "kind": "sphere", "radius": 1 } }"#;
        write_manifest(tmp.path(), &[both.to_string()]);
        let err = load_err(tmp.path());
        assert!(err.to_string().contains("exactly one"), "{err}");

        write_manifest(
            tmp.path(),
            &[sphere_entry_json("dup", 1.0), sphere_entry_json("dup", 2.0)],
        );
        let err = load_err(tmp.path());
        assert!(err.to_string().contains("duplicate"), "{err}");

        write_manifest(tmp.path(), &[r#"{ "name": "bad/slash", "primitive": { "kind": "sphere", "radius": 1 } }"#.to_string()]);
        let err = load_err(tmp.path());
        assert!(err.to_string().contains("cache files"), "{err}");
    }

    #[test]
    fn corrupt_cache_files_are_rebuilt_not_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(tmp.path(), &[sphere_entry_json("ball", 1.0)]);
        Library::load(tmp.path(), 32, 1.0).unwrap();
        let cache: Vec<_> = fs::read_dir(tmp.path().join("cache"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        fs::write(&cache[0], b"garbage").unwrap();
        let lib = Library::load(tmp.path(), 32, 1.0).unwrap();
        assert_relative_eq!(
            lib.get("ball").unwrap().field.sample(&Point3::new(0.5, 0.0, 0.0)),
            -0.5,
            epsilon = 0.02
        );
    }

    #[test]
    fn features_lie_on_the_zero_level_set_with_unit_normals() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(tmp.path(), &[sphere_entry_json("ball", 1.0)]);
        let lib = Library::load(tmp.path(), 48, 1.0).unwrap();
        let m = lib.get("ball").unwrap();
        for f in &m.features {
            assert!(m.field.sample(&f.position).abs() < 1e-3 * m.field.grid.cell.max(1.0));
            assert_relative_eq!(f.normal.norm(), 1.0, epsilon = 1e-12);
            // Outward on a sphere means roughly radial.
            let radial = f.position.coords.normalize();
            assert!(f.normal.dot(&radial) > 0.9, "normal not outward at {}", f.position);
        }
        // Poisson spacing: no two features closer than a quarter of the
        // ideal radius sqrt(area / n).
        let area = 4.0 * std::f64::consts::PI;
        let r0 = (area / FEATURE_COUNT as f64).sqrt();
        for (i, a) in m.features.iter().enumerate() {
            for b in &m.features[i + 1..] {
                assert!((a.position - b.position).norm() > 0.25 * r0);
            }
        }
    }
}
