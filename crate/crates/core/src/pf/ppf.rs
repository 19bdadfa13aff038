//! Point-pair features: a rigid-invariant signature for two oriented surface
//! points, the library-wide lookup table built from model features, and the
//! alignment that turns a (model pair, observed pair) match into a pose.

use crate::geometry::OrientedPoint;
use crate::sdf::SdfError;
use nalgebra::{Point3, Rotation3, Unit, Vector3};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Distance quantum: one digit decimal.
pub const DIST_BIN: f64 = 0.1;
/// Angle quantum: 12 degrees.
pub const ANGLE_BIN: f64 = PI / 15.0;

/// The four numbers describing a pair of oriented points, invariant under
/// rigid motion: separation, normal-normal angle, and each normal's angle to
/// the separation vector. Angles are in [0, pi].
pub fn compute_ppf(a: &OrientedPoint, b: &OrientedPoint) -> Option<(f64, f64, f64, f64)> {
    let d = b.position - a.position;
    let dist = d.norm();
    if dist < 1e-12 {
        return None;
    }
    let angle = |u: &Vector3<f64>, v: &Vector3<f64>| u.cross(v).norm().atan2(u.dot(v));
    let na = a.normal.into_inner();
    let nb = b.normal.into_inner();
    Some((dist, angle(&na, &nb), angle(&na, &d), angle(&nb, &d)))
}

/// A discretized pair feature, the hash key of [`PpfTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PpfKey {
    pub d_bin: i32,
    pub a_ij: i32,
    pub a_id: i32,
    pub a_jd: i32,
}

impl PpfKey {
    pub fn quantize(ppf: (f64, f64, f64, f64)) -> Self {
        Self {
            d_bin: (ppf.0 / DIST_BIN).round() as i32,
            a_ij: (ppf.1 / ANGLE_BIN).round() as i32,
            a_id: (ppf.2 / ANGLE_BIN).round() as i32,
            a_jd: (ppf.3 / ANGLE_BIN).round() as i32,
        }
    }

    /// The key itself plus the 8 keys one bin away in a single coordinate,
    /// to absorb quantization cliffs at bin boundaries.
    pub fn with_neighbors(self) -> [PpfKey; 9] {
        let mut out = [self; 9];
        let mut n = 1;
        for c in 0..4 {
            for s in [-1i32, 1] {
                let mut k = self;
                match c {
                    0 => k.d_bin += s,
                    1 => k.a_ij += s,
                    2 => k.a_id += s,
                    _ => k.a_jd += s,
                }
                out[n] = k;
                n += 1;
            }
        }
        out
    }
}

/// A feature pair on a known model: class and the two feature indices.
pub type PairRef = (u32, u32, u32);

/// Library-wide hash table from discretized pair feature to the model pairs
/// that produce it.
pub struct PpfTable {
    map: HashMap<PpfKey, Vec<PairRef>>,
    /// Total stored pairs, for diagnostics: classes * n * (n - 1).
    pub entries: usize,
}

impl PpfTable {
    /// Index every ordered feature pair of every class. `features[c]` are the
    /// canonical-frame features of class `c`.
    pub fn build(features: &[&[OrientedPoint]]) -> Self {
        let mut map: HashMap<PpfKey, Vec<PairRef>> = HashMap::new();
        let mut entries = 0;
        for (c, feats) in features.iter().enumerate() {
            for i in 0..feats.len() {
                for j in 0..feats.len() {
                    if i == j {
                        continue;
                    }
                    let Some(ppf) = compute_ppf(&feats[i], &feats[j]) else {
                        continue;
                    };
                    map.entry(PpfKey::quantize(ppf)).or_default().push((
                        c as u32,
                        i as u32,
                        j as u32,
                    ));
                    entries += 1;
                }
            }
        }
        Self { map, entries }
    }

    pub fn lookup(&self, key: &PpfKey) -> &[PairRef] {
        self.map.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Serialize deterministically (keys and pair lists sorted) with a
    /// content hash of whatever the caller keys the cache by.
    pub fn encode(&self, source_hash: u64) -> Vec<u8> {
        let mut keys: Vec<&PpfKey> = self.map.keys().collect();
        keys.sort_unstable();
        let mut out = Vec::with_capacity(32 + self.entries * 12);
        out.extend_from_slice(b"PPFT");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&source_hash.to_le_bytes());
        out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for k in keys {
            out.extend_from_slice(&k.d_bin.to_le_bytes());
            out.extend_from_slice(&k.a_ij.to_le_bytes());
            out.extend_from_slice(&k.a_id.to_le_bytes());
            out.extend_from_slice(&k.a_jd.to_le_bytes());
            let mut pairs = self.map[k].clone();
            pairs.sort_unstable();
            out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
            for (c, i, j) in pairs {
                out.extend_from_slice(&c.to_le_bytes());
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&j.to_le_bytes());
            }
        }
        out
    }

    /// Strict inverse of [`encode`](Self::encode): any malformed input is an
    /// error, never a panic. Returns the table and the stored source hash.
    pub fn decode(bytes: &[u8]) -> Result<(Self, u64), SdfError> {
        let bad = |msg: &str| SdfError::BadCache(format!("pair table: {msg}"));
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], SdfError> {
            let end = pos.checked_add(n).ok_or_else(|| bad("length overflow"))?;
            if end > bytes.len() {
                return Err(bad("truncated"));
            }
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let i32_at = |s: &[u8]| i32::from_le_bytes(s.try_into().unwrap());
        if take(&mut pos, 4)? != b"PPFT" {
            return Err(bad("bad magic"));
        }
        let version = u32_at(take(&mut pos, 4)?);
        if version != 1 {
            return Err(SdfError::BadCache(format!(
                "pair table: unsupported version {version}"
            )));
        }
        let source_hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let n_keys = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        if n_keys > (bytes.len() as u64) / 20 {
            return Err(bad("key count exceeds payload"));
        }
        let mut map: HashMap<PpfKey, Vec<PairRef>> = HashMap::with_capacity(n_keys as usize);
        let mut entries = 0usize;
        for _ in 0..n_keys {
            let key = PpfKey {
                d_bin: i32_at(take(&mut pos, 4)?),
                a_ij: i32_at(take(&mut pos, 4)?),
                a_id: i32_at(take(&mut pos, 4)?),
                a_jd: i32_at(take(&mut pos, 4)?),
            };
            if key.d_bin < 0 || [key.a_ij, key.a_id, key.a_jd].iter().any(|&a| !(0..=15).contains(&a)) {
                return Err(bad("key out of range"));
            }
            let count = u32_at(take(&mut pos, 4)?) as usize;
            if count == 0 || count > (bytes.len() - pos) / 12 {
                return Err(bad("pair count exceeds payload"));
            }
            let mut pairs = Vec::with_capacity(count);
            for _ in 0..count {
                let c = u32_at(take(&mut pos, 4)?);
                let i = u32_at(take(&mut pos, 4)?);
                let j = u32_at(take(&mut pos, 4)?);
                if i == j {
                    return Err(bad("degenerate pair"));
                }
                pairs.push((c, i, j));
            }
            if map.insert(key, pairs).is_some() {
                return Err(bad("duplicate key"));
            }
            entries += count;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok((Self { map, entries }, source_hash))
    }

    pub fn save(&self, path: &std::path::Path, source_hash: u64) -> Result<(), SdfError> {
        std::fs::write(path, self.encode(source_hash))?;
        Ok(())
    }

    /// Load and verify the stored hash; a mismatch means the library changed
    /// and the table must be rebuilt.
    pub fn load(path: &std::path::Path, expect_hash: u64) -> Result<Self, SdfError> {
        let (table, hash) = Self::decode(&std::fs::read(path)?)?;
        if hash != expect_hash {
            return Err(SdfError::BadCache("pair table: stale source hash".into()));
        }
        Ok(table)
    }
}

/// Rotation carrying unit vector `n` onto +x (any such rotation will do; the
/// free spin about x is fixed separately by the pair alignment).
fn rotation_to_x(n: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::rotation_between(n, &Vector3::x())
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::y_axis(), PI))
}

/// Rigid pose mapping a canonical model pair onto an observed pair: first
/// positions coincide, first normals align exactly, and the leftover spin
/// about the first normal is chosen to align the second points. Returns
/// `None` when a second point sits on the first normal's axis, where the
/// spin is unobservable.
pub fn align_pair(
    model: (&OrientedPoint, &OrientedPoint),
    obs: (&OrientedPoint, &OrientedPoint),
) -> Option<crate::geometry::Pose> {
    let rm = rotation_to_x(&model.0.normal);
    let ro = rotation_to_x(&obs.0.normal);
    let pm = rm * (model.1.position - model.0.position);
    let po = ro * (obs.1.position - obs.0.position);
    let m_yz = Vector3::new(0.0, pm.y, pm.z);
    let o_yz = Vector3::new(0.0, po.y, po.z);
    if m_yz.norm_squared() < 1e-18 || o_yz.norm_squared() < 1e-18 {
        return None;
    }
    // Signed angle from the model's yz direction to the observed one.
    let alpha = {
        let cross = m_yz.y * o_yz.z - m_yz.z * o_yz.y;
        let dot = m_yz.y * o_yz.y + m_yz.z * o_yz.z;
        cross.atan2(dot)
    };
    let spin = Rotation3::from_axis_angle(&Unit::new_unchecked(Vector3::x()), alpha);
    let rot = ro.inverse() * spin * rm;
    let translation = obs.0.position.coords - rot * model.0.position.coords;
    Some(crate::geometry::Pose::from_parts(&rot, translation))
}

/// Poses mapping a model feature onto an observed contact, fanned around the
/// unconstrained spin in `bins` even steps. Used to seed the filter from the
/// very first contact, where no pair exists yet.
pub fn poses_onto_contact(
    feature: &OrientedPoint,
    contact: &OrientedPoint,
    bins: usize,
) -> Vec<crate::geometry::Pose> {
    let align = Rotation3::rotation_between(&feature.normal, &contact.normal)
        .unwrap_or_else(|| {
            // Antipodal normals: half turn about anything orthogonal.
            let axis = orthogonal(&contact.normal);
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), PI)
        });
    (0..bins)
        .map(|b| {
            let beta = 2.0 * PI * b as f64 / bins as f64;
            let spin = Rotation3::from_axis_angle(&contact.normal, beta);
            let rot = spin * align;
            let t = contact.position.coords - rot * feature.position.coords;
            crate::geometry::Pose::from_parts(&rot, t)
        })
        .collect()
}

fn orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let trial = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    n.cross(&trial)
}
