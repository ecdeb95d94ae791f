//! Procedural shape families with known parameters and exact point
//! correspondences.
//!
//! Each family is a set of boxes driven by a few named parameters. A dataset
//! samples the surface of the family's default shape once, in box-local
//! coordinates, and maps those samples through every instance's boxes: point
//! `i` of any two shapes with the same part structure lies on the same face
//! of the same part.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::{sample_surface, Point, PointCloud, SurfaceSample};
use crate::handles::{build_handle_space, HandleSpace, PartBox};
use crate::nonlinear::rotate;
use crate::rng::{mix, stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Table,
    Chair,
    Hinge,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Table => "table",
            Family::Chair => "chair",
            Family::Hinge => "hinge",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "table" => Some(Family::Table),
            "chair" => Some(Family::Chair),
            "hinge" => Some(Family::Hinge),
            _ => None,
        }
    }
}

/// Parameter ranges, `(name, low, high)`.
pub const TABLE_RANGES: [(&str, f64, f64); 5] = [
    ("top_width", 0.4, 1.0),
    ("top_depth", 0.4, 1.0),
    ("top_thickness", 0.02, 0.08),
    ("leg_height", 0.2, 0.5),
    ("leg_side", 0.02, 0.08),
];

pub const CHAIR_RANGES: [(&str, f64, f64); 9] = [
    ("seat_width", 0.4, 0.7),
    ("seat_depth", 0.4, 0.7),
    ("seat_thickness", 0.03, 0.08),
    ("leg_height", 0.25, 0.45),
    ("leg_side", 0.03, 0.07),
    ("back_height", 0.2, 0.4),
    ("back_thickness", 0.03, 0.08),
    ("arm_height", 0.08, 0.18),
    ("arm_width", 0.03, 0.06),
];

pub const HINGE_RANGES: [(&str, f64, f64); 4] = [
    ("angle_0", 0.0, FRAC_PI_2),
    ("angle_1", 0.0, FRAC_PI_2),
    ("angle_2", 0.0, FRAC_PI_2),
    ("angle_3", 0.0, FRAC_PI_2),
];

/// Fixed hinge dimensions: base half side, flap length, plate thickness.
pub const HINGE_BASE_HALF: f64 = 0.25;
pub const HINGE_FLAP_LENGTH: f64 = 0.2;
pub const HINGE_THICKNESS: f64 = 0.02;

/// Named parameters of one procedural shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub family: Family,
    pub values: BTreeMap<String, f64>,
    /// Chairs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_arms: Option<bool>,
}

fn ranges(family: Family) -> &'static [(&'static str, f64, f64)] {
    match family {
        Family::Table => &TABLE_RANGES,
        Family::Chair => &CHAIR_RANGES,
        Family::Hinge => &HINGE_RANGES,
    }
}

impl Params {
    /// The family's default shape (range midpoints; hinge flaps flat; chair
    /// without arms).
    pub fn default_for(family: Family) -> Params {
        let values = ranges(family)
            .iter()
            .map(|(name, lo, hi)| (name.to_string(), if family == Family::Hinge { 0.0 } else { 0.5 * (lo + hi) }))
            .collect();
        Params {
            family,
            values,
            with_arms: (family == Family::Chair).then_some(false),
        }
    }

    /// Independent uniform draws from the documented ranges.
    pub fn sample<R: rand::Rng + ?Sized>(family: Family, rng: &mut R) -> Params {
        let values = ranges(family)
            .iter()
            .map(|(name, lo, hi)| (name.to_string(), rng.gen_range(*lo..=*hi)))
            .collect();
        let with_arms = (family == Family::Chair).then(|| rng.gen_bool(0.5));
        Params { family, values, with_arms }
    }

    pub fn get(&self, name: &str) -> f64 {
        self.values.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn validate(&self) -> Result<()> {
        let rs = ranges(self.family);
        if self.values.len() != rs.len() {
            return Err(Error::InvalidInput(format!("{} expects {} parameters", self.family.name(), rs.len())));
        }
        for (name, lo, hi) in rs {
            let v = self
                .values
                .get(*name)
                .ok_or_else(|| Error::InvalidInput(format!("missing parameter {name}")))?;
            if !(v.is_finite() && *v >= *lo && *v <= *hi) {
                return Err(Error::InvalidInput(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        if (self.family == Family::Chair) != self.with_arms.is_some() {
            return Err(Error::input("with_arms is required for chairs and only for chairs"));
        }
        Ok(())
    }

    /// Ground-truth transfer in parameter space: `self + (tgt − src)`,
    /// clamped to the ranges. Discrete structure stays that of `self`.
    pub fn transferred(&self, src: &Params, tgt: &Params) -> Params {
        let mut out = self.clone();
        for (name, lo, hi) in ranges(self.family) {
            let v = self.get(name) + tgt.get(name) - src.get(name);
            out.set(name, v.clamp(*lo, *hi));
        }
        out
    }

    /// Part layout key: shapes with equal keys are index-aligned.
    pub fn structure(&self) -> (Family, bool) {
        (self.family, self.with_arms.unwrap_or(false))
    }
}

/// One generated shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcShape {
    pub params: Params,
    pub parts: Vec<PartBox>,
    pub cloud: PointCloud,
    pub handle_space: HandleSpace,
}

impl ProcShape {
    pub fn family(&self) -> Family {
        self.params.family
    }

    /// Owning part of every point.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = alloc::vec![0; self.cloud.len()];
        for (p, part) in self.parts.iter().enumerate() {
            for &i in &part.point_ids {
                out[i] = p;
            }
        }
        out
    }
}

fn aa(center: Point, extents: [f64; 3]) -> Result<PartBox> {
    PartBox::axis_aligned(center, extents)
}

/// Table: top (part 0) and four corner legs (parts 1–4) flush with the top's
/// underside, vertically centred at the origin.
pub fn table_parts(p: &Params) -> Result<Vec<PartBox>> {
    let (w, d, t) = (p.get("top_width"), p.get("top_depth"), p.get("top_thickness"));
    let (h, s) = (p.get("leg_height"), p.get("leg_side"));
    let total = h + t;
    let bottom = -0.5 * total;
    let mut parts = alloc::vec![aa([0.0, 0.0, bottom + h + 0.5 * t], [0.5 * w, 0.5 * d, 0.5 * t])?];
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        parts.push(aa([sx * (0.5 * w - 0.5 * s), sy * (0.5 * d - 0.5 * s), bottom + 0.5 * h], [0.5 * s, 0.5 * s, 0.5 * h])?);
    }
    Ok(parts)
}

/// Chair: seat (0), back (1), four legs (2–5), optional arms (6, 7).
pub fn chair_parts(p: &Params) -> Result<Vec<PartBox>> {
    let (w, d, t) = (p.get("seat_width"), p.get("seat_depth"), p.get("seat_thickness"));
    let (h, s) = (p.get("leg_height"), p.get("leg_side"));
    let (bh, bt) = (p.get("back_height"), p.get("back_thickness"));
    let (ah, aw) = (p.get("arm_height"), p.get("arm_width"));
    let total = h + t + bh;
    let bottom = -0.5 * total;
    let seat_top = bottom + h + t;
    let mut parts = alloc::vec![
        aa([0.0, 0.0, seat_top - 0.5 * t], [0.5 * w, 0.5 * d, 0.5 * t])?,
        aa([0.0, -0.5 * d + 0.5 * bt, seat_top + 0.5 * bh], [0.5 * w, 0.5 * bt, 0.5 * bh])?,
    ];
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        parts.push(aa([sx * (0.5 * w - 0.5 * s), sy * (0.5 * d - 0.5 * s), bottom + 0.5 * h], [0.5 * s, 0.5 * s, 0.5 * h])?);
    }
    if p.with_arms == Some(true) {
        for sx in [1.0, -1.0] {
            parts.push(aa([sx * (0.5 * w - 0.5 * aw), 0.5 * bt, seat_top + 0.5 * ah], [0.5 * aw, 0.5 * (d - bt), 0.5 * ah])?);
        }
    }
    Ok(parts)
}

/// Outward direction of hinge flap `f`.
pub fn hinge_direction(f: usize) -> Point {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]][f]
}

/// Axis-angle rotation of flap `f` by its angle (lifts the flap upward).
pub fn hinge_rotation(f: usize, angle: f64) -> Point {
    let d = hinge_direction(f);
    // d × z
    let axis = [d[1], -d[0], 0.0];
    [axis[0] * angle, axis[1] * angle, axis[2] * angle]
}

/// Point on the hinge line of flap `f`.
pub fn hinge_pivot(f: usize) -> Point {
    let d = hinge_direction(f);
    [d[0] * HINGE_BASE_HALF, d[1] * HINGE_BASE_HALF, 0.0]
}

/// Hinge: square base plate (0) and four flaps (1–4), each rotated about the
/// base edge it shares by `angle_f` (0 = flat, π/2 = upright).
pub fn hinge_parts(p: &Params) -> Result<Vec<PartBox>> {
    let mut parts = alloc::vec![aa([0.0; 3], [HINGE_BASE_HALF, HINGE_BASE_HALF, 0.5 * HINGE_THICKNESS])?];
    for f in 0..4 {
        let d = hinge_direction(f);
        let side = [-d[1], d[0], 0.0];
        let phi = hinge_rotation(f, p.get(&format!("angle_{f}")));
        let pivot = hinge_pivot(f);
        let offset = rotate(phi, [d[0] * 0.5 * HINGE_FLAP_LENGTH, d[1] * 0.5 * HINGE_FLAP_LENGTH, 0.0]);
        let center = [pivot[0] + offset[0], pivot[1] + offset[1], pivot[2] + offset[2]];
        let axes = [rotate(phi, d), rotate(phi, side), rotate(phi, [0.0, 0.0, 1.0])];
        parts.push(PartBox::new(center, axes, [0.5 * HINGE_FLAP_LENGTH, HINGE_BASE_HALF, 0.5 * HINGE_THICKNESS])?);
    }
    Ok(parts)
}

pub fn family_parts(p: &Params) -> Result<Vec<PartBox>> {
    match p.family {
        Family::Table => table_parts(p),
        Family::Chair => chair_parts(p),
        Family::Hinge => hinge_parts(p),
    }
}

/// Surface samples of the default shape with the given structure.
pub fn canonical_samples(params: &Params, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    let mut base = Params::default_for(params.family);
    base.with_arms = params.with_arms;
    sample_surface(&family_parts(&base)?, n, seed)
}

/// Builds a shape by mapping canonical samples through the instance boxes.
pub fn shape_from_samples(params: &Params, samples: &[SurfaceSample]) -> Result<ProcShape> {
    params.validate()?;
    let mut parts = family_parts(params)?;
    if samples.iter().any(|s| s.part >= parts.len()) {
        return Err(Error::input("samples reference a part the shape does not have"));
    }
    let points: Vec<Point> = samples.iter().map(|s| parts[s.part].point_at(s.local)).collect();
    for (p, part) in parts.iter_mut().enumerate() {
        part.point_ids = (0..samples.len()).filter(|&i| samples[i].part == p).collect();
    }
    let cloud = PointCloud::new(points)?;
    let handle_space = build_handle_space(&parts, &cloud)?;
    Ok(ProcShape {
        params: params.clone(),
        parts,
        cloud,
        handle_space,
    })
}

/// Generates one shape; `seed` fixes the surface sampling pattern.
pub fn gen_shape(params: &Params, n: usize, seed: u64) -> Result<ProcShape> {
    params.validate()?;
    shape_from_samples(params, &canonical_samples(params, n, seed)?)
}

pub fn gen_table(params: &Params, n: usize, seed: u64) -> Result<ProcShape> {
    expect_family(params, Family::Table)?;
    gen_shape(params, n, seed)
}

pub fn gen_chair(params: &Params, n: usize, seed: u64) -> Result<ProcShape> {
    expect_family(params, Family::Chair)?;
    gen_shape(params, n, seed)
}

pub fn gen_hinge(params: &Params, n: usize, seed: u64) -> Result<ProcShape> {
    expect_family(params, Family::Hinge)?;
    gen_shape(params, n, seed)
}

fn expect_family(params: &Params, family: Family) -> Result<()> {
    if params.family != family {
        return Err(Error::InvalidInput(format!("expected {} parameters", family.name())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family: Family,
    pub count: usize,
    pub n: usize,
    pub seed: u64,
    pub shapes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<usize> {
        (0..self.shapes.len()).filter(|&i| self.shapes[i].split == split).collect()
    }
}

/// 85/5/10 split: indices are ranked by a seeded hash; the first 85% train,
/// the next 5% validate, the rest test.
pub fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (mix(seed ^ mix(i as u64 ^ 0x73706c6974)), i));
    let n_train = libm::round(0.85 * count as f64) as usize;
    let n_val = libm::round(0.05 * count as f64) as usize;
    let mut out = alloc::vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            out[i] = Split::Train;
        } else if rank < n_train + n_val {
            out[i] = Split::Val;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub shapes: Vec<ProcShape>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&ProcShape> {
        self.manifest.ids(split).into_iter().map(|i| &self.shapes[i]).collect()
    }
}

pub fn shape_id(family: Family, index: usize) -> String {
    format!("{}_{index:04}", family.name())
}

/// `count` i.i.d. shapes of one family sharing a sampling pattern per part
/// structure.
pub fn gen_dataset(family: Family, count: usize, n: usize, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(Error::input("a dataset needs at least two shapes"));
    }
    let mut rng = stream(seed, 0x706172616d73);
    let splits = assign_splits(count, seed);
    let mut canon: BTreeMap<(Family, bool), Vec<SurfaceSample>> = BTreeMap::new();
    let mut shapes = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for (i, split) in splits.into_iter().enumerate() {
        let params = Params::sample(family, &mut rng);
        let key = params.structure();
        if !canon.contains_key(&key) {
            canon.insert(key, canonical_samples(&params, n, seed)?);
        }
        let shape = shape_from_samples(&params, &canon[&key])?;
        entries.push(ManifestEntry {
            id: shape_id(family, i),
            split,
            params,
        });
        shapes.push(shape);
    }
    Ok(Dataset {
        shapes,
        manifest: Manifest {
            family,
            count,
            n,
            seed,
            shapes: entries,
        },
    })
}
