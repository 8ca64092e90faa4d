//! Heterogeneous spatial label sets, region-wise sparsity masks and
//! synthetic toy scenes.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Discrete,
    Continuous,
}

/// One pixel-aligned label: `H×W×C` f32 values and an `H×W` u8 presence
/// mask (1 = present).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub name: String,
    pub kind: LabelKind,
    values: Tensor,
    mask: Tensor,
}

impl LabelMap {
    pub fn new(name: impl Into<String>, kind: LabelKind, values: Tensor, mask: Tensor) -> Result<Self> {
        let name = name.into();
        if values.rank() != 3 {
            return Err(Error::Shape(format!("label `{name}` values must be H×W×C, got {:?}", values.dims())));
        }
        values.as_f32()?;
        mask.as_u8()?;
        if mask.dims() != &values.dims()[..2] {
            return Err(Error::Shape(format!(
                "label `{name}` mask dims {:?} do not match values {:?}",
                mask.dims(),
                values.dims()
            )));
        }
        Ok(Self { name, kind, values, mask })
    }

    /// A fully present label.
    pub fn dense(name: impl Into<String>, kind: LabelKind, values: Tensor) -> Result<Self> {
        let (h, w) = (values.dims().first().copied().unwrap_or(1), values.dims().get(1).copied().unwrap_or(1));
        let mask = Tensor::from_u8(vec![h, w], vec![1; h * w])?;
        Self::new(name, kind, values, mask)
    }

    pub fn height(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn value_slice(&self) -> &[f32] {
        self.values.as_f32().expect("values are f32 by construction")
    }

    pub fn value_slice_mut(&mut self) -> &mut [f32] {
        self.values.as_f32_mut().expect("values are f32 by construction")
    }

    pub fn mask_slice(&self) -> &[u8] {
        self.mask.as_u8().expect("mask is u8 by construction")
    }

    /// Channel vector at flat pixel index `p = i * W + j`.
    pub fn pixel(&self, p: usize) -> &[f32] {
        let c = self.channels();
        &self.value_slice()[p * c..(p + 1) * c]
    }

    pub fn is_present(&self, p: usize) -> bool {
        self.mask_slice()[p] != 0
    }
}

/// Checks the invariants of a label collection without constructing a set.
pub fn validate_label_set(labels: &[LabelMap]) -> Result<()> {
    let first = labels.first().ok_or(Error::EmptyLabelSet)?;
    let expected = (first.height(), first.width());
    let mut seen = HashSet::new();
    for l in labels {
        let found = (l.height(), l.width());
        if found != expected {
            return Err(Error::DimensionMismatch {
                label: l.name.clone(),
                expected,
                found,
            });
        }
        if !seen.insert(l.name.as_str()) {
            return Err(Error::DuplicateLabel(l.name.clone()));
        }
    }
    Ok(())
}

/// Ordered, validated collection of labels sharing one `H×W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<LabelMap>,
    height: usize,
    width: usize,
}

impl LabelSet {
    pub fn new(labels: Vec<LabelMap>) -> Result<Self> {
        validate_label_set(&labels)?;
        let (height, width) = (labels[0].height(), labels[0].width());
        Ok(Self { labels, height, width })
    }

    pub fn labels(&self) -> &[LabelMap] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<LabelMap> {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, name: &str) -> Option<&LabelMap> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn total_channels(&self) -> usize {
        self.labels.iter().map(LabelMap::channels).sum()
    }

    /// Copy with label `k` entirely absent (values zeroed, mask cleared).
    pub fn without_label(&self, k: usize) -> LabelSet {
        let mut out = self.clone();
        let l = &mut out.labels[k];
        l.value_slice_mut().iter_mut().for_each(|v| *v = 0.0);
        l.mask.as_u8_mut().expect("u8 mask").iter_mut().for_each(|m| *m = 0);
        out
    }
}

/// Region identifiers, one per pixel. Ids need not be contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || ids.len() != height * width {
            return Err(Error::Shape(format!(
                "instance map {height}×{width} with {} ids",
                ids.len()
            )));
        }
        Ok(Self { height, width, ids })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("instance map must be H×W, got {:?}", t.dims())));
        }
        let ids = t.as_u8()?.iter().map(|&v| v as u32).collect();
        Self::new(t.dims()[0], t.dims()[1], ids)
    }

    /// Stored form: `H×W` u8. Fails if an id exceeds 255.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let bytes = self
            .ids
            .iter()
            .map(|&id| {
                u8::try_from(id).map_err(|_| Error::Range {
                    name: "region id",
                    value: id as f64,
                    expected: "≤ 255 for u8 storage",
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        Tensor::from_u8(vec![self.height, self.width], bytes)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Distinct ids in ascending order.
    pub fn regions(&self) -> Vec<u32> {
        self.ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// One `H×W` presence mask per label, in label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMaskSet {
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<u8>>,
}

impl SparsityMaskSet {
    pub fn all_present(labels: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            masks: vec![vec![1; height * width]; labels],
        }
    }

    pub fn absent_fraction(&self) -> f64 {
        let total: usize = self.masks.iter().map(Vec::len).sum();
        let absent: usize = self.masks.iter().flatten().filter(|&&m| m == 0).count();
        absent as f64 / total as f64
    }
}

/// Drops whole regions of each label independently with probability
/// `sparsity`. One uniform draw per (label, region) pair, taken in ascending
/// (label index, region id) order.
pub fn generate_sparse_masks(
    inst: &InstanceMap,
    labels: &LabelSet,
    sparsity: f64,
    seed: u64,
) -> Result<SparsityMaskSet> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Range {
            name: "sparsity",
            value: sparsity,
            expected: "within [0, 1]",
        });
    }
    if (inst.height, inst.width) != (labels.height(), labels.width()) {
        return Err(Error::Shape(format!(
            "instance map {}×{} vs labels {}×{}",
            inst.height,
            inst.width,
            labels.height(),
            labels.width()
        )));
    }
    let regions = inst.regions();
    let mut rng = Rng::new(seed);
    let mut masks = Vec::with_capacity(labels.len());
    for _ in 0..labels.len() {
        let dropped: HashSet<u32> = regions
            .iter()
            .copied()
            .filter(|_| rng.uniform() < sparsity)
            .collect();
        masks.push(inst.ids.iter().map(|id| u8::from(!dropped.contains(id))).collect());
    }
    Ok(SparsityMaskSet {
        height: inst.height,
        width: inst.width,
        masks,
    })
}

/// ANDs each label's mask with the sparsity mask and zeroes the values of
/// pixels that become absent.
pub fn apply_masks(set: &LabelSet, m: &SparsityMaskSet) -> Result<LabelSet> {
    if m.masks.len() != set.len() || (m.height, m.width) != (set.height(), set.width()) {
        return Err(Error::Shape(format!(
            "{} masks of {}×{} for {} labels of {}×{}",
            m.masks.len(),
            m.height,
            m.width,
            set.len(),
            set.height(),
            set.width()
        )));
    }
    let mut out = set.clone();
    for (label, sparse) in out.labels.iter_mut().zip(&m.masks) {
        if sparse.len() != set.pixels() {
            return Err(Error::Shape(format!("mask for `{}` has {} pixels", label.name, sparse.len())));
        }
        let c = label.channels();
        let mut mask = label.mask_slice().to_vec();
        let values = label.value_slice_mut();
        for (p, (cur, &keep)) in mask.iter_mut().zip(sparse).enumerate() {
            if keep == 0 {
                *cur = 0;
            }
            if *cur == 0 {
                values[p * c..(p + 1) * c].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        label.mask.as_u8_mut()?.copy_from_slice(&mask);
    }
    Ok(out)
}

/// `n` continuous labels named `l0, l1, …` with 1, 3, 2, 1, 3, … channels,
/// standard-normal values and each pixel absent with probability `absent`.
pub fn random_label_set(n: usize, h: usize, w: usize, absent: f64, seed: u64) -> Result<LabelSet> {
    const CHANNEL_CYCLE: [usize; 3] = [1, 3, 2];
    let mut rng = Rng::new(seed);
    let labels = (0..n)
        .map(|k| {
            let c = CHANNEL_CYCLE[k % CHANNEL_CYCLE.len()];
            let values = (0..h * w * c).map(|_| rng.normal() as f32).collect();
            let mask: Vec<u8> = (0..h * w).map(|_| u8::from(rng.uniform() >= absent)).collect();
            let mut values: Vec<f32> = values;
            for (p, &m) in mask.iter().enumerate() {
                if m == 0 {
                    values[p * c..(p + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LabelMap::new(
                format!("l{k}"),
                LabelKind::Continuous,
                Tensor::from_f32(vec![h, w, c], values)?,
                Tensor::from_u8(vec![h, w], mask)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    LabelSet::new(labels)
}

pub const SCENE_LABELS: [&str; 5] = ["semantics", "depth", "normals", "edges", "curvature"];

/// A synthetic scene: labels, the regions they were built from, and an RGB
/// target that is a closed-form function of the full label set.
#[derive(Debug, Clone)]
pub struct Scene {
    pub labels: LabelSet,
    pub instances: InstanceMap,
    pub target: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Rect {
    fn area(&self) -> usize {
        self.height * self.width
    }
}

fn split_regions(h: usize, w: usize, regions: usize, rng: &mut Rng) -> Vec<Rect> {
    let mut rects = vec![Rect {
        top: 0,
        left: 0,
        height: h,
        width: w,
    }];
    while rects.len() < regions {
        // Largest rectangle first (lowest index on ties) keeps regions balanced.
        let (idx, _) = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.area() >= 2)
            .max_by(|a, b| a.1.area().cmp(&b.1.area()).then(b.0.cmp(&a.0)))
            .expect("h, w ≥ 4 and regions ≤ 16 always leave a splittable rectangle");
        let r = rects[idx];
        let horizontal = match (r.height >= 2, r.width >= 2) {
            (true, true) => rng.uniform() < 0.5,
            (true, false) => true,
            _ => false,
        };
        let (a, b) = if horizontal {
            let cut = 1 + rng.below(r.height - 1);
            (
                Rect { height: cut, ..r },
                Rect {
                    top: r.top + cut,
                    height: r.height - cut,
                    ..r
                },
            )
        } else {
            let cut = 1 + rng.below(r.width - 1);
            (
                Rect { width: cut, ..r },
                Rect {
                    left: r.left + cut,
                    width: r.width - cut,
                    ..r
                },
            )
        };
        rects[idx] = a;
        rects.push(b);
    }
    rects
}

/// Builds a toy scene of `regions` axis-aligned rectangles with the five
/// labels semantics, depth, normals, edges and curvature.
///
/// Depth in region `r` is the plane `a·u + b·v + c` over normalized pixel
/// coordinates `u = i/(h-1)`, `v = j/(w-1)`; normals are the plane's unit
/// normal. The target is `R = class/regions`, `G = depth` rescaled to
/// `[0, 1]` over the image, `B = 0.5·edge + 0.5·curvature`.
pub fn synth_scene(h: usize, w: usize, regions: usize, seed: u64) -> Result<Scene> {
    if h < 4 {
        return Err(Error::Range {
            name: "height",
            value: h as f64,
            expected: "≥ 4",
        });
    }
    if w < 4 {
        return Err(Error::Range {
            name: "width",
            value: w as f64,
            expected: "≥ 4",
        });
    }
    if !(1..=16).contains(&regions) {
        return Err(Error::Range {
            name: "regions",
            value: regions as f64,
            expected: "within [1, 16]",
        });
    }
    let mut rng = Rng::new(seed);
    let rects = split_regions(h, w, regions, &mut rng);
    let mut ids = vec![0u32; h * w];
    for (r, rect) in rects.iter().enumerate() {
        for i in rect.top..rect.top + rect.height {
            for j in rect.left..rect.left + rect.width {
                ids[i * w + j] = r as u32;
            }
        }
    }
    let planes: Vec<[f64; 3]> = (0..regions)
        .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
        .collect();
    let curv: Vec<f64> = (0..regions).map(|_| rng.uniform()).collect();

    let n = h * w;
    let mut semantics = vec![0f32; n * regions];
    let mut depth = vec![0f32; n];
    let mut normals = vec![0f32; n * 3];
    let mut edges = vec![0f32; n];
    let mut curvature = vec![0f32; n];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let r = ids[p] as usize;
            let [a, b, c] = planes[r];
            let u = i as f64 / (h - 1) as f64;
            let v = j as f64 / (w - 1) as f64;
            semantics[p * regions + r] = 1.0;
            depth[p] = (a * u + b * v + c) as f32;
            let norm = (a * a + b * b + 1.0).sqrt();
            normals[p * 3] = (-a / norm) as f32;
            normals[p * 3 + 1] = (-b / norm) as f32;
            normals[p * 3 + 2] = (1.0 / norm) as f32;
            let crosses = (i > 0 && ids[p - w] != ids[p])
                || (i + 1 < h && ids[p + w] != ids[p])
                || (j > 0 && ids[p - 1] != ids[p])
                || (j + 1 < w && ids[p + 1] != ids[p]);
            edges[p] = if crosses { 1.0 } else { 0.0 };
            curvature[p] = curv[r] as f32;
        }
    }

    let (dmin, dmax) = depth
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let mut target = vec![0f64; n * 3];
    for p in 0..n {
        let r = ids[p] as usize;
        target[p * 3] = r as f64 / regions as f64;
        target[p * 3 + 1] = normalized_depth(depth[p], dmin, dmax);
        target[p * 3 + 2] = 0.5 * edges[p] as f64 + 0.5 * curvature[p] as f64;
    }

    let labels = vec![
        LabelMap::dense("semantics", LabelKind::Discrete, Tensor::from_f32(vec![h, w, regions], semantics)?)?,
        LabelMap::dense("depth", LabelKind::Continuous, Tensor::from_f32(vec![h, w, 1], depth)?)?,
        LabelMap::dense("normals", LabelKind::Continuous, Tensor::from_f32(vec![h, w, 3], normals)?)?,
        LabelMap::dense("edges", LabelKind::Discrete, Tensor::from_f32(vec![h, w, 1], edges)?)?,
        LabelMap::dense("curvature", LabelKind::Continuous, Tensor::from_f32(vec![h, w, 1], curvature)?)?,
    ];
    Ok(Scene {
        labels: LabelSet::new(labels)?,
        instances: InstanceMap::new(h, w, ids)?,
        target: Tensor::from_f64(vec![h, w, 3], target)?,
    })
}

/// Depth rescaled to `[0, 1]` over the image; a flat image maps to 0.
pub fn normalized_depth(d: f32, dmin: f32, dmax: f32) -> f64 {
    if dmax > dmin {
        (d as f64 - dmin as f64) / (dmax as f64 - dmin as f64)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(name: &str, h: usize, w: usize, c: usize) -> LabelMap {
        let values = Tensor::from_f32(vec![h, w, c], (0..h * w * c).map(|x| x as f32 + 1.0).collect()).unwrap();
        LabelMap::dense(name, LabelKind::Continuous, values).unwrap()
    }

    #[test]
    fn validation() {
        assert!(LabelSet::new(vec![label("a", 8, 8, 1), label("b", 8, 8, 3)]).is_ok());
        let err = LabelSet::new(vec![label("a", 8, 8, 1), label("b", 8, 9, 1)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { ref label, .. } if label == "b"));
        assert!(matches!(LabelSet::new(vec![]), Err(Error::EmptyLabelSet)));
        assert!(matches!(
            LabelSet::new(vec![label("a", 8, 8, 1), label("a", 8, 8, 1)]),
            Err(Error::DuplicateLabel(_))
        ));
    }

    #[test]
    fn sparsity_extremes() {
        let scene = synth_scene(8, 8, 4, 1).unwrap();
        let none = generate_sparse_masks(&scene.instances, &scene.labels, 0.0, 3).unwrap();
        assert!(none.masks.iter().flatten().all(|&m| m == 1));
        let all = generate_sparse_masks(&scene.instances, &scene.labels, 1.0, 3).unwrap();
        assert!(all.masks.iter().flatten().all(|&m| m == 0));
        assert!(generate_sparse_masks(&scene.instances, &scene.labels, 1.5, 3).is_err());
        assert!(generate_sparse_masks(&scene.instances, &scene.labels, -0.1, 3).is_err());
    }

    #[test]
    fn masks_are_region_constant() {
        let scene = synth_scene(16, 16, 9, 2).unwrap();
        let m = generate_sparse_masks(&scene.instances, &scene.labels, 0.5, 5).unwrap();
        let ids = scene.instances.ids();
        for mask in &m.masks {
            for r in scene.instances.regions() {
                let bits: BTreeSet<u8> = ids.iter().zip(mask).filter(|(&id, _)| id == r).map(|(_, &b)| b).collect();
                assert_eq!(bits.len(), 1);
            }
        }
    }

    #[test]
    fn apply_identity_and_all_absent() {
        let scene = synth_scene(8, 8, 3, 4).unwrap();
        let keep = SparsityMaskSet::all_present(5, 8, 8);
        assert_eq!(apply_masks(&scene.labels, &keep).unwrap(), scene.labels);
        let drop = SparsityMaskSet {
            height: 8,
            width: 8,
            masks: vec![vec![0; 64]; 5],
        };
        let out = apply_masks(&scene.labels, &drop).unwrap();
        for l in out.labels() {
            assert!(l.value_slice().iter().all(|&v| v == 0.0));
            assert!(l.mask_slice().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn apply_single_pixel() {
        let set = LabelSet::new(vec![label("semantics", 4, 4, 2), label("depth", 4, 4, 1)]).unwrap();
        let mut m = SparsityMaskSet::all_present(2, 4, 4);
        m.masks[1][0] = 0;
        let out = apply_masks(&set, &m).unwrap();
        assert_eq!(out.labels()[0], set.labels()[0]);
        let d = &out.labels()[1];
        assert_eq!(d.pixel(0), &[0.0]);
        assert_eq!(d.mask_slice()[0], 0);
        assert_eq!(&d.value_slice()[1..], &set.labels()[1].value_slice()[1..]);
        assert_eq!(&d.mask_slice()[1..], &set.labels()[1].mask_slice()[1..]);
    }

    #[test]
    fn apply_is_idempotent() {
        let scene = synth_scene(12, 10, 6, 9).unwrap();
        let m = generate_sparse_masks(&scene.instances, &scene.labels, 0.4, 1).unwrap();
        let once = apply_masks(&scene.labels, &m).unwrap();
        assert_eq!(apply_masks(&once, &m).unwrap(), once);
    }

    #[test]
    fn single_region_scene() {
        let s = synth_scene(6, 7, 1, 3).unwrap();
        let edges = s.labels.get("edges").unwrap();
        assert!(edges.value_slice().iter().all(|&e| e == 0.0));
        let normals = s.labels.get("normals").unwrap();
        let first = normals.pixel(0).to_vec();
        assert!((0..42).all(|p| normals.pixel(p) == &first[..]));
    }

    #[test]
    fn semantics_one_hot() {
        for seed in 0..5 {
            let s = synth_scene(9, 13, 7, seed).unwrap();
            let sem = s.labels.get("semantics").unwrap();
            for p in 0..9 * 13 {
                assert_eq!(sem.pixel(p).iter().sum::<f32>(), 1.0);
                assert!(sem.pixel(p).iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn scene_deterministic_and_partitioned() {
        let a = synth_scene(16, 16, 16, 77).unwrap();
        let b = synth_scene(16, 16, 16, 77).unwrap();
        assert_eq!(a.labels, b.labels);
        assert!(a.target.bit_eq(&b.target));
        assert_eq!(a.instances.regions().len(), 16);
        let c = synth_scene(4, 4, 16, 1).unwrap();
        assert_eq!(c.instances.regions().len(), 16);
    }

    #[test]
    fn scene_parameter_ranges() {
        assert!(synth_scene(3, 8, 2, 0).is_err());
        assert!(synth_scene(8, 3, 2, 0).is_err());
        assert!(synth_scene(8, 8, 0, 0).is_err());
        assert!(synth_scene(8, 8, 17, 0).is_err());
    }

    #[test]
    fn target_reconstructs_from_labels() {
        let s = synth_scene(10, 12, 5, 21).unwrap();
        let l = &s.labels;
        let sem = l.get("semantics").unwrap();
        let depth = l.get("depth").unwrap().value_slice();
        let edges = l.get("edges").unwrap();
        let curv = l.get("curvature").unwrap();
        let (dmin, dmax) = depth
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let t = s.target.as_f64().unwrap();
        for p in 0..120 {
            let class = sem.pixel(p).iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(t[p * 3], class as f64 / 5.0);
            assert_eq!(t[p * 3 + 1], normalized_depth(depth[p], dmin, dmax));
            assert_eq!(t[p * 3 + 2], 0.5 * edges.pixel(p)[0] as f64 + 0.5 * curv.pixel(p)[0] as f64);
        }
    }

    #[test]
    fn instance_map_u8_storage() {
        let m = InstanceMap::new(1, 2, vec![3, 300]).unwrap();
        assert!(m.to_tensor().is_err());
        let m = InstanceMap::new(1, 2, vec![3, 200]).unwrap();
        assert_eq!(InstanceMap::from_tensor(&m.to_tensor().unwrap()).unwrap(), m);
    }
}
