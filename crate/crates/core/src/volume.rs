//! Grid containers, mask algebra and geometric resampling.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::math;

/// Voxel counts along the three axes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape3(pub [usize; 3]);

impl Shape3 {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Shape3([nx, ny, nz])
    }

    pub const fn cube(n: usize) -> Self {
        Shape3([n, n, n])
    }

    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides (axis 2 fastest).
    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        [self.0[1] * self.0[2], self.0[2], 1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.0[1] + j) * self.0[2] + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.0[2];
        let rest = idx / self.0[2];
        [rest / self.0[1], rest % self.0[1], k]
    }

    pub fn max_extent(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Debug for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

impl core::ops::Index<usize> for Shape3 {
    type Output = usize;
    fn index(&self, axis: usize) -> &usize {
        &self.0[axis]
    }
}

/// Physical voxel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Spacing3(pub [f64; 3]);

impl Default for Spacing3 {
    fn default() -> Self {
        Spacing3([1.0; 3])
    }
}

impl Spacing3 {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::param(alloc::format!(
                "spacing components must be strictly positive, got {:?}",
                self.0
            )))
        }
    }
}

impl core::ops::Index<usize> for Spacing3 {
    type Output = f64;
    fn index(&self, axis: usize) -> &f64 {
        &self.0[axis]
    }
}

/// Dense 3D grid with one value per voxel.
#[derive(Clone, PartialEq)]
pub struct Grid<T> {
    shape: Shape3,
    spacing: Spacing3,
    data: Vec<T>,
}

/// Real-valued field: probabilities, diffusivities, potentials, images.
pub type ScalarField3 = Grid<f64>;

/// Boolean voxel mask.
pub type Mask3 = Grid<bool>;

impl<T> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("shape", &self.shape)
            .field("spacing", &self.spacing)
            .finish_non_exhaustive()
    }
}

impl<T: Copy> Grid<T> {
    pub fn new(shape: Shape3, spacing: Spacing3, data: Vec<T>) -> Result<Self> {
        spacing.validate()?;
        if data.len() != shape.len() {
            return Err(Error::param(alloc::format!(
                "data length {} does not match shape {:?} ({} voxels)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn filled(shape: Shape3, spacing: Spacing3, value: T) -> Self {
        Self {
            shape,
            spacing,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, spacing: Spacing3, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            shape,
            spacing,
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    #[inline]
    pub fn spacing(&self) -> Spacing3 {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing3) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the voxel buffer. The shape is fixed.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.shape.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        let idx = self.shape.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            spacing: self.spacing,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Grid<U>, mut f: impl FnMut(T, U) -> V) -> Result<Grid<V>> {
        check_shape("zip_map", self.shape, other.shape)?;
        Ok(Grid {
            shape: self.shape,
            spacing: self.spacing,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Mirror along axis 0 (left-right). An involution.
    pub fn sagittal_flip(&self) -> Self {
        let [nx, _, _] = self.shape.0;
        let plane = self.shape.strides()[0];
        let mut data = Vec::with_capacity(self.data.len());
        for i in (0..nx).rev() {
            data.extend_from_slice(&self.data[i * plane..(i + 1) * plane]);
        }
        Self {
            shape: self.shape,
            spacing: self.spacing,
            data,
        }
    }

    /// Central plane orthogonal to `axis`, as a row-major 2D buffer with
    /// its (rows, cols) dimensions.
    pub fn central_slice(&self, axis: usize) -> (usize, usize, Vec<T>) {
        self.slice(axis, self.shape[axis] / 2)
    }

    pub fn slice(&self, axis: usize, at: usize) -> (usize, usize, Vec<T>) {
        let [nx, ny, nz] = self.shape.0;
        match axis {
            0 => (ny, nz, (0..ny).flat_map(|j| (0..nz).map(move |k| (j, k))).map(|(j, k)| self.get(at, j, k)).collect()),
            1 => (nx, nz, (0..nx).flat_map(|i| (0..nz).map(move |k| (i, k))).map(|(i, k)| self.get(i, at, k)).collect()),
            _ => (nx, ny, (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).map(|(i, j)| self.get(i, j, at)).collect()),
        }
    }

    /// Nearest-neighbour resampling at `x + u(x)`, with sample positions
    /// clamped to the grid (border replication). Never introduces values
    /// absent from the input.
    pub fn warp_nearest(&self, displacement: &VectorField3) -> Result<Self> {
        check_shape("apply_deformation", self.shape, displacement.shape())?;
        let [nx, ny, nz] = self.shape.0;
        let clamp = |p: f64, n: usize| -> usize {
            if !(p > 0.0) {
                return 0;
            }
            let r = math::round(p);
            if r >= (n - 1) as f64 {
                n - 1
            } else {
                r as usize
            }
        };
        let [ux, uy, uz] = displacement.components();
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = self.shape.index(i, j, k);
                    let si = clamp(i as f64 + ux.data[idx], nx);
                    let sj = clamp(j as f64 + uy.data[idx], ny);
                    let sk = clamp(k as f64 + uz.data[idx], nz);
                    data.push(self.get(si, sj, sk));
                }
            }
        }
        Ok(Self {
            shape: self.shape,
            spacing: self.spacing,
            data,
        })
    }
}

impl ScalarField3 {
    pub fn zeros(shape: Shape3, spacing: Spacing3) -> Self {
        Self::filled(shape, spacing, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checks that every value lies in `[0, 1]`.
    pub fn check_probability(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(idx) => Err(Error::invariant(alloc::format!(
                "{what} must lie in [0, 1]; voxel {:?} holds {}",
                self.shape.coords(idx),
                self.data[idx]
            ))),
        }
    }

    /// `{x : value(x) > threshold}`.
    pub fn above(&self, threshold: f64) -> Mask3 {
        self.map(|v| v > threshold)
    }

    /// Trilinear sample at continuous voxel coordinates; zero outside
    /// `[0, n-1]` on any axis.
    #[inline]
    pub fn sample_linear(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.shape[a];
            let x = p[a];
            if !(x >= 0.0 && x <= (n - 1) as f64) {
                return 0.0;
            }
            let f = math::floor(x);
            let mut b = f as usize;
            let mut t = x - f;
            if b >= n - 1 {
                // x == n-1 exactly, or a single-voxel axis.
                b = n.saturating_sub(2);
                t = if n == 1 { 0.0 } else { x - b as f64 };
            }
            base[a] = b;
            frac[a] = t;
        }
        let s = self.shape.strides();
        let step = |a: usize| if self.shape[a] > 1 { s[a] } else { 0 };
        let (sx, sy, sz) = (step(0), step(1), step(2));
        let o = base[0] * s[0] + base[1] * s[1] + base[2] * s[2];
        let d = &self.data;
        let [tx, ty, tz] = frac;
        let c00 = d[o] * (1.0 - tx) + d[o + sx] * tx;
        let c10 = d[o + sy] * (1.0 - tx) + d[o + sx + sy] * tx;
        let c01 = d[o + sz] * (1.0 - tx) + d[o + sx + sz] * tx;
        let c11 = d[o + sy + sz] * (1.0 - tx) + d[o + sx + sy + sz] * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }

    /// Trilinear resampling at `x + u(x)` with `u` in voxel units;
    /// out-of-bounds samples are zero.
    pub fn apply_deformation(&self, displacement: &VectorField3) -> Result<Self> {
        check_shape("apply_deformation", self.shape, displacement.shape())?;
        let [ux, uy, uz] = displacement.components();
        let mut out = Self::zeros(self.shape, self.spacing);
        let [nx, ny, nz] = self.shape.0;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = self.shape.index(i, j, k);
                    out.data[idx] = self.sample_linear([
                        i as f64 + ux.data[idx],
                        j as f64 + uy.data[idx],
                        k as f64 + uz.data[idx],
                    ]);
                }
            }
        }
        Ok(out)
    }

    /// Values at voxels where `mask` is set, in row-major order.
    pub fn masked_values(&self, mask: &Mask3) -> Result<Vec<f64>> {
        check_shape("masked_values", self.shape, mask.shape)?;
        Ok(self
            .data
            .iter()
            .zip(mask.data.iter())
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect())
    }

    /// Zero every voxel outside `mask`.
    pub fn masked(&self, mask: &Mask3) -> Result<Self> {
        self.zip_map(mask, |v, m| if m { v } else { 0.0 })
    }
}

/// Voxelwise boolean operation on two masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOp {
    Union,
    Intersect,
    /// `a ∧ ¬b`
    Subtract,
}

impl Mask3 {
    pub fn full(shape: Shape3, spacing: Spacing3) -> Self {
        Self::filled(shape, spacing, true)
    }

    pub fn empty(shape: Shape3, spacing: Spacing3) -> Self {
        Self::filled(shape, spacing, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn is_none_set(&self) -> bool {
        !self.data.iter().any(|&m| m)
    }

    pub fn complement(&self) -> Self {
        self.map(|m| !m)
    }

    pub fn to_field(&self) -> ScalarField3 {
        self.map(|m| if m { 1.0 } else { 0.0 })
    }

    pub fn combine(&self, other: &Mask3, op: MaskOp) -> Result<Mask3> {
        mask_set_ops(self, other, op)
    }
}

pub fn mask_set_ops(a: &Mask3, b: &Mask3, op: MaskOp) -> Result<Mask3> {
    check_shape("mask_set_ops", a.shape, b.shape)?;
    let f = match op {
        MaskOp::Union => |x: bool, y: bool| x | y,
        MaskOp::Intersect => |x: bool, y: bool| x & y,
        MaskOp::Subtract => |x: bool, y: bool| x & !y,
    };
    a.zip_map(b, f)
}

/// Three co-located component fields.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    components: [ScalarField3; 3],
}

impl VectorField3 {
    pub fn new(x: ScalarField3, y: ScalarField3, z: ScalarField3) -> Result<Self> {
        check_shape("vector field component", x.shape, y.shape)?;
        check_shape("vector field component", x.shape, z.shape)?;
        if x.spacing != y.spacing || x.spacing != z.spacing {
            return Err(Error::param("vector field components must share spacing"));
        }
        Ok(Self {
            components: [x, y, z],
        })
    }

    pub fn zeros(shape: Shape3, spacing: Spacing3) -> Self {
        let z = ScalarField3::zeros(shape, spacing);
        Self {
            components: [z.clone(), z.clone(), z],
        }
    }

    /// A spatially constant vector.
    pub fn uniform(shape: Shape3, spacing: Spacing3, v: [f64; 3]) -> Self {
        Self {
            components: v.map(|c| ScalarField3::filled(shape, spacing, c)),
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.components[0].shape
    }

    pub fn spacing(&self) -> Spacing3 {
        self.components[0].spacing
    }

    pub fn components(&self) -> [&ScalarField3; 3] {
        let [x, y, z] = &self.components;
        [x, y, z]
    }

    pub fn component(&self, axis: usize) -> &ScalarField3 {
        &self.components[axis]
    }

    pub fn into_components(self) -> [ScalarField3; 3] {
        self.components
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            components: [
                self.components[0].scale(factor),
                self.components[1].scale(factor),
                self.components[2].scale(factor),
            ],
        }
    }

    /// Largest Euclidean norm over voxels.
    pub fn max_norm(&self) -> f64 {
        let [x, y, z] = self.components();
        let mut m = 0.0f64;
        for idx in 0..x.data.len() {
            let n = math::sqrt(x.data[idx] * x.data[idx] + y.data[idx] * y.data[idx] + z.data[idx] * z.data[idx]);
            m = m.max(n);
        }
        m
    }

    /// Largest absolute component value over voxels.
    pub fn max_abs(&self) -> f64 {
        self.components.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    /// Mirrors the field along axis 0. The left-right component changes sign so
    /// that the result is the displacement of the mirrored geometry.
    pub fn sagittal_flip(&self) -> Self {
        Self {
            components: [
                self.components[0].sagittal_flip().scale(-1.0),
                self.components[1].sagittal_flip(),
                self.components[2].sagittal_flip(),
            ],
        }
    }
}

/// Tissue class attached to a segmentation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Background,
    WhiteMatter,
    GrayMatter,
    Csf,
    Other,
}

impl LabelRole {
    /// Role of a FreeSurfer / SynthSeg label under the usual lookup table.
    /// Unknown labels map to [`LabelRole::Other`].
    pub fn freesurfer(label: u32) -> LabelRole {
        match label {
            0 => LabelRole::Background,
            2 | 7 | 41 | 46 | 77 | 78 | 79 => LabelRole::WhiteMatter,
            3 | 8 | 10 | 11 | 12 | 13 | 17 | 18 | 26 | 42 | 47 | 49 | 50 | 51 | 52 | 53 | 54 | 58 => {
                LabelRole::GrayMatter
            }
            4 | 5 | 14 | 15 | 24 | 43 | 44 => LabelRole::Csf,
            _ => LabelRole::Other,
        }
    }
}

/// Integer segmentation with a label-to-role table.
#[derive(Clone, PartialEq)]
pub struct LabelVolume {
    grid: Grid<u32>,
    roles: BTreeMap<u32, LabelRole>,
}

impl fmt::Debug for LabelVolume {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelVolume")
            .field("shape", &self.grid.shape)
            .field("roles", &self.roles)
            .finish()
    }
}

impl LabelVolume {
    /// Builds a label volume. Label 0 is always registered as background.
    /// Labels without a role are allowed here; consumers that need roles
    /// report them (see [`LabelVolume::missing_roles`]).
    pub fn new(grid: Grid<u32>, mut roles: BTreeMap<u32, LabelRole>) -> Result<Self> {
        match roles.get(&0) {
            None => {
                roles.insert(0, LabelRole::Background);
            }
            Some(LabelRole::Background) => {}
            Some(r) => {
                return Err(Error::Configuration(alloc::format!(
                    "label 0 must have the background role, found {r:?}"
                )))
            }
        }
        Ok(Self { grid, roles })
    }

    /// Uses the FreeSurfer lookup for every label present.
    pub fn with_freesurfer_roles(grid: Grid<u32>) -> Self {
        let roles = grid
            .data
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .chain(core::iter::once(0))
            .map(|l| (l, LabelRole::freesurfer(l)))
            .collect();
        Self { grid, roles }
    }

    pub fn grid(&self) -> &Grid<u32> {
        &self.grid
    }

    pub fn shape(&self) -> Shape3 {
        self.grid.shape
    }

    pub fn spacing(&self) -> Spacing3 {
        self.grid.spacing
    }

    pub fn data(&self) -> &[u32] {
        &self.grid.data
    }

    pub fn roles(&self) -> &BTreeMap<u32, LabelRole> {
        &self.roles
    }

    pub fn role(&self, label: u32) -> Option<LabelRole> {
        self.roles.get(&label).copied()
    }

    /// Sorted distinct labels present in the data.
    pub fn labels(&self) -> Vec<u32> {
        self.grid.data.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn missing_roles(&self) -> Vec<u32> {
        self.labels().into_iter().filter(|l| !self.roles.contains_key(l)).collect()
    }

    pub fn role_mask(&self, role: LabelRole) -> Mask3 {
        self.grid.map(|l| self.roles.get(&l) == Some(&role))
    }

    /// Every voxel whose label is not background.
    pub fn foreground(&self) -> Mask3 {
        self.grid
            .map(|l| l != 0 && self.roles.get(&l) != Some(&LabelRole::Background))
    }

    pub fn sagittal_flip(&self) -> Self {
        Self {
            grid: self.grid.sagittal_flip(),
            roles: self.roles.clone(),
        }
    }

    pub fn apply_deformation(&self, displacement: &VectorField3) -> Result<Self> {
        Ok(Self {
            grid: self.grid.warp_nearest(displacement)?,
            roles: self.roles.clone(),
        })
    }
}

/// Mirror then resample: the contralateral counterpart of `image` aligned to
/// the original through a precomputed displacement.
pub fn contralateral_pair(image: &ScalarField3, flip_to_original: Option<&VectorField3>) -> Result<ScalarField3> {
    let flipped = image.sagittal_flip();
    match flip_to_original {
        Some(u) => flipped.apply_deformation(u),
        None => Ok(flipped),
    }
}

/// `Ω_p \ (Ω_p ∩ Ω_p̄)`: pathology voxels whose mirrored location is healthy.
pub fn contralateral_exclusion(pathology: &Mask3, mirrored_pathology: &Mask3) -> Result<Mask3> {
    let both = mask_set_ops(pathology, mirrored_pathology, MaskOp::Intersect)?;
    mask_set_ops(pathology, &both, MaskOp::Subtract)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_mask(seed: u64, n: usize, p: f64) -> Mask3 {
        let mut rng = SplitMix64::new(seed);
        Mask3::from_fn(Shape3::cube(n), Spacing3::default(), |_, _, _| rng.bernoulli(p))
    }

    #[test]
    fn constructor_checks_length_and_spacing() {
        assert!(ScalarField3::new(Shape3::cube(2), Spacing3::default(), vec![0.0; 7]).is_err());
        assert!(ScalarField3::new(Shape3::cube(2), Spacing3([1.0, 0.0, 1.0]), vec![0.0; 8]).is_err());
        assert!(ScalarField3::new(Shape3::cube(2), Spacing3::default(), vec![0.0; 8]).is_ok());
    }

    #[test]
    fn flip_moves_mark_and_is_involution() {
        let shape = Shape3::new(5, 4, 3);
        let mut f = ScalarField3::zeros(shape, Spacing3::default());
        f.set(0, 2, 1, 1.0);
        let g = f.sagittal_flip();
        assert_eq!(g.get(4, 2, 1), 1.0);
        assert_eq!(g.sum(), 1.0);
        assert_eq!(g.sagittal_flip(), f);
    }

    #[test]
    fn flipped_then_identity_warp_equals_flipped() {
        let shape = Shape3::new(6, 5, 4);
        let mut rng = SplitMix64::new(9);
        let f = ScalarField3::from_fn(shape, Spacing3::default(), |_, _, _| rng.next_f64());
        let id = VectorField3::zeros(shape, Spacing3::default());
        assert_eq!(contralateral_pair(&f, Some(&id)).unwrap(), f.sagittal_flip());
    }

    #[test]
    fn zero_displacement_is_identity() {
        let shape = Shape3::new(7, 6, 5);
        let mut rng = SplitMix64::new(1);
        let f = ScalarField3::from_fn(shape, Spacing3::default(), |_, _, _| rng.next_f64());
        let u = VectorField3::zeros(shape, Spacing3::default());
        assert_eq!(f.apply_deformation(&u).unwrap(), f);
    }

    #[test]
    fn constant_shift_on_ramp() {
        let shape = Shape3::new(10, 4, 4);
        let f = ScalarField3::from_fn(shape, Spacing3::default(), |i, _, _| i as f64);
        let u = VectorField3::uniform(shape, Spacing3::default(), [1.0, 0.0, 0.0]);
        let g = f.apply_deformation(&u).unwrap();
        for i in 0..9 {
            for j in 0..4 {
                for k in 0..4 {
                    assert_eq!(g.get(i, j, k), i as f64 + 1.0);
                }
            }
        }
        // Sample at x = 10 is outside the grid.
        assert_eq!(g.get(9, 0, 0), 0.0);
    }

    #[test]
    fn fractional_shift_interpolates_linearly() {
        let shape = Shape3::new(8, 3, 3);
        let f = ScalarField3::from_fn(shape, Spacing3::default(), |i, j, k| 2.0 * i as f64 + j as f64 - k as f64);
        let u = VectorField3::uniform(shape, Spacing3::default(), [0.25, 0.5, 0.0]);
        let g = f.apply_deformation(&u).unwrap();
        let expected = 2.0 * (3.25) + 1.5 - 1.0;
        assert!((g.get(3, 1, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let f = ScalarField3::zeros(Shape3::cube(4), Spacing3::default());
        let u = VectorField3::zeros(Shape3::cube(5), Spacing3::default());
        assert!(matches!(f.apply_deformation(&u), Err(Error::Dimension { .. })));
        let a = Mask3::empty(Shape3::cube(4), Spacing3::default());
        let b = Mask3::empty(Shape3::cube(3), Spacing3::default());
        assert!(matches!(mask_set_ops(&a, &b, MaskOp::Union), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nearest_warp_keeps_label_set() {
        let shape = Shape3::cube(12);
        let mut rng = SplitMix64::new(4);
        let choices = [0u32, 2, 3, 41, 42];
        let grid = Grid::from_fn(shape, Spacing3::default(), |_, _, _| choices[rng.index(5)]);
        let labels = LabelVolume::with_freesurfer_roles(grid);
        let mut rng = SplitMix64::new(5);
        let comp = || ScalarField3::from_fn(shape, Spacing3::default(), |_, _, _| 0.0);
        let mut ux = comp();
        for v in ux.data_mut() {
            *v = rng.uniform(-3.0, 3.0);
        }
        let u = VectorField3::new(ux, comp(), comp()).unwrap();
        let warped = labels.apply_deformation(&u).unwrap();
        let before: BTreeSet<u32> = labels.labels().into_iter().collect();
        for l in warped.labels() {
            assert!(before.contains(&l));
        }
    }

    #[test]
    fn subtract_identities() {
        let a = random_mask(1, 16, 0.3);
        let empty = Mask3::empty(a.shape(), a.spacing());
        assert!(mask_set_ops(&a, &a, MaskOp::Subtract).unwrap().is_none_set());
        assert_eq!(mask_set_ops(&a, &empty, MaskOp::Subtract).unwrap(), a);
    }

    #[test]
    fn subtract_counting_oracle() {
        let a = random_mask(11, 16, 0.4);
        let b = random_mask(12, 16, 0.5);
        let inter = mask_set_ops(&a, &b, MaskOp::Intersect).unwrap();
        let diff = mask_set_ops(&a, &inter, MaskOp::Subtract).unwrap();
        let (mut na, mut nab) = (0, 0);
        for idx in 0..a.data().len() {
            if a.data()[idx] {
                na += 1;
                if b.data()[idx] {
                    nab += 1;
                }
            }
        }
        assert_eq!(diff.count(), na - nab);
    }

    #[test]
    fn contralateral_exclusion_drops_symmetric_pathology() {
        let shape = Shape3::new(6, 2, 2);
        let mut p = Mask3::empty(shape, Spacing3::default());
        p.set(1, 0, 0, true);
        p.set(4, 0, 0, true); // mirror of (1,0,0)
        p.set(2, 1, 1, true); // mirror (3,1,1) is healthy
        let mirrored = p.sagittal_flip();
        let omega = contralateral_exclusion(&p, &mirrored).unwrap();
        assert_eq!(omega.count(), 1);
        assert!(omega.get(2, 1, 1));
    }

    #[test]
    fn freesurfer_roles() {
        assert_eq!(LabelRole::freesurfer(0), LabelRole::Background);
        assert_eq!(LabelRole::freesurfer(2), LabelRole::WhiteMatter);
        assert_eq!(LabelRole::freesurfer(42), LabelRole::GrayMatter);
        assert_eq!(LabelRole::freesurfer(4), LabelRole::Csf);
        assert_eq!(LabelRole::freesurfer(999), LabelRole::Other);
    }

    #[test]
    fn label_zero_must_be_background() {
        let grid = Grid::filled(Shape3::cube(2), Spacing3::default(), 0u32);
        let mut roles = BTreeMap::new();
        roles.insert(0, LabelRole::GrayMatter);
        assert!(LabelVolume::new(grid, roles).is_err());
    }

    proptest::proptest! {
        #[test]
        fn de_morgan(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let a = random_mask(seed_a, 8, 0.5);
            let b = random_mask(seed_b + 5000, 8, 0.5);
            let lhs = mask_set_ops(&a, &b, MaskOp::Union).unwrap().complement();
            let rhs = mask_set_ops(&a.complement(), &b.complement(), MaskOp::Intersect).unwrap();
            proptest::prop_assert_eq!(lhs, rhs);
            let lhs = mask_set_ops(&a, &b, MaskOp::Intersect).unwrap().complement();
            let rhs = mask_set_ops(&a.complement(), &b.complement(), MaskOp::Union).unwrap();
            proptest::prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn flip_involution(seed in 0u64..1000) {
            let m = random_mask(seed, 7, 0.5);
            proptest::prop_assert_eq!(m.sagittal_flip().sagittal_flip(), m);
        }
    }
}
