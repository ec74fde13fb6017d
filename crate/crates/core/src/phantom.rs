//! A synthetic label map with the coarse layout of a brain, for demos and
//! tests that need a non-convex, brain-shaped domain without real data.
//!
//! The volume is an ellipsoid with a sinusoidally folded surface: a CSF rim
//! (label 24), a cortical gray-matter shell (3 left / 42 right), white matter
//! (2 / 41) and two lateral ventricles (4 / 43). Labels follow the FreeSurfer
//! lookup, so [`LabelVolume::with_freesurfer_roles`] assigns every role.

use crate::math;
use crate::volume::{Grid, LabelVolume, Shape3, Spacing3};

/// Fractions of each half-extent covered by the head ellipsoid.
const RADII: [f64; 3] = [0.86, 0.92, 0.80];
const FOLD_AMPLITUDE: f64 = 0.06;
const FOLDS: f64 = 7.0;

pub fn brain_phantom(shape: Shape3, spacing: Spacing3) -> LabelVolume {
    let half: [f64; 3] = core::array::from_fn(|a| shape[a] as f64 / 2.0);
    let center: [f64; 3] = core::array::from_fn(|a| (shape[a] as f64 - 1.0) / 2.0);
    let grid = Grid::from_fn(shape, spacing, |i, j, k| {
        let idx = [i, j, k];
        let u: [f64; 3] = core::array::from_fn(|a| (idx[a] as f64 - center[a]) / (RADII[a] * half[a]));
        let r = math::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        let left = u[0] < 0.0;
        // Folding depends on direction only, so shells stay nested.
        let fold = if r > 0.0 {
            FOLD_AMPLITUDE * math::sin(FOLDS * math::atan2(u[2], u[1])) * math::cos(FOLDS * u[0] / r)
        } else {
            0.0
        };
        let surface = 1.0 + fold;
        let ventricle = {
            let dx = (u[0].abs() - 0.16) / 0.09;
            let dy = u[1] / 0.30;
            let dz = (u[2] - 0.05) / 0.12;
            dx * dx + dy * dy + dz * dz < 1.0
        };
        if r >= surface {
            0
        } else if r >= surface - 0.05 {
            24
        } else if r >= 0.72 * surface {
            if left {
                3
            } else {
                42
            }
        } else if ventricle {
            if left {
                4
            } else {
                43
            }
        } else if left {
            2
        } else {
            41
        }
    });
    LabelVolume::with_freesurfer_roles(grid)
}
