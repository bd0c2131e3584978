//! Segmentation label maps to detection boxes.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array3, ArrayView3};

use crate::volume::{Box3, LabelVolume};

/// Components must be strictly larger than this (mm³): a sphere of 3 mm
/// diameter.
pub const MIN_COMPONENT_MM3: f64 = 14.14;

/// A 26-connected component of nonzero voxels, in index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// `[x, y, z]` inclusive bounds.
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub voxels: usize,
    pub label: u32,
}

/// Components in raster order of their first voxel (z, then y, then x).
pub fn connected_components(labels: ArrayView3<'_, u32>) -> Vec<Component> {
    label_components(labels).1
}

/// Like [`connected_components`], also returning a map of 1-based component
/// ids (0 for background) in the order of the returned list.
pub fn label_components(labels: ArrayView3<'_, u32>) -> (Array3<u32>, Vec<Component>) {
    let (nz, ny, nx) = labels.dim();
    let mut ids = Array3::<u32>::zeros((nz, ny, nx));
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if labels[[z, y, x]] == 0 || ids[[z, y, x]] != 0 {
                    continue;
                }
                let id = out.len() as u32 + 1;
                ids[[z, y, x]] = id;
                queue.push_back((z, y, x));
                let mut comp = Component { min: [x, y, z], max: [x, y, z], voxels: 0, label: 0 };
                let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                while let Some((cz, cy, cx)) = queue.pop_front() {
                    comp.voxels += 1;
                    *counts.entry(labels[[cz, cy, cx]]).or_insert(0) += 1;
                    for (a, v) in [cx, cy, cz].into_iter().enumerate() {
                        comp.min[a] = comp.min[a].min(v);
                        comp.max[a] = comp.max[a].max(v);
                    }
                    for qz in cz.saturating_sub(1)..(cz + 2).min(nz) {
                        for qy in cy.saturating_sub(1)..(cy + 2).min(ny) {
                            for qx in cx.saturating_sub(1)..(cx + 2).min(nx) {
                                if ids[[qz, qy, qx]] == 0 && labels[[qz, qy, qx]] != 0 {
                                    ids[[qz, qy, qx]] = id;
                                    queue.push_back((qz, qy, qx));
                                }
                            }
                        }
                    }
                }
                // majority label; BTreeMap order makes the lowest label win ties
                comp.label = counts.iter().fold((0, 0), |best, (&l, &n)| if n > best.1 { (l, n) } else { best }).0;
                out.push(comp);
            }
        }
    }
    (ids, out)
}

/// One box per component larger than [`MIN_COMPONENT_MM3`], enclosing the
/// component's voxels edge to edge, at confidence 1.
pub fn seg_to_boxes(labels: &LabelVolume) -> Vec<Box3> {
    let [sx, sy, sz] = labels.spacing;
    let voxel_mm3 = sx * sy * sz;
    connected_components(labels.labels.view())
        .into_iter()
        .filter(|c| c.voxels as f64 * voxel_mm3 > MIN_COMPONENT_MM3)
        .map(|c| {
            let mut min = [0.0; 3];
            let mut max = [0.0; 3];
            for a in 0..3 {
                min[a] = labels.origin[a] + (c.min[a] as f64 - 0.5) * labels.spacing[a];
                max[a] = labels.origin[a] + (c.max[a] as f64 + 0.5) * labels.spacing[a];
            }
            Box3 { min, max, class_id: c.label, confidence: 1.0 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(a: Array3<u32>) -> LabelVolume {
        LabelVolume::new(a, [1.0, 1.0, 1.0], [0.0; 3]).unwrap()
    }

    /// Union-find over all 26-neighbour pairs; independent of the BFS.
    fn oracle(labels: &Array3<u32>, spacing: [f64; 3]) -> Vec<([usize; 3], [usize; 3], usize, u32)> {
        let (nz, ny, nx) = labels.dim();
        let n = nz * ny * nx;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let id = |z: usize, y: usize, x: usize| (z * ny + y) * nx + x;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if labels[[z, y, x]] == 0 {
                        continue;
                    }
                    for z2 in z.saturating_sub(1)..(z + 2).min(nz) {
                        for y2 in y.saturating_sub(1)..(y + 2).min(ny) {
                            for x2 in x.saturating_sub(1)..(x + 2).min(nx) {
                                if labels[[z2, y2, x2]] != 0 {
                                    let (a, b) = (find(&mut parent, id(z, y, x)), find(&mut parent, id(z2, y2, x2)));
                                    parent[a] = b;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if labels[[z, y, x]] != 0 {
                        let r = find(&mut parent, id(z, y, x));
                        first.entry(r).or_insert(id(z, y, x));
                        groups.entry(r).or_default().push((z, y, x));
                    }
                }
            }
        }
        let mut out: Vec<(usize, ([usize; 3], [usize; 3], usize, u32))> = groups
            .into_iter()
            .filter(|(_, v)| v.len() as f64 * spacing.iter().product::<f64>() > MIN_COMPONENT_MM3)
            .map(|(r, v)| {
                let mn = [v.iter().map(|p| p.2).min().unwrap(), v.iter().map(|p| p.1).min().unwrap(), v.iter().map(|p| p.0).min().unwrap()];
                let mx = [v.iter().map(|p| p.2).max().unwrap(), v.iter().map(|p| p.1).max().unwrap(), v.iter().map(|p| p.0).max().unwrap()];
                let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                for &(z, y, x) in &v {
                    *counts.entry(labels[[z, y, x]]).or_default() += 1;
                }
                let top = *counts.values().max().unwrap();
                let label = *counts.iter().find(|(_, &c)| c == top).unwrap().0;
                (first[&r], (mn, mx, v.len(), label))
            })
            .collect();
        out.sort_by_key(|e| e.0);
        out.into_iter().map(|e| e.1).collect()
    }

    #[test]
    fn empty_and_tiny() {
        assert!(seg_to_boxes(&lv(Array3::zeros((4, 4, 4)))).is_empty());
        let mut a = Array3::zeros((4, 4, 4));
        a[[1, 1, 1]] = 1;
        assert!(seg_to_boxes(&lv(a)).is_empty());
    }

    #[test]
    fn block_gives_tight_box() {
        let mut a = Array3::zeros((8, 8, 8));
        for z in 2..5 {
            for y in 3..6 {
                for x in 1..4 {
                    a[[z, y, x]] = 2;
                }
            }
        }
        let b = seg_to_boxes(&lv(a));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].min, [0.5, 2.5, 1.5]);
        assert_eq!(b[0].max, [3.5, 5.5, 4.5]);
        assert_eq!((b[0].class_id, b[0].confidence), (2, 1.0));
    }

    #[test]
    fn diagonal_voxels_join_and_majority_label_wins() {
        let mut a = Array3::zeros((6, 6, 6));
        let path = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4)];
        for (i, &(z, y, x)) in path.iter().enumerate() {
            a[[z, y, x]] = if i < 2 { 7 } else { 3 };
        }
        let l = LabelVolume::new(a, [2.0, 2.0, 2.0], [0.0; 3]).unwrap();
        let b = seg_to_boxes(&l);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].class_id, 3);
    }

    #[test]
    fn tie_goes_to_lowest_label() {
        let mut a = Array3::zeros((4, 4, 4));
        a[[0, 0, 0]] = 5;
        a[[0, 0, 1]] = 2;
        let l = LabelVolume::new(a, [3.0, 3.0, 3.0], [0.0; 3]).unwrap();
        assert_eq!(seg_to_boxes(&l)[0].class_id, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_union_find_oracle(
            bits in proptest::collection::vec(0u32..4, 16 * 16 * 16),
            density in 0.05f64..0.5,
            sp in 0.6f64..2.0,
        ) {
            let a = Array3::from_shape_vec((16, 16, 16), bits.iter().enumerate()
                .map(|(i, &b)| if ((i as f64 * 0.618034).fract()) < density { b } else { 0 }).collect()).unwrap();
            let spacing = [sp, 1.0, 1.3];
            let got: Vec<_> = connected_components(a.view())
                .into_iter()
                .filter(|c| c.voxels as f64 * spacing.iter().product::<f64>() > MIN_COMPONENT_MM3)
                .map(|c| (c.min, c.max, c.voxels, c.label))
                .collect();
            prop_assert_eq!(got, oracle(&a, spacing));
        }
    }
}
