//! Connected components, morphological dilation, and surface extraction on
//! binary masks.

use crate::volume::{BinaryVolume, Dims};

/// Neighborhood definition for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Faces, edges, and corners.
    TwentySix,
}

impl Connectivity {
    /// Offsets of neighbors that precede a voxel in raster order
    /// (z, then y, then x).
    fn backward_offsets(self) -> Vec<(i32, i32, i32)> {
        let mut out = Vec::new();
        for dz in -1i32..=0 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if (dz, dy, dx) >= (0, 0, 0) {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    match self {
                        Connectivity::Six if manhattan != 1 => continue,
                        _ => out.push((dx, dy, dz)),
                    }
                }
            }
        }
        out
    }
}

/// Result of component labeling: `labels[i]` is 0 for background, otherwise
/// a component id in `1..=count`, assigned in order of first raster
/// appearance. `sizes[id - 1]` is the voxel count of component `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    /// Voxel indices of one component.
    pub fn voxels_of(&self, id: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Inclusive bounding box of one component.
    pub fn bbox_of(&self, id: u32) -> ([usize; 3], [usize; 3]) {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for (i, l) in self.labels.iter().enumerate() {
            if *l == id {
                let (x, y, z) = self.dims.coords(i);
                let p = [x, y, z];
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        (lo, hi)
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: vec![0] } // slot 0 unused; ids start at 1
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let gp = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = gp;
            i = gp;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels connected components of `mask` under the given connectivity using
/// a two-pass union-find scan. Ids follow first raster appearance, so the
/// component containing the lowest-index foreground voxel is id 1.
pub fn connected_components(mask: &BinaryVolume, connectivity: Connectivity) -> ComponentLabeling {
    let dims = mask.dims;
    let (nx, ny, nz) = (dims.nx as i32, dims.ny as i32, dims.nz as i32);
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![0u32; mask.data.len()];
    let mut uf = UnionFind::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = dims.index(x as usize, y as usize, z as usize);
                if !mask.data[i] {
                    continue;
                }
                let mut label = 0u32;
                for &(dx, dy, dz) in &offsets {
                    let (px, py, pz) = (x + dx, y + dy, z + dz);
                    if px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny || pz >= nz {
                        continue;
                    }
                    let p = dims.index(px as usize, py as usize, pz as usize);
                    let nb = provisional[p];
                    if nb != 0 {
                        if label == 0 {
                            label = nb;
                        } else {
                            uf.union(label, nb);
                        }
                    }
                }
                if label == 0 {
                    label = uf.make();
                }
                provisional[i] = label;
            }
        }
    }

    // Second pass: collapse to roots and relabel in first-appearance order.
    let mut final_of_root = vec![0u32; uf.parent.len()];
    let mut count = 0u32;
    let mut sizes = Vec::new();
    let mut labels = vec![0u32; mask.data.len()];
    for (i, p) in provisional.iter().enumerate() {
        if *p == 0 {
            continue;
        }
        let root = uf.find(*p);
        let id = if final_of_root[root as usize] != 0 {
            final_of_root[root as usize]
        } else {
            count += 1;
            sizes.push(0);
            final_of_root[root as usize] = count;
            count
        };
        labels[i] = id;
        sizes[(id - 1) as usize] += 1;
    }

    ComponentLabeling {
        dims,
        labels,
        count: count as usize,
        sizes,
    }
}

/// Dilates a mask by `iterations` applications of the 3x3x3 box element,
/// i.e. a Chebyshev ball of radius `iterations`. Zero iterations is the
/// identity.
pub fn dilate(mask: &BinaryVolume, iterations: usize) -> BinaryVolume {
    let dims = mask.dims;
    let mut cur = mask.data.clone();
    let mut next = vec![false; cur.len()];
    for _ in 0..iterations {
        // The box element is separable: one +/-1 pass per axis.
        pass(&cur, &mut next, dims, 1, dims.nx);
        pass(&next, &mut cur, dims, dims.nx, dims.ny);
        pass(&cur, &mut next, dims, dims.nx * dims.ny, dims.nz);
        std::mem::swap(&mut cur, &mut next);
    }
    BinaryVolume { dims, data: cur }
}

/// One +/-1 max pass along the axis with the given stride and extent.
fn pass(input: &[bool], output: &mut [bool], dims: Dims, stride: usize, extent: usize) {
    let n = dims.voxel_count();
    for i in 0..n {
        let pos = (i / stride) % extent;
        let mut v = input[i];
        if !v && pos > 0 {
            v = input[i - stride];
        }
        if !v && pos + 1 < extent {
            v = input[i + stride];
        }
        output[i] = v;
    }
}

/// Foreground voxels with at least one face neighbor that is background or
/// outside the volume.
pub fn surface_voxels(mask: &BinaryVolume) -> BinaryVolume {
    let dims = mask.dims;
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let mut out = vec![false; mask.data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = dims.index(x, y, z);
                if !mask.data[i] {
                    continue;
                }
                let exposed = x == 0
                    || x == nx - 1
                    || y == 0
                    || y == ny - 1
                    || z == 0
                    || z == nz - 1
                    || !mask.data[i - 1]
                    || !mask.data[i + 1]
                    || !mask.data[i - nx]
                    || !mask.data[i + nx]
                    || !mask.data[i - nx * ny]
                    || !mask.data[i + nx * ny];
                out[i] = exposed;
            }
        }
    }
    BinaryVolume { dims, data: out }
}
