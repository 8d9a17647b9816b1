//! Binary instance masks: overlap measurement, connected components, and
//! boundary extraction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A binary mask over an H×W pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

/// Overlap between two masks. `value` is |a∩b| / |a∪b|; the degenerate
/// empty-against-empty case is reported as 0 with `both_empty` set so
/// callers can treat it specially.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouOutcome {
    pub value: f64,
    pub both_empty: bool,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Mask> {
        if data.len() != h * w {
            return Err(Error::Dimension(format!(
                "mask data has {} entries for a {h}×{w} grid",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Mask {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Mask { h, w, data }
    }

    /// Threshold a single-channel map: pixels strictly above `threshold`.
    pub fn from_tensor(t: &Tensor, threshold: f64) -> Result<Mask> {
        let (h, w, c) = t.hwc()?;
        if c != 1 {
            return Err(Error::Dimension(format!(
                "mask source must have one channel, got {c}"
            )));
        }
        Ok(Mask {
            h,
            w,
            data: t.data().iter().map(|&v| v > threshold).collect(),
        })
    }

    /// 0/1 tensor of shape H×W×1.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.h, self.w, 1],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are consistent")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// Intersection-over-union against another mask of the same dims.
    pub fn iou(&self, other: &Mask) -> Result<IouOutcome> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::Dimension(format!(
                "mask dims differ: {}×{} vs {}×{}",
                self.h, self.w, other.h, other.w
            )));
        }
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            return Ok(IouOutcome {
                value: 0.0,
                both_empty: true,
            });
        }
        Ok(IouOutcome {
            value: inter as f64 / union as f64,
            both_empty: false,
        })
    }

    /// Split into 8-connected components.
    ///
    /// Deterministic: components are ordered by their first pixel in raster
    /// order, and each is grown by breadth-first search with a fixed
    /// neighbour order.
    pub fn connected_components(&self) -> Vec<Mask> {
        let mut seen = vec![false; self.data.len()];
        let mut components = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            let mut comp = Mask::zeros(self.h, self.w);
            seen[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                comp.data[p] = true;
                let (y, x) = (p / self.w, p % self.w);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= self.h as i64 || nx >= self.w as i64 {
                            continue;
                        }
                        let q = ny as usize * self.w + nx as usize;
                        if self.data[q] && !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
            components.push(comp);
        }
        components
    }

    /// Morphological inner boundary under 8-connectivity: set pixels with at
    /// least one background 8-neighbour inside the grid. Pixels touching the
    /// image border are not boundary for that reason alone. Returned in
    /// row-major order.
    pub fn inner_boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if !self.get(y, x) {
                    continue;
                }
                let mut exposed = false;
                'nbrs: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= self.h as i64 || nx >= self.w as i64 {
                            continue;
                        }
                        if !self.get(ny as usize, nx as usize) {
                            exposed = true;
                            break 'nbrs;
                        }
                    }
                }
                if exposed {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_of(h: usize, w: usize, set: &[(usize, usize)]) -> Mask {
        let mut m = Mask::zeros(h, w);
        for &(y, x) in set {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn constructor_checks_length() {
        assert!(Mask::new(2, 3, vec![false; 6]).is_ok());
        assert!(matches!(
            Mask::new(2, 3, vec![false; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn iou_fixtures() {
        let a = mask_of(1, 6, &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        let b = mask_of(1, 6, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let r = a.iou(&b).unwrap();
        assert_eq!(r.value, 0.6);
        assert!(!r.both_empty);

        assert_eq!(a.iou(&a).unwrap().value, 1.0);

        let disjoint = mask_of(1, 6, &[(0, 5)]);
        assert_eq!(a.iou(&disjoint).unwrap().value, 0.0);

        let empty = Mask::zeros(1, 6);
        let r = empty.iou(&empty).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.both_empty);

        // One of three union pixels overlaps.
        let p = mask_of(2, 2, &[(0, 0), (0, 1)]);
        let q = mask_of(2, 2, &[(0, 1), (1, 1)]);
        assert!((p.iou(&q).unwrap().value - 1.0 / 3.0).abs() < 1e-15);

        let other = Mask::zeros(2, 3);
        assert!(matches!(a.iou(&other), Err(Error::Dimension(_))));
    }

    #[test]
    fn iou_is_symmetric() {
        let a = mask_of(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        let b = mask_of(3, 3, &[(1, 1), (1, 2)]);
        assert_eq!(a.iou(&b).unwrap(), b.iou(&a).unwrap());
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = mask_of(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        let comps = m.connected_components();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].count(), 3);
    }

    #[test]
    fn separated_blobs_order_by_raster_position() {
        let m = mask_of(5, 5, &[(4, 0), (0, 4), (2, 2)]);
        let comps = m.connected_components();
        assert_eq!(comps.len(), 3);
        assert!(comps[0].get(0, 4));
        assert!(comps[1].get(2, 2));
        assert!(comps[2].get(4, 0));
    }

    #[test]
    fn component_extremes() {
        assert!(Mask::zeros(4, 4).connected_components().is_empty());
        let full = Mask::from_fn(4, 4, |_, _| true);
        let comps = full.connected_components();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0], full);
    }

    #[test]
    fn components_partition_the_mask() {
        let m = Mask::from_fn(8, 8, |y, x| (x + 2 * y) % 5 < 2);
        let comps = m.connected_components();
        let mut union = Mask::zeros(8, 8);
        let mut total = 0;
        for c in &comps {
            total += c.count();
            for y in 0..8 {
                for x in 0..8 {
                    if c.get(y, x) {
                        assert!(!union.get(y, x), "components must be disjoint");
                        union.set(y, x, true);
                    }
                }
            }
        }
        assert_eq!(total, m.count());
        assert_eq!(union, m);
        // Deterministic across runs.
        assert_eq!(comps, m.connected_components());
    }

    #[test]
    fn boundary_of_a_solid_block_is_its_ring() {
        let m = Mask::from_fn(5, 5, |y, x| (1..=3).contains(&y) && (1..=3).contains(&x));
        let boundary = m.inner_boundary();
        assert_eq!(boundary.len(), 8);
        assert!(!boundary.contains(&(2, 2)), "interior pixel is not boundary");
        for &(y, x) in &boundary {
            assert!(m.get(y, x));
        }
    }

    #[test]
    fn border_touching_pixels_are_not_boundary_without_background() {
        let full = Mask::from_fn(4, 4, |_, _| true);
        assert!(full.inner_boundary().is_empty());

        // Left half: only the column next to the transition is boundary.
        let half = Mask::from_fn(6, 8, |_, x| x < 4);
        let boundary = half.inner_boundary();
        assert_eq!(boundary.len(), 6);
        assert!(boundary.iter().all(|&(_, x)| x == 3));
    }

    #[test]
    fn lone_pixel_is_its_own_boundary() {
        let m = mask_of(5, 5, &[(2, 2)]);
        assert_eq!(m.inner_boundary(), vec![(2, 2)]);
    }

    #[test]
    fn tensor_round_trip_and_threshold() {
        let t = Tensor::new(&[2, 2, 1], vec![0.2, 0.6, 0.5, 0.9]).unwrap();
        let m = Mask::from_tensor(&t, 0.5).unwrap();
        assert_eq!(m.data(), &[false, true, false, true]);
        let back = m.to_tensor();
        assert_eq!(back.data(), &[0.0, 1.0, 0.0, 1.0]);

        let multi = Tensor::zeros(&[2, 2, 3]).unwrap();
        assert!(matches!(
            Mask::from_tensor(&multi, 0.5),
            Err(Error::Dimension(_))
        ));
    }
}
