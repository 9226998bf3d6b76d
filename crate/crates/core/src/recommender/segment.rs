//! Graph-based segmentation of a luminance plane on the 4-connected grid.

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    /// Scale of the adaptive threshold `scale / |C|`, in L units.
    pub scale: f64,
    /// Components smaller than this are merged into a neighbour.
    pub min_size: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { scale: 100.0, min_size: 50 }
    }
}

/// A connected region; `pixels` holds row-major indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub pixels: Vec<usize>,
}

impl Segment {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Largest edge weight inside the component (its MST maximum).
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest { parent: (0..n).collect(), size: vec![1; n], internal: vec![0.0; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize, weight: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = weight.max(self.internal[big]).max(self.internal[small]);
    }
}

/// Segments `image` into regions. Returned segments are sorted by area,
/// largest first, ties broken by their first pixel.
pub fn segment_gray(image: &GrayImage, params: &SegmentParams) -> Result<Vec<Segment>> {
    if !(params.scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("segmentation scale {} must be >= 0", params.scale)));
    }
    let (w, h) = (image.width(), image.height());
    let v = image.data();
    let mut edges = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edges.push(((v[i] - v[i + 1]).abs(), i, i + 1));
            }
            if y + 1 < h {
                edges.push(((v[i] - v[i + w]).abs(), i, i + w));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut forest = Forest::new(w * h);
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra] + params.scale / forest.size[ra] as f64;
        let tb = forest.internal[rb] + params.scale / forest.size[rb] as f64;
        if weight <= ta.min(tb) {
            forest.union(ra, rb, weight);
        }
    }
    // Small components join across their weakest boundary edge first.
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra != rb && (forest.size[ra] < params.min_size || forest.size[rb] < params.min_size) {
            forest.union(ra, rb, weight);
        }
    }

    let mut slot = vec![usize::MAX; w * h];
    let mut segments: Vec<Segment> = Vec::new();
    for i in 0..w * h {
        let root = forest.find(i);
        if slot[root] == usize::MAX {
            slot[root] = segments.len();
            segments.push(Segment { pixels: Vec::new() });
        }
        segments[slot[root]].pixels.push(i);
    }
    segments.sort_by(|a, b| b.area().cmp(&a.area()).then(a.pixels[0].cmp(&b.pixels[0])));
    Ok(segments)
}

/// Per-pixel index into `segments`, or `None` if `segments` is not a
/// partition of `len` pixels.
pub fn label_map(segments: &[Segment], len: usize) -> Option<Vec<usize>> {
    let mut labels = vec![usize::MAX; len];
    for (s, seg) in segments.iter().enumerate() {
        if seg.pixels.is_empty() {
            return None;
        }
        for &p in &seg.pixels {
            if p >= len || labels[p] != usize::MAX {
                return None;
            }
            labels[p] = s;
        }
    }
    labels.iter().all(|&l| l != usize::MAX).then_some(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
    }

    #[test]
    fn constant_is_one_segment() {
        let segs = segment_gray(&plane(20, 15, |_, _| 42.0), &SegmentParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].area(), 300);
    }

    #[test]
    fn two_halves() {
        let img = plane(32, 24, |x, _| if x < 16 { 20.0 } else { 80.0 });
        let segs = segment_gray(&img, &SegmentParams::default()).unwrap();
        assert_eq!(segs.len(), 2);
        let left: Vec<usize> = (0..32 * 24).filter(|i| i % 32 < 16).collect();
        let right: Vec<usize> = (0..32 * 24).filter(|i| i % 32 >= 16).collect();
        assert_eq!(segs[0].pixels, left);
        assert_eq!(segs[1].pixels, right);
    }

    #[test]
    fn small_islands_are_absorbed() {
        let img = plane(30, 30, |x, y| if (10..13).contains(&x) && (10..13).contains(&y) { 90.0 } else { 10.0 });
        let segs = segment_gray(&img, &SegmentParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        let keep = segment_gray(&img, &SegmentParams { min_size: 1, ..SegmentParams::default() }).unwrap();
        assert_eq!(keep.len(), 2);
        assert_eq!(keep[1].area(), 9);
    }

    #[test]
    fn label_map_detects_overlap() {
        let a = Segment { pixels: vec![0, 1] };
        let b = Segment { pixels: vec![1, 2] };
        assert!(label_map(&[a.clone(), Segment { pixels: vec![2] }], 3).is_some());
        assert!(label_map(&[a.clone(), b], 3).is_none());
        assert!(label_map(&[a], 3).is_none());
    }

    proptest! {
        #[test]
        fn segments_partition(w in 1usize..20, h in 1usize..20, seed in any::<u64>(), scale in 0.0f64..300.0, min_size in 1usize..40) {
            let img = plane(w, h, |x, y| ((x as u64 * 31 + y as u64 * 17) ^ seed) as f64 % 100.0);
            let segs = segment_gray(&img, &SegmentParams { scale, min_size }).unwrap();
            prop_assert!(label_map(&segs, w * h).is_some());
            prop_assert!(segs.windows(2).all(|p| p[0].area() >= p[1].area()));
        }
    }
}
