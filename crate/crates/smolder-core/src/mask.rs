//! Binary masks and the morphological operations used by the labeling chain.
//!
//! Pixels outside the image are treated as background for dilation and
//! erosion. Hole filling uses 4-connectivity for the background; blobs are
//! 8-connected foreground components.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A per-pixel {0,1} label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pixels: Array2<bool>,
}

/// An 8-connected foreground component of a [`BinaryMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Foreground pixels as (row, col), sorted row-major.
    pub pixels: Vec<(usize, usize)>,
    /// Bounding box (top, left, bottom, right), inclusive.
    pub bbox: (usize, usize, usize, usize),
    /// Mean (row, col) of the pixel set.
    pub centroid: (f64, f64),
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

const NEIGHBORS_4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl BinaryMask {
    pub fn new(pixels: Array2<bool>) -> Self {
        Self { pixels }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            pixels: Array2::from_elem((height, width), false),
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            pixels: Array2::from_shape_fn((height, width), |(r, c)| f(r, c)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[[row, col]]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.pixels[[row, col]] = value;
    }

    pub fn pixels(&self) -> &Array2<bool> {
        &self.pixels
    }

    pub fn count_foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    fn check_odd_kernel(kernel: usize) -> Result<usize> {
        if kernel.is_multiple_of(2) || kernel < 3 {
            return Err(Error::config(format!(
                "morphology kernel must be odd and >= 3, got {kernel}"
            )));
        }
        Ok(kernel / 2)
    }

    /// Dilation with a square kernel: a pixel becomes foreground if any pixel
    /// within Chebyshev radius `kernel/2` is foreground.
    pub fn dilate(&self, kernel: usize) -> Result<Self> {
        let radius = Self::check_odd_kernel(kernel)? as i64;
        let (h, w) = self.dims();
        let mut out = Array2::from_elem((h, w), false);
        for r in 0..h {
            for c in 0..w {
                'scan: for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr >= 0
                            && nr < h as i64
                            && nc >= 0
                            && nc < w as i64
                            && self.pixels[[nr as usize, nc as usize]]
                        {
                            out[[r, c]] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        Ok(Self { pixels: out })
    }

    /// Erosion with a square kernel: a pixel stays foreground only if every
    /// pixel within Chebyshev radius `kernel/2` is foreground. Out-of-image
    /// pixels count as background, so foreground touching the border erodes.
    pub fn erode(&self, kernel: usize) -> Result<Self> {
        let radius = Self::check_odd_kernel(kernel)? as i64;
        let (h, w) = self.dims();
        let mut out = Array2::from_elem((h, w), false);
        for r in 0..h {
            for c in 0..w {
                if !self.pixels[[r, c]] {
                    continue;
                }
                let mut keep = true;
                'scan: for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr < 0
                            || nr >= h as i64
                            || nc < 0
                            || nc >= w as i64
                            || !self.pixels[[nr as usize, nc as usize]]
                        {
                            keep = false;
                            break 'scan;
                        }
                    }
                }
                out[[r, c]] = keep;
            }
        }
        Ok(Self { pixels: out })
    }

    pub fn dilate_n(&self, kernel: usize, iters: usize) -> Result<Self> {
        let mut m = self.clone();
        for _ in 0..iters {
            m = m.dilate(kernel)?;
        }
        Ok(m)
    }

    pub fn erode_n(&self, kernel: usize, iters: usize) -> Result<Self> {
        let mut m = self.clone();
        for _ in 0..iters {
            m = m.erode(kernel)?;
        }
        Ok(m)
    }

    /// Set every background region not 4-connected to the image border to
    /// foreground.
    pub fn fill_holes(&self) -> Self {
        let (h, w) = self.dims();
        let mut reachable = Array2::from_elem((h, w), false);
        let mut queue = VecDeque::new();
        let push = |queue: &mut VecDeque<(usize, usize)>,
                    reachable: &mut Array2<bool>,
                    r: usize,
                    c: usize| {
            if !self.pixels[[r, c]] && !reachable[[r, c]] {
                reachable[[r, c]] = true;
                queue.push_back((r, c));
            }
        };
        for r in 0..h {
            push(&mut queue, &mut reachable, r, 0);
            push(&mut queue, &mut reachable, r, w - 1);
        }
        for c in 0..w {
            push(&mut queue, &mut reachable, 0, c);
            push(&mut queue, &mut reachable, h - 1, c);
        }
        while let Some((r, c)) = queue.pop_front() {
            for (dr, dc) in NEIGHBORS_4 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nr < h as i64 && nc >= 0 && nc < w as i64 {
                    push(&mut queue, &mut reachable, nr as usize, nc as usize);
                }
            }
        }
        let pixels =
            Array2::from_shape_fn((h, w), |(r, c)| self.pixels[[r, c]] || !reachable[[r, c]]);
        Self { pixels }
    }

    /// Extract 8-connected foreground components, ordered by the (top, left)
    /// corner of their bounding boxes.
    pub fn blobs(&self) -> Vec<Blob> {
        let (h, w) = self.dims();
        let mut visited = Array2::from_elem((h, w), false);
        let mut blobs = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !self.pixels[[r, c]] || visited[[r, c]] {
                    continue;
                }
                let mut pixels = Vec::new();
                let mut queue = VecDeque::from([(r, c)]);
                visited[[r, c]] = true;
                while let Some((pr, pc)) = queue.pop_front() {
                    pixels.push((pr, pc));
                    for (dr, dc) in NEIGHBORS_8 {
                        let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                        if nr >= 0 && nr < h as i64 && nc >= 0 && nc < w as i64 {
                            let (nr, nc) = (nr as usize, nc as usize);
                            if self.pixels[[nr, nc]] && !visited[[nr, nc]] {
                                visited[[nr, nc]] = true;
                                queue.push_back((nr, nc));
                            }
                        }
                    }
                }
                pixels.sort_unstable();
                let top = pixels.iter().map(|p| p.0).min().unwrap();
                let bottom = pixels.iter().map(|p| p.0).max().unwrap();
                let left = pixels.iter().map(|p| p.1).min().unwrap();
                let right = pixels.iter().map(|p| p.1).max().unwrap();
                let n = pixels.len() as f64;
                let centroid = (
                    pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n,
                    pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n,
                );
                blobs.push(Blob {
                    pixels,
                    bbox: (top, left, bottom, right),
                    centroid,
                });
            }
        }
        blobs.sort_by_key(|b| (b.bbox.0, b.bbox.1));
        blobs
    }

    /// Remove 8-connected components whose area is strictly below
    /// `min_area`. A component of exactly `min_area` pixels is kept.
    pub fn remove_small(&self, min_area: usize) -> Self {
        let mut out = self.clone();
        for blob in self.blobs() {
            if blob.area() < min_area {
                for (r, c) in blob.pixels {
                    out.pixels[[r, c]] = false;
                }
            }
        }
        out
    }

    pub fn intersection_area(&self, other: &Self) -> usize {
        assert_eq!(self.dims(), other.dims());
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .filter(|(&a, &b)| a && b)
            .count()
    }
}
