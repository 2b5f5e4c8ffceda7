//! Binary masks, square dilation and connected components.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every pixel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Dilation by a `(2r+1) x (2r+1)` square, computed as two 1-D passes.
pub fn dilate_mask(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        dilate_line(&mask.data[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], radius);
    }
    let mut out = vec![false; w * h];
    let mut col = vec![false; h];
    let mut col_out = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        dilate_line(&col, &mut col_out, radius);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    BinaryMask {
        width: w,
        height: h,
        data: out,
    }
}

fn dilate_line(src: &[bool], dst: &mut [bool], r: usize) {
    let n = src.len();
    // Sliding count of set pixels in [i - r, i + r].
    let mut count = src[..r.min(n)].iter().filter(|&&b| b).count();
    for i in 0..n {
        if i + r < n && src[i + r] {
            count += 1;
        }
        if i > r && src[i - r - 1] {
            count -= 1;
        }
        dst[i] = count > 0;
    }
}

/// Axis-aligned bounding box of one 8-connected component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: usize,
    pub x0: usize,
    pub y0: usize,
    /// Inclusive.
    pub x1: usize,
    pub y1: usize,
    pub area: usize,
}

impl Component {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Labels 8-connected components. Returns the per-pixel label map
/// (`usize::MAX` for background) and the components in raster order of
/// their first pixel.
pub fn connected_components(mask: &BinaryMask) -> (Vec<usize>, Vec<Component>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != usize::MAX {
            continue;
        }
        let label = comps.len();
        let mut comp = Component {
            label,
            x0: start % w,
            y0: start / w,
            x1: start % w,
            y1: start / w,
            area: 0,
        };
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.area += 1;
            comp.x0 = comp.x0.min(x);
            comp.x1 = comp.x1.max(x);
            comp.y0 = comp.y0.min(y);
            comp.y1 = comp.y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.data[j] && labels[j] == usize::MAX {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    (labels, comps)
}
