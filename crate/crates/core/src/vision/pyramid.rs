use crate::error::{Error, Result};
use crate::types::GrayImage;
use crate::vision::filters::blur_decimate;

/// Gaussian image pyramid; level 0 is the input.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
}

impl Pyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &GrayImage {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Largest level count whose coarsest level is still at least 8x8.
pub fn max_levels(width: usize, height: usize) -> usize {
    let (mut w, mut h, mut n) = (width, height, 0);
    while w >= 8 && h >= 8 {
        n += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    n
}

pub fn build_pyramid(img: &GrayImage, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::validation("pyramid needs at least one level"));
    }
    let allowed = max_levels(img.width(), img.height());
    if levels > allowed {
        return Err(Error::validation(format!(
            "{levels} pyramid levels requested but a {}x{} image supports {allowed}",
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = blur_decimate(out.last().unwrap());
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}
