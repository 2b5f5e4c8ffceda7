//! Template extraction around corner clusters.

use crate::error::{Error, Result};
use crate::types::GrayImage;
use crate::vision::corners::Corner;
use crate::vision::morphology::{connected_components, dilate_mask, BinaryMask};

/// An image patch cut from a frame, with its position in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    patch: GrayImage,
    origin: (usize, usize),
}

impl Template {
    /// Wraps a patch; flat patches carry no correlation signal and are refused.
    pub fn new(patch: GrayImage, origin: (usize, usize)) -> Result<Self> {
        if patch.width() == 0 || patch.height() == 0 {
            return Err(Error::validation("empty template"));
        }
        if patch.variance() <= 1e-12 {
            return Err(Error::validation("template has zero variance"));
        }
        Ok(Self { patch, origin })
    }

    /// Cuts a `w x h` template from `frame` at `(x0, y0)`.
    pub fn cut(frame: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        Self::new(frame.crop(x0, y0, w, h)?, (x0, y0))
    }

    pub fn patch(&self) -> &GrayImage {
        &self.patch
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.patch.width()
    }

    pub fn height(&self) -> usize {
        self.patch.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateParams {
    pub dilation_radius: usize,
    pub max_templates: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self {
            dilation_radius: 15,
            max_templates: 8,
            min_size: 16,
            max_size: 128,
        }
    }
}

/// Marks every corner, dilates, and emits the bounding-box patch of each
/// connected component whose sides fall in `[min_size, max_size]`.
///
/// Templates are ranked by the summed score of the corners they contain.
pub fn extract_templates(
    frame: &GrayImage,
    corners: &[Corner],
    params: &TemplateParams,
) -> Vec<Template> {
    let (w, h) = (frame.width(), frame.height());
    if corners.is_empty() || w == 0 || h == 0 {
        return Vec::new();
    }
    let mut mask = BinaryMask::new(w, h);
    let pixel = |c: &Corner| {
        (
            (c.x.round().max(0.0) as usize).min(w - 1),
            (c.y.round().max(0.0) as usize).min(h - 1),
        )
    };
    for c in corners {
        let (x, y) = pixel(c);
        mask.set(x, y, true);
    }
    let dilated = dilate_mask(&mask, params.dilation_radius);
    let (labels, comps) = connected_components(&dilated);

    let mut weight = vec![0.0f64; comps.len()];
    for c in corners {
        let (x, y) = pixel(c);
        weight[labels[y * w + x]] += c.score as f64;
    }

    let mut ranked: Vec<(f64, Template)> = comps
        .iter()
        .filter(|c| {
            let range = params.min_size..=params.max_size;
            range.contains(&c.width()) && range.contains(&c.height())
        })
        .filter_map(|c| {
            Template::cut(frame, c.x0, c.y0, c.width(), c.height())
                .ok()
                .map(|t| (weight[c.label], t))
        })
        .collect();
    // Stable sort keeps raster order among equal weights.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    ranked
        .into_iter()
        .take(params.max_templates)
        .map(|(_, t)| t)
        .collect()
}
