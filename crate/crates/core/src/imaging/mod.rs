//! Raster containers, bilinear sampling, pyramids and view synthesis.

pub mod io;
mod sample;
mod synth;

pub use sample::{bilinear_sample, Sample, BORDER_TOLERANCE, MAX_CHANNELS};
pub use synth::{synthesize_view, SynthesizedView, WarpField};

use crate::error::{Error, Result};

/// Row-major multi-channel raster. Photometric images hold values in `[0, 1]`;
/// derived rasters (gradients, SSIM maps) may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!((1..=MAX_CHANNELS).contains(&channels), "unsupported channel count {channels}");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_CHANNELS).contains(&channels) {
            return Err(Error::Contract(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Contract(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("image contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Checks the photometric range `[0, 1]`.
    pub fn validate_intensity(&self) -> Result<()> {
        if self.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Contract("image values outside [0, 1]".into()))
        }
    }

    /// Single channel `c` as its own raster.
    pub fn channel(&self, c: usize) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    fn check_downsample(width: usize, height: usize) -> Result<()> {
        if width < 2 || height < 2 {
            return Err(Error::Domain(format!("cannot downsample a {width}x{height} raster")));
        }
        Ok(())
    }
}

/// 2x2 box average with floored dimensions.
pub fn downsample(img: &Image) -> Result<Image> {
    Image::check_downsample(img.width, img.height)?;
    let (w, h) = (img.width / 2, img.height / 2);
    Ok(Image::from_fn(w, h, img.channels, |x, y, c| {
        0.25 * (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
    }))
}

/// Forward difference along x; the last column is zero.
pub fn gradient_x(img: &Image) -> Image {
    Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        if x + 1 < img.width {
            img.get(x + 1, y, c) - img.get(x, y, c)
        } else {
            0.0
        }
    })
}

/// Forward difference along y; the last row is zero.
pub fn gradient_y(img: &Image) -> Image {
    Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        if y + 1 < img.height {
            img.get(x, y + 1, c) - img.get(x, y, c)
        } else {
            0.0
        }
    })
}

/// Depth in metres, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub const MIN_DEPTH: f64 = 0.1;
    pub const MAX_DEPTH: f64 = 80.0;

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract(format!(
                "depth length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn scaled(&self, c: f64) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| d * c).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// True when every value lies in `[MIN_DEPTH, MAX_DEPTH]`.
    pub fn in_valid_range(&self) -> bool {
        self.data
            .iter()
            .all(|d| (Self::MIN_DEPTH..=Self::MAX_DEPTH).contains(d))
    }

    pub fn downsample(&self) -> Result<DepthMap> {
        Image::check_downsample(self.width, self.height)?;
        let (w, h) = (self.width / 2, self.height / 2);
        Ok(DepthMap::from_fn(w, h, |x, y| {
            0.25 * (self.get(2 * x, 2 * y)
                + self.get(2 * x + 1, 2 * y)
                + self.get(2 * x, 2 * y + 1)
                + self.get(2 * x + 1, 2 * y + 1))
        }))
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    pub fn from_image(img: &Image) -> Result<DepthMap> {
        if img.channels != 1 {
            return Err(Error::Contract("depth maps have a single channel".into()));
        }
        DepthMap::from_vec(img.width, img.height, img.data.clone())
    }
}

/// Adjoint of [`DepthMap::downsample`]: spreads a coarse-level gradient back
/// onto the finer level it was averaged from.
pub fn downsample_adjoint(coarse: &[f64], fine_width: usize, fine_height: usize) -> Vec<f64> {
    let (w, h) = (fine_width / 2, fine_height / 2);
    debug_assert_eq!(coarse.len(), w * h);
    let mut fine = vec![0.0; fine_width * fine_height];
    for y in 0..h {
        for x in 0..w {
            let g = 0.25 * coarse[y * w + x];
            fine[2 * y * fine_width + 2 * x] += g;
            fine[2 * y * fine_width + 2 * x + 1] += g;
            fine[(2 * y + 1) * fine_width + 2 * x] += g;
            fine[(2 * y + 1) * fine_width + 2 * x + 1] += g;
        }
    }
    fine
}

/// Adjoint of [`downsample`] for multi-channel images.
pub fn downsample_adjoint_image(coarse: &Image, fine_width: usize, fine_height: usize) -> Image {
    let mut fine = Image::zeros(fine_width, fine_height, coarse.channels);
    for y in 0..coarse.height {
        for x in 0..coarse.width {
            for c in 0..coarse.channels {
                let g = 0.25 * coarse.get(x, y, c);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let i = ((2 * y + dy) * fine_width + 2 * x + dx) * coarse.channels + c;
                    fine.data[i] += g;
                }
            }
        }
    }
    fine
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract("mask length does not match dimensions".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Halves the resolution; a coarse pixel is set only when all four of
    /// its children are.
    pub fn downsample_all(&self) -> Result<BinaryMask> {
        Image::check_downsample(self.width, self.height)?;
        Ok(BinaryMask::from_fn(self.width / 2, self.height / 2, |x, y| {
            self.get(2 * x, 2 * y)
                && self.get(2 * x + 1, 2 * y)
                && self.get(2 * x, 2 * y + 1)
                && self.get(2 * x + 1, 2 * y + 1)
        }))
    }
}

/// Pixel-wise labelling of a frame into the background (label 0) and object
/// regions (labels `1..regions`). Each pixel has exactly one label, so the
/// derived binary masks always sum to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    width: usize,
    height: usize,
    regions: usize,
    labels: Vec<u32>,
}

impl Partition {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            regions: 1,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, regions: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Contract("label length does not match dimensions".into()));
        }
        if regions == 0 || labels.iter().any(|&l| l as usize >= regions) {
            return Err(Error::Contract("label out of range".into()));
        }
        Ok(Self {
            width,
            height,
            regions,
            labels,
        })
    }

    /// Builds a partition from masks `[background, object 1, ...]`, failing
    /// unless every pixel is covered by exactly one mask.
    pub fn from_masks(masks: &[BinaryMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Contract("at least the background mask is required".into()))?;
        let (w, h) = (first.width, first.height);
        if masks.iter().any(|m| m.width != w || m.height != h) {
            return Err(Error::Contract("masks differ in size".into()));
        }
        let mut labels = vec![0u32; w * h];
        for (i, label) in labels.iter_mut().enumerate() {
            let mut owner = None;
            for (r, m) in masks.iter().enumerate() {
                if m.data[i] {
                    if owner.is_some() {
                        return Err(Error::Contract(format!("masks overlap at pixel {i}")));
                    }
                    owner = Some(r as u32);
                }
            }
            *label = owner.ok_or_else(|| Error::Contract(format!("pixel {i} not covered by any mask")))?;
        }
        Ok(Self {
            width: w,
            height: h,
            regions: masks.len(),
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn mask(&self, region: usize) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l as usize == region).collect(),
        }
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        (0..self.regions).map(|r| self.mask(r)).collect()
    }

    /// Majority label of each 2x2 block; ties go to the smallest label.
    pub fn downsample(&self) -> Result<Partition> {
        Image::check_downsample(self.width, self.height)?;
        let (w, h) = (self.width / 2, self.height / 2);
        let mut labels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut block = [
                    self.label(2 * x, 2 * y),
                    self.label(2 * x + 1, 2 * y),
                    self.label(2 * x, 2 * y + 1),
                    self.label(2 * x + 1, 2 * y + 1),
                ];
                block.sort_unstable();
                let mut best = (0usize, block[0]);
                let mut i = 0;
                while i < 4 {
                    let mut j = i;
                    while j < 4 && block[j] == block[i] {
                        j += 1;
                    }
                    if j - i > best.0 {
                        best = (j - i, block[i]);
                    }
                    i = j;
                }
                labels.push(best.1);
            }
        }
        Ok(Partition {
            width: w,
            height: h,
            regions: self.regions,
            labels,
        })
    }
}

/// Successive 2x box downsamplings; level 0 is the input.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<Image>,
}

impl ImagePyramid {
    pub fn new(img: &Image, num_levels: usize) -> Result<Self> {
        if num_levels == 0 {
            return Err(Error::Domain("pyramid needs at least one level".into()));
        }
        let mut levels = vec![img.clone()];
        for _ in 1..num_levels {
            let next = downsample(levels.last().expect("non-empty"))?;
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Image {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
