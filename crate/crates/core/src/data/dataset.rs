use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{ArrayFile, IMAGES_MAGIC};

/// A 2D image with intensities in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    /// `[h,w]`.
    pub pixels: Tensor,
    pub mask: Option<Vec<bool>>,
    /// Normalized `(x, y)` coordinates.
    pub landmarks: Vec<[f64; 2]>,
}

impl Image {
    pub fn new(pixels: Tensor) -> Result<Self> {
        if pixels.shape().len() != 2 {
            return Err(Error::shape("image", &[pixels.shape()]));
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image", "intensities must lie in [0,1]"));
        }
        Ok(Self {
            pixels,
            mask: None,
            landmarks: Vec::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub generator: String,
    /// Class label of every image.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub images: Vec<Image>,
}

const LANDMARKS_FILE: &str = "landmarks.csv";
const MASKS_FILE: &str = "masks.bin";

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    image: usize,
    index: usize,
    x: f64,
    y: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.images.first().map(|i| (i.height(), i.width())).unwrap_or((0, 0))
    }

    /// Seed-split convention: the last `test` images are held out.
    pub fn split(&self, test: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let cut = self.len().saturating_sub(test);
        (0..cut, cut..self.len())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (h, w) = self.shape();
        let stack = |f: &dyn Fn(&Image) -> Vec<f64>| ArrayFile {
            extents: vec![self.len(), h, w],
            data: self.images.iter().flat_map(f).collect(),
        };
        stack(&|i| i.pixels.to_vec()).write(&dir.join("images.bin"), IMAGES_MAGIC)?;
        if !self.is_empty() && self.images.iter().all(|i| i.mask.is_some()) {
            let masks = stack(&|i| i.mask.as_ref().expect("checked").iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            masks.write(&dir.join(MASKS_FILE), IMAGES_MAGIC)?;
        }
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta_path, e))?;
        if self.images.iter().any(|i| !i.landmarks.is_empty()) {
            let path = dir.join(LANDMARKS_FILE);
            let mut wtr = csv::Writer::from_path(&path).map_err(|e| Error::format(path.display().to_string(), 0, e.to_string()))?;
            for (image, img) in self.images.iter().enumerate() {
                for (index, p) in img.landmarks.iter().enumerate() {
                    wtr.serialize(LandmarkRow { image, index, x: p[0], y: p[1] })
                        .map_err(|e| Error::format(path.display().to_string(), 0, e.to_string()))?;
                }
            }
            wtr.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let arr = ArrayFile::read(&dir.join("images.bin"), IMAGES_MAGIC)?;
        if arr.extents.len() != 3 || arr.values_per_point() != 1 || arr.extents[0] != meta.count {
            return Err(Error::format(
                dir.join("images.bin").display().to_string(),
                8,
                format!("extents {:?} do not match {} images", arr.extents, meta.count),
            ));
        }
        let (n, h, w) = (arr.extents[0], arr.extents[1], arr.extents[2]);
        let mut images = (0..n)
            .map(|k| Image::new(Tensor::new(&[h, w], arr.data[k * h * w..(k + 1) * h * w].to_vec())?))
            .collect::<Result<Vec<_>>>()?;
        let mask_path = dir.join(MASKS_FILE);
        if mask_path.exists() {
            let m = ArrayFile::read(&mask_path, IMAGES_MAGIC)?;
            if m.extents != arr.extents {
                return Err(Error::format(mask_path.display().to_string(), 8, "mask extents differ from images"));
            }
            for (k, img) in images.iter_mut().enumerate() {
                img.mask = Some(m.data[k * h * w..(k + 1) * h * w].iter().map(|&v| v > 0.5).collect());
            }
        }
        let lm_path = dir.join(LANDMARKS_FILE);
        if lm_path.exists() {
            let mut rdr = csv::Reader::from_path(&lm_path).map_err(|e| Error::format(lm_path.display().to_string(), 0, e.to_string()))?;
            for row in rdr.deserialize::<LandmarkRow>() {
                let row = row.map_err(|e| Error::format(lm_path.display().to_string(), 0, e.to_string()))?;
                let img = images
                    .get_mut(row.image)
                    .ok_or_else(|| Error::format(lm_path.display().to_string(), 0, format!("image index {} out of range", row.image)))?;
                img.landmarks.push([row.x, row.y]);
            }
        }
        Ok(Self { meta, images })
    }
}

/// Uniformly random ordered pairs of distinct images, reproducible per seed.
#[derive(Clone, Debug)]
pub struct PairSampler {
    indices: Vec<usize>,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(indices: impl IntoIterator<Item = usize>, seed: u64) -> Result<Self> {
        let indices: Vec<usize> = indices.into_iter().collect();
        if indices.len() < 2 {
            return Err(Error::invalid("pair_sampler", "need at least two images"));
        }
        Ok(Self {
            indices,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_pair(&mut self) -> (usize, usize) {
        let n = self.indices.len();
        let i = self.rng.gen_range(0..n);
        let mut j = self.rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (self.indices[i], self.indices[j])
    }
}

impl Iterator for PairSampler {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        Some(self.next_pair())
    }
}
