//! PNM image IO, dataset directories and synthetic lesion images.
//!
//! A dataset directory holds `<id>.ppm` colour images and, for labelled
//! samples, `<id>_segmentation.pgm` masks.

mod pnm;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub use pnm::{encode_pnm, read_pnm, write_pnm};
pub use synth::{generate_synthetic, synthetic_shapes, LesionShape, SYNTH_RETRIES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXT: &str = "ppm";
pub const MASK_SUFFIX: &str = "_segmentation.pgm";

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// `h×w×3` in `[0, 1]`.
    pub image: Tensor,
    /// `h×w×1` binary, absent for inference-only samples.
    pub mask: Option<Tensor>,
}

/// 1 where `round(v·255) ≥ 128`.
pub fn binarize_mask(gray: &Tensor) -> Result<Tensor> {
    let (_, _, c) = gray.hwc()?;
    if c != 1 {
        return Err(Error::shape(format!("mask must have 1 channel, got {c}")));
    }
    Ok(gray.map(|v| if pnm::quantize(v) >= 128 { 1.0 } else { 0.0 }))
}

/// Nearest-neighbour resampling with source index `floor(dst·src/out)`.
pub fn resize_nearest(t: &Tensor, (out_h, out_w): (usize, usize)) -> Result<Tensor> {
    let (h, w, c) = t.hwc()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(format!(
            "resize target {out_h}×{out_w}"
        )));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            let sx = x * w / out_w;
            let at = (sy * w + sx) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Tensor::from_vec(&[out_h, out_w, c], out)
}

fn read_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    read_pnm(&bytes).map_err(|e| e.in_file(path))
}

fn read_image(path: &Path) -> Result<Tensor> {
    let t = read_file(path)?;
    if t.hwc()?.2 != 3 {
        return Err(Error::UnsupportedFormat("expected a P6 colour image".into()).in_file(path));
    }
    Ok(t)
}

/// Reads a P5 mask and binarizes it.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let t = read_file(path)?;
    if t.hwc()?.2 != 1 {
        return Err(Error::UnsupportedFormat("expected a P5 mask".into()).in_file(path));
    }
    binarize_mask(&t)
}

#[derive(Default)]
struct Entry {
    image: Option<PathBuf>,
    mask: Option<PathBuf>,
}

fn scan(dir: &Path) -> Result<BTreeMap<String, Entry>> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let listing = fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))?;
    for item in listing {
        let path = item.map_err(|e| Error::from(e).in_file(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(MASK_SUFFIX) {
            entries.entry(id.to_string()).or_default().mask = Some(path);
        } else if let Some(id) = name.strip_suffix(".ppm") {
            entries.entry(id.to_string()).or_default().image = Some(path);
        }
    }
    Ok(entries)
}

/// Loads every image of `dir`, sorted by id. With `image_size`, images and
/// masks are resized to that square side; masks are always binarized.
pub fn load_dataset(dir: &Path, image_size: Option<usize>) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    for (id, entry) in scan(dir)? {
        let Some(image_path) = entry.image else {
            return Err(Error::Pairing(format!(
                "mask for {id:?} has no matching {id}.{IMAGE_EXT}"
            )));
        };
        let mut image = read_image(&image_path)?;
        let mut mask = match &entry.mask {
            Some(p) => Some(read_mask(p)?),
            None => None,
        };
        if let Some(m) = &mask {
            if m.shape()[..2] != image.shape()[..2] {
                return Err(Error::Pairing(format!(
                    "{id}: mask is {:?}, image is {:?}",
                    &m.shape()[..2],
                    &image.shape()[..2]
                )));
            }
        }
        if let Some(s) = image_size {
            image = resize_nearest(&image, (s, s))?;
            mask = mask.map(|m| resize_nearest(&m, (s, s))).transpose()?;
        }
        records.push(ImageRecord { id, image, mask });
    }
    Ok(records)
}

/// Loads every `<id>_segmentation.pgm` of `dir`, sorted by id.
pub fn load_masks(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    scan(dir)?
        .into_iter()
        .filter_map(|(id, e)| e.mask.map(|p| (id, p)))
        .map(|(id, p)| Ok((id, read_mask(&p)?)))
        .collect()
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{MASK_SUFFIX}"))
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{IMAGE_EXT}"))
}

/// Writes `<id>.ppm` and, when present, `<id>_segmentation.pgm`.
pub fn save_record(dir: &Path, record: &ImageRecord) -> Result<()> {
    let write = |path: PathBuf, t: &Tensor| -> Result<()> {
        fs::write(&path, encode_pnm(t)?).map_err(|e| Error::from(e).in_file(&path))
    };
    write(image_path(dir, &record.id), &record.image)?;
    if let Some(m) = &record.mask {
        write(mask_path(dir, &record.id), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn binarize_boundary() {
        let t = Tensor::from_vec(&[1, 2, 1], vec![127.0 / 255.0, 128.0 / 255.0]).unwrap();
        assert_eq!(binarize_mask(&t).unwrap().data(), &[0.0, 1.0]);
        let z = Tensor::zeros(&[3, 3, 1]).unwrap();
        assert_eq!(binarize_mask(&z).unwrap(), z);
    }

    #[test]
    fn binarize_matches_oracle() {
        let mut rng = RngState::new(3).unwrap();
        let vals: Vec<f32> = (0..400).map(|_| rng.below(256) as f32 / 255.0).collect();
        let t = Tensor::from_vec(&[20, 20, 1], vals.clone()).unwrap();
        let b = binarize_mask(&t).unwrap();
        for (v, m) in vals.iter().zip(b.data()) {
            let level = (v * 255.0).round() as u32;
            assert_eq!(*m, if level >= 128 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn resize_upscale_and_identity() {
        let t = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = resize_nearest(&t, (4, 4)).unwrap();
        assert_eq!(
            up.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert_eq!(resize_nearest(&t, (2, 2)).unwrap(), t);
    }

    #[test]
    fn resize_floor_rule() {
        let t = Tensor::from_vec(&[3, 3, 1], (0..9).map(|v| v as f32).collect()).unwrap();
        let down = resize_nearest(&t, (2, 2)).unwrap();
        // floor(0·3/2)=0, floor(1·3/2)=1
        assert_eq!(down.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    fn write(dir: &Path, name: &str, t: &Tensor) {
        fs::write(dir.join(name), encode_pnm(t).unwrap()).unwrap();
    }

    #[test]
    fn pairing_rules() {
        let d = tempfile::tempdir().unwrap();
        let img = Tensor::full(&[4, 4, 3], 0.5).unwrap();
        let mask = Tensor::zeros(&[4, 4, 1]).unwrap();
        write(d.path(), "b.ppm", &img);
        write(d.path(), "a.ppm", &img);
        write(d.path(), "a_segmentation.pgm", &mask);
        fs::write(d.path().join("notes.txt"), "ignored").unwrap();
        let recs = load_dataset(d.path(), None).unwrap();
        assert_eq!(
            recs.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert!(recs[0].mask.is_some() && recs[1].mask.is_none());

        write(d.path(), "c_segmentation.pgm", &mask);
        assert!(matches!(
            load_dataset(d.path(), None),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn empty_directory_is_empty_list() {
        let d = tempfile::tempdir().unwrap();
        assert!(load_dataset(d.path(), Some(8)).unwrap().is_empty());
    }

    #[test]
    fn corrupt_file_is_named() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "good.ppm", &Tensor::zeros(&[2, 2, 3]).unwrap());
        fs::write(d.path().join("bad.ppm"), b"P6 2 2 99\n").unwrap();
        let err = load_dataset(d.path(), None).unwrap_err();
        assert!(err.to_string().contains("bad.ppm"), "{err}");
        assert!(err.is_data_error());
    }

    #[test]
    fn resized_on_load() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "x.ppm", &Tensor::zeros(&[5, 7, 3]).unwrap());
        write(
            d.path(),
            "x_segmentation.pgm",
            &Tensor::full(&[5, 7, 1], 1.0).unwrap(),
        );
        let r = &load_dataset(d.path(), Some(8)).unwrap()[0];
        assert_eq!(r.image.shape(), &[8, 8, 3]);
        assert_eq!(r.mask.as_ref().unwrap().shape(), &[8, 8, 1]);
    }
}
