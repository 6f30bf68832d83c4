//! `NDS1` dataset format.
//!
//! Layout: magic `NDS1`, u32 count, u16 height, u16 width, u16 channels,
//! u16 class count, u16 labels[count], f32 little-endian pixels in
//! image-major H-W-C order, then one length-prefixed (u16) UTF-8 name per
//! class. All integers little-endian, no padding.

use std::fs;
use std::path::Path;

use ndgrad::{Scalar, Tensor};

use crate::error::{Error, Result};

use super::Dataset;

const MAGIC: &[u8; 4] = b"NDS1";

pub fn save_dataset<T: Scalar, P: AsRef<Path>>(ds: &Dataset<T>, path: P) -> Result<()> {
    ds.validate()?;
    let count = u32::try_from(ds.len()).map_err(|_| Error::Format("too many images".into()))?;
    let to_u16 = |v: usize, what: &str| -> Result<u16> {
        u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u16")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&to_u16(ds.height, "height")?.to_le_bytes());
    out.extend_from_slice(&to_u16(ds.width, "width")?.to_le_bytes());
    out.extend_from_slice(&to_u16(ds.channels, "channels")?.to_le_bytes());
    out.extend_from_slice(&to_u16(ds.num_classes(), "class count")?.to_le_bytes());
    for &l in &ds.labels {
        out.extend_from_slice(&to_u16(l, "label")?.to_le_bytes());
    }
    let (h, w, c) = (ds.height, ds.width, ds.channels);
    for img in &ds.images {
        let d = img.data();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = d[(ch * h + y) * w + x].as_f64() as f32;
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    for name in &ds.class_names {
        let bytes = name.as_bytes();
        out.extend_from_slice(&to_u16(bytes.len(), "class name length")?.to_le_bytes());
        out.extend_from_slice(bytes);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset<T: Scalar, P: AsRef<Path>>(path: P) -> Result<Dataset<T>> {
    let bytes = fs::read(&path)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != MAGIC {
        return Err(Error::Format("bad magic, not an NDS1 file".into()));
    }
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let h = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
    let c = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
    let k = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
    if h == 0 || w == 0 || c == 0 || k == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let l = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        if l >= k {
            return Err(Error::Format(format!("label {l} out of range for {k} classes")));
        }
        labels.push(l);
    }
    let per = h * w * c;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = take(&mut at, per * 4)?;
        // file is HWC; memory layout is CHW
        let mut data = vec![T::zero(); per];
        for (i, px) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(px.try_into().unwrap());
            let (y, rest) = (i / (w * c), i % (w * c));
            let (x, ch) = (rest / c, rest % c);
            data[(ch * h + y) * w + x] = T::from_f64(v as f64);
        }
        images.push(Tensor::new(vec![c, h, w], data)?);
    }
    let mut class_names = Vec::with_capacity(k);
    for _ in 0..k {
        let len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, len)?)
            .map_err(|_| Error::Format("class name is not UTF-8".into()))?;
        class_names.push(name.to_string());
    }
    if at != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after class names",
            bytes.len() - at
        )));
    }
    let ds = Dataset {
        images,
        labels,
        class_names,
        height: h,
        width: w,
        channels: c,
        provenance: format!("file:{}", path.as_ref().display()),
    };
    ds.validate()?;
    Ok(ds)
}

/// 8-bit binary PGM export with a linear map from [-1, 1] to [0, 255];
/// single-channel images only.
pub fn save_pgm<T: Scalar, P: AsRef<Path>>(img: &Tensor<T>, path: P) -> Result<()> {
    let (h, w) = match img.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => {
            return Err(Error::InvalidArgument(format!(
                "pgm export needs a single-channel image, got {s:?}"
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for v in img.data() {
        let byte = (((v.as_f64() + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
        out.push(byte);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_textures;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nds");
        let ds = gen_textures::<f32>(3, 16, 5).unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset::<f32, _>(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.class_names, ds.class_names);
        for (a, b) in ds.images.iter().zip(back.images.iter()) {
            assert!(a.bit_eq(b));
        }
        // save(load(x)) reproduces the bytes
        let path2 = dir.path().join("t2.nds");
        save_dataset(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn file_size_matches_the_header_formula() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nds");
        let ds = gen_textures::<f32>(2, 16, 5).unwrap();
        save_dataset(&ds, &path).unwrap();
        let names_block: usize = ds.class_names.iter().map(|n| 2 + n.len()).sum();
        let expect = 16 + 2 * ds.len() + 4 * ds.len() * 16 * 16 + names_block;
        assert_eq!(fs::read(&path).unwrap().len(), expect);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nds");
        let ds = gen_textures::<f32>(1, 8, 0).unwrap();
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_dataset::<f32, _>(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_and_out_of_range_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nds");
        let ds = gen_textures::<f32>(1, 8, 0).unwrap();
        save_dataset(&ds, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_dataset::<f32, _>(&path).is_err());

        // label 9 >= 4 classes
        let mut bad = bytes.clone();
        bad[16] = 9;
        bad[17] = 0;
        fs::write(&path, &bad).unwrap();
        let err = load_dataset::<f32, _>(&path).unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
    }

    #[test]
    fn pgm_has_correct_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let ds = gen_textures::<f32>(1, 8, 0).unwrap();
        save_pgm(&ds.images[0], &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(bytes.len(), b"P5\n8 8\n255\n".len() + 64);
    }
}
