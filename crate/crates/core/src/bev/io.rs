//! 8-bit grayscale export of BEV images (binary PGM and PNG) plus a TOML
//! sidecar describing the grid. A normalized value `v` is stored as
//! `round(255 v)` and read back as `k / 255`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{to_u8, BevGrid, BevImage};
use crate::error::{Error, Result};

fn bytes_of(img: &BevImage) -> Vec<u8> {
    img.pixels.iter().map(|&v| to_u8(v)).collect()
}

fn from_bytes(grid: BevGrid, width: usize, height: usize, data: &[u8]) -> Result<BevImage> {
    if (width, height) != (grid.width, grid.height) {
        return Err(Error::ShapeMismatch {
            expected: (grid.height, grid.width),
            actual: (height, width),
        });
    }
    let pixels = Array2::from_shape_vec((height, width), data.iter().map(|&b| b as f64 / 255.0).collect())
        .map_err(|e| Error::format("image", e.to_string()))?;
    Ok(BevImage { grid, pixels })
}

pub fn encode_pgm(img: &BevImage) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(bytes_of(img));
    out
}

/// Parses a binary (P5) 8-bit PGM into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |d: &str| Error::format("PGM", d.to_string());
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    Ok((w, h, data.to_vec()))
}

pub fn decode_pgm(bytes: &[u8], grid: BevGrid) -> Result<BevImage> {
    let (w, h, data) = parse_pgm(bytes)?;
    from_bytes(grid, w, h, &data)
}

pub fn encode_png(img: &BevImage) -> Result<Vec<u8>> {
    let (h, w) = img.dim();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format("PNG", e.to_string()))?;
        writer
            .write_image_data(&bytes_of(img))
            .map_err(|e| Error::format("PNG", e.to_string()))?;
        writer.finish().map_err(|e| Error::format("PNG", e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8], grid: BevGrid) -> Result<BevImage> {
    let err = |e: png::DecodingError| Error::format("PNG", e.to_string());
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("PNG", "expected 8-bit grayscale"));
    }
    buf.truncate(info.buffer_size());
    from_bytes(grid, info.width as usize, info.height as usize, &buf)
}

pub fn grid_to_string(grid: &BevGrid) -> String {
    toml::to_string(grid).expect("grid serializes")
}

pub fn grid_from_str(s: &str) -> Result<BevGrid> {
    let grid: BevGrid = toml::from_str(s).map_err(|e| Error::format("BEV sidecar", e.to_string()))?;
    grid.validate()?;
    Ok(grid)
}

/// Path of the sidecar that accompanies an image file.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("bev")
}

/// Writes `<stem>.pgm`, `<stem>.png` and `<stem>.bev` next to each other.
pub fn write_all(stem: &Path, img: &BevImage) -> Result<()> {
    let pgm = stem.with_extension("pgm");
    let png_path = stem.with_extension("png");
    let side = stem.with_extension("bev");
    fs::write(&pgm, encode_pgm(img)).map_err(|e| Error::from(e).at(&pgm))?;
    fs::write(&png_path, encode_png(img)?).map_err(|e| Error::from(e).at(&png_path))?;
    fs::write(&side, grid_to_string(&img.grid)).map_err(|e| Error::from(e).at(&side))?;
    Ok(())
}

/// Reads a `.pgm` or `.png` image together with its `.bev` sidecar.
pub fn read(path: &Path) -> Result<BevImage> {
    let load = || -> Result<BevImage> {
        let side = sidecar_path(path);
        let grid = grid_from_str(&fs::read_to_string(&side).map_err(|e| Error::from(e).at(&side))?)?;
        let bytes = fs::read(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => decode_png(&bytes, grid),
            _ => decode_pgm(&bytes, grid),
        }
    };
    load().map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = BevImage> {
        (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h).prop_map(move |v| {
                let grid = BevGrid::with_size(w, h);
                BevImage::from_array(grid, Array2::from_shape_vec((h, w), v).unwrap()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn pgm_and_png_are_lossless_on_the_8bit_lattice(img in arb_image()) {
            let q = img.quantized();
            let grid = q.grid.clone();
            prop_assert_eq!(&decode_pgm(&encode_pgm(&img), grid.clone()).unwrap(), &q);
            prop_assert_eq!(&decode_png(&encode_png(&img).unwrap(), grid).unwrap(), &q);
            // Re-encoding the decoded image reproduces the same bytes.
            prop_assert_eq!(encode_pgm(&q), encode_pgm(&img));
        }
    }

    #[test]
    fn pgm_header_layout() {
        let mut img = BevImage::zeros(BevGrid::with_size(3, 2));
        img.pixels[(0, 1)] = 1.0;
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 0, 0, 0, 0]);
    }

    #[test]
    fn pgm_with_comment_and_mismatch() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\x80";
        let (w, h, d) = parse_pgm(bytes).unwrap();
        assert_eq!((w, h, d), (2, 1, vec![0, 128]));
        assert!(decode_pgm(bytes, BevGrid::with_size(3, 3)).is_err());
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let grid = BevGrid {
            gamma: -0.75,
            ..BevGrid::with_size(64, 32)
        };
        assert_eq!(grid_from_str(&grid_to_string(&grid)).unwrap(), grid);
    }
}
