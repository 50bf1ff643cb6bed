//! Binary PGM (P5) reading and writing, maxval 255. Slides and masks are
//! stored in this format so every stage round-trips bit-exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{NcrfError, Result};
use crate::slides::{Mask, Raster};

pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(NcrfError::io(path))?;
    let header = format!("P5\n{} {}\n255\n", raster.width, raster.height);
    file.write_all(header.as_bytes())
        .and_then(|_| file.write_all(&raster.pixels))
        .map_err(NcrfError::io(path))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let pixels = mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let raster = Raster::new(mask.width, mask.height, pixels)?;
    write_pgm(path, &raster)
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(NcrfError::io(path))?;
    parse_pgm(&bytes).map_err(|detail| NcrfError::Parse {
        path: path.to_path_buf(),
        line: 0,
        detail,
    })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let raster = read_pgm(path)?;
    Ok(Mask {
        width: raster.width,
        height: raster.height,
        data: raster.pixels.iter().map(|&v| v != 0).collect(),
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let mut pos = 0;

    // whitespace- and comment-skipping token reader
    let next_token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of file".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if next_token(&mut pos)? != "P5" {
        return Err("not a binary PGM (expected P5)".into());
    }
    let width: usize = next_token(&mut pos)?.parse().map_err(|_| "bad width")?;
    let height: usize = next_token(&mut pos)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = next_token(&mut pos)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (expected 255)"));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(format!(
            "payload has {} bytes, expected {expected}",
            bytes.len().saturating_sub(pos)
        ));
    }
    Raster::new(width, height, bytes[pos..pos + expected].to_vec()).map_err(|e| e.to_string())
}
