//! Bit-exact image and field serialization.
//!
//! Only binary PGM ("P5") and PPM ("P6") with maxval 255 are supported;
//! the fixtures and CLI artifacts rely on the format being byte-stable.
//! Header comments (`#`) are accepted on read and never emitted.

use crate::error::{Error, Result};
use crate::tensor::{Image, ScalarField};

/// Parses a binary PGM or PPM. Pixel byte v maps to v/255.
pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = 0usize;
    let magic = take_token(bytes, &mut cursor)
        .ok_or_else(|| Error::MalformedPnm("missing magic".into()))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::MalformedPnm(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_number(bytes, &mut cursor, "width")?;
    let height = parse_number(bytes, &mut cursor, "height")?;
    let maxval = parse_number(bytes, &mut cursor, "maxval")?;
    if maxval != 255 {
        return Err(Error::MalformedPnm(format!(
            "unsupported maxval {maxval} (only 255)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedPnm("zero dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(cursor) {
        Some(b) if b.is_ascii_whitespace() => cursor += 1,
        _ => return Err(Error::MalformedPnm("missing payload separator".into())),
    }
    let n = width * height * channels;
    let payload = bytes
        .get(cursor..cursor + n)
        .ok_or_else(|| Error::MalformedPnm("truncated payload".into()))?;
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, data)
}

/// Serializes an image in [0, 1] as binary PGM (1 channel) or PPM (3).
/// Values map to round(v * 255).
pub fn write_pnm(image: &Image) -> Result<Vec<u8>> {
    if let Some(&v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::PixelOutOfRange(v));
    }
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v * 255.0).round() as u8));
    Ok(out)
}

/// Dumps a field as CSV: one line per row, comma-separated values with
/// 17 significant digits (round-trips f64 exactly at parse time).
pub fn write_field_csv(field: &ScalarField) -> String {
    let mut out = String::new();
    for row in 0..field.height() {
        for col in 0..field.width() {
            if col > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.17e}", field.get(row, col)));
        }
        out.push('\n');
    }
    out
}

/// Parses the output of [`write_field_csv`]. Exposed for fixtures and
/// the CLI round-trip checks.
pub fn read_field_csv(text: &str) -> Result<ScalarField> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        rows.push(row.map_err(|e| Error::Config(format!("bad CSV value: {e}")))?);
    }
    let height = rows.len();
    if height == 0 {
        return Err(Error::Config("empty CSV field".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Config("ragged CSV field".into()));
    }
    ScalarField::new(height, width, rows.into_iter().flatten().collect())
}

/// Renders a field as a 1-channel image by affinely mapping [min, max]
/// to [0, 1]. A constant field maps to 0.5 everywhere.
pub fn field_to_pnm(field: &ScalarField) -> Image {
    let lo = field.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        let scale = 1.0 / (hi - lo);
        field.data().iter().map(|v| (v - lo) * scale).collect()
    } else {
        vec![0.5; field.data().len()]
    };
    Image::new(field.height(), field.width(), 1, data).expect("affine map preserves shape")
}

fn take_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    skip_whitespace_and_comments(bytes, cursor);
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (*cursor > start).then(|| &bytes[start..*cursor])
}

fn skip_whitespace_and_comments(bytes: &[u8], cursor: &mut usize) {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
        } else {
            return;
        }
    }
}

fn parse_number(bytes: &[u8], cursor: &mut usize, what: &str) -> Result<usize> {
    let token =
        take_token(bytes, cursor).ok_or_else(|| Error::MalformedPnm(format!("missing {what}")))?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedPnm(format!("bad {what}")))
}
