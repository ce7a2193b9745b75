//! On-disk cube formats.
//!
//! * `envi-bsq`: binary payload at `path`, ENVI text header at `path.hdr`.
//! * `raw-le`: binary payload at `path`, `key=value` descriptor at `path.desc`.
//!
//! Both payloads are band-sequential little-endian `f32`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{HyperCube, WavelengthAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFormat {
    EnviBsq,
    RawLe,
}

impl CubeFormat {
    /// Sidecar text file that accompanies the payload at `path`.
    pub fn sidecar(self, path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(match self {
            CubeFormat::EnviBsq => ".hdr",
            CubeFormat::RawLe => ".desc",
        });
        PathBuf::from(s)
    }

    /// Picks the format from whichever sidecar exists next to `path`.
    pub fn detect(path: &Path) -> Option<Self> {
        [CubeFormat::RawLe, CubeFormat::EnviBsq]
            .into_iter()
            .find(|f| f.sidecar(path).exists())
    }
}

impl FromStr for CubeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "envi-bsq" | "envi" => Ok(CubeFormat::EnviBsq),
            "raw-le" | "raw" => Ok(CubeFormat::RawLe),
            other => Err(Error::Argument(format!("unknown cube format '{other}'"))),
        }
    }
}

struct Header {
    height: usize,
    width: usize,
    bands: usize,
    wavelengths: Vec<f64>,
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Format(format!("field '{key}' is not an integer: '{}'", v.trim())))
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("bad wavelength '{s}'")))
        })
        .collect()
}

fn parse_envi_header(text: &str) -> Result<Header> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ENVI") {
        return Err(Error::Format("ENVI header must start with 'ENVI'".into()));
    }
    let (mut h, mut w, mut b, mut wl) = (None, None, None, None);
    let rest: Vec<&str> = lines.collect();
    let mut i = 0;
    while i < rest.len() {
        let line = rest[i];
        i += 1;
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let mut value = value.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') && i < rest.len() {
                value.push_str(rest[i]);
                i += 1;
            }
            value = value
                .trim_start_matches('{')
                .trim_end_matches('}')
                .to_string();
        }
        match key.as_str() {
            "samples" => w = Some(parse_usize(&key, &value)?),
            "lines" => h = Some(parse_usize(&key, &value)?),
            "bands" => b = Some(parse_usize(&key, &value)?),
            "data type" if value.trim() != "4" => {
                return Err(Error::Format(format!(
                    "unsupported data type {} (only 4 = float32)",
                    value.trim()
                )))
            }
            "interleave" if !value.trim().eq_ignore_ascii_case("bsq") => {
                return Err(Error::Format(format!(
                    "unsupported interleave '{}'",
                    value.trim()
                )))
            }
            "byte order" if value.trim() != "0" => {
                return Err(Error::Format("only little-endian payloads are supported".into()))
            }
            "wavelength" => wl = Some(parse_list(&value)?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::Format(format!("header missing '{k}'"));
    Ok(Header {
        height: h.ok_or_else(|| missing("lines"))?,
        width: w.ok_or_else(|| missing("samples"))?,
        bands: b.ok_or_else(|| missing("bands"))?,
        wavelengths: wl.ok_or_else(|| missing("wavelength"))?,
    })
}

fn parse_descriptor(text: &str) -> Result<Header> {
    let (mut h, mut w, mut b, mut wl) = (None, None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("descriptor line without '=': '{line}'")))?;
        match key.trim() {
            "height" => h = Some(parse_usize("height", value)?),
            "width" => w = Some(parse_usize("width", value)?),
            "bands" => b = Some(parse_usize("bands", value)?),
            "wavelengths" => wl = Some(parse_list(value)?),
            other => return Err(Error::Format(format!("unknown descriptor key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("descriptor missing '{k}'"));
    Ok(Header {
        height: h.ok_or_else(|| missing("height"))?,
        width: w.ok_or_else(|| missing("width"))?,
        bands: b.ok_or_else(|| missing("bands"))?,
        wavelengths: wl.ok_or_else(|| missing("wavelengths"))?,
    })
}

/// Reads a cube. Pixels stored as all-`NaN` come back masked.
pub fn load_cube(path: impl AsRef<Path>, format: CubeFormat) -> Result<HyperCube> {
    let path = path.as_ref();
    let sidecar = format.sidecar(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let header = match format {
        CubeFormat::EnviBsq => parse_envi_header(&text)?,
        CubeFormat::RawLe => parse_descriptor(&text)?,
    };
    if header.wavelengths.len() != header.bands {
        return Err(Error::Axis(format!(
            "{} wavelengths listed for {} bands",
            header.wavelengths.len(),
            header.bands
        )));
    }
    let axis = WavelengthAxis::new(header.wavelengths)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let expected = header.height * header.width * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HyperCube::new(header.height, header.width, data, axis)
}

/// Writes a cube. Values are narrowed to `f32`; a cube whose values are all
/// representable in `f32` (including any cube produced by [`load_cube`])
/// round-trips bit-exactly.
pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>, format: CubeFormat) -> Result<()> {
    let path = path.as_ref();
    if cube.bands() == 0 || cube.height() == 0 || cube.width() == 0 {
        return Err(Error::Dimension(format!(
            "cannot save {}x{}x{} cube",
            cube.height(),
            cube.width(),
            cube.bands()
        )));
    }
    let wl = cube
        .axis()
        .values()
        .iter()
        .map(|w| format!("{w}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut text = String::new();
    match format {
        CubeFormat::EnviBsq => {
            let _ = writeln!(text, "ENVI");
            let _ = writeln!(text, "samples = {}", cube.width());
            let _ = writeln!(text, "lines = {}", cube.height());
            let _ = writeln!(text, "bands = {}", cube.bands());
            let _ = writeln!(text, "header offset = 0");
            let _ = writeln!(text, "file type = ENVI Standard");
            let _ = writeln!(text, "data type = 4");
            let _ = writeln!(text, "interleave = bsq");
            let _ = writeln!(text, "byte order = 0");
            let _ = writeln!(text, "wavelength units = Nanometers");
            let _ = writeln!(text, "wavelength = {{{wl}}}");
        }
        CubeFormat::RawLe => {
            let _ = writeln!(text, "height={}", cube.height());
            let _ = writeln!(text, "width={}", cube.width());
            let _ = writeln!(text, "bands={}", cube.bands());
            let _ = writeln!(text, "wavelengths={}", wl.replace(' ', ""));
        }
    }
    let mut bytes = Vec::with_capacity(cube.data().len() * 4);
    for &v in cube.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = format.sidecar(path);
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}
