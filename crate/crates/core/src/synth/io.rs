//! Dataset directories: an index file of annotation records plus one binary
//! PPM image per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, Instance, TextSample};
use crate::error::{Error, Result};
use crate::geometry::Quad;

pub const INDEX_FILE: &str = "index.txt";

/// Writes an 8-bit binary (P6) PPM.
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut buf = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    buf.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

/// Reads an 8-bit binary (P6) PPM into `[0, 1]` channels.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
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
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 || w == 0 || h == 0 {
        return Err(bad("only 8-bit non-empty images are supported"));
    }
    pos += 1;
    let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
    Ok(Image {
        h,
        w,
        data: body.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

fn format_instance(inst: &Instance) -> String {
    let coords: Vec<String> = inst.quad.pts.iter().flatten().map(|v| format!("{v}")).collect();
    format!("{},{},{}", coords.join(","), u8::from(inst.ignore), inst.text)
}

fn parse_instance(field: &str, line: usize) -> Result<Instance> {
    let parts: Vec<&str> = field.splitn(10, ',').collect();
    if parts.len() != 10 {
        return Err(Error::Parse {
            line,
            msg: format!("expected 8 coordinates, ignore flag and text in {field:?}"),
        });
    }
    let mut v = [0.0; 8];
    for (k, p) in parts[..8].iter().enumerate() {
        v[k] = p.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad coordinate {p:?}"),
        })?;
    }
    let ignore = match parts[8].trim() {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::Parse {
                line,
                msg: format!("ignore flag must be 0 or 1, got {other:?}"),
            })
        }
    };
    let text = parts[9].to_string();
    if text.is_empty() && !ignore {
        return Err(Error::Parse {
            line,
            msg: "empty transcription on a non-ignored instance".into(),
        });
    }
    Ok(Instance {
        quad: Quad::new([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]]),
        text,
        ignore,
        style: None,
    })
}

/// Image file name of sample `i`.
pub fn image_name(i: usize) -> String {
    format!("{i:06}.ppm")
}

/// Writes samples under `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, samples: &[TextSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = fs::File::create(dir.join(INDEX_FILE))?;
    for (i, s) in samples.iter().enumerate() {
        let name = image_name(i);
        write_ppm(&dir.join(&name), &s.image)?;
        let mut line = name;
        for inst in &s.instances {
            line.push('\t');
            line.push_str(&format_instance(inst));
        }
        writeln!(index, "{line}")?;
    }
    Ok(())
}

/// Parses an index file into `(image name, instances)` records.
pub fn parse_index(text: &str) -> Result<Vec<(String, Vec<Instance>)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default();
        if name.is_empty() || name.contains(',') {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("bad image file name {name:?}"),
            });
        }
        let instances = fields
            .map(|f| parse_instance(f, line_no))
            .collect::<Result<Vec<_>>>()?;
        out.push((name.to_string(), instances));
    }
    Ok(out)
}

/// Reads the index of a dataset directory, or an index file given directly.
pub fn read_index(path: &Path) -> Result<Vec<(String, Vec<Instance>)>> {
    let file = if path.is_dir() { path.join(INDEX_FILE) } else { path.to_path_buf() };
    parse_index(&fs::read_to_string(file)?)
}

/// Reads a dataset written by [`write_dataset`] (or by hand in the same
/// format). Sample seeds are set to the record position.
pub fn read_dataset(dir: &Path) -> Result<Vec<TextSample>> {
    parse_index(&fs::read_to_string(dir.join(INDEX_FILE))?)?
        .into_iter()
        .enumerate()
        .map(|(i, (name, instances))| {
            Ok(TextSample {
                image: read_ppm(&dir.join(name))?,
                instances,
                seed: i as u64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_sample, SynthConfig};

    #[test]
    fn round_trip_keeps_annotations_and_quantizes_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let samples: Vec<_> = (0..10).map(|i| render_sample(&cfg, i).unwrap()).collect();
        write_dataset(dir.path(), &samples).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.instances.len(), b.instances.len());
            for (x, y) in a.instances.iter().zip(&b.instances) {
                assert_eq!(x.quad, y.quad);
                assert_eq!((&x.text, x.ignore), (&y.text, y.ignore));
            }
            let err = a
                .image
                .data
                .iter()
                .zip(&b.image.data)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0f32, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn empty_dataset_has_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[]).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap(), "");
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_ppm(&dir.path().join("a.ppm"), &Image::new(2, 2)).unwrap();
        fs::write(
            dir.path().join(INDEX_FILE),
            "a.ppm\t0,0,1,0,1,1,0,1,0,ab\na.ppm\t0,0,1,0,x,1,0,1,0,ab\n",
        )
        .unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transcription_may_contain_commas() {
        let inst = parse_instance("0,0,4,0,4,2,0,2,0,a,b", 1).unwrap();
        assert_eq!(inst.text, "a,b");
    }
}
