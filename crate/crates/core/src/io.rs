//! Reading and writing rasters, point labels and component exports.
//!
//! Rasters are single-band GeoTIFF (`.tif` / `.tiff`) or the raw fallback
//! format: a headerless little-endian `f32` grid plus a text sidecar with the
//! same stem and a `.hdr` extension.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::colortype::{Gray64Float, Gray8};
use tiff::encoder::TiffEncoder;
use tiff::tags::Tag;
use tiff::ColorType;

use crate::blobs::Labeling;
use crate::error::{Error, Result};
use crate::geo::{AffineGeoref, Raster, RasterKind, WorldPoint};
use crate::labels::PointLabelSet;

const RAW_HEADER_MAGIC: &str = "# scene-eval raw raster v1";

fn is_geotiff(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("tif") | Some("tiff")
    )
}

/// Sidecar header path for a raw raster.
pub fn raw_header_path(path: &Path) -> PathBuf {
    path.with_extension("hdr")
}

/// Reads a raster, choosing the format from the file extension, and
/// validates it as `kind`.
pub fn read_raster(path: &Path, kind: RasterKind) -> Result<Raster> {
    let (width, height, data, georef) = if is_geotiff(path) {
        read_geotiff(path)?
    } else {
        read_raw(path)?
    };
    Raster::new(width, height, data, georef, kind).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a raster, choosing the format from the file extension.
pub fn write_raster(path: &Path, raster: &Raster) -> Result<()> {
    if is_geotiff(path) {
        write_geotiff(path, raster)
    } else {
        write_raw(path, raster)
    }
}

type RawBand = (usize, usize, Vec<f64>, AffineGeoref);

fn parse_header(path: &Path, text: &str) -> Result<(usize, usize, AffineGeoref)> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let value = parts
            .next()
            .ok_or_else(|| Error::format(path, format!("header key `{key}` has no value")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| -> Result<&String> {
        fields
            .get(key)
            .ok_or_else(|| Error::format(path, format!("header is missing `{key}`")))
    };
    let int = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::format(path, format!("header `{key}` is not an unsigned integer")))
    };
    let float = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::format(path, format!("header `{key}` is not a number")))
    };
    let georef = AffineGeoref::new(float("origin_x")?, float("origin_y")?, float("res_x")?, float("res_y")?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((int("width")?, int("height")?, georef))
}

fn read_raw(path: &Path) -> Result<RawBand> {
    let hdr_path = raw_header_path(path);
    let text = std::fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let (width, height, georef) = parse_header(&hdr_path, &text)?;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes for a {width}x{height} f32 grid, found {}",
                width * height * 4,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((width, height, data, georef))
}

/// Header text for a raw raster, one `key value` pair per line.
pub fn raw_header_text(raster: &Raster) -> String {
    let g = raster.georef();
    format!(
        "{RAW_HEADER_MAGIC}\nwidth {}\nheight {}\norigin_x {}\norigin_y {}\nres_x {}\nres_y {}\n",
        raster.width(),
        raster.height(),
        g.origin_x,
        g.origin_y,
        g.res_x,
        g.res_y
    )
}

fn write_raw(path: &Path, raster: &Raster) -> Result<()> {
    let hdr_path = raw_header_path(path);
    std::fs::write(&hdr_path, raw_header_text(raster)).map_err(|e| Error::io(&hdr_path, e))?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for &v in raster.data() {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    Error::format(path, e.to_string())
}

fn read_geotiff(path: &Path) -> Result<RawBand> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
    match dec.colortype().map_err(|e| tiff_err(path, e))? {
        ColorType::Gray(_) => {}
        other => {
            return Err(Error::format(
                path,
                format!("only single-band rasters are supported, found {other:?}"),
            ))
        }
    }

    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .and_then(|v| v.map(|v| v.into_f64_vec()).transpose())
        .map_err(|e| tiff_err(path, e))?;
    let tiepoint = dec
        .find_tag(Tag::ModelTiepointTag)
        .and_then(|v| v.map(|v| v.into_f64_vec()).transpose())
        .map_err(|e| tiff_err(path, e))?;
    let transform = dec
        .find_tag(Tag::ModelTransformationTag)
        .and_then(|v| v.map(|v| v.into_f64_vec()).transpose())
        .map_err(|e| tiff_err(path, e))?;
    let georef = match (scale, tiepoint, transform) {
        (Some(s), Some(t), _) if s.len() >= 2 && t.len() >= 6 => {
            AffineGeoref::new(t[3] - t[0] * s[0], t[4] + t[1] * s[1], s[0], s[1])
        }
        (_, _, Some(m)) if m.len() >= 16 => {
            if m[1] != 0.0 || m[4] != 0.0 {
                return Err(Error::format(path, "rotated or skewed geotransforms are not supported"));
            }
            AffineGeoref::new(m[3], m[7], m[0], -m[5])
        }
        _ => return Err(Error::format(path, "missing GeoTIFF georeferencing tags")),
    }
    .map_err(|e| Error::format(path, e.to_string()))?;

    let nodata: Option<f64> = dec
        .find_tag(Tag::GdalNodata)
        .ok()
        .flatten()
        .and_then(|v| v.into_string().ok())
        .and_then(|s| s.trim().trim_end_matches('\0').parse().ok());

    let image = dec.read_image().map_err(|e| tiff_err(path, e))?;
    let mut data: Vec<f64> = match image {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f64).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f64).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::F16(_) => return Err(Error::format(path, "16-bit float samples are not supported")),
    };
    // nodata pixels count as background
    if let Some(nd) = nodata {
        data.iter_mut()
            .filter(|v| **v == nd || (nd.is_nan() && v.is_nan()))
            .for_each(|v| *v = 0.0);
    }
    Ok((w as usize, h as usize, data, georef))
}

fn write_geotiff(path: &Path, raster: &Raster) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let g = raster.georef();
    let scale = [g.res_x, g.res_y, 0.0];
    let tiepoint = [0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0];
    // GeoKey directory: version 1.1.0, projected model, pixel-is-area
    let geokeys: [u16; 12] = [1, 1, 0, 2, 1024, 0, 1, 1, 1025, 0, 1, 1];
    macro_rules! write_band {
        ($color:ty, $data:expr) => {{
            let mut img = enc.new_image::<$color>(w, h).map_err(|e| tiff_err(path, e))?;
            let dir = img.encoder();
            dir.write_tag(Tag::ModelPixelScaleTag, &scale[..])
                .map_err(|e| tiff_err(path, e))?;
            dir.write_tag(Tag::ModelTiepointTag, &tiepoint[..])
                .map_err(|e| tiff_err(path, e))?;
            dir.write_tag(Tag::GeoKeyDirectoryTag, &geokeys[..])
                .map_err(|e| tiff_err(path, e))?;
            img.write_data($data).map_err(|e| tiff_err(path, e))?;
        }};
    }
    match raster.kind() {
        RasterKind::Binary | RasterKind::Validity => {
            let bytes: Vec<u8> = raster.data().iter().map(|&v| v as u8).collect();
            write_band!(Gray8, &bytes);
        }
        RasterKind::Density | RasterKind::Panchromatic => write_band!(Gray64Float, raster.data()),
    }
    Ok(())
}

/// Reads point labels from CSV (`x`, `y`, optional `class` columns) or a
/// GeoJSON FeatureCollection of Points, chosen by extension.
pub fn read_labels(path: &Path, noise_radius_d: f64) -> Result<PointLabelSet> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let (points, classes) = match ext.as_deref() {
        Some("geojson") | Some("json") => read_labels_geojson(path)?,
        _ => read_labels_csv(path)?,
    };
    let mut classes: Vec<String> = classes.into_iter().filter(|c| !c.is_empty()).collect();
    classes.sort();
    classes.dedup();
    PointLabelSet::new(points, noise_radius_d, classes.join(",")).map_err(|e| Error::format(path, e.to_string()))
}

fn read_labels_csv(path: &Path) -> Result<(Vec<WorldPoint>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (xi, yi) = match (column("x"), column("y")) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::format(path, "label CSV needs `x` and `y` columns")),
    };
    let ci = column("class");
    let mut points = Vec::new();
    let mut classes = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad coordinate", line + 2)))
        };
        points.push(WorldPoint::new(num(xi)?, num(yi)?));
        if let Some(c) = ci.and_then(|i| rec.get(i)) {
            classes.push(c.to_string());
        }
    }
    Ok((points, classes))
}

fn read_labels_geojson(path: &Path) -> Result<(Vec<WorldPoint>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::format(path, "expected a GeoJSON FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format(path, "FeatureCollection has no `features` array"))?;
    let mut points = Vec::with_capacity(features.len());
    let mut classes = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let geom = &f["geometry"];
        if geom["type"].as_str() != Some("Point") {
            return Err(Error::format(path, format!("feature {i} is not a Point")));
        }
        let coords = geom["coordinates"].as_array();
        let xy = coords
            .filter(|c| c.len() >= 2)
            .and_then(|c| Some((c[0].as_f64()?, c[1].as_f64()?)))
            .ok_or_else(|| Error::format(path, format!("feature {i} has bad coordinates")))?;
        points.push(WorldPoint::new(xy.0, xy.1));
        if let Some(c) = f["properties"]["class"].as_str() {
            classes.push(c.to_string());
        }
    }
    Ok((points, classes))
}

/// Writes labels as CSV with `x,y,class` columns.
pub fn write_labels_csv(path: &Path, labels: &PointLabelSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let to_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["x", "y", "class"]).map_err(to_err)?;
    for p in &labels.points {
        w.write_record([p.x.to_string(), p.y.to_string(), labels.class_tag.clone()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn point_feature(p: &WorldPoint, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": { "type": "Point", "coordinates": [p.x, p.y] },
        "properties": properties,
    })
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes labels as a GeoJSON FeatureCollection of Points.
pub fn write_labels_geojson(path: &Path, labels: &PointLabelSet) -> Result<()> {
    let features: Vec<Value> = labels
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| point_feature(p, json!({ "index": i, "class": labels.class_tag })))
        .collect();
    write_json(path, &json!({ "type": "FeatureCollection", "features": features }))
}

/// Writes component centroids as GeoJSON Points.
pub fn write_components_geojson(path: &Path, labeling: &Labeling) -> Result<()> {
    let features: Vec<Value> = labeling
        .components()
        .iter()
        .map(|c| point_feature(&c.centroid_world, json!({ "id": c.id, "area_px": c.area_px })))
        .collect();
    write_json(path, &json!({ "type": "FeatureCollection", "features": features }))
}
