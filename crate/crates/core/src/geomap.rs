//! Antenna to commune mapping.
//!
//! Communes are loaded from a GeoJSON `FeatureCollection` whose features
//! carry an integer `commune` property. Containment is planar even-odd on raw
//! lon/lat; a point on a boundary belongs to the lowest-numbered commune
//! touching it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io_util::{clean_header, create_output, open_input};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CommuneId(pub u32);

impl fmt::Display for CommuneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for CommuneId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(CommuneId)
    }
}

/// The ordered set of communes under analysis with a dense index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommuneIndex {
    ids: Vec<CommuneId>,
    pos: HashMap<CommuneId, usize>,
}

impl CommuneIndex {
    pub fn new(ids: impl IntoIterator<Item = CommuneId>) -> Result<Self> {
        let set: BTreeSet<CommuneId> = ids.into_iter().collect();
        if set.is_empty() {
            return Err(Error::NoCommunes);
        }
        let ids: Vec<CommuneId> = set.into_iter().collect();
        let pos = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(CommuneIndex { ids, pos })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[CommuneId] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> CommuneId {
        self.ids[index]
    }

    pub fn index_of(&self, id: CommuneId) -> Option<usize> {
        self.pos.get(&id).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    /// Closed outer ring, first vertex repeated last.
    pub exterior: Vec<[f64; 2]>,
    pub holes: Vec<Vec<[f64; 2]>>,
    bbox: [f64; 4],
}

impl Polygon {
    pub fn new(exterior: Vec<[f64; 2]>, holes: Vec<Vec<[f64; 2]>>) -> Result<Self, String> {
        for ring in std::iter::once(&exterior).chain(&holes) {
            if ring.len() < 4 {
                return Err(format!("ring has {} vertices, need at least 4", ring.len()));
            }
            if ring.first() != ring.last() {
                return Err("ring is not closed".to_string());
            }
        }
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &exterior {
            bbox[0] = bbox[0].min(x);
            bbox[1] = bbox[1].min(y);
            bbox[2] = bbox[2].max(x);
            bbox[3] = bbox[3].max(y);
        }
        Ok(Polygon {
            exterior,
            holes,
            bbox,
        })
    }

    /// `[min_x, min_y, max_x, max_y]` of the outer ring.
    pub fn bbox(&self) -> [f64; 4] {
        self.bbox
    }

    fn rings(&self) -> impl Iterator<Item = &Vec<[f64; 2]>> {
        std::iter::once(&self.exterior).chain(&self.holes)
    }

    /// Even-odd containment, boundary inclusive.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return false;
        }
        let mut inside = false;
        for ring in self.rings() {
            for edge in ring.windows(2) {
                let (a, b) = (edge[0], edge[1]);
                if on_segment(a, b, x, y) {
                    return true;
                }
                if (a[1] > y) != (b[1] > y) {
                    let cross_x = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    if x < cross_x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

fn on_segment(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> bool {
    let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    cross == 0.0
        && x >= a[0].min(b[0])
        && x <= a[0].max(b[0])
        && y >= a[1].min(b[1])
        && y <= a[1].max(b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommuneGeometry {
    pub id: CommuneId,
    pub name: String,
    pub polygons: Vec<Polygon>,
}

impl CommuneGeometry {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(lon, lat))
    }
}

/// Loads commune polygons from a GeoJSON `FeatureCollection`. The result is
/// sorted by commune id.
pub fn load_commune_geometry(path: &Path) -> Result<Vec<CommuneGeometry>> {
    let reader = open_input("geometry", path)?;
    let doc: Value = serde_json::from_reader(reader).map_err(|source| Error::Json {
        what: "geometry",
        source,
    })?;
    parse_commune_geometry(&doc)
}

pub fn parse_commune_geometry(doc: &Value) -> Result<Vec<CommuneGeometry>> {
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config("geometry: expected a FeatureCollection".into()))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let fail = |msg: String| Error::Geometry { index, msg };
        let props = feature.get("properties");
        let id = props
            .and_then(|p| p.get("commune"))
            .ok_or_else(|| fail("missing \"commune\" property".into()))?;
        let id = id
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .filter(|&v| v > 0)
            .map(CommuneId)
            .ok_or_else(|| fail(format!("\"commune\" must be a positive integer, got {id}")))?;
        if !seen.insert(id) {
            return Err(fail(format!("duplicate commune id {id}")));
        }
        let name = props
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("Commune {id}"));
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| fail("missing geometry".into()))?;
        let polygons = parse_polygons(geometry).map_err(fail)?;
        out.push(CommuneGeometry { id, name, polygons });
    }
    out.sort_by_key(|g| g.id);
    Ok(out)
}

fn parse_polygons(geometry: &Value) -> Result<Vec<Polygon>, String> {
    let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| "geometry has no coordinates".to_string())?;
    match kind {
        "Polygon" => Ok(vec![parse_polygon(coords)?]),
        "MultiPolygon" => coords
            .as_array()
            .ok_or_else(|| "MultiPolygon coordinates must be an array".to_string())?
            .iter()
            .map(parse_polygon)
            .collect(),
        other => Err(format!("unsupported geometry type {other:?}")),
    }
}

fn parse_polygon(coords: &Value) -> Result<Polygon, String> {
    let rings = coords
        .as_array()
        .ok_or_else(|| "polygon coordinates must be an array of rings".to_string())?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings.next().ok_or_else(|| "polygon has no rings".to_string())??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes)
}

fn parse_ring(ring: &Value) -> Result<Vec<[f64; 2]>, String> {
    ring.as_array()
        .ok_or_else(|| "ring must be an array of positions".to_string())?
        .iter()
        .map(|pos| match pos.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok([x, y]),
                _ => Err("non-numeric position".to_string()),
            },
            _ => Err("position must have at least two numbers".to_string()),
        })
        .collect()
}

/// Id of the commune containing the point, or `None`. `geoms` must be sorted
/// by id (as returned by [`load_commune_geometry`]) so that boundary points
/// resolve to the smallest containing id.
pub fn point_in_commune(lon: f64, lat: f64, geoms: &[CommuneGeometry]) -> Option<CommuneId> {
    debug_assert!(geoms.windows(2).all(|w| w[0].id < w[1].id));
    geoms.iter().find(|g| g.contains(lon, lat)).map(|g| g.id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Antenna {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AntennaCommuneMap {
    pub mapping: BTreeMap<String, CommuneId>,
    pub unmapped: BTreeSet<String>,
}

impl AntennaCommuneMap {
    pub fn get(&self, antenna: &str) -> Option<CommuneId> {
        self.mapping.get(antenna).copied()
    }

    pub fn len(&self) -> usize {
        self.mapping.len() + self.unmapped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the `antenna_id,commune_id` form read by [`load_antenna_map`];
    /// unmapped antennas get an empty commune.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = create_output("antenna map", path)?;
        let mut rows: Vec<(&str, Option<CommuneId>)> = self
            .mapping
            .iter()
            .map(|(a, &c)| (a.as_str(), Some(c)))
            .chain(self.unmapped.iter().map(|a| (a.as_str(), None)))
            .collect();
        rows.sort();
        let res = (|| {
            writeln!(out, "antenna_id,commune_id")?;
            for (a, c) in rows {
                match c {
                    Some(c) => writeln!(out, "{a},{c}")?,
                    None => writeln!(out, "{a},")?,
                }
            }
            out.flush()
        })();
        res.map_err(|e| Error::io("antenna map", path, e))
    }

    /// Dense commune index per antenna, for the hot ingest loop. Fails if an
    /// antenna maps outside `communes`.
    pub fn dense(&self, communes: &CommuneIndex) -> Result<HashMap<String, usize>> {
        self.mapping
            .iter()
            .map(|(a, &c)| {
                communes
                    .index_of(c)
                    .map(|i| (a.clone(), i))
                    .ok_or_else(|| Error::UnknownAntennaCommune {
                        antenna: a.clone(),
                        commune: c,
                    })
            })
            .collect()
    }
}

pub fn build_antenna_map(antennas: &[Antenna], geoms: &[CommuneGeometry]) -> Result<AntennaCommuneMap> {
    let mut map = AntennaCommuneMap::default();
    for a in antennas {
        if map.mapping.contains_key(&a.id) || map.unmapped.contains(&a.id) {
            return Err(Error::DuplicateAntenna(a.id.clone()));
        }
        match point_in_commune(a.lon, a.lat, geoms) {
            Some(c) => {
                map.mapping.insert(a.id.clone(), c);
            }
            None => {
                map.unmapped.insert(a.id.clone());
            }
        }
    }
    Ok(map)
}

/// Reads an antenna registry CSV with header `antenna_id,lon,lat`.
pub fn load_antennas(path: &Path) -> Result<Vec<Antenna>> {
    const WHAT: &str = "antennas";
    let mut rows = csv_rows(WHAT, path, &["antenna_id", "lon", "lat"])?;
    let mut out = Vec::new();
    for row in rows.by_ref() {
        let (line, fields) = row?;
        let coord = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(WHAT, line, format!("invalid coordinate {:?}", fields[i])))
        };
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(WHAT, line, "empty antenna id"));
        }
        out.push(Antenna {
            id: id.to_string(),
            lon: coord(1)?,
            lat: coord(2)?,
        });
    }
    Ok(out)
}

/// Reads a precomputed `antenna_id,commune_id` map. Commune `0` or blank
/// marks an antenna as unmapped.
pub fn load_antenna_map(path: &Path) -> Result<AntennaCommuneMap> {
    const WHAT: &str = "antenna map";
    let rows = csv_rows(WHAT, path, &["antenna_id", "commune_id"])?;
    let mut map = AntennaCommuneMap::default();
    for row in rows {
        let (line, fields) = row?;
        let antenna = fields[0].trim();
        if antenna.is_empty() {
            return Err(Error::parse(WHAT, line, "empty antenna id"));
        }
        if map.mapping.contains_key(antenna) || map.unmapped.contains(antenna) {
            return Err(Error::DuplicateAntenna(antenna.to_string()));
        }
        let commune = fields[1].trim();
        let commune: u32 = if commune.is_empty() {
            0
        } else {
            commune
                .parse()
                .map_err(|_| Error::parse(WHAT, line, format!("invalid commune id {commune:?}")))?
        };
        if commune == 0 {
            map.unmapped.insert(antenna.to_string());
        } else {
            map.mapping.insert(antenna.to_string(), CommuneId(commune));
        }
    }
    Ok(map)
}

/// Iterates `(line number, fields)` of a small headed CSV, checking the
/// header and field count. Line numbers are 1-based file lines.
pub(crate) fn csv_rows(
    what: &'static str,
    path: &Path,
    header: &'static [&'static str],
) -> Result<impl Iterator<Item = Result<(u64, Vec<String>)>>> {
    let reader = open_input(what, path)?;
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) => {
            let got: Vec<&str> = clean_header(&h).split(',').map(str::trim).collect();
            if got != header {
                return Err(Error::parse(
                    what,
                    1,
                    format!("expected header {:?}, got {:?}", header.join(","), h.trim()),
                ));
            }
        }
        Some((_, Err(e))) => return Err(Error::io(what, path, e)),
        None => return Err(Error::parse(what, 1, "missing header")),
    }
    let path = path.to_path_buf();
    Ok(lines.filter_map(move |(i, line)| {
        let line_no = i as u64 + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::io(what, &path, e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Some(Err(Error::parse(
                what,
                line_no,
                format!("expected {} fields, got {}", header.len(), fields.len()),
            )));
        }
        Some(Ok((line_no, fields)))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn square(id: u32, x: f64, y: f64) -> CommuneGeometry {
        CommuneGeometry {
            id: CommuneId(id),
            name: format!("c{id}"),
            polygons: vec![Polygon::new(
                vec![[x, y], [x + 1.0, y], [x + 1.0, y + 1.0], [x, y + 1.0], [x, y]],
                vec![],
            )
            .unwrap()],
        }
    }

    fn feature(id: Value, ring: Value) -> Value {
        json!({
            "type": "Feature",
            "properties": {"commune": id},
            "geometry": {"type": "Polygon", "coordinates": [ring]}
        })
    }

    #[test]
    fn loads_two_features() {
        let ring = json!([[0, 0], [1, 0], [1, 1], [0, 0]]);
        let doc = json!({"type": "FeatureCollection", "features": [
            feature(json!(2), ring.clone()),
            feature(json!(1), ring),
        ]});
        let g = parse_commune_geometry(&doc).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].id, CommuneId(1));
        assert_eq!(g[0].name, "Commune 1");
    }

    #[test]
    fn duplicate_commune_id_is_rejected() {
        let ring = json!([[0, 0], [1, 0], [1, 1], [0, 0]]);
        let doc = json!({"type": "FeatureCollection", "features": [
            feature(json!(1), ring.clone()),
            feature(json!(1), ring),
        ]});
        let err = parse_commune_geometry(&doc).unwrap_err().to_string();
        assert!(err.contains("duplicate commune id 1"), "{err}");
        assert!(err.contains("feature 1"), "{err}");
    }

    #[test]
    fn missing_commune_property_names_feature() {
        let ring = json!([[0, 0], [1, 0], [1, 1], [0, 0]]);
        let mut f = feature(json!(1), ring);
        f["properties"] = json!({"name": "x"});
        let doc = json!({"type": "FeatureCollection", "features": [f]});
        let err = parse_commune_geometry(&doc).unwrap_err().to_string();
        assert!(err.contains("feature 0") && err.contains("commune"), "{err}");
    }

    #[test]
    fn open_ring_is_rejected() {
        let doc = json!({"type": "FeatureCollection", "features": [
            feature(json!(1), json!([[0, 0], [1, 0], [1, 1], [0, 1]])),
        ]});
        assert!(parse_commune_geometry(&doc).is_err());
    }

    #[test]
    fn empty_collection_loads_empty() {
        let doc = json!({"type": "FeatureCollection", "features": []});
        assert!(parse_commune_geometry(&doc).unwrap().is_empty());
    }

    #[test]
    fn interior_outside_and_shared_edge() {
        let geoms = vec![square(2, 0.0, 0.0), square(3, 5.0, 5.0), square(5, 1.0, 0.0)];
        assert_eq!(point_in_commune(5.5, 5.5, &geoms), Some(CommuneId(3)));
        assert_eq!(point_in_commune(999.0, 999.0, &geoms), None);
        assert_eq!(point_in_commune(1.0, 0.5, &geoms), Some(CommuneId(2)));
        assert_eq!(point_in_commune(1.0 + 1e-9, 0.5, &geoms), Some(CommuneId(5)));
        assert_eq!(point_in_commune(1.0 - 1e-9, 0.5, &geoms), Some(CommuneId(2)));
    }

    #[test]
    fn hole_excludes_interior() {
        let outer = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0], [0.0, 0.0]];
        let hole = vec![[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0], [1.0, 1.0]];
        let p = Polygon::new(outer, vec![hole]).unwrap();
        assert!(p.contains(0.5, 0.5));
        assert!(!p.contains(2.0, 2.0));
        assert!(p.contains(1.0, 2.0));
    }

    #[test]
    fn antenna_map_counts() {
        let geoms = vec![square(1, 0.0, 0.0)];
        let antennas: Vec<Antenna> = [(0.1, 0.1), (0.5, 0.5), (0.9, 0.2), (3.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat))| Antenna {
                id: format!("a{i}"),
                lon,
                lat,
            })
            .collect();
        let map = build_antenna_map(&antennas, &geoms).unwrap();
        assert_eq!(map.mapping.len(), 3);
        assert_eq!(map.unmapped.len(), 1);
        assert!(build_antenna_map(&[], &geoms).unwrap().is_empty());

        let dup = vec![antennas[0].clone(), antennas[0].clone()];
        assert!(matches!(
            build_antenna_map(&dup, &geoms),
            Err(Error::DuplicateAntenna(a)) if a == "a0"
        ));
    }

    #[test]
    fn antenna_map_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        std::fs::write(&path, "antenna_id,commune_id\na1,3\na2,\na3,0\n").unwrap();
        let map = load_antenna_map(&path).unwrap();
        assert_eq!(map.get("a1"), Some(CommuneId(3)));
        assert!(map.unmapped.contains("a2") && map.unmapped.contains("a3"));

        std::fs::write(&path, "antenna_id,commune_id\na1,3\na1,3\n").unwrap();
        let err = load_antenna_map(&path).unwrap_err().to_string();
        assert_eq!(err, "duplicate antenna a1");

        std::fs::write(&path, "antenna_id,commune_id\na1,3\na2,x\n").unwrap();
        let err = load_antenna_map(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
