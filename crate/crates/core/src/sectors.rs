//! Angular sectors and transmural layers of the left-ventricular wall.
//!
//! Every pixel inside the epicardium gets a label code
//! `region·1000 + sub_segment·10 + layer`: region 1 is the cavity (layer 0),
//! region 2 the myocardium (layers 1..=4). Angles are measured from the ray
//! centroid → P1, clockwise on screen (image `y` axis pointing down).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, contains, distance_to_polygon, signed_area, Grid2, Point};
use crate::segmentation::ContourSet;
use crate::volume::{Geometry, Volume, VolumeError};

pub const SEGMENT_NAMES: [&str; 6] = ["A", "AL", "IL", "I", "IS", "AS"];
pub const N_SEGMENTS: usize = 6;
pub const N_SUB_SEGMENTS: usize = 18;
pub const N_LAYERS: usize = 4;
pub const SUB_SEGMENT_DEG: f64 = 20.0;
pub const ANGLE_CONVENTION: &str = "clockwise in image coordinates (y down), origin on the ray endo centroid -> P1";
pub const LABEL_CODE: &str = "region*1000 + sub_segment*10 + layer; region 1 = cavity (layer 0), region 2 = myocardium";

#[derive(Debug, Error)]
pub enum SectorError {
    #[error("degenerate contour: {0}")]
    Degenerate(String),
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Outside,
    Cavity,
    Myocardium,
}

/// Decoded label of one pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Label {
    pub region: Region,
    pub sub_segment: u8,
    pub layer: u8,
}

impl Label {
    pub const OUTSIDE: Label = Label { region: Region::Outside, sub_segment: 0, layer: 0 };

    pub fn code(&self) -> u16 {
        let r = match self.region {
            Region::Outside => return 0,
            Region::Cavity => 1,
            Region::Myocardium => 2,
        };
        r * 1000 + self.sub_segment as u16 * 10 + self.layer as u16
    }

    pub fn from_code(code: u16) -> Label {
        let region = match code / 1000 {
            1 => Region::Cavity,
            2 => Region::Myocardium,
            _ => return Label::OUTSIDE,
        };
        Label { region, sub_segment: ((code % 1000) / 10) as u8, layer: (code % 10) as u8 }
    }

    /// Segment 1..=6, or 0 outside.
    pub fn segment(&self) -> u8 {
        segment_of(self.sub_segment)
    }
}

pub fn segment_of(sub_segment: u8) -> u8 {
    if sub_segment == 0 {
        0
    } else {
        (sub_segment - 1) / 3 + 1
    }
}

/// Clockwise screen angle of `v` in degrees, `[0, 360)`.
pub fn screen_angle_deg(v: Point) -> f64 {
    v.y.atan2(v.x).to_degrees().rem_euclid(360.0)
}

/// Angle of `p` relative to the reference ray, `[0, 360)`.
pub fn relative_angle_deg(p: Point, center: Point, reference_deg: f64) -> f64 {
    let a = (screen_angle_deg(p - center) - reference_deg).rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

pub fn sub_segment_for_angle(angle_deg: f64) -> u8 {
    ((angle_deg / SUB_SEGMENT_DEG).floor() as i64).clamp(0, N_SUB_SEGMENTS as i64 - 1) as u8 + 1
}

/// Layer 1..=4 from a normalized depth: half-open quartiles, last closed.
pub fn layer_for_depth(depth: f64) -> u8 {
    (1 + (4.0 * depth).floor() as i64).clamp(1, N_LAYERS as i64) as u8
}

/// Sector labels of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSectors {
    pub slice: usize,
    pub centroid: Point,
    pub reference_deg: f64,
    pub labels: Grid2<u16>,
}

impl SliceSectors {
    pub fn label(&self, x: usize, y: usize) -> Label {
        Label::from_code(self.labels.get(x, y))
    }
}

pub fn sectorize(slice: usize, endo: &[Point], epi: &[Point], p1: Point, width: usize, height: usize) -> Result<SliceSectors, SectorError> {
    if endo.len() < 3 || signed_area(endo).abs() < 1.0 {
        return Err(SectorError::Degenerate(format!("slice {slice}: endocardial area below 1 px²")));
    }
    if epi.len() < 3 || signed_area(epi).abs() <= signed_area(endo).abs() {
        return Err(SectorError::Degenerate(format!("slice {slice}: epicardium does not enclose the endocardium")));
    }
    let c = centroid(endo);
    if p1.dist(c) < 1e-9 {
        return Err(SectorError::Degenerate(format!("slice {slice}: P1 coincides with the centroid")));
    }
    let reference_deg = screen_angle_deg(p1 - c);
    let rows: Vec<Vec<u16>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let p = Point::new(x as f64, y as f64);
                    if !contains(epi, p) {
                        return 0;
                    }
                    let sub = sub_segment_for_angle(relative_angle_deg(p, c, reference_deg));
                    if contains(endo, p) {
                        return Label { region: Region::Cavity, sub_segment: sub, layer: 0 }.code();
                    }
                    let d_endo = distance_to_polygon(endo, p);
                    let d_epi = distance_to_polygon(epi, p);
                    let depth = if d_endo + d_epi > 0.0 { d_endo / (d_endo + d_epi) } else { 0.0 };
                    Label { region: Region::Myocardium, sub_segment: sub, layer: layer_for_depth(depth) }.code()
                })
                .collect()
        })
        .collect();
    Ok(SliceSectors { slice, centroid: c, reference_deg, labels: Grid2::from_vec(width, height, rows.concat()) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectorQuery {
    SubSegment(u8),
    Segment(u8),
}

/// Pixels `(x, y)` of `region` carrying the queried sector id.
pub fn sector_masks(map: &SliceSectors, region: Region, query: SectorQuery) -> Result<Vec<(usize, usize)>, SectorError> {
    let keep: Box<dyn Fn(&Label) -> bool> = match query {
        SectorQuery::SubSegment(id) if (1..=N_SUB_SEGMENTS as u8).contains(&id) => Box::new(move |l: &Label| l.sub_segment == id),
        SectorQuery::Segment(id) if (1..=N_SEGMENTS as u8).contains(&id) => Box::new(move |l: &Label| l.segment() == id),
        SectorQuery::SubSegment(id) => return Err(SectorError::UnknownId { kind: "sub-segment", id: id as usize }),
        SectorQuery::Segment(id) => return Err(SectorError::UnknownId { kind: "segment", id: id as usize }),
    };
    let mut out = Vec::new();
    for y in 0..map.labels.height {
        for x in 0..map.labels.width {
            let l = map.label(x, y);
            if l.region == region && keep(&l) {
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

/// Sector maps of a whole volume.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorMap {
    pub geometry: Geometry,
    pub slices: Vec<SliceSectors>,
}

impl SectorMap {
    pub fn get(&self, slice: usize) -> Option<&SliceSectors> {
        self.slices.iter().find(|s| s.slice == slice)
    }

    /// Sectorizes every slice present in `contours`, with `p1_for(slice)`
    /// as the reference point.
    pub fn build(geometry: &Geometry, contours: &ContourSet, p1_for: impl Fn(usize) -> Option<Point> + Sync) -> Result<SectorMap, SectorError> {
        let [nx, ny, _] = geometry.dims;
        let slices: Result<Vec<SliceSectors>, SectorError> = contours
            .slices
            .par_iter()
            .map(|s| {
                let p1 = p1_for(s.slice).ok_or_else(|| SectorError::Degenerate(format!("slice {}: no P1 seed", s.slice)))?;
                sectorize(s.slice, &s.endo, &s.epi, p1, nx, ny)
            })
            .collect();
        let mut slices = slices?;
        slices.sort_by_key(|s| s.slice);
        Ok(SectorMap { geometry: geometry.clone(), slices })
    }

    /// Label volume; slices without contours are all zero.
    pub fn to_volume(&self) -> Result<Volume, SectorError> {
        let mut data = vec![0.0f32; self.geometry.len()];
        let n = self.geometry.slice_len();
        for s in &self.slices {
            for (d, &code) in data[s.slice * n..(s.slice + 1) * n].iter_mut().zip(&s.labels.data) {
                *d = code as f32;
            }
        }
        Ok(Volume::new(self.geometry.clone(), data)?)
    }

    pub fn legend(&self) -> SectorLegend {
        SectorLegend {
            angle_convention: ANGLE_CONVENTION.into(),
            label_code: LABEL_CODE.into(),
            segments: SEGMENT_NAMES.iter().map(|s| s.to_string()).collect(),
            slices: self.slices.iter().map(|s| LegendSlice { slice: s.slice, centroid: s.centroid, reference_deg: s.reference_deg }).collect(),
        }
    }

    pub fn from_volume(v: &Volume, legend: &SectorLegend) -> Result<SectorMap, SectorError> {
        let [nx, ny, nz] = v.dims();
        let mut slices = Vec::with_capacity(legend.slices.len());
        for ls in &legend.slices {
            if ls.slice >= nz {
                return Err(SectorError::Degenerate(format!("legend slice {} outside a {nz}-slice label volume", ls.slice)));
            }
            let data = v.slice(ls.slice).iter().map(|&f| f as u16).collect();
            slices.push(SliceSectors { slice: ls.slice, centroid: ls.centroid, reference_deg: ls.reference_deg, labels: Grid2::from_vec(nx, ny, data) });
        }
        Ok(SectorMap { geometry: v.geometry().clone(), slices })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendSlice {
    pub slice: usize,
    pub centroid: Point,
    pub reference_deg: f64,
}

/// JSON companion of the label volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorLegend {
    pub angle_convention: String,
    pub label_code: String,
    pub segments: Vec<String>,
    pub slices: Vec<LegendSlice>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::circle;

    #[test]
    fn angle_bins() {
        assert_eq!(sub_segment_for_angle(30.0), 2);
        assert_eq!(segment_of(sub_segment_for_angle(30.0)), 1);
        assert_eq!(sub_segment_for_angle(359.5), 18);
        assert_eq!(segment_of(18), 6);
        assert_eq!(sub_segment_for_angle(0.0), 1);
    }

    #[test]
    fn clockwise_on_screen() {
        let c = Point::new(0.0, 0.0);
        // Reference to the right; a point below on screen is 90° clockwise.
        assert!((relative_angle_deg(Point::new(0.0, 5.0), c, 0.0) - 90.0).abs() < 1e-12);
        assert!((relative_angle_deg(Point::new(0.0, -5.0), c, 0.0) - 270.0).abs() < 1e-12);
    }

    #[test]
    fn layer_quartiles() {
        assert_eq!(layer_for_depth(1.0 / 4.0), 2);
        assert_eq!(layer_for_depth(0.0), 1);
        assert_eq!(layer_for_depth(0.7499), 3);
        assert_eq!(layer_for_depth(1.0), 4);
    }

    #[test]
    fn label_codes_round_trip() {
        let l = Label { region: Region::Myocardium, sub_segment: 17, layer: 3 };
        assert_eq!(l.code(), 2173);
        assert_eq!(Label::from_code(2173), l);
        assert_eq!(Label::from_code(0), Label::OUTSIDE);
        assert_eq!(Label { region: Region::Cavity, sub_segment: 4, layer: 0 }.code(), 1040);
    }

    #[test]
    fn partition_and_equal_segments() {
        // Off-lattice center so no boundary ray runs along a pixel row.
        let c = Point::new(40.37, 40.61);
        let endo = circle(c, 12.0, 360);
        let epi = circle(c, 22.0, 360);
        let map = sectorize(0, &endo, &epi, Point::new(40.37, 15.0), 80, 80).unwrap();
        let myo: usize = map.labels.data.iter().filter(|&&v| Label::from_code(v).region == Region::Myocardium).count();
        let mut total = 0;
        for s in 1..=6 {
            let n = sector_masks(&map, Region::Myocardium, SectorQuery::Segment(s)).unwrap().len();
            assert!((n as f64 - myo as f64 / 6.0).abs() < 0.03 * myo as f64 / 6.0, "segment {s}: {n} of {myo}");
            let subs: usize = (1..=3).map(|k| sector_masks(&map, Region::Myocardium, SectorQuery::SubSegment(3 * (s - 1) + k)).unwrap().len()).sum();
            assert_eq!(subs, n);
            total += n;
        }
        assert_eq!(total, myo);
        assert!(sector_masks(&map, Region::Myocardium, SectorQuery::SubSegment(19)).is_err());
    }
}
