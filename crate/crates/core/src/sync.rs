//! Temporal synchronization of the cine sequence with the DE acquisition
//! window, and scan alignment of a DE volume onto the cine grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume::{CineSequence, Geometry, Result, Volume, VolumeError};

pub const DEFAULT_WINDOW_START_MS: f64 = 300.0;
pub const DEFAULT_WINDOW_LEN_MS: f64 = 130.0;

#[derive(Clone, Debug)]
pub struct SyncResult {
    pub averaged_cine: Volume,
    pub selected_phase_indices: Vec<usize>,
    pub window_start_ms: f64,
    pub window_len_ms: f64,
}

/// Serializable summary of a [`SyncResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub selected_phase_indices: Vec<usize>,
    pub window_start_ms: f64,
    pub window_len_ms: f64,
}

impl SyncResult {
    pub fn record(&self) -> SyncRecord {
        SyncRecord {
            selected_phase_indices: self.selected_phase_indices.clone(),
            window_start_ms: self.window_start_ms,
            window_len_ms: self.window_len_ms,
        }
    }
}

/// Voxelwise mean of the phases whose trigger time falls in
/// `[start, start + len)`. When the window holds no trigger, the single
/// phase nearest to it is used.
pub fn average_cine_window(seq: &CineSequence, window_start_ms: f64, window_len_ms: f64) -> Result<SyncResult> {
    if seq.is_empty() {
        return Err(VolumeError::Sequence("empty cine sequence".into()));
    }
    if !(window_len_ms > 0.0) {
        return Err(VolumeError::Sequence("window length must be > 0".into()));
    }
    if window_start_ms < 0.0 || window_start_ms > seq.cycle_duration_ms() {
        return Err(VolumeError::Sequence(format!(
            "window start {window_start_ms} ms outside the cardiac cycle [0, {}]",
            seq.cycle_duration_ms()
        )));
    }
    let end = window_start_ms + window_len_ms;
    let times = seq.trigger_times_ms();
    let mut selected: Vec<usize> =
        (0..seq.len()).filter(|&i| times[i] >= window_start_ms && times[i] < end).collect();
    if selected.is_empty() {
        let gap = |t: f64| if t < window_start_ms { window_start_ms - t } else { t - end };
        let nearest = (0..seq.len())
            .min_by(|&a, &b| gap(times[a]).total_cmp(&gap(times[b])))
            .expect("non-empty sequence");
        selected.push(nearest);
    }

    let g = seq.geometry().clone();
    let mut acc = vec![0.0f64; g.len()];
    for &i in &selected {
        for (a, &v) in acc.iter_mut().zip(seq.phase(i).data()) {
            *a += v as f64;
        }
    }
    let n = selected.len() as f64;
    let data = acc.into_iter().map(|a| (a / n) as f32).collect();
    Ok(SyncResult {
        averaged_cine: Volume::new(g, data)?,
        selected_phase_indices: selected,
        window_start_ms,
        window_len_ms,
    })
}

/// A resampled volume together with the voxels that had a source sample.
#[derive(Clone, Debug)]
pub struct Resampled {
    pub volume: Volume,
    pub overlap: Vec<bool>,
}

impl Resampled {
    pub fn overlap_count(&self) -> usize {
        self.overlap.iter().filter(|&&b| b).count()
    }
}

const GRID_EPS: f64 = 1e-6;

fn snap_into_grid(p: [f64; 3], dims: [usize; 3]) -> Option<[f64; 3]> {
    let mut q = p;
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        if q[a] < -GRID_EPS || q[a] > hi + GRID_EPS {
            return None;
        }
        q[a] = q[a].clamp(0.0, hi);
    }
    Some(q)
}

/// Resamples `de` onto `target`'s grid through the world map
/// voxel(target) → world → voxel(de). Target voxels that map outside `de`
/// are set to 0 and left out of the overlap mask.
pub fn scan_align(de: &Volume, target: &Geometry) -> Result<Resampled> {
    de.geometry().validate()?;
    target.validate()?;
    let det = {
        let m = &target.orientation;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    if det.abs() < 0.5 {
        return Err(VolumeError::Geometry("target orientation is not invertible".into()));
    }
    let [nx, ny, _] = target.dims;
    let slice_len = nx * ny;
    let src_dims = de.dims();
    let mut data = vec![0.0f32; target.len()];
    let mut overlap = vec![false; target.len()];
    data.par_chunks_mut(slice_len)
        .zip(overlap.par_chunks_mut(slice_len))
        .enumerate()
        .for_each(|(k, (out, mask))| {
            for j in 0..ny {
                for i in 0..nx {
                    let w = target.voxel_to_world([i as f64, j as f64, k as f64]);
                    let p = de.world_to_voxel(w);
                    if let Some(q) = snap_into_grid(p, src_dims) {
                        out[j * nx + i] = de.sample_clamped(q) as f32;
                        mask[j * nx + i] = true;
                    }
                }
            }
        });
    Ok(Resampled { volume: Volume::new(target.clone(), data)?, overlap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn seq_with_triggers(times: &[f64]) -> CineSequence {
        let g = Geometry::new([2, 2, 1], [1.0; 3]).unwrap();
        let phases = times.iter().map(|&t| Volume::filled(g.clone(), t as f32).unwrap()).collect();
        CineSequence::new(phases, times.to_vec(), 1000.0).unwrap()
    }

    #[test]
    fn five_phases_in_130ms_window() {
        let times: Vec<f64> = (0..33).map(|i| i as f64 * 30.0).collect();
        let seq = seq_with_triggers(&times);
        let r = average_cine_window(&seq, 600.0, 130.0).unwrap();
        assert_eq!(r.selected_phase_indices, vec![20, 21, 22, 23, 24]);
        assert_eq!(r.averaged_cine.get(0, 0, 0), 660.0);
    }

    #[test]
    fn single_phase_and_nearest_fallback() {
        let seq = seq_with_triggers(&[0.0, 200.0, 400.0, 600.0]);
        let one = average_cine_window(&seq, 150.0, 100.0).unwrap();
        assert_eq!(one.selected_phase_indices, vec![1]);
        assert_eq!(one.averaged_cine, *seq.phase(1));

        let none = average_cine_window(&seq, 410.0, 50.0).unwrap();
        assert_eq!(none.selected_phase_indices, vec![2]);
    }

    #[test]
    fn identity_resample() {
        let g = Geometry::new([5, 4, 3], [1.5, 1.5, 4.0]).unwrap().with_origin([3.0, -1.0, 2.0]);
        let v = Volume::from_fn(g.clone(), |i, j, k| (i * 3 + j * 7 + k * 11) as f32).unwrap();
        let r = scan_align(&v, &g).unwrap();
        assert_eq!(r.overlap_count(), g.len());
        for (a, b) in r.volume.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn halved_spacing_ramp_and_fill() {
        let g = Geometry::new([6, 3, 2], [2.0, 2.0, 2.0]).unwrap();
        let de = Volume::from_fn(g, |i, _, _| (2 * i) as f32).unwrap();
        let fine = Geometry::new([14, 5, 3], [1.0, 1.0, 1.0]).unwrap();
        let r = scan_align(&de, &fine).unwrap();
        for k in 0..3 {
            for j in 0..5 {
                for i in 0..14 {
                    let idx = fine.index(i, j, k);
                    if i <= 10 {
                        assert!(r.overlap[idx]);
                        assert!((r.volume.data()[idx] - i as f32).abs() < 1e-5);
                    } else {
                        assert!(!r.overlap[idx]);
                        assert_eq!(r.volume.data()[idx], 0.0);
                    }
                }
            }
        }
    }
}
