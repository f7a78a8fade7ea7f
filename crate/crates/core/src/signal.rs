//! Recording, brake-trace and epoch types, the trial-file format, CSV ingest
//! and rational resampling.
//!
//! Trial file, version 1, all integers and floats little-endian:
//!
//! ```text
//! "NBRK"  u32 version  f64 fs  f64 brake_scale
//! u32 channels  u32 samples
//! channels × (u32 byte length, UTF-8 name)
//! channels × (f64 x, f64 y)
//! channels × samples f32, channel-major
//! u32 brake count, brake count × f32
//! u32 onset count, onset count × u64
//! ```
//!
//! `brake_scale` is the divisor that mapped the raw pedal signal onto [0, 1].

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::codec::{Reader, Writer};
use crate::filter;
use crate::montage;
use crate::{Error, Result};

pub const TRIAL_MAGIC: &[u8; 4] = b"NBRK";
pub const TRIAL_VERSION: u32 = 1;

/// Multichannel EEG, channels × samples, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    channel_names: Vec<String>,
    electrode_xy: Vec<[f64; 2]>,
    fs: f64,
    data: DMatrix<f64>,
}

impl EegRecording {
    pub fn new(
        channel_names: Vec<String>,
        electrode_xy: Vec<[f64; 2]>,
        fs: f64,
        data: DMatrix<f64>,
    ) -> Result<Self> {
        let m = data.nrows();
        if channel_names.len() != m {
            return Err(Error::DimensionMismatch {
                context: "channel count (names vs data rows)",
                expected: channel_names.len(),
                actual: m,
            });
        }
        if electrode_xy.len() != m {
            return Err(Error::DimensionMismatch {
                context: "channel count (electrode positions vs data rows)",
                expected: electrode_xy.len(),
                actual: m,
            });
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some((i, _)) = electrode_xy
            .iter()
            .enumerate()
            .find(|(_, [x, y])| !(x * x + y * y <= 1.0 + 1e-12))
        {
            return Err(Error::invalid(format!(
                "electrode `{}` lies outside the unit disk",
                channel_names[i]
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite sample at channel {}, sample {}",
                idx % m.max(1),
                idx / m.max(1)
            )));
        }
        Ok(Self {
            channel_names,
            electrode_xy,
            fs,
            data,
        })
    }

    /// Labels are looked up in the bundled 10-10 montage.
    pub fn with_standard_montage(channel_names: Vec<String>, fs: f64, data: DMatrix<f64>) -> Result<Self> {
        let xy = montage::positions(&channel_names)?;
        Self::new(channel_names, xy, fs, data)
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn electrode_xy(&self) -> &[[f64; 2]] {
        &self.electrode_xy
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Same montage and rate, new samples. Fails if the new data is invalid.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        Self::new(self.channel_names.clone(), self.electrode_xy.clone(), self.fs, data)
    }
}

/// Braking intensity in [0, 1] plus brake-pedal activation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BrakeTrace {
    fs: f64,
    values: Vec<f64>,
    onsets: Vec<usize>,
    scale: f64,
}

impl BrakeTrace {
    pub fn new(fs: f64, values: Vec<f64>, onsets: Vec<usize>) -> Result<Self> {
        Self::with_scale(fs, values, onsets, 1.0)
    }

    pub fn with_scale(fs: f64, values: Vec<f64>, onsets: Vec<usize>, scale: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "brake value {} at sample {i} is outside [0, 1]",
                values[i]
            )));
        }
        if onsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("onset indices must be strictly increasing"));
        }
        if let Some(&o) = onsets.iter().find(|&&o| o >= values.len()) {
            return Err(Error::invalid(format!(
                "onset index {o} beyond trace length {}",
                values.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("brake scale must be positive, got {scale}")));
        }
        Ok(Self {
            fs,
            values,
            onsets,
            scale,
        })
    }

    /// Divides a raw nonnegative pedal signal by its maximum and records the
    /// divisor as the scale.
    pub fn normalized(fs: f64, raw: &[f64], onsets: Vec<usize>) -> Result<Self> {
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("raw brake value {v} must be finite and ≥ 0")));
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        let scale = if max > 0.0 { max } else { 1.0 };
        let values = raw.iter().map(|v| (v / scale).min(1.0)).collect();
        Self::with_scale(fs, values, onsets, scale)
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn onsets(&self) -> &[usize] {
        &self.onsets
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time in ms of the last sample.
    pub fn end_ms(&self) -> f64 {
        (self.values.len().saturating_sub(1)) as f64 * 1000.0 / self.fs
    }

    /// Value at time `t_ms`, nearest sample; `None` outside the trace.
    pub fn at_ms(&self, t_ms: f64) -> Option<f64> {
        let idx = (t_ms * self.fs / 1000.0).round();
        if idx < 0.0 || idx as usize >= self.values.len() {
            None
        } else {
            Some(self.values[idx as usize])
        }
    }
}

/// One onset-locked window of EEG with the aligned brake trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    eeg: DMatrix<f64>,
    brake: Vec<f64>,
    t0_index: usize,
    fs: f64,
}

impl Epoch {
    pub fn new(eeg: DMatrix<f64>, brake: Vec<f64>, t0_index: usize, fs: f64) -> Result<Self> {
        if eeg.ncols() != brake.len() {
            return Err(Error::DimensionMismatch {
                context: "epoch samples (eeg vs brake)",
                expected: eeg.ncols(),
                actual: brake.len(),
            });
        }
        if t0_index >= brake.len() {
            return Err(Error::invalid(format!(
                "t0 index {t0_index} outside epoch of {} samples",
                brake.len()
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::invalid("epoch sampling rate must be positive"));
        }
        Ok(Self {
            eeg,
            brake,
            t0_index,
            fs,
        })
    }

    pub fn eeg(&self) -> &DMatrix<f64> {
        &self.eeg
    }

    pub fn brake(&self) -> &[f64] {
        &self.brake
    }

    pub fn t0_index(&self) -> usize {
        self.t0_index
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_samples(&self) -> usize {
        self.brake.len()
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.nrows()
    }

    pub fn with_eeg(&self, eeg: DMatrix<f64>) -> Result<Self> {
        Self::new(eeg, self.brake.clone(), self.t0_index, self.fs)
    }

    /// The brake samples as a [`BrakeTrace`] whose time origin is the epoch start.
    pub fn brake_trace(&self) -> Result<BrakeTrace> {
        BrakeTrace::new(self.fs, self.brake.clone(), vec![self.t0_index])
    }
}

/// Serializes to the trial-file byte layout.
pub fn encode_recording(recording: &EegRecording, trace: &BrakeTrace) -> Result<Vec<u8>> {
    if (recording.fs() - trace.fs()).abs() > 0.0 {
        return Err(Error::invalid("recording and brake trace sampling rates differ"));
    }
    if let Some(v) = recording.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("refusing to save non-finite sample {v}")));
    }
    let mut w = Writer::new();
    w.bytes(TRIAL_MAGIC);
    w.u32(TRIAL_VERSION);
    w.f64(recording.fs());
    w.f64(trace.scale());
    w.len_u32(recording.n_channels());
    w.len_u32(recording.n_samples());
    for name in recording.channel_names() {
        w.str(name);
    }
    for [x, y] in recording.electrode_xy() {
        w.f64(*x);
        w.f64(*y);
    }
    for ch in 0..recording.n_channels() {
        for v in recording.data().row(ch).iter() {
            w.f32(*v as f32);
        }
    }
    w.len_u32(trace.len());
    for v in trace.values() {
        w.f32(*v as f32);
    }
    w.len_u32(trace.onsets().len());
    for &o in trace.onsets() {
        w.u64(o as u64);
    }
    Ok(w.into_bytes())
}

pub fn decode_recording(bytes: &[u8]) -> Result<(EegRecording, BrakeTrace)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(TRIAL_MAGIC, "magic")?;
    let at = r.offset();
    let version = r.u32("format version")?;
    if version != TRIAL_VERSION {
        return Err(Error::Format {
            offset: at,
            field: "format version",
            reason: format!("unsupported version {version}"),
        });
    }
    let at = r.offset();
    let fs = r.f64("fs")?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Format {
            offset: at,
            field: "fs",
            reason: format!("sampling rate must be positive, got {fs}"),
        });
    }
    let at = r.offset();
    let scale = r.f64("brake scale")?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Format {
            offset: at,
            field: "brake scale",
            reason: format!("must be positive, got {scale}"),
        });
    }
    let n_ch = r.u32("channel count")? as usize;
    let n_samp = r.u32("sample count")? as usize;
    let mut names = Vec::with_capacity(n_ch.min(4096));
    for _ in 0..n_ch {
        names.push(r.str("channel name")?);
    }
    let xy_at = r.offset();
    let mut xy = Vec::with_capacity(n_ch.min(4096));
    for _ in 0..n_ch {
        let x = r.f64("electrode_xy")?;
        let y = r.f64("electrode_xy")?;
        xy.push([x, y]);
    }
    // declared counts must account for the rest of the file exactly:
    // samples, brake block, onset block (a multiple of 8 bytes)
    let body = n_ch
        .saturating_mul(n_samp)
        .saturating_mul(4)
        .saturating_add(4 + 4)
        .saturating_add(n_samp.saturating_mul(4));
    if r.remaining() < body || (r.remaining() - body) % 8 != 0 {
        return Err(r.error(
            "channel count",
            format!(
                "header declares {n_ch} channels × {n_samp} samples, inconsistent with the {} bytes that follow",
                r.remaining()
            ),
        ));
    }
    for (i, [x, y]) in xy.iter().enumerate() {
        if !(x * x + y * y <= 1.0 + 1e-12) {
            return Err(Error::Format {
                offset: xy_at + 16 * i as u64,
                field: "electrode_xy",
                reason: format!("electrode `{}` outside the unit disk", names[i]),
            });
        }
    }
    let mut data = DMatrix::zeros(n_ch, n_samp);
    for ch in 0..n_ch {
        for s in 0..n_samp {
            let at = r.offset();
            let v = r.f32("eeg samples")?;
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: at,
                    field: "eeg samples",
                    reason: format!("non-finite value at channel {ch}, sample {s}"),
                });
            }
            data[(ch, s)] = v as f64;
        }
    }
    let at = r.offset();
    let nb = r.count("brake sample count", 4)?;
    if nb != n_samp {
        return Err(Error::Format {
            offset: at,
            field: "brake sample count",
            reason: format!("{nb} brake samples for {n_samp} EEG samples"),
        });
    }
    let mut brake = Vec::with_capacity(nb);
    for i in 0..nb {
        let at = r.offset();
        let v = r.f32("brake samples")? as f64;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Format {
                offset: at,
                field: "brake samples",
                reason: format!("value {v} at sample {i} is not normalized to [0, 1]"),
            });
        }
        brake.push(v);
    }
    let no = r.count("onset count", 8)?;
    let mut onsets = Vec::with_capacity(no);
    for _ in 0..no {
        let at = r.offset();
        let o = r.u64("onset indices")? as usize;
        if o >= nb || onsets.last().is_some_and(|&p| p >= o) {
            return Err(Error::Format {
                offset: at,
                field: "onset indices",
                reason: format!("index {o} out of range or not increasing"),
            });
        }
        onsets.push(o);
    }
    r.finish("end of file")?;
    let recording = EegRecording::new(names, xy, fs, data)?;
    let trace = BrakeTrace::with_scale(fs, brake, onsets, scale)?;
    Ok((recording, trace))
}

pub fn save_recording(recording: &EegRecording, trace: &BrakeTrace, path: &Path) -> Result<()> {
    let bytes = encode_recording(recording, trace)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads and validates a binary trial file.
pub fn load_recording(path: &Path) -> Result<(EegRecording, BrakeTrace)> {
    let bytes = fs::read(path)?;
    decode_recording(&bytes)
}

/// CSV ingest: a header row of channel labels with the brake intensity as the
/// final column, then one row per sample. Electrode positions come from the
/// bundled montage; the brake column is normalized by its maximum. The file
/// carries no events, so the returned trace has no onsets.
pub fn load_csv(path: &Path, fs: f64) -> Result<(EegRecording, BrakeTrace)> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, fs)
}

pub fn parse_csv(text: &str, fs: f64) -> Result<(EegRecording, BrakeTrace)> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or(Error::Format {
        offset: 0,
        field: "header",
        reason: "empty file".into(),
    })?;
    let cols: Vec<String> = header.trim_end().split(',').map(|c| c.trim().to_string()).collect();
    if cols.len() < 2 {
        return Err(Error::Format {
            offset: 0,
            field: "header",
            reason: "need at least one channel column and the brake column".into(),
        });
    }
    offset += header.len() as u64;
    let n_ch = cols.len() - 1;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let mut brake = Vec::new();
    for line in lines {
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            offset += line.len() as u64;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Format {
                offset,
                field: "channel count",
                reason: format!("row has {} columns, header has {}", fields.len(), cols.len()),
            });
        }
        for (i, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Format {
                offset,
                field: "sample value",
                reason: format!("cannot parse `{f}` in column `{}`", cols[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    offset,
                    field: "sample value",
                    reason: format!("non-finite value in column `{}`", cols[i]),
                });
            }
            if i < n_ch {
                rows[i].push(v);
            } else {
                brake.push(v);
            }
        }
        offset += line.len() as u64;
    }
    let n = brake.len();
    let data = DMatrix::from_fn(n_ch, n, |c, s| rows[c][s]);
    let names = cols[..n_ch].to_vec();
    let recording = EegRecording::with_standard_montage(names, fs, data)?;
    let trace = BrakeTrace::normalized(fs, &brake, Vec::new())?;
    Ok((recording, trace))
}

fn ratio_for(fs: f64, target_fs: f64) -> Result<(usize, usize)> {
    if !(target_fs > 0.0 && target_fs.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_fs}")));
    }
    filter::rational_ratio(fs, target_fs, 10_000).ok_or_else(|| {
        Error::invalid(format!(
            "{target_fs} Hz / {fs} Hz is not a ratio p/q with p, q ≤ 10000"
        ))
    })
}

/// Polyphase rational resampling with a Kaiser anti-alias low-pass.
pub fn resample(recording: &EegRecording, target_fs: f64) -> Result<EegRecording> {
    let (up, down) = ratio_for(recording.fs(), target_fs)?;
    if up == down {
        return Ok(recording.clone());
    }
    let taps = filter::resampling_taps(recording.fs(), up, down);
    let rows: Vec<Vec<f64>> = (0..recording.n_channels())
        .map(|c| filter::resample_poly(&recording.channel(c), up, down, &taps))
        .collect();
    let n = rows.first().map_or(0, Vec::len);
    let data = DMatrix::from_fn(rows.len(), n, |c, s| rows[c][s]);
    EegRecording::new(
        recording.channel_names().to_vec(),
        recording.electrode_xy().to_vec(),
        target_fs,
        data,
    )
}

/// Resamples the brake trace alongside its recording; values are clamped to
/// [0, 1] after filtering and onsets are mapped to the nearest output sample.
pub fn resample_trace(trace: &BrakeTrace, target_fs: f64) -> Result<BrakeTrace> {
    let (up, down) = ratio_for(trace.fs(), target_fs)?;
    if up == down {
        return Ok(trace.clone());
    }
    let taps = filter::resampling_taps(trace.fs(), up, down);
    let values: Vec<f64> = filter::resample_poly(trace.values(), up, down, &taps)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let mut onsets: Vec<usize> = trace
        .onsets()
        .iter()
        .map(|&o| ((o * up) as f64 / down as f64).round() as usize)
        .filter(|&o| o < values.len())
        .collect();
    onsets.dedup();
    BrakeTrace::with_scale(target_fs, values, onsets, trace.scale())
}
