//! Stride-1 sliding windows paired with forecast-offset targets.
//!
//! Window `g` covers rows `g ..= g + L - 1`; its targets come from row
//! `g + L - 1 + f`, so a series of `N` rows yields `N - L + 1 - f` windows.
//! The offset only shifts the input-to-target association; the binary and
//! tag targets always come from the same row.

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{usage, Error, Result};
use crate::ingest::MergedDataset;

/// Largest supported forecast offset (FW3, 30 minutes).
pub const MAX_FORECAST_OFFSET: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    /// Rows per window (L).
    pub length: usize,
    /// Parameters per row (M).
    pub width: usize,
    /// Rows between a window's last row and its target row (f).
    pub forecast_offset: usize,
}

impl WindowSpec {
    pub fn new(length: usize, width: usize, forecast_offset: usize) -> Result<Self> {
        if length == 0 || width == 0 {
            return Err(usage("window length and width must be positive"));
        }
        if forecast_offset > MAX_FORECAST_OFFSET {
            return Err(usage(format!(
                "forecast offset {forecast_offset} outside the supported range 0-{MAX_FORECAST_OFFSET}"
            )));
        }
        Ok(Self { length, width, forecast_offset })
    }

    /// Flattened window size, L * M.
    pub fn flat_len(&self) -> usize {
        self.length * self.width
    }

    /// Number of windows for a series of `n` rows.
    pub fn count(&self, n: usize) -> usize {
        (n + 1).saturating_sub(self.length + self.forecast_offset)
    }
}

/// Windows as views into a shared row-major value matrix.
#[derive(Debug, Clone)]
pub struct WindowedSet {
    pub spec: WindowSpec,
    data: Arc<[f64]>,
    /// First row (in `data`) of every window.
    starts: Vec<usize>,
    pub y1: Vec<u8>,
    pub y2: Vec<u32>,
    /// Target row index in the source dataset.
    pub source_rows: Vec<usize>,
}

impl WindowedSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// True when the source series was too short to form a single window.
    pub fn is_degenerate(&self) -> bool {
        self.starts.is_empty()
    }

    /// Flattened `L x M` window, time-major.
    pub fn window(&self, g: usize) -> &[f64] {
        let m = self.spec.width;
        let s = self.starts[g] * m;
        &self.data[s..s + self.spec.flat_len()]
    }

    pub fn windows(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        (0..self.len()).map(|g| self.window(g))
    }

    /// Keeps the given windows in the given order.
    pub fn subset(&self, indices: &[usize]) -> WindowedSet {
        WindowedSet {
            spec: self.spec,
            data: Arc::clone(&self.data),
            starts: indices.iter().map(|&g| self.starts[g]).collect(),
            y1: indices.iter().map(|&g| self.y1[g]).collect(),
            y2: indices.iter().map(|&g| self.y2[g]).collect(),
            source_rows: indices.iter().map(|&g| self.source_rows[g]).collect(),
        }
    }

    const MAGIC: &'static [u8; 4] = b"AFCW";
    const VERSION: u32 = 1;

    /// Versioned little-endian cache: header (L, M, f, P), then the
    /// materialized `P x L x M` tensor, y1, y2 and target rows.
    pub fn write_cache<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u32::<LittleEndian>(Self::VERSION)?;
        for v in [self.spec.length, self.spec.width, self.spec.forecast_offset, self.len()] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        for x in self.windows().flatten() {
            w.write_f64::<LittleEndian>(*x)?;
        }
        w.write_all(&self.y1)?;
        for &c in &self.y2 {
            w.write_u32::<LittleEndian>(c)?;
        }
        for &r in &self.source_rows {
            w.write_u64::<LittleEndian>(r as u64)?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Parse(format!("window cache: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("window cache: bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != Self::VERSION {
            return Err(Error::Parse(format!("window cache: unsupported version {version}")));
        }
        let mut header = [0u64; 4];
        r.read_u64_into::<LittleEndian>(&mut header).map_err(bad)?;
        let [l, m, f, p] = header.map(|v| v as usize);
        let spec = WindowSpec::new(l, m, f)?;
        let mut data = vec![0f64; p * l * m];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(bad)?;
        let mut y1 = vec![0u8; p];
        r.read_exact(&mut y1).map_err(bad)?;
        let mut y2 = vec![0u32; p];
        r.read_u32_into::<LittleEndian>(&mut y2).map_err(bad)?;
        let mut rows = vec![0u64; p];
        r.read_u64_into::<LittleEndian>(&mut rows).map_err(bad)?;
        Ok(WindowedSet {
            spec,
            data: data.into(),
            starts: (0..p).map(|g| g * l).collect(),
            y1,
            y2,
            source_rows: rows.into_iter().map(|v| v as usize).collect(),
        })
    }
}

pub fn build_windows(ds: &MergedDataset, spec: WindowSpec) -> Result<WindowedSet> {
    if ds.n_params() != spec.width {
        return Err(usage(format!(
            "turbine {} has {} parameters, window width is {}",
            ds.turbine_id,
            ds.n_params(),
            spec.width
        )));
    }
    if ds.values.iter().any(|v| v.is_nan()) {
        return Err(usage(format!("turbine {} still contains NaN values", ds.turbine_id)));
    }
    let p = spec.count(ds.n_rows());
    let target = |g: usize| g + spec.length - 1 + spec.forecast_offset;
    Ok(WindowedSet {
        spec,
        data: ds.values.as_slice().into(),
        starts: (0..p).collect(),
        y1: (0..p).map(|g| ds.y1[target(g)]).collect(),
        y2: (0..p).map(|g| ds.y2[target(g)]).collect(),
        source_rows: (0..p).map(target).collect(),
    })
}

/// Keeps the windows flagged `1` by the regressor, in temporal order.
pub fn select_alarm_windows(ws: &WindowedSet, predictions: &[u8]) -> Result<WindowedSet> {
    if predictions.len() != ws.len() {
        return Err(usage(format!(
            "{} predictions for {} windows",
            predictions.len(),
            ws.len()
        )));
    }
    let keep: Vec<usize> = (0..ws.len()).filter(|&g| predictions[g] == 1).collect();
    Ok(ws.subset(&keep))
}
