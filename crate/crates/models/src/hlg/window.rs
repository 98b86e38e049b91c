//! Plain and dilated window partitions of a feature grid.
//!
//! Rows are split into blocks of `R·D` positions. Inside a block, position
//! `blk·R·D + i·D + a` belongs to window row `blk·D + a` at in-window row `i`;
//! columns follow the same rule. `D = 1` gives contiguous `R × R` tiles. Grids
//! are zero-padded at the bottom/right to a multiple of `R·D`.

use std::sync::Arc;

use lgseg_tensor::{Float, Var};

use crate::error::{input_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowGeometry {
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub dilation: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl WindowGeometry {
    pub fn new(h: usize, w: usize, window: usize, dilation: usize) -> Self {
        let block = window * dilation;
        Self {
            h,
            w,
            window,
            dilation,
            padded_h: h.div_ceil(block) * block,
            padded_w: w.div_ceil(block) * block,
        }
    }

    /// Windows along each axis.
    pub fn windows_per_axis(&self) -> (usize, usize) {
        (self.padded_h / self.window, self.padded_w / self.window)
    }

    pub fn num_windows(&self) -> usize {
        let (a, b) = self.windows_per_axis();
        a * b
    }

    pub fn window_area(&self) -> usize {
        self.window * self.window
    }

    pub fn is_padded(&self) -> bool {
        (self.padded_h, self.padded_w) != (self.h, self.w)
    }

    fn axis_position(&self, win: usize, i: usize) -> usize {
        let (r, d) = (self.window, self.dilation);
        (win / d) * r * d + i * d + win % d
    }

    fn axis_window(&self, p: usize) -> (usize, usize) {
        let (r, d) = (self.window, self.dilation);
        let (blk, rem) = (p / (r * d), p % (r * d));
        (blk * d + rem % d, rem / d)
    }

    /// Grid position (possibly in the padding) of slot `idx` of window `win`.
    pub fn position(&self, win: usize, idx: usize) -> (usize, usize) {
        let per_row = self.windows_per_axis().1;
        (
            self.axis_position(win / per_row, idx / self.window),
            self.axis_position(win % per_row, idx % self.window),
        )
    }

    /// `(window id, in-window index)` holding grid position `(r, c)`.
    pub fn locate(&self, r: usize, c: usize) -> (usize, usize) {
        let (wr, ir) = self.axis_window(r);
        let (wc, ic) = self.axis_window(c);
        (wr * self.windows_per_axis().1 + wc, ir * self.window + ic)
    }

    /// Source row in `[N·h·w]` for every window slot, `None` in the padding.
    pub fn partition_index(&self, batch: usize) -> Arc<[Option<usize>]> {
        let (nw, area) = (self.num_windows(), self.window_area());
        let mut idx = Vec::with_capacity(batch * nw * area);
        for b in 0..batch {
            for win in 0..nw {
                for slot in 0..area {
                    let (r, c) = self.position(win, slot);
                    idx.push((r < self.h && c < self.w).then(|| (b * self.h + r) * self.w + c));
                }
            }
        }
        idx.into()
    }

    /// Window-slot row for every grid position; the inverse of [`Self::partition_index`].
    pub fn assemble_index(&self, batch: usize) -> Arc<[Option<usize>]> {
        let (nw, area) = (self.num_windows(), self.window_area());
        let mut idx = Vec::with_capacity(batch * self.h * self.w);
        for b in 0..batch {
            for r in 0..self.h {
                for c in 0..self.w {
                    let (win, slot) = self.locate(r, c);
                    idx.push(Some((b * nw + win) * area + slot));
                }
            }
        }
        idx.into()
    }

    /// Per window, which slots fall in the padding.
    pub fn padding_mask(&self) -> Vec<bool> {
        let (nw, area) = (self.num_windows(), self.window_area());
        let mut mask = Vec::with_capacity(nw * area);
        for win in 0..nw {
            for slot in 0..area {
                let (r, c) = self.position(win, slot);
                mask.push(r >= self.h || c >= self.w);
            }
        }
        mask
    }
}

/// Windows `[N·num_windows, R², C]` cut from a `[N, h, w, C]` map.
#[derive(Clone)]
pub struct WindowPartition<'g, T: Float> {
    pub windows: Var<'g, T>,
    pub geom: WindowGeometry,
    pub batch: usize,
}

impl<'g, T: Float> WindowPartition<'g, T> {
    pub fn new(x: &Var<'g, T>, window: usize, dilation: usize) -> Result<Self> {
        let s = x.shape();
        if s.len() != 4 || window == 0 || dilation == 0 {
            return Err(input_err(s, format!("cannot partition with R={window}, D={dilation}")));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let geom = WindowGeometry::new(h, w, window, dilation);
        let windows = x
            .reshape(&[n * h * w, c])?
            .gather_rows(geom.partition_index(n))?
            .reshape(&[n * geom.num_windows(), geom.window_area(), c])?;
        Ok(Self {
            windows,
            geom,
            batch: n,
        })
    }

    /// Puts window contents (same layout as `windows`, any channel count) back on the grid.
    pub fn assemble_values(&self, values: &Var<'g, T>) -> Result<Var<'g, T>> {
        let g = &self.geom;
        let s = values.shape();
        let rows = self.batch * g.num_windows() * g.window_area();
        if s.len() != 3 || s[0] * s[1] != rows {
            return Err(input_err(s, "window layout does not match the partition"));
        }
        let c = s[2];
        Ok(values
            .reshape(&[rows, c])?
            .gather_rows(g.assemble_index(self.batch))?
            .reshape(&[self.batch, g.h, g.w, c])?)
    }

    pub fn assemble(&self) -> Result<Var<'g, T>> {
        self.assemble_values(&self.windows)
    }
}
