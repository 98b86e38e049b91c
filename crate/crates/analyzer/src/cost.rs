//! Closed-form cost model. Counts follow the engine's kernel accounting:
//! a `[m, k] · [k, n]` product costs `m·k·n` multiply-accumulates, a convolution
//! `out_positions · kh · kw · C_in/groups · C_out`. Norms, activations, softmax,
//! pooling and resizing are not counted.

use lgseg_models::config::{DecoderKind, GlobalBias, HlgConfig, SetrConfig, WindowEmbedding};
use serde::Serialize;

/// One breakdown row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Unstated structural choices this row depends on; empty when fully tabulated.
    pub assumption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input: (usize, usize),
    pub total_params: u64,
    pub total_macs: u64,
    /// `2 · total_macs`.
    pub total_flops: u64,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    fn new(model: impl Into<String>, input: (usize, usize), rows: Vec<CostRow>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs: u64 = rows.iter().map(|r| r.macs).sum();
        Self {
            model: model.into(),
            input,
            total_params,
            total_macs,
            total_flops: 2 * total_macs,
            rows,
        }
    }
}

/// `(params, macs)` of a linear layer applied to `rows` vectors.
pub fn linear(rows: usize, cin: usize, cout: usize, bias: bool) -> (u64, u64) {
    let mut a = Acc::default();
    a.linear(rows, cin, cout, bias);
    (a.params, a.macs)
}

/// FLOPs of an `[m, k] · [k, n]` product.
pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

#[derive(Default)]
struct Acc {
    params: u64,
    macs: u64,
}

impl Acc {
    fn linear(&mut self, rows: usize, cin: usize, cout: usize, bias: bool) {
        self.params += (cin * cout + if bias { cout } else { 0 }) as u64;
        self.macs += (rows * cin * cout) as u64;
    }

    fn conv(&mut self, positions: usize, k: usize, cin: usize, cout: usize, groups: usize, bias: bool) {
        self.params += (k * k * (cin / groups) * cout + if bias { cout } else { 0 }) as u64;
        self.macs += (positions * k * k * (cin / groups) * cout) as u64;
    }

    fn conv_bn(&mut self, positions: usize, k: usize, cin: usize, cout: usize) {
        self.conv(positions, k, cin, cout, 1, false);
        self.params += 2 * cout as u64;
    }

    fn norm(&mut self, c: usize) {
        self.params += 2 * c as u64;
    }

    fn row(&mut self, name: impl Into<String>, assumption: &str) -> CostRow {
        let a = std::mem::take(self);
        CostRow {
            name: name.into(),
            params: a.params,
            macs: a.macs,
            assumption: assumption.to_string(),
        }
    }
}

/// Output extent of a `k × k`, padding `k/2` convolution with `stride`.
fn conv_out(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

const DWMLP_NOTE: &str = "MLP hidden ratio and SE squeeze width";
const GLOBAL_NOTE: &str = "query fixup kernel, B_G table size and window-embedding mode";

/// One HLG sub-layer on an `h × w` input grid; returns the output grid.
#[allow(clippy::too_many_arguments)]
fn hlg_sublayer(
    rows: &mut Vec<CostRow>,
    prefix: &str,
    cfg: &HlgConfig,
    cin: usize,
    c: usize,
    heads: usize,
    window: usize,
    dilation: usize,
    stride: usize,
    native: usize,
    grid: (usize, usize),
) -> (usize, usize) {
    let mut a = Acc::default();
    let hid = cfg.mlp_hidden(c);
    let sq = cfg.se_hidden(cin);
    let (hi, wi) = grid;
    let (ho, wo) = (conv_out(hi, 3, stride), conv_out(wi, 3, stride));
    let l = ho * wo;
    a.norm(cin);
    a.linear(hi * wi, cin, hid, true);
    a.conv(l, 3, hid, hid, hid, true);
    a.linear(1, hid, sq, true);
    a.linear(1, sq, hid, true);
    a.linear(l, hid, c, true);
    rows.push(a.row(format!("{prefix}.dwmlp"), DWMLP_NOTE));

    let block = window * dilation;
    let windows = ho.div_ceil(block) * block / window * (wo.div_ceil(block) * block / window);
    let area = window * window;
    a.norm(c);
    a.linear(l, c, 3 * c, true);
    a.params += ((2 * window - 1) * (2 * window - 1) * heads) as u64;
    a.macs += 2 * (windows * area * area * c) as u64;
    a.linear(l, c, c, true);
    rows.push(a.row(format!("{prefix}.local"), ""));

    let (gh, gw) = (ho.div_ceil(window), wo.div_ceil(window));
    let gl = gh * gw;
    a.norm(c);
    a.conv(l, 3, c, c, c, false);
    if cfg.window_embedding == WindowEmbedding::DwConv {
        a.conv(gl, window, c, c, c, true);
    }
    a.macs += (gl * c * 2 * c) as u64;
    a.macs += 2 * (l * gl * c) as u64;
    a.macs += (l * c * c) as u64;
    let g_native = native.div_ceil(window);
    a.params += match cfg.global_bias {
        GlobalBias::Relative => {
            let extent = native + (g_native - 1) * window;
            (extent * extent * heads) as u64
        }
        GlobalBias::Dense => (heads * native * native * g_native * g_native) as u64,
    };
    rows.push(a.row(format!("{prefix}.global"), GLOBAL_NOTE));
    (ho, wo)
}

fn hlg_backbone(rows: &mut Vec<CostRow>, cfg: &HlgConfig, input: (usize, usize)) -> Vec<(usize, usize)> {
    let mut a = Acc::default();
    let c1 = cfg.stages[0].channels;
    let (h1, w1) = (conv_out(input.0, 3, 2), conv_out(input.1, 3, 2));
    let (h2, w2) = (conv_out(h1, 3, 2), conv_out(w1, 3, 2));
    a.conv_bn(h1 * w1, 3, 3, c1);
    a.conv_bn(h1 * w1, 1, c1, c1);
    a.conv_bn(h2 * w2, 3, c1, c1);
    rows.push(a.row("stem", "inner 1×1 width"));
    let mut grid = (h2, w2);
    let mut native = conv_out(conv_out(cfg.native_size, 3, 2), 3, 2);
    let mut cin = c1;
    let mut grids = Vec::with_capacity(4);
    for (i, st) in cfg.stages.iter().enumerate() {
        if i > 0 {
            native = conv_out(native, 3, 2);
        }
        for j in 0..st.depth {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            let dilation = if j % 2 == 1 { st.dilation } else { 1 };
            let prefix = format!("stage{}.{j}", i + 1);
            grid = hlg_sublayer(
                rows,
                &prefix,
                cfg,
                cin,
                st.channels,
                st.heads,
                st.window,
                dilation,
                stride,
                native,
                grid,
            );
            cin = st.channels;
        }
        grids.push(grid);
    }
    grids
}

/// Backbone plus the norm / average-pool / linear classification head.
pub fn hlg_classifier(cfg: &HlgConfig, input: (usize, usize)) -> CostReport {
    let mut rows = Vec::new();
    hlg_backbone(&mut rows, cfg, input);
    let mut a = Acc::default();
    let c4 = cfg.stages[3].channels;
    a.norm(c4);
    a.linear(1, c4, cfg.num_classes, true);
    rows.push(a.row("head", "norm + average pool + linear"));
    CostReport::new(cfg.name.clone(), input, rows)
}

/// Backbone plus the fuse / HLG pair / progressive-upsampling segmentation head.
pub fn hlg_segmenter(cfg: &HlgConfig, input: (usize, usize)) -> CostReport {
    let mut rows = Vec::new();
    let grids = hlg_backbone(&mut rows, cfg, input);
    let st = &cfg.stages[2];
    let (h, w) = grids[2];
    let total: usize = cfg.stages.iter().map(|s| s.channels).sum();
    let mut a = Acc::default();
    a.linear(h * w, total, st.channels, true);
    rows.push(a.row("decoder.fuse", "fused width C_3"));
    let native = (0..4).fold(cfg.seg.native_size, |n, _| conv_out(n, 3, 2));
    let seg = &cfg.seg;
    for (name, d) in [("plain", 1), ("dilated", seg.dilation)] {
        let prefix = format!("decoder.pair.{name}");
        hlg_sublayer(
            &mut rows,
            &prefix,
            cfg,
            st.channels,
            st.channels,
            st.heads,
            seg.window,
            d,
            1,
            native,
            (h, w),
        );
    }
    let (mut ph, mut pw, mut cin) = (h, w, st.channels);
    for _ in 0..4 {
        a.conv_bn(ph * pw, 3, cin, seg.pup_channels);
        (ph, pw, cin) = (2 * ph, 2 * pw, seg.pup_channels);
    }
    a.conv(ph * pw, 1, cin, seg.num_classes, 1, true);
    rows.push(a.row("decoder.pup", "PUP width"));
    CostReport::new(format!("{}-seg", cfg.name), input, rows)
}

/// SETR encoder, decoder and auxiliary heads.
pub fn setr(cfg: &SetrConfig, input: (usize, usize)) -> CostReport {
    let e = &cfg.encoder;
    let d = &cfg.decoder;
    let c = e.hidden;
    let (h, w) = (input.0 / e.patch, input.1 / e.patch);
    let l = h * w;
    let mut rows = Vec::new();
    let mut a = Acc::default();
    a.conv(l, e.patch, 3, c, 1, true);
    a.params += (e.native_grid.0 * e.native_grid.1 * c) as u64;
    rows.push(a.row("patch_embed+positions", ""));
    for i in 0..e.layers {
        a.norm(c);
        a.linear(l, c, 3 * c, true);
        a.macs += 2 * (l * l * c) as u64;
        a.linear(l, c, c, true);
        a.norm(c);
        a.linear(l, c, e.mlp_ratio * c, true);
        a.linear(l, e.mlp_ratio * c, c, true);
        rows.push(a.row(format!("encoder.layer{}", i + 1), ""));
    }
    if e.final_norm {
        a.norm(c);
        rows.push(a.row("encoder.final_norm", "final norm present"));
    }
    match d.kind {
        DecoderKind::Naive => {
            a.conv_bn(l, 1, c, c);
            a.conv(l, 1, c, d.num_classes, 1, true);
            rows.push(a.row("decoder.naive", ""));
        }
        DecoderKind::Pup => {
            let (mut ph, mut pw, mut cin) = (h, w, c);
            for _ in 0..cfg.pup_stages() {
                a.conv_bn(ph * pw, 3, cin, d.pup_channels);
                (ph, pw, cin) = (2 * ph, 2 * pw, d.pup_channels);
            }
            a.conv(ph * pw, 1, cin, d.num_classes, 1, true);
            rows.push(a.row("decoder.pup", "PUP width"));
        }
        DecoderKind::Mla => {
            let m = d.mla_taps.len();
            let (wd, wo) = (d.mla_channels, d.mla_out_channels);
            for i in 0..m {
                a.conv_bn(l, 1, c, wd);
                if d.mla_top_down && i + 1 < m {
                    a.conv_bn(l, 3, wd, wd);
                }
                a.conv_bn(l, 3, wd, wd);
                a.conv_bn(l, 3, wd, wo);
            }
            a.conv(16 * l, 1, m * wo, d.num_classes, 1, true);
            rows.push(a.row("decoder.mla", "stream widths and extra-conv placement"));
        }
    }
    for &t in &d.aux_taps {
        a.conv_bn(l, d.aux_kernel, c, d.aux_channels);
        a.conv(l, 1, d.aux_channels, d.num_classes, 1, true);
        rows.push(a.row(format!("aux.z{t}"), "aux head width and kernel"));
    }
    let name = format!("setr-{}-L{}-C{}", d.kind.name(), e.layers, c);
    CostReport::new(name, input, rows)
}
