//! Figures computed from a model: position-embedding similarity, attention
//! rows and channel-mean feature maps. Values are returned unnormalized;
//! writers apply per-image min-max scaling.

use lgseg_models::SegModel;
use lgseg_tensor::{Float, Graph, GraphOptions, ParamStore, Tensor};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum What {
    PosSim,
    Attention,
    Features,
}

impl What {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pos-sim" => Some(What::PosSim),
            "attention" => Some(What::Attention),
            "features" => Some(What::Features),
            _ => None,
        }
    }
}

/// Row-major grayscale figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Cosine similarity of every pair of rows of a `[h·w, C]` table, tiled so
/// that tile `(i_r, i_c)` holds the `h×w` similarities of patch `(i_r, i_c)`
/// to all patches. The result is `(h·h) × (w·w)`.
pub fn pos_similarity(table: &[f64], grid: (usize, usize), channels: usize) -> Vec<f64> {
    let (h, w) = grid;
    let l = h * w;
    let norms: Vec<f64> = (0..l)
        .map(|i| {
            table[i * channels..(i + 1) * channels]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let cos = |i: usize, j: usize| {
        let dot: f64 = (0..channels)
            .map(|k| table[i * channels + k] * table[j * channels + k])
            .sum();
        let denom = norms[i] * norms[j];
        if denom > 0.0 {
            dot / denom
        } else {
            0.0
        }
    };
    let (out_w, mut out) = (w * w, vec![0.0; l * l]);
    for ir in 0..h {
        for ic in 0..w {
            for jr in 0..h {
                for jc in 0..w {
                    out[(ir * h + jr) * out_w + ic * w + jc] = cos(ir * w + ic, jr * w + jc);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualizeArgs {
    pub what: What,
    pub layer: usize,
    pub head: usize,
    pub point: (usize, usize),
}

/// One figure for `image` (`[1, H, W, 3]`, normalized).
pub fn figure<T: Float>(
    model: &SegModel,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    args: &VisualizeArgs,
) -> Result<Figure, CliError> {
    match args.what {
        What::PosSim => pos_sim_figure(model, store),
        What::Attention => attention_figure(model, store, image, args),
        What::Features => features_figure(model, store, image, args.layer),
    }
}

fn pos_sim_figure<T: Float>(model: &SegModel, store: &ParamStore<T>) -> Result<Figure, CliError> {
    let SegModel::Setr(setr) = model else {
        return Err(usage(
            "pos-sim needs a SETR model; HLG models have no absolute position table",
        ));
    };
    let grid = setr.cfg.encoder.native_grid;
    let c = setr.cfg.encoder.hidden;
    let table = store.get(setr.encoder.positions).to_f64_vec();
    Ok(Figure {
        name: "pos_sim".to_string(),
        width: grid.1 * grid.1,
        height: grid.0 * grid.0,
        values: pos_similarity(&table, grid, c),
    })
}

fn check_point(point: (usize, usize), grid: (usize, usize)) -> Result<(), CliError> {
    if point.0 >= grid.0 || point.1 >= grid.1 {
        return Err(usage(format!(
            "query point {},{} is outside the {}x{} grid",
            point.0, point.1, grid.0, grid.1
        )));
    }
    Ok(())
}

fn attention_figure<T: Float>(
    model: &SegModel,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    args: &VisualizeArgs,
) -> Result<Figure, CliError> {
    let g = Graph::new(store, GraphOptions::eval());
    g.enable_capture();
    model.forward(&g, &g.constant(image.clone()))?;
    let (key, layers) = match model {
        SegModel::Setr(_) => ("attention", "encoder layers"),
        SegModel::Hlg(_) => ("global_attention", "global attention sub-layers"),
    };
    let caps: Vec<Tensor<T>> = g
        .captures()
        .into_iter()
        .filter(|(n, _)| n == key)
        .map(|(_, t)| t)
        .collect();
    let probs = caps
        .get(args.layer)
        .ok_or_else(|| usage(format!("layer {} out of range: {} {layers}", args.layer, caps.len())))?;
    let (r, c) = args.point;
    // Offsets of the chosen query row for each head, plus the key grid.
    let (rows, key_grid): (Vec<usize>, (usize, usize)) = match model {
        SegModel::Setr(s) => {
            let p = s.cfg.encoder.patch;
            let grid = (image.shape()[1] / p, image.shape()[2] / p);
            check_point(args.point, grid)?;
            let l = grid.0 * grid.1;
            let heads = probs.shape()[0] / image.shape()[0];
            ((0..heads).map(|h| (h * l + r * grid.1 + c) * l).collect(), grid)
        }
        SegModel::Hlg(_) => {
            let s = probs.shape();
            let (q, k) = ((s[2], s[3]), (s[4], s[5]));
            check_point(args.point, q)?;
            let per_head = q.0 * q.1 * k.0 * k.1;
            ((0..s[1]).map(|h| h * per_head + (r * q.1 + c) * k.0 * k.1).collect(), k)
        }
    };
    let start = *rows
        .get(args.head)
        .ok_or_else(|| usage(format!("head {} out of range: {} heads", args.head, rows.len())))?;
    let len = key_grid.0 * key_grid.1;
    Ok(Figure {
        name: format!("attention_l{}_h{}_p{}_{}", args.layer, args.head, r, c),
        width: key_grid.1,
        height: key_grid.0,
        values: probs.data()[start..start + len].iter().map(|v| v.as_f64()).collect(),
    })
}

/// Channel mean of sample 0 of an `[N, h, w, C]` map.
fn channel_mean<T: Float>(map: &Tensor<T>) -> (usize, usize, Vec<f64>) {
    let s = map.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let values = map.data()[..h * w * c]
        .chunks(c)
        .map(|px| px.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64)
        .collect();
    (h, w, values)
}

fn features_figure<T: Float>(
    model: &SegModel,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    layer: usize,
) -> Result<Figure, CliError> {
    let g = Graph::new(store, GraphOptions::eval());
    let x = g.constant(image.clone());
    let maps: Vec<Tensor<T>> = match model {
        SegModel::Setr(s) => s
            .features(&g, &x)?
            .iter()
            .map(|seq| seq.to_map().map(|m| m.value().clone()))
            .collect::<Result<_, _>>()?,
        SegModel::Hlg(m) => m
            .backbone
            .forward_features(&g, &x)?
            .iter()
            .map(|v| v.value().clone())
            .collect(),
    };
    let map = maps
        .get(layer)
        .ok_or_else(|| usage(format!("layer {layer} out of range: {} feature maps", maps.len())))?;
    let (h, w, values) = channel_mean(map);
    Ok(Figure {
        name: format!("features_l{layer}"),
        width: w,
        height: h,
        values,
    })
}
