//! Offline-training / online-testing workflow: segment the training series,
//! train one soft sensor per phase, then match test windows to their closest
//! phase and predict with that phase's sensor.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::segmentation::{
    causal_similarity_distance, segment, similarity_distance, stable_similarity_distance,
    PhaseRecord, SegmentationConfig, SegmentationResult, SegmentationSummary,
};
use crate::series::{lag_extend_matrix, window_mean, MultivariateSeries};
use crate::tcgcn::{prepare_adjacency, train_soft_sensor, TcGcnConfig, TcGcnModel};
use crate::util::derive_seed;

/// One library entry: the phase's discovery record plus its trained sensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LibraryPhase {
    pub record: PhaseRecord,
    pub model: TcGcnModel,
    /// Row range covered after any small-phase merging.
    pub start: usize,
    pub end: usize,
}

/// All phases of a training series with their soft sensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseLibrary {
    pub phases: Vec<LibraryPhase>,
    pub target_var: String,
    pub input_vars: Vec<String>,
    pub seg_config: SegmentationConfig,
    pub gcn_config: TcGcnConfig,
    pub segmentation: SegmentationSummary,
    pub warnings: Vec<String>,
}

/// Minimum usable phase length: lag context plus a small batch.
fn merge_floor(lag_order: usize) -> usize {
    lag_order + 1 + 8
}

/// Segment the series and train a soft sensor for every phase.
///
/// Phases too short to train on are merged into their predecessor (or the
/// following phase when first), with a warning recorded.
pub fn offline_train(
    series: &MultivariateSeries,
    target_var: &str,
    seg_config: &SegmentationConfig,
    gcn_config: &TcGcnConfig,
) -> Result<PhaseLibrary> {
    gcn_config.validate()?;
    if series.var_index(target_var).is_none() {
        return Err(Error::invalid(format!(
            "target variable '{target_var}' not in series"
        )));
    }
    let segmentation = segment(series, seg_config)?;
    library_from_segmentation(series, target_var, seg_config, gcn_config, &segmentation)
}

/// Train the per-phase sensors for an existing segmentation.
pub fn library_from_segmentation(
    series: &MultivariateSeries,
    target_var: &str,
    seg_config: &SegmentationConfig,
    gcn_config: &TcGcnConfig,
    segmentation: &SegmentationResult,
) -> Result<PhaseLibrary> {
    let input_vars: Vec<String> = series
        .var_names()
        .iter()
        .filter(|n| n.as_str() != target_var)
        .cloned()
        .collect();
    if input_vars.is_empty() {
        return Err(Error::invalid("need at least one input variable"));
    }
    let input_series = series.select(&input_vars)?;
    let target_col = series.var_index(target_var).expect("checked above");
    let k = seg_config.lag_order();

    // merge too-short phases into a neighbor
    let mut warnings = Vec::new();
    let mut ranges: Vec<(usize, usize, &PhaseRecord)> = Vec::new();
    for record in &segmentation.phases {
        let len = record.end - record.start;
        if len < merge_floor(k) && !ranges.is_empty() {
            let last = ranges.last_mut().unwrap();
            warnings.push(format!(
                "phase {} ({} samples) merged into phase {}",
                record.index, len, last.2.index
            ));
            last.1 = record.end;
        } else {
            ranges.push((record.start, record.end, record));
        }
    }
    // a too-short first phase merges forward
    if ranges.len() >= 2 && ranges[0].1 - ranges[0].0 < merge_floor(k) {
        let (start, _, first) = ranges.remove(0);
        warnings.push(format!(
            "phase {} merged into phase {}",
            first.index, ranges[0].2.index
        ));
        ranges[0].0 = start;
    }
    if ranges.is_empty() {
        return Err(Error::invalid("segmentation produced no phases"));
    }

    let mut phases = Vec::with_capacity(ranges.len());
    for (pi, (start, end, record)) in ranges.into_iter().enumerate() {
        let rows = series.window(start, end)?;
        let input_rows = input_series.window(start, end)?;
        let extended = lag_extend_matrix(input_rows, k).map_err(|e| e.in_phase(record.index))?;
        let targets = Array1::from_iter((start + k..end).map(|r| rows[[r - start, target_col]]));
        let adjacency = prepare_adjacency(
            &record.graph,
            &input_vars,
            target_var,
            gcn_config.adjacency_mode,
        )?;
        let mut cfg = gcn_config.clone();
        cfg.seed = derive_seed(gcn_config.seed, pi as u64 + 1);
        let model = train_soft_sensor(
            extended.data.view(),
            targets.view(),
            adjacency,
            target_var,
            &cfg,
        )
        .map_err(|e| e.in_phase(record.index))?;
        phases.push(LibraryPhase {
            record: record.clone(),
            model,
            start,
            end,
        });
    }

    Ok(PhaseLibrary {
        phases,
        target_var: target_var.to_string(),
        input_vars,
        seg_config: seg_config.clone(),
        gcn_config: gcn_config.clone(),
        segmentation: SegmentationSummary::from(segmentation),
        warnings,
    })
}

/// Distances from a raw test window to every phase; returns the argmin
/// (ties toward the lower index) and the full distance vector.
pub fn match_phase(library: &PhaseLibrary, window_raw: ArrayView2<'_, f64>) -> Result<(usize, Vec<f64>)> {
    if library.phases.is_empty() {
        return Err(Error::invalid("phase library is empty"));
    }
    let mut distances = Vec::with_capacity(library.phases.len());
    for phase in &library.phases {
        let dist_c = causal_similarity_distance(
            &phase.record.predictor,
            &phase.record.train_stats,
            window_raw,
            &library.seg_config,
        )?;
        let mu_test = window_mean(window_raw)?;
        let dist_m =
            stable_similarity_distance(phase.record.train_stats.mean.view(), mu_test.view())?;
        distances.push(similarity_distance(dist_c, dist_m, library.seg_config.zeta));
    }
    let mut best = 0usize;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    Ok((best, distances))
}

/// Per-sample output of the online pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub t: usize,
    pub phase: usize,
    pub y_hat: f64,
}

/// Slide a matching window over the test series; each timestamp is assigned
/// the phase whose mechanism fits the window ending there, and predicted with
/// that phase's sensor. Only trailing samples are used (no lookahead).
pub fn online_predict(
    library: &PhaseLibrary,
    test_series: &MultivariateSeries,
    matching_window: usize,
) -> Result<Vec<SamplePrediction>> {
    let k = library.seg_config.lag_order();
    if matching_window < (k + 1).max(2) {
        return Err(Error::invalid(format!(
            "matching window must be at least K+1 = {} (and 2)",
            k + 1
        )));
    }
    let t_len = test_series.len();
    if t_len <= matching_window.max(k) {
        return Err(Error::invalid(
            "test series shorter than the matching window / lag context",
        ));
    }
    let input_series = test_series.select(&library.input_vars)?;
    let start = k.max(matching_window - 1);
    let mut out = Vec::with_capacity(t_len - start);
    for t in start..t_len {
        let window = test_series.window(t + 1 - matching_window, t + 1)?;
        let (phase, _) = match_phase(library, window)?;
        let context = input_series.window(t - k, t + 1)?;
        let row = flatten_lag_context(context);
        let y = library.phases[phase]
            .model
            .predict(row.view())?[0];
        out.push(SamplePrediction { t, phase, y_hat: y });
    }
    Ok(out)
}

fn flatten_lag_context(context: ArrayView2<'_, f64>) -> Array2<f64> {
    let (rows, d) = (context.nrows(), context.ncols());
    let mut out = Array2::zeros((1, rows * d));
    for k in 0..rows {
        for i in 0..d {
            out[[0, k * d + i]] = context[[k, i]];
        }
    }
    out
}

fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct LibraryManifest {
    target_var: String,
    input_vars: Vec<String>,
    phase_count: usize,
    warnings: Vec<String>,
    seg_config: SegmentationConfig,
    gcn_config: TcGcnConfig,
    files: BTreeMap<String, String>,
}

impl PhaseLibrary {
    /// Persist as a directory bundle: segmentation summary, per-phase record
    /// and model files, and a manifest with content hashes.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();

        let seg_path = dir.join("segmentation.json");
        write_json(&seg_path, &self.segmentation)?;
        files.insert("segmentation.json".to_string(), sha256_hex(&seg_path)?);

        for (i, phase) in self.phases.iter().enumerate() {
            let pdir = dir.join(format!("phase_{i:02}"));
            std::fs::create_dir_all(&pdir)?;
            let rec = pdir.join("record.json");
            write_json(&rec, &phase.record)?;
            let graph = pdir.join("graph.json");
            phase.record.graph.save_json(&graph)?;
            let bounds = pdir.join("range.json");
            write_json(&bounds, &(phase.start, phase.end))?;
            save_model_bundle(&phase.model, &pdir)?;
            for name in ["record.json", "graph.json", "range.json", "model.json", "model.bin"] {
                let p = pdir.join(name);
                files.insert(format!("phase_{i:02}/{name}"), sha256_hex(&p)?);
            }
        }

        let manifest = LibraryManifest {
            target_var: self.target_var.clone(),
            input_vars: self.input_vars.clone(),
            phase_count: self.phases.len(),
            warnings: self.warnings.clone(),
            seg_config: self.seg_config.clone(),
            gcn_config: self.gcn_config.clone(),
            files,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: LibraryManifest = read_json(&dir.join("manifest.json"))?;
        let segmentation: SegmentationSummary = read_json(&dir.join("segmentation.json"))?;
        let mut phases = Vec::with_capacity(manifest.phase_count);
        for i in 0..manifest.phase_count {
            let pdir = dir.join(format!("phase_{i:02}"));
            let record: PhaseRecord = read_json(&pdir.join("record.json"))?;
            let (start, end): (usize, usize) = read_json(&pdir.join("range.json"))?;
            let model = load_model_bundle(&pdir)?;
            phases.push(LibraryPhase {
                record,
                model,
                start,
                end,
            });
        }
        Ok(PhaseLibrary {
            phases,
            target_var: manifest.target_var,
            input_vars: manifest.input_vars,
            seg_config: manifest.seg_config,
            gcn_config: manifest.gcn_config,
            segmentation,
            warnings: manifest.warnings,
        })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelBundleMeta {
    target_var: String,
    target_mean: f64,
    target_std: f64,
    train_rmse: f64,
    val_rmse: Option<f64>,
    seed: u64,
    lag_order: usize,
    input_vars: Vec<String>,
    adjacency_mode: crate::tcgcn::AdjacencyMode,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    input_floored: Vec<bool>,
    epoch_mse: Vec<f64>,
    block_mixes: Vec<bool>,
    /// name -> (rows, cols, offset into the f64 array file)
    arrays: Vec<(String, usize, usize, usize)>,
}

/// Write the model as `model.json` (metadata) + `model.bin` (f64 LE arrays).
fn save_model_bundle(model: &TcGcnModel, dir: &Path) -> Result<()> {
    let mut arrays: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let push = |name: String, rows: usize, cols: usize, values: &mut dyn Iterator<Item = f64>, data: &mut Vec<f64>, arrays: &mut Vec<(String, usize, usize, usize)>| {
        arrays.push((name, rows, cols, data.len()));
        data.extend(values);
    };
    {
        let a = &model.adjacency.normalized;
        push(
            "adjacency".into(),
            a.nrows(),
            a.ncols(),
            &mut a.iter().copied(),
            &mut data,
            &mut arrays,
        );
    }
    for (i, b) in model.blocks.iter().enumerate() {
        push(
            format!("block{i}.w_enc"),
            b.w_enc.nrows(),
            b.w_enc.ncols(),
            &mut b.w_enc.iter().copied(),
            &mut data,
            &mut arrays,
        );
        push(
            format!("block{i}.w_res"),
            b.w_res.nrows(),
            b.w_res.ncols(),
            &mut b.w_res.iter().copied(),
            &mut data,
            &mut arrays,
        );
    }
    for (i, l) in model.mlp.iter().enumerate() {
        push(
            format!("mlp{i}.w"),
            l.w.nrows(),
            l.w.ncols(),
            &mut l.w.iter().copied(),
            &mut data,
            &mut arrays,
        );
        push(
            format!("mlp{i}.b"),
            1,
            l.b.len(),
            &mut l.b.iter().copied(),
            &mut data,
            &mut arrays,
        );
    }
    let meta = ModelBundleMeta {
        target_var: model.target_var.clone(),
        target_mean: model.target_mean,
        target_std: model.target_std,
        train_rmse: model.train_rmse,
        val_rmse: model.val_rmse,
        seed: model.seed,
        lag_order: model.adjacency.lag_order,
        input_vars: model.adjacency.input_vars.clone(),
        adjacency_mode: model.adjacency.mode,
        input_mean: model.input_stats.mean.to_vec(),
        input_std: model.input_stats.std.to_vec(),
        input_floored: model.input_stats.floored.clone(),
        epoch_mse: model.epoch_mse.clone(),
        block_mixes: model.blocks.iter().map(|b| b.mixes).collect(),
        arrays,
    };
    write_json(&dir.join("model.json"), &meta)?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in &data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join("model.bin"), bytes)?;
    Ok(())
}

fn load_model_bundle(dir: &Path) -> Result<TcGcnModel> {
    let meta: ModelBundleMeta = read_json(&dir.join("model.json"))?;
    let bytes = std::fs::read(dir.join("model.bin"))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid("model.bin length not a multiple of 8"));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let fetch = |name: &str| -> Result<Array2<f64>> {
        let (_, rows, cols, offset) = meta
            .arrays
            .iter()
            .find(|(n, _, _, _)| n == name)
            .ok_or_else(|| Error::invalid(format!("missing array '{name}' in model bundle")))?;
        let slice = data
            .get(*offset..offset + rows * cols)
            .ok_or_else(|| Error::invalid(format!("array '{name}' out of range")))?;
        Ok(Array2::from_shape_vec((*rows, *cols), slice.to_vec())
            .expect("shape matches slice length"))
    };

    let adjacency = crate::tcgcn::GraphAdjacency {
        normalized: fetch("adjacency")?,
        mode: meta.adjacency_mode,
        lag_order: meta.lag_order,
        input_vars: meta.input_vars.clone(),
    };
    let mut blocks = Vec::new();
    for (i, mixes) in meta.block_mixes.iter().enumerate() {
        blocks.push(crate::tcgcn::GcBlock {
            w_enc: fetch(&format!("block{i}.w_enc"))?,
            w_res: fetch(&format!("block{i}.w_res"))?,
            mixes: *mixes,
        });
    }
    let mut mlp = Vec::new();
    let mlp_count = meta
        .arrays
        .iter()
        .filter(|(n, _, _, _)| n.starts_with("mlp") && n.ends_with(".w"))
        .count();
    for i in 0..mlp_count {
        let w = fetch(&format!("mlp{i}.w"))?;
        let b2 = fetch(&format!("mlp{i}.b"))?;
        mlp.push(crate::tcgcn::MlpLayer {
            w,
            b: b2.row(0).to_owned(),
        });
    }
    Ok(TcGcnModel {
        adjacency,
        blocks,
        mlp,
        input_stats: crate::series::NormalizationStats {
            mean: Array1::from_vec(meta.input_mean),
            std: Array1::from_vec(meta.input_std),
            floored: meta.input_floored,
        },
        target_mean: meta.target_mean,
        target_std: meta.target_std,
        target_var: meta.target_var,
        train_rmse: meta.train_rmse,
        val_rmse: meta.val_rmse,
        epoch_mse: meta.epoch_mse,
        seed: meta.seed,
    })
}
