//! Python bindings for the lane-marking-to-OpenDRIVE pipeline.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use lanemap_core::config::PipelineConfig;
use lanemap_core::error::Error;
use lanemap_core::evaluation;
use lanemap_core::odr;
use lanemap_core::pipeline;
use lanemap_core::synth;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load_config(config_toml: Option<&str>, seed: Option<u64>) -> PyResult<PipelineConfig> {
    let mut cfg = match config_toml {
        Some(text) => toml::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.set_global_seed(seed);
    }
    cfg.validate().map_err(to_py_err)?;
    Ok(cfg)
}

/// Generate a synthetic recording plus ground-truth OpenDRIVE under
/// `out_dir`. `scene_toml` is the scene description (defaults apply when
/// None). Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (out_dir, scene_toml=None, seed=None, binary=false))]
fn generate_scene<'py>(
    py: Python<'py>,
    out_dir: &str,
    scene_toml: Option<&str>,
    seed: Option<u64>,
    binary: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec: synth::SceneSpec = match scene_toml {
        Some(text) => toml::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("scene: {e}")))?,
        None => synth::SceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (recording, truth) = synth::generate_scene(&spec).map_err(to_py_err)?;
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)
        .map_err(|e| PyIOError::new_err(format!("{out_dir}: {e}")))?;
    let rec_dir = out.join("recording");
    synth::write_recording(&recording, &rec_dir, binary).map_err(to_py_err)?;
    let truth_path = out.join("ground_truth.xodr");
    odr::write_opendrive(&truth.document, &truth_path).map_err(to_py_err)?;

    let d = PyDict::new(py);
    d.set_item("recording", rec_dir.to_string_lossy())?;
    d.set_item("ground_truth", truth_path.to_string_lossy())?;
    d.set_item("frames", recording.frames.len())?;
    d.set_item(
        "points",
        recording.frames.iter().map(|(c, _, _)| c.len()).sum::<usize>(),
    )?;
    d.set_item("road_length", spec.total_length())?;
    d.set_item("lane_count", truth.lane_count)?;
    Ok(d)
}

/// Re-noise the point positions of a recording, preserving structure.
#[pyfunction]
#[pyo3(signature = (src, dst, sigma=0.03, seed=0))]
fn perturb_recording(src: &str, dst: &str, sigma: f64, seed: u64) -> PyResult<()> {
    synth::perturb_recording(Path::new(src), Path::new(dst), sigma, seed).map_err(to_py_err)
}

/// Full pipeline over a recording directory: extract, build, export.
/// Writes map.xodr plus the intermediate artifacts into `out_dir` and
/// returns the run summary.
#[pyfunction]
#[pyo3(signature = (recording, out_dir, config_toml=None, seed=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    recording: &str,
    out_dir: &str,
    config_toml: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(config_toml, seed)?;
    let frames = lanemap_core::ingest::read_recording(Path::new(recording)).map_err(to_py_err)?;
    let out = pipeline::run_pipeline(&frames, &cfg).map_err(to_py_err)?;
    let dir = PathBuf::from(out_dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| PyIOError::new_err(format!("{out_dir}: {e}")))?;
    pipeline::write_world_cloud(&dir.join("markings.csv"), &out.cloud).map_err(to_py_err)?;
    pipeline::write_planes(&dir.join("planes.csv"), &out.planes).map_err(to_py_err)?;
    pipeline::write_road_model(&dir.join("road_model.json"), &out.build.model).map_err(to_py_err)?;
    let map_path = dir.join("map.xodr");
    odr::write_opendrive(&out.document, &map_path).map_err(to_py_err)?;

    let d = PyDict::new(py);
    d.set_item("map", map_path.to_string_lossy())?;
    d.set_item("lane_count", out.build.model.lane_count)?;
    d.set_item("lane_widths", out.build.model.lane_widths.clone())?;
    d.set_item("road_length", out.document.total_length())?;
    d.set_item("clusters", out.build.stats.clusters)?;
    d.set_item("candidate_lines", out.build.stats.candidate_lines)?;
    d.set_item("superlines", out.build.stats.superlines)?;
    if let Ok((mean, sigma)) = evaluation::lane_width_stats(&out.build.model) {
        d.set_item("width_mean", mean)?;
        d.set_item("width_sigma", sigma)?;
    }
    Ok(d)
}

/// Reference-line distance between two OpenDRIVE files.
#[pyfunction]
#[pyo3(signature = (map_a, map_b, step=1.0))]
fn map_distance<'py>(
    py: Python<'py>,
    map_a: &str,
    map_b: &str,
    step: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let a = odr::read_opendrive(Path::new(map_a)).map_err(to_py_err)?;
    let b = odr::read_opendrive(Path::new(map_b)).map_err(to_py_err)?;
    let report = evaluation::map_distance(&a, &b, step).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("rmse", report.rmse)?;
    d.set_item("avg_distance", report.avg_distance)?;
    d.set_item("sigma", report.sigma)?;
    d.set_item("sample_count", report.sample_count)?;
    d.set_item("eval_length", report.eval_length)?;
    Ok(d)
}

/// Per-junction (s, gap, kink_deg) continuity report of an OpenDRIVE file.
#[pyfunction]
fn continuity<'py>(py: Python<'py>, map_path: &str) -> PyResult<Bound<'py, PyList>> {
    let doc = odr::read_opendrive(Path::new(map_path)).map_err(to_py_err)?;
    let list = PyList::empty(py);
    for j in evaluation::continuity_report(&doc) {
        let d = PyDict::new(py);
        d.set_item("s", j.s)?;
        d.set_item("gap", j.gap)?;
        d.set_item("kink_deg", j.kink_deg)?;
        list.append(d)?;
    }
    Ok(list)
}

/// Sample the reference line of an OpenDRIVE file at a uniform step;
/// returns a list of (x, y, z) tuples.
#[pyfunction]
#[pyo3(signature = (map_path, step=1.0))]
fn sample_reference_line(map_path: &str, step: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    if step <= 0.0 {
        return Err(PyValueError::new_err("step must be positive"));
    }
    let doc = odr::read_opendrive(Path::new(map_path)).map_err(to_py_err)?;
    Ok(odr::sample_reference_line(&doc, step)
        .into_iter()
        .map(|p| (p.x, p.y, p.z))
        .collect())
}

/// The default pipeline configuration as a TOML string.
#[pyfunction]
fn default_config_toml() -> String {
    PipelineConfig::default().to_toml()
}

/// The default scene description as a TOML string.
#[pyfunction]
fn default_scene_toml() -> PyResult<String> {
    toml::to_string_pretty(&synth::SceneSpec::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn lanemap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_recording, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(map_distance, m)?)?;
    m.add_function(wrap_pyfunction!(continuity, m)?)?;
    m.add_function(wrap_pyfunction!(sample_reference_line, m)?)?;
    m.add_function(wrap_pyfunction!(default_config_toml, m)?)?;
    m.add_function(wrap_pyfunction!(default_scene_toml, m)?)?;
    Ok(())
}
