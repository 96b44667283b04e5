//! Python module `xrecolor`: colour differences, datacube synthesis,
//! image-quality metrics and the gradient-check harness.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use xrecolor::color::{self, LabColor, RgbColor};
use xrecolor::palette::{demo_palette, PigmentPalette};
use xrecolor::raster::{Planar, RgbImage};
use xrecolor::synth::{generate_xrf as synth_xrf, DataCube, SynthConfig};

fn to_py(err: xrecolor::Error) -> PyErr {
    match err {
        xrecolor::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rgb(c: [f64; 3]) -> PyResult<RgbColor> {
    RgbColor::new(c[0], c[1], c[2]).map_err(to_py)
}

fn planar(data: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Planar> {
    Planar::new(shape.0, shape.1, shape.2, data).map_err(to_py)
}

/// CIEDE2000 difference between two CIELAB triples.
#[pyfunction]
fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    color::ciede2000(
        LabColor::new(lab1[0], lab1[1], lab1[2]),
        LabColor::new(lab2[0], lab2[1], lab2[2]),
    )
}

/// Redmean distance between two sRGB triples in [0, 1].
#[pyfunction]
fn redmean(rgb1: [f64; 3], rgb2: [f64; 3]) -> PyResult<f64> {
    Ok(color::redmean(rgb(rgb1)?, rgb(rgb2)?))
}

/// sRGB triple in [0, 1] to CIELAB (D65).
#[pyfunction]
fn srgb_to_lab(c: [f64; 3]) -> PyResult<[f64; 3]> {
    let lab = color::srgb_to_lab(rgb(c)?);
    Ok([lab.l, lab.a, lab.b])
}

/// The built-in demonstration palette as JSON text.
#[pyfunction]
#[pyo3(signature = (energy_bins = 512))]
fn demo_palette_json(energy_bins: usize) -> String {
    demo_palette(energy_bins).to_json()
}

/// Synthesizes a datacube from row-major 8-bit RGB bytes.
/// Returns `((height, width, energy_bins), counts)`.
#[pyfunction]
#[pyo3(signature = (pixels, height, width, palette_json = None, seed = 0, counts_per_pixel = 1000))]
fn generate_xrf(
    py: Python<'_>,
    pixels: Vec<u8>,
    height: usize,
    width: usize,
    palette_json: Option<&str>,
    seed: u64,
    counts_per_pixel: u32,
) -> PyResult<((usize, usize, usize), Vec<u32>)> {
    if pixels.len() != height * width * 3 {
        return Err(PyValueError::new_err(format!(
            "{} bytes for a {height}x{width} RGB image",
            pixels.len()
        )));
    }
    let palette = match palette_json {
        Some(text) => PigmentPalette::from_json(text).map_err(to_py)?,
        None => demo_palette(512),
    };
    let px = pixels
        .chunks_exact(3)
        .map(|p| RgbColor::from_u8([p[0], p[1], p[2]]))
        .collect();
    let img = RgbImage::new(height, width, px).map_err(to_py)?;
    let config = SynthConfig {
        seed,
        counts_per_pixel,
        ..SynthConfig::default()
    };
    let cube = py
        .detach(|| synth_xrf(&img, &palette, &config))
        .map_err(to_py)?;
    Ok((
        (cube.height(), cube.width(), cube.energy_bins()),
        cube.counts().to_vec(),
    ))
}

/// Reads an XRFC count cube: `((height, width, energy_bins), counts)`.
#[pyfunction]
fn load_cube(path: &str) -> PyResult<((usize, usize, usize), Vec<u32>)> {
    let cube = DataCube::load(path.as_ref()).map_err(to_py)?;
    Ok((
        (cube.height(), cube.width(), cube.energy_bins()),
        cube.counts().to_vec(),
    ))
}

/// MS-SSIM of two channel-major images with values in [0, 1].
#[pyfunction]
fn ms_ssim(x: Vec<f64>, y: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    let opts = xrecolor::metrics::MsSsimOptions::default();
    Ok(
        xrecolor::metrics::ms_ssim(&planar(x, shape)?, &planar(y, shape)?, &opts)
            .map_err(to_py)?
            .value,
    )
}

/// Universal image quality index with a square sliding window.
#[pyfunction]
#[pyo3(signature = (x, y, shape, window = 8))]
fn uiqi(x: Vec<f64>, y: Vec<f64>, shape: (usize, usize, usize), window: usize) -> PyResult<f64> {
    Ok(
        xrecolor::metrics::uiqi(&planar(x, shape)?, &planar(y, shape)?, window)
            .map_err(to_py)?
            .value,
    )
}

/// Mean redmean distance between two 3-channel channel-major images.
#[pyfunction]
fn srgb_loss(x: Vec<f64>, y: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    xrecolor::recolor::srgb_loss(&planar(x, shape)?, &planar(y, shape)?).map_err(to_py)
}

/// Trainable parameter count of a SmallUViT built from a JSON config
/// (the default configuration when omitted).
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn uvit_parameter_count(config_json: Option<&str>) -> PyResult<usize> {
    let config = match config_json {
        Some(text) => {
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => xrecolor::recolor::SmallUViTConfig::default(),
    };
    let model = xrecolor::recolor::SmallUViT::new(config, 0).map_err(to_py)?;
    Ok(model.trainable_parameters())
}

/// Runs every finite-difference suite; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<String> {
    let report = py
        .detach(|| xrecolor::gradcheck::run_gradcheck(seed, &[]))
        .map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "xrecolor")]
fn xrecolor_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(ciede2000, m)?)?;
    m.add_function(wrap_pyfunction!(redmean, m)?)?;
    m.add_function(wrap_pyfunction!(srgb_to_lab, m)?)?;
    m.add_function(wrap_pyfunction!(demo_palette_json, m)?)?;
    m.add_function(wrap_pyfunction!(generate_xrf, m)?)?;
    m.add_function(wrap_pyfunction!(load_cube, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(uiqi, m)?)?;
    m.add_function(wrap_pyfunction!(srgb_loss, m)?)?;
    m.add_function(wrap_pyfunction!(uvit_parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
