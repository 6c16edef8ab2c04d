//! Python bindings. Configuration structs cross the boundary as dicts (or
//! JSON strings) and come back as dicts; masks travel as flat 0/1 lists in
//! row-major order.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;
use slicevol_core::eval::{self, EvalConfig};
use slicevol_core::network::{load_checkpoint, save_checkpoint};
use slicevol_core::propagator::{propagate_volume, NetworkProvider};
use slicevol_core::trainer::{train_on_volumes, TrainConfig};
use slicevol_core::{io, phantom, rle, Error, InputMode, NetworkConfig, PhantomSpec, ProfileConfig, PropagateOptions};

create_exception!(slicevol, SlicevolError, PyException);

fn err(e: Error) -> PyErr {
    SlicevolError::new_err(e.to_string())
}

/// Accepts `None`, a dict or a JSON string.
fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj.filter(|o| !o.is_none()) else {
        return Ok(T::default());
    };
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => py.import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| SlicevolError::new_err(format!("invalid config: {e}")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SlicevolError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Intensity volume with values in [0, 1], indexed `[k][y][x]`.
#[pyclass(module = "slicevol", from_py_object)]
#[derive(Clone)]
struct Volume {
    inner: slicevol_core::Volume,
}

#[pymethods]
impl Volume {
    #[new]
    fn new(height: usize, width: usize, depth: usize, voxels: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: slicevol_core::Volume::new(height, width, depth, voxels).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_volume(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_volume(&self.inner, path).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: io::decode_volume(data).map_err(err)?,
        })
    }

    /// SVL1 encoding.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &io::encode_volume(&self.inner))
    }

    /// `(height, width, depth)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn slice(&self, index: usize) -> PyResult<Vec<f32>> {
        Ok(self.inner.slice_values(index).map_err(err)?.to_vec())
    }

    fn voxels(&self) -> Vec<f32> {
        self.inner.voxels().to_vec()
    }

    fn __repr__(&self) -> String {
        let (h, w, d) = self.inner.dims();
        format!("Volume(height={h}, width={w}, depth={d})")
    }
}

/// Binary mask volume; planes are flat 0/1 lists.
#[pyclass(module = "slicevol", from_py_object)]
#[derive(Clone)]
struct MaskVolume {
    inner: slicevol_core::MaskVolume,
}

#[pymethods]
impl MaskVolume {
    #[new]
    fn new(height: usize, width: usize, depth: usize, bits: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: slicevol_core::MaskVolume::from_bits(height, width, depth, &bits).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_masks(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_masks(&self.inner, path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn plane(&self, index: usize) -> PyResult<Vec<u8>> {
        Ok(self.inner.plane(index).map_err(err)?.bits().to_vec())
    }

    fn to_bits(&self) -> Vec<u8> {
        self.inner.to_bits()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn __repr__(&self) -> String {
        let (h, w, d) = self.inner.dims();
        format!(
            "MaskVolume(height={h}, width={w}, depth={d}, foreground={})",
            self.inner.count()
        )
    }
}

fn plane(height: usize, width: usize, bits: Vec<u8>) -> PyResult<slicevol_core::MaskPlane> {
    slicevol_core::MaskPlane::new(height, width, bits).map_err(err)
}

/// Trained correspondence network together with its edge-profile settings.
#[pyclass(module = "slicevol")]
struct Model {
    network: slicevol_core::Network<f32>,
    profile: ProfileConfig,
}

#[pymethods]
impl Model {
    /// Randomly initialized network from a `NetworkConfig` dict.
    #[staticmethod]
    #[pyo3(signature = (config=None, profile=None))]
    fn init(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, profile: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config: NetworkConfig = from_py(py, config)?;
        Ok(Self {
            network: slicevol_core::Network::init(config).map_err(err)?,
            profile: from_py(py, profile)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = load_checkpoint(path).map_err(err)?;
        Ok(Self {
            network: ck.network,
            profile: ck.profile,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.network, None, &self.profile, path).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.network.config())
    }

    #[getter]
    fn edge_profile(&self) -> bool {
        self.network.config().input_mode == InputMode::EdgeProfile
    }

    /// Propagates `seed_mask` (flat 0/1 list of one slice) through `volume`.
    #[pyo3(signature = (volume, seed_mask, seed_index, options=None, groundtruth=None))]
    fn propagate<'py>(
        &self,
        py: Python<'py>,
        volume: &Volume,
        seed_mask: Vec<u8>,
        seed_index: usize,
        options: Option<&Bound<'py, PyAny>>,
        groundtruth: Option<&MaskVolume>,
    ) -> PyResult<(MaskVolume, Bound<'py, PyAny>)> {
        // the input mode follows the model unless the caller sets it
        let mut raw: serde_json::Value = from_py(py, options)?;
        if raw.is_null() {
            raw = serde_json::json!({});
        }
        if let Some(map) = raw.as_object_mut() {
            map.entry("edge_profile").or_insert(self.edge_profile().into());
        }
        let opts: PropagateOptions =
            serde_json::from_value(raw).map_err(|e| SlicevolError::new_err(format!("invalid options: {e}")))?;
        let (h, w, _) = volume.inner.dims();
        let seed = plane(h, w, seed_mask)?;
        let provider =
            NetworkProvider::new(self.network.clone(), self.profile.clone(), opts.edge_profile).map_err(err)?;
        let gt = groundtruth.map(|g| &g.inner);
        let (masks, summary) = py
            .detach(|| {
                let r = propagate_volume(&provider, &volume.inner, &seed, seed_index, &opts)?;
                let s = r.summary(gt)?;
                Ok::<_, Error>((r.masks, s))
            })
            .map_err(err)?;
        Ok((MaskVolume { inner: masks }, to_py(py, &summary)?))
    }

    fn __repr__(&self) -> String {
        let c = self.network.config();
        format!(
            "Model(blocks={}, filters={}, embedding={}, input={:?})",
            c.residual_block_count, c.base_filters, c.embedding_channels, c.input_mode
        )
    }
}

/// Generates a phantom from a `PhantomSpec` dict; returns `(volume, masks)`.
#[pyfunction]
#[pyo3(signature = (spec=None))]
fn synth_generate(py: Python<'_>, spec: Option<&Bound<'_, PyAny>>) -> PyResult<(Volume, MaskVolume)> {
    let spec: PhantomSpec = from_py(py, spec)?;
    let (v, m) = phantom::synth_generate(&spec).map_err(err)?;
    Ok((Volume { inner: v }, MaskVolume { inner: m }))
}

/// Trains on in-memory volumes; returns `(model, report)`.
#[pyfunction]
#[pyo3(signature = (volumes, config=None))]
fn train<'py>(
    py: Python<'py>,
    volumes: Vec<Volume>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Model, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_py(py, config)?;
    let volumes: Vec<_> = volumes.into_iter().map(|v| v.inner).collect();
    let trained = py
        .detach(|| train_on_volumes(&cfg, &volumes, |_, _, _| Ok(())))
        .map_err(err)?;
    let report = to_py(py, &trained.report)?;
    Ok((
        Model {
            network: trained.network,
            profile: cfg.profile,
        },
        report,
    ))
}

/// Runs an `EvalConfig` (paths relative to the working directory); returns the report dict.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: EvalConfig = from_py(py, Some(config))?;
    let report = py.detach(|| eval::evaluate(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Dice overlap on the 0-100 scale.
#[pyfunction]
fn dice(a: &MaskVolume, b: &MaskVolume) -> PyResult<f64> {
    slicevol_core::dice(&a.inner, &b.inner).map_err(err)
}

/// Edge profile of one slice as a flat `H·W·C` list (pixel-major).
#[pyfunction]
#[pyo3(signature = (height, width, values, config=None))]
fn edge_profile(
    py: Python<'_>,
    height: usize,
    width: usize,
    values: Vec<f32>,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<f32>> {
    let cfg: ProfileConfig = from_py(py, config)?;
    let slice = slicevol_core::SlicePlane::new(height, width, values).map_err(err)?;
    let map = slicevol_core::edge_profile::compute_edge_profile::<f32>(&slice, &cfg).map_err(err)?;
    Ok(map.values)
}

/// Run-length encodes a flat 0/1 mask; returns `{"height", "width", "runs"}`.
#[pyfunction]
fn rle_encode<'py>(py: Python<'py>, height: usize, width: usize, bits: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &rle::rle_encode(&plane(height, width, bits)?))
}

#[pyfunction]
fn rle_decode(py: Python<'_>, mask: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    let r: slicevol_core::RleMask =
        serde_json::from_str(&py.import("json")?.call_method1("dumps", (mask,))?.extract::<String>()?)
            .map_err(|e| SlicevolError::new_err(format!("invalid RLE mask: {e}")))?;
    Ok(rle::rle_decode(&r).map_err(err)?.bits().to_vec())
}

#[pymodule]
fn slicevol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SlicevolError", m.py().get_type::<SlicevolError>())?;
    m.add_class::<Volume>()?;
    m.add_class::<MaskVolume>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(edge_profile, m)?)?;
    m.add_function(wrap_pyfunction!(rle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rle_decode, m)?)?;
    Ok(())
}
