use pyo3::prelude::*;

#[pymodule]
fn graspforge_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
