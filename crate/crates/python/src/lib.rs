use pyo3::prelude::*;

#[pymodule]
fn ogawave_py(_m: &Bound<PyModule>) -> PyResult<()> {
    Ok(())
}
