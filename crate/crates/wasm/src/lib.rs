//! wasm-bindgen entry points for the browser demo in `www/`.
//!
//! Every export takes a JSON request string and returns a JSON string, or
//! throws the error message.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = trainCurve)]
pub fn train_curve(request: &str) -> Result<String, JsValue> {
    js(demo::train_curve(request))
}

#[wasm_bindgen(js_name = thresholdSweep)]
pub fn threshold_sweep(request: &str) -> Result<String, JsValue> {
    js(demo::threshold_sweep(request))
}

#[wasm_bindgen(js_name = compareVariants)]
pub fn compare_variants(request: &str) -> Result<String, JsValue> {
    js(demo::compare(request))
}
