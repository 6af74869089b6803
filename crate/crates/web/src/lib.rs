//! Browser bindings for the stratified-weighting demo page.
//!
//! Every export takes the page controls as a JSON string (see
//! [`DemoParams`]) and returns its result as a JSON string; errors surface
//! as thrown JavaScript strings.

pub mod demo;

use serde::Serialize;
use wasm_bindgen::prelude::*;

pub use demo::DemoParams;

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Cell counts and balance tables under pooled and stratified weighting.
#[wasm_bindgen]
pub fn balance(params: &str) -> Result<String, JsValue> {
    to_json(DemoParams::parse(params).and_then(|p| demo::balance_demo(&p)))
}

/// Log-scale histogram of the final weights by arm.
#[wasm_bindgen]
pub fn weight_histogram(params: &str, stratified: bool, bins: usize) -> Result<String, JsValue> {
    to_json(DemoParams::parse(params).and_then(|p| demo::weight_histogram(&p, stratified, bins)))
}

/// Marginal and stratum effects under both weightings, with sandwich SEs.
#[wasm_bindgen]
pub fn effects(params: &str) -> Result<String, JsValue> {
    to_json(DemoParams::parse(params).and_then(|p| demo::effects_demo(&p)))
}

/// Default page controls.
#[wasm_bindgen]
pub fn default_params() -> String {
    serde_json::to_string(&DemoParams::default()).expect("plain struct")
}
