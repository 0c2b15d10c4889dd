//! wasm-bindgen bindings for the static page in `www/`.

use mccan::data::{make_phantom_dataset, Dataset, PhantomConfig};
use mccan::domain_chain::{build_chain, discriminator_assignment, enumerate_cycles, DomainId, ExperimentMode};
use mccan::evaluate::{roi_stats, Roi};
use mccan::networks::{budget_report, GeneratorSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_mode(mode: &str) -> Result<ExperimentMode, JsError> {
    mode.parse().map_err(|e: String| JsError::new(&e))
}

/// One phantom image per domain of a chain.
#[wasm_bindgen]
pub struct Phantom {
    ds: Dataset,
    side: usize,
}

#[wasm_bindgen]
impl Phantom {
    #[wasm_bindgen(constructor)]
    pub fn new(side: usize, sigmas: Vec<f64>, seed: u32) -> Result<Phantom, JsError> {
        let ds = make_phantom_dataset(&PhantomConfig::new(1, side, sigmas, seed as u64)).map_err(js_err)?;
        Ok(Phantom { ds, side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.ds.domain_names.clone()
    }

    /// Row-major intensities of the domain's image.
    pub fn pixels(&self, domain: usize) -> Result<Vec<f32>, JsError> {
        let rec = self.record(domain)?;
        Ok(rec.pixels.iter().copied().collect())
    }

    /// `[{roi_id, x, y, width, height, mean, sd, true_mean, true_sd}]` for the
    /// domain's image.
    pub fn roi_report(&self, domain: usize) -> Result<String, JsError> {
        let rec = self.record(domain)?;
        let rois = self.ds.rois_for(&rec.source_id);
        let stats = roi_stats(rec, &rois).map_err(js_err)?;
        let rows: Vec<_> = rois
            .iter()
            .zip(&stats)
            .map(|(r, s)| {
                let t = self.ds.truth(&rec.source_id, r.roi_id);
                json!({
                    "roi_id": r.roi_id, "x": r.x, "y": r.y, "width": r.width, "height": r.height,
                    "mean": s.mean, "sd": s.sd,
                    "true_mean": t.map(|t| t.mean), "true_sd": t.map(|t| t.sd),
                })
            })
            .collect();
        Ok(serde_json::Value::Array(rows).to_string())
    }

    /// `[mean, sd]` of an arbitrary rectangle.
    pub fn stats(&self, domain: usize, x: usize, y: usize, width: usize, height: usize) -> Result<Vec<f64>, JsError> {
        let rec = self.record(domain)?;
        let roi = Roi::new(&rec.source_id, 0, x, y, width, height);
        let s = roi_stats(rec, &[roi]).map_err(js_err)?[0];
        Ok(vec![s.mean, s.sd])
    }
}

impl Phantom {
    fn record(&self, domain: usize) -> Result<&mccan::data::ImageRecord, JsError> {
        let i = *self
            .ds
            .domain_indices(DomainId(domain))
            .first()
            .ok_or_else(|| JsError::new(&format!("no domain {domain}")))?;
        Ok(&self.ds.records[i])
    }
}

/// Cycles and discriminator bindings of a mode, as JSON.
#[wasm_bindgen]
pub fn cycle_plan(n_domains: usize, mode: &str) -> Result<String, JsError> {
    let mode = parse_mode(mode)?;
    let chain = build_chain(n_domains, None).map_err(js_err)?;
    let cycles = enumerate_cycles(&chain, mode).map_err(js_err)?;
    let plan = discriminator_assignment(&chain, mode).map_err(js_err)?;
    Ok(json!({
        "domains": chain.names(),
        "cycles": cycles.iter().map(|c| json!({"kind": format!("{:?}", c.kind), "steps": chain.format_steps(&c.steps)})).collect::<Vec<_>>(),
        "discriminators": plan.slots.iter().map(|s| json!({
            "domain": chain.name(s.domain),
            "replica": s.replica,
            "paths": s.paths.iter().map(|p| chain.format_steps(&p.steps)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Inference parameter and FLOP budget of a mode's default generators.
#[wasm_bindgen]
pub fn budget(mode: &str, n_domains: usize, side: usize) -> Result<String, JsError> {
    let mode = parse_mode(mode)?;
    let r = budget_report(mode, n_domains, &GeneratorSpec::for_mode(mode), side).map_err(js_err)?;
    Ok(r.to_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_pixels_and_rois() {
        let p = Phantom::new(32, vec![50.0, 25.0, 0.0], 3).unwrap();
        assert_eq!(p.domain_names(), ["X", "Z", "Y"]);
        assert_eq!(p.pixels(2).unwrap().len(), 32 * 32);
        let rows: serde_json::Value = serde_json::from_str(&p.roi_report(2).unwrap()).unwrap();
        for r in rows.as_array().unwrap() {
            assert_eq!(r["sd"], 0.0);
            assert_eq!(r["mean"], r["true_mean"]);
        }
    }

    #[test]
    fn plan_json() {
        let v: serde_json::Value = serde_json::from_str(&cycle_plan(3, "mccan-no-global").unwrap()).unwrap();
        assert_eq!(v["cycles"].as_array().unwrap().len(), 4);
        assert_eq!(v["discriminators"].as_array().unwrap().len(), 4);
        assert!(budget("ccadn", 2, 512).unwrap().contains("11365633"));
    }
}
