//! Browser bindings. Every method returns a JSON string the page renders itself.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use trafficlab::edie::{point_speed, segment_speed, session_splits, TrajectorySplit};
use trafficlab::pipeline::{build_network, session_mfd, simulate_scaled, summarize_mfd, Network, NetworkConfig, RunConfig};
use trafficlab::simcore::SessionTrajectories;

const BIN: f64 = 180.0;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

#[derive(Serialize)]
struct SegmentView {
    id: usize,
    from: [f64; 2],
    to: [f64; 2],
    length: f64,
    detector_offset: f64,
    region: usize,
}

#[derive(Serialize)]
struct SpeedBin {
    t0: f64,
    segment: Option<f64>,
    point: Option<f64>,
    detections: usize,
}

/// A grid network plus the most recent simulated session on it.
#[wasm_bindgen]
pub struct Demo {
    cfg: RunConfig,
    net: Network,
    session: Option<(SessionTrajectories, Vec<TrajectorySplit>)>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, base_demand: f64, seed: u64) -> Result<Demo, JsError> {
        let cfg = RunConfig {
            seed,
            network: NetworkConfig { rows, cols, ..NetworkConfig::default() },
            base_demand,
            ..RunConfig::default()
        };
        cfg.validate().map_err(js)?;
        let net = build_network(&cfg.network, seed).map_err(js)?;
        Ok(Demo { cfg, net, session: None })
    }

    /// Segment geometry for drawing.
    pub fn network(&self) -> Result<String, JsError> {
        let g = &self.net.graph;
        let view: Vec<SegmentView> = g
            .segments
            .iter()
            .map(|s| SegmentView {
                id: s.id,
                from: g.intersections[s.from],
                to: g.intersections[s.to],
                length: s.length,
                detector_offset: s.detector_offset,
                region: self.net.regions.assignment[s.id],
            })
            .collect();
        to_json(&view)
    }

    /// Runs one session at `scale` times the base demand; returns the MFD series and summary.
    pub fn simulate(&mut self, scale: f64, seed: u64) -> Result<String, JsError> {
        let traj = simulate_scaled(&self.cfg, &self.net, scale, seed).map_err(js)?;
        let points = session_mfd(&self.net.graph, &traj).map_err(js)?;
        let summary = summarize_mfd(&points, 0.0, self.cfg.sim.demand_end);
        let splits = session_splits(&self.net.graph, &traj).map_err(js)?;
        let out = serde_json::json!({
            "scale": scale,
            "vehicles": traj.vehicles.len(),
            "duration": traj.duration,
            "points": points,
            "summary": summary,
        });
        self.session = Some((traj, splits));
        to_json(&out)
    }

    /// Space-mean segment speed against the detector's time-mean speed in 3-minute bins.
    pub fn speeds(&self, segment: usize) -> Result<String, JsError> {
        let (traj, splits) = self.session.as_ref().ok_or_else(|| js("simulate first"))?;
        let seg = self.net.graph.segments.get(segment).ok_or_else(|| js(format!("no segment {segment}")))?;
        let own: Vec<&TrajectorySplit> = splits.iter().filter(|s| s.segment == segment).collect();
        let mut bins = Vec::new();
        let mut t0 = 0.0;
        while t0 < traj.duration {
            let (point, detections) =
                point_speed(own.iter().copied(), seg.detector_offset, seg.length, t0, t0 + BIN).map_err(js)?;
            bins.push(SpeedBin { t0, segment: segment_speed(own.iter().copied(), t0, t0 + BIN), point, detections });
            t0 += BIN;
        }
        to_json(&bins)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_on_a_small_grid() {
        let mut d = Demo::new(2, 2, 2000.0, 1).unwrap();
        let net: serde_json::Value = serde_json::from_str(&d.network().unwrap()).unwrap();
        assert_eq!(net.as_array().unwrap().len(), d.net.graph.len());
        let sim: serde_json::Value = serde_json::from_str(&d.simulate(1.0, 2).unwrap()).unwrap();
        assert!(sim["vehicles"].as_u64().unwrap() > 0);
        assert!(sim["summary"]["max_density"].as_f64().unwrap() > 0.0);
        let bins: serde_json::Value = serde_json::from_str(&d.speeds(0).unwrap()).unwrap();
        assert!(bins.as_array().unwrap().iter().any(|b| b["segment"].is_number()));
    }
}
