//! Cluster lifetime boxes as a GeoJSON FeatureCollection.

use serde_json::{json, Value};

use comove::evaluation::{cluster_mbr, SliceMap};
use comove::pipeline::DetectionOutput;
use comove::EvolvingCluster;

fn features(stream: &str, clusters: &[EvolvingCluster], slices: &SliceMap, align_rate: i64, out: &mut Vec<Value>) {
    for c in clusters {
        let m = match cluster_mbr(c, slices, align_rate) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("no box for {} cluster {}: {e}", stream, c.members.joined());
                continue;
            }
        };
        let ring = [
            [m.lon_min, m.lat_min],
            [m.lon_max, m.lat_min],
            [m.lon_max, m.lat_max],
            [m.lon_min, m.lat_max],
            [m.lon_min, m.lat_min],
        ];
        out.push(json!({
            "type": "Feature",
            "geometry": { "type": "Polygon", "coordinates": [ring] },
            "properties": {
                "stream": stream,
                "members": c.members.joined(),
                "t_start": c.t_start,
                "t_end": c.t_end,
                "tp": c.tp.code(),
            },
        }));
    }
}

pub fn clusters(det: &DetectionOutput, actual: &[EvolvingCluster], predicted: &[EvolvingCluster], align_rate: i64) -> Value {
    let mut all = Vec::new();
    features("actual", actual, &det.actual_slices, align_rate, &mut all);
    features("predicted", predicted, &det.predicted_slices, align_rate, &mut all);
    json!({ "type": "FeatureCollection", "features": all })
}
