//! Prompt-to-mask conversion.
//!
//! The synthetic backend picks the scene object that best agrees with the
//! prompt. The remote backend speaks a small JSON-over-HTTP protocol:
//!
//! ```text
//! request:  {"image_png_b64": str, "bbox": [x1,y1,x2,y2], "points": [[x,y],[x,y]], "width": int, "height": int}
//! response: {"mask_rle": str, "width": int, "height": int}
//! ```

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::{decode_rle, encode_rle};
use crate::geometry::{bbox_iou, BBox, BinaryMask, Point};
use crate::parser::SegPrompt;
use crate::synth::Scene;

#[derive(Debug, Error)]
pub enum SegmentError {
    /// No answer in time, including endpoints that refuse or drop the connection.
    #[error("no response from {endpoint} within {timeout:?}: {detail}")]
    Timeout {
        endpoint: String,
        timeout: Duration,
        detail: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot decode mask: {0}")]
    Decode(String),
    #[error("remote backend needs an endpoint")]
    MissingEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegBackend {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for SegBackend {
    fn default() -> Self {
        Self {
            kind: BackendKind::Synthetic,
            endpoint: None,
            timeout_ms: 10_000,
        }
    }
}

impl SegBackend {
    pub fn synthetic() -> Self {
        Self::default()
    }

    pub fn remote(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            timeout_ms: timeout.as_millis() as u64,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        match (self.kind, &self.endpoint) {
            (BackendKind::Remote, None) => Err(SegmentError::MissingEndpoint),
            _ => Ok(()),
        }
    }

    /// Segments a synthetic scene with whichever backend is configured.
    pub fn segment(&self, scene: &Scene, prompt: &SegPrompt) -> Result<BinaryMask, SegmentError> {
        match self.kind {
            BackendKind::Synthetic => Ok(segment_synthetic(scene, prompt)),
            BackendKind::Remote => {
                let (w, h) = scene_dims(scene);
                segment_remote(&scene.to_png(), w, h, prompt, self)
            }
        }
    }
}

fn scene_dims(scene: &Scene) -> (usize, usize) {
    scene
        .masks
        .first()
        .map_or((crate::synth::CANVAS, crate::synth::CANVAS), |m| (m.width(), m.height()))
}

fn point_on(mask: &BinaryMask, p: &Point) -> bool {
    if p.x < 0.0 || p.y < 0.0 {
        return false;
    }
    let (x, y) = (p.x.floor() as usize, p.y.floor() as usize);
    x < mask.width() && y < mask.height() && mask.get(x, y)
}

fn visible_bbox(mask: &BinaryMask) -> Option<BBox> {
    mask.bounds()
        .map(|(a, b, c, d)| BBox::new(a as f64, b as f64, c as f64, d as f64))
}

/// Agreement between a prompt and one object mask: box IoU plus half the
/// fraction of prompt points landing on the mask.
pub fn prompt_score(mask: &BinaryMask, prompt: &SegPrompt) -> f64 {
    let Some(b) = visible_bbox(mask) else {
        return 0.0;
    };
    let hits = [&prompt.p1, &prompt.p2]
        .into_iter()
        .filter(|p| point_on(mask, p))
        .count();
    bbox_iou(&b, &prompt.bbox) + 0.5 * hits as f64 / 2.0
}

/// Returns the mask of the best-scoring object, or an empty mask when no
/// object overlaps the prompt at all. Ties go to the earlier object.
pub fn segment_synthetic(scene: &Scene, prompt: &SegPrompt) -> BinaryMask {
    let (w, h) = scene_dims(scene);
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in scene.masks.iter().enumerate() {
        let s = prompt_score(m, prompt);
        if s > 0.0 && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    match best {
        Some((i, _)) => scene.masks[i].clone(),
        None => BinaryMask::new(w, h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub image_png_b64: String,
    pub bbox: [f64; 4],
    pub points: [[f64; 2]; 2],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub mask_rle: String,
    pub width: usize,
    pub height: usize,
}

impl RemoteRequest {
    pub fn new(image_png: &[u8], width: usize, height: usize, prompt: &SegPrompt) -> Self {
        Self {
            image_png_b64: base64::engine::general_purpose::STANDARD.encode(image_png),
            bbox: prompt.bbox.to_array(),
            points: [prompt.p1.to_array(), prompt.p2.to_array()],
            width,
            height,
        }
    }
}

impl RemoteResponse {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            mask_rle: encode_rle(mask),
            width: mask.width(),
            height: mask.height(),
        }
    }
}

/// One POST of `prompt` to the backend endpoint. The whole exchange is
/// bounded by the backend timeout.
pub fn segment_remote(
    image_png: &[u8],
    width: usize,
    height: usize,
    prompt: &SegPrompt,
    backend: &SegBackend,
) -> Result<BinaryMask, SegmentError> {
    let endpoint = backend.endpoint.as_deref().ok_or(SegmentError::MissingEndpoint)?;
    let timeout = backend.timeout();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let request = RemoteRequest::new(image_png, width, height, prompt);
    let unreachable = |e: ureq::Error| SegmentError::Timeout {
        endpoint: endpoint.to_string(),
        timeout,
        detail: e.to_string(),
    };
    let mut resp = agent.post(endpoint).send_json(&request).map_err(unreachable)?;
    let status = resp.status();
    if !status.is_success() {
        return Err(SegmentError::Protocol(format!("status {}", status.as_u16())));
    }
    let body = resp.body_mut().read_to_string().map_err(|e| match e {
        ureq::Error::Timeout(_) | ureq::Error::Io(_) => unreachable(e),
        other => SegmentError::Decode(other.to_string()),
    })?;
    let parsed: RemoteResponse =
        serde_json::from_str(&body).map_err(|e| SegmentError::Protocol(format!("bad response body: {e}")))?;
    if (parsed.width, parsed.height) != (width, height) {
        return Err(SegmentError::Protocol(format!(
            "mask is {}x{}, requested {width}x{height}",
            parsed.width, parsed.height
        )));
    }
    decode_rle(&parsed.mask_rle, width, height).map_err(|e| SegmentError::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_scene;

    #[test]
    fn empty_region_gives_empty_mask() {
        let scene = generate_scene(3, 2).unwrap();
        let corners = [(0.0, 0.0), (830.0, 0.0), (0.0, 830.0), (830.0, 830.0)];
        let &(x, y) = corners
            .iter()
            .find(|&&(x, y)| {
                let b = BBox::new(x, y, x + 10.0, y + 10.0);
                scene
                    .masks
                    .iter()
                    .all(|m| visible_bbox(m).is_none_or(|v| bbox_iou(&v, &b) == 0.0))
            })
            .expect("some corner is free");
        let p = Point::new(x + 5.0, y + 5.0);
        let prompt = SegPrompt {
            bbox: BBox::new(x, y, x + 10.0, y + 10.0),
            p1: p,
            p2: p,
        };
        assert!(segment_synthetic(&scene, &prompt).is_empty());
    }

    #[test]
    fn missing_endpoint_is_rejected() {
        let b = SegBackend {
            kind: BackendKind::Remote,
            ..Default::default()
        };
        assert!(matches!(b.validate(), Err(SegmentError::MissingEndpoint)));
        assert!(SegBackend::synthetic().validate().is_ok());
    }
}
