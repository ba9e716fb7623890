//! In-memory session state for the HTTP service.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use cofkit_core::filter::{ScribbleSet, Stroke};
use cofkit_core::io::encode_png;
use cofkit_core::quantize::cluster_mean_image;
use cofkit_core::{CofError, ColorImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::pipeline::{self, Guidance, PipelineError, Selection, Statistics};

pub const DEFAULT_CAPACITY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Filter,
    Fb,
    Recolor,
    Mask,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mode `{0:?}` needs at least one foreground scribble; draw strokes first")]
    NoForeground(RenderMode),
    #[error("scribbles are {got:?} but the image is {expected:?}")]
    ScribbleSize {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Encode(#[from] CofError),
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub mode: RenderMode,
    pub png: Vec<u8>,
    pub millis: f64,
}

/// One uploaded image with its parameters, strokes and cached results.
///
/// Caches are dropped whenever the inputs they depend on change: guidance on
/// quantization parameters, statistics on any parameter, the scribble
/// selection on parameters or strokes.
#[derive(Debug)]
pub struct Session {
    image: ColorImage,
    config: PipelineConfig,
    scribbles: ScribbleSet,
    guidance: Option<Guidance>,
    total: Option<Statistics>,
    selection: Option<Selection>,
    last: Option<Rendered>,
}

impl Session {
    pub fn new(image: ColorImage, config: PipelineConfig) -> Self {
        let (w, h) = image.dimensions();
        Self {
            image,
            config,
            scribbles: ScribbleSet::blank(w, h),
            guidance: None,
            total: None,
            selection: None,
            last: None,
        }
    }

    pub fn image(&self) -> &ColorImage {
        &self.image
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn scribbles(&self) -> &ScribbleSet {
        &self.scribbles
    }

    pub fn last_render(&self) -> Option<&Rendered> {
        self.last.as_ref()
    }

    pub fn has_cached_selection(&self) -> bool {
        self.selection.is_some()
    }

    pub fn set_config(&mut self, config: PipelineConfig) {
        if config == self.config {
            return;
        }
        let requantize = (config.k, config.grid_spacing, config.seed)
            != (self.config.k, self.config.grid_spacing, self.config.seed);
        if requantize {
            self.guidance = None;
        }
        self.total = None;
        self.selection = None;
        self.last = None;
        self.config = config;
    }

    pub fn set_scribbles(&mut self, scribbles: ScribbleSet) -> Result<(), SessionError> {
        if scribbles.dimensions() != self.image.dimensions() {
            return Err(SessionError::ScribbleSize {
                expected: self.image.dimensions(),
                got: scribbles.dimensions(),
            });
        }
        if scribbles != self.scribbles {
            self.selection = None;
            self.last = None;
            self.scribbles = scribbles;
        }
        Ok(())
    }

    pub fn guidance(&mut self) -> Result<&Guidance, SessionError> {
        if self.guidance.is_none() {
            self.guidance = Some(pipeline::quantize(&self.config, &self.image)?);
        }
        Ok(self.guidance.as_ref().expect("just filled"))
    }

    /// Statistics over the whole image.
    pub fn total(&mut self) -> Result<&Statistics, SessionError> {
        if self.total.is_none() {
            self.guidance()?;
            let guidance = self.guidance.as_ref().expect("filled above");
            self.total = Some(pipeline::learn_statistics(&self.config, guidance, None, None)?);
        }
        Ok(self.total.as_ref().expect("just filled"))
    }

    pub fn selection(&mut self, mode: RenderMode) -> Result<&Selection, SessionError> {
        if self.scribbles.count(Stroke::Foreground) == 0 {
            return Err(SessionError::NoForeground(mode));
        }
        if self.selection.is_none() {
            self.total()?;
            let guidance = self.guidance.as_ref().expect("filled by total");
            let total = self.total.as_ref().expect("filled by total");
            self.selection = Some(pipeline::select(&self.config, guidance, total, &self.scribbles)?);
        }
        Ok(self.selection.as_ref().expect("just filled"))
    }

    /// Cluster-mean rendering of the guidance image.
    pub fn preview(&mut self) -> Result<Vec<u8>, SessionError> {
        self.guidance()?;
        let guide = &self.guidance.as_ref().expect("filled above").guide;
        Ok(encode_png(&cluster_mean_image(&self.image, guide)?)?)
    }

    pub fn render(&mut self, mode: RenderMode) -> Result<Rendered, SessionError> {
        if let Some(last) = self.last.as_ref().filter(|r| r.mode == mode) {
            return Ok(last.clone());
        }
        let start = Instant::now();
        let png = match mode {
            RenderMode::Filter => {
                if self.config.iterations == 0 {
                    encode_png(&self.image)?
                } else {
                    self.total()?;
                    let guidance = self.guidance.as_ref().expect("filled by total");
                    let total = self.total.as_ref().expect("filled by total");
                    let (out, _) = pipeline::apply_cof(&self.config, &self.image, guidance, total)?;
                    encode_png(&out)?
                }
            }
            RenderMode::Mask => encode_png(&self.selection(mode)?.mask.to_gray())?,
            RenderMode::Fb | RenderMode::Recolor => {
                self.selection(mode)?;
                let guidance = self.guidance.as_ref().expect("filled by selection");
                let sel = self.selection.as_ref().expect("filled above");
                let (fg, bg) = (&sel.foreground.matrix, &sel.background.matrix);
                let out = if mode == RenderMode::Fb {
                    pipeline::render_fb(&self.config, &self.image, guidance, fg, bg)?
                } else {
                    pipeline::render_recolor(&self.config, &self.image, guidance, fg, bg)?
                };
                encode_png(&out)?
            }
        };
        let rendered = Rendered {
            mode,
            png,
            millis: start.elapsed().as_secs_f64() * 1e3,
        };
        self.last = Some(rendered.clone());
        Ok(rendered)
    }
}

pub type SharedSession = Arc<tokio::sync::Mutex<Session>>;

/// LRU-bounded map of sessions. Each session has its own lock so edits and
/// renders on one session are serialized while distinct sessions run in
/// parallel.
#[derive(Debug)]
pub struct SessionStore {
    capacity: usize,
    inner: Mutex<StoreInner>,
}

#[derive(Debug, Default)]
struct StoreInner {
    sessions: HashMap<String, SharedSession>,
    /// Least recently used first.
    order: VecDeque<String>,
}

impl StoreInner {
    fn touch(&mut self, id: &str) {
        if let Some(pos) = self.order.iter().position(|s| s == id) {
            let id = self.order.remove(pos).expect("position is valid");
            self.order.push_back(id);
        }
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::default(),
        }
    }

    pub fn insert(&self, session: Session) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut inner = self.inner.lock().expect("store lock");
        while inner.sessions.len() >= self.capacity {
            let Some(old) = inner.order.pop_front() else { break };
            inner.sessions.remove(&old);
            log::info!("evicted session {old}");
        }
        inner.sessions.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        inner.order.push_back(id.clone());
        id
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        let mut inner = self.inner.lock().expect("store lock");
        let session = inner.sessions.get(id).cloned()?;
        inner.touch(id);
        Some(session)
    }

    pub fn remove(&self, id: &str) -> bool {
        let mut inner = self.inner.lock().expect("store lock");
        inner.order.retain(|s| s != id);
        inner.sessions.remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cofkit_core::fixtures::{make_fixture, Fixture};

    fn session() -> Session {
        let img = make_fixture(Fixture::TwoRegionCheckerboard, 32, 0.02, 1).unwrap().to_color();
        let cfg = PipelineConfig {
            k: 4,
            window: 2,
            sigma_s2: 2.0,
            grid_spacing: 2,
            ..Default::default()
        };
        Session::new(img, cfg)
    }

    #[test]
    fn lru_eviction() {
        let store = SessionStore::new(2);
        let a = store.insert(session());
        let b = store.insert(session());
        assert!(store.get(&a).is_some());
        let c = store.insert(session());
        assert!(store.get(&b).is_none());
        assert!(store.get(&a).is_some());
        assert!(store.get(&c).is_some());
        assert!(store.remove(&a));
        assert!(!store.remove(&a));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn fb_needs_foreground() {
        let mut s = session();
        assert!(matches!(s.render(RenderMode::Fb), Err(SessionError::NoForeground(_))));
        assert!(s.render(RenderMode::Filter).is_ok());
    }

    #[test]
    fn edits_invalidate_caches() {
        let mut s = session();
        let mut strokes = ScribbleSet::blank(32, 32);
        strokes.set(3, 16, Stroke::Foreground);
        strokes.set(28, 16, Stroke::Background);
        s.set_scribbles(strokes.clone()).unwrap();
        let first = s.render(RenderMode::Fb).unwrap();
        assert!(s.has_cached_selection());
        strokes.set(4, 16, Stroke::Foreground);
        s.set_scribbles(strokes).unwrap();
        assert!(!s.has_cached_selection());
        assert!(s.last_render().is_none());
        s.render(RenderMode::Fb).unwrap();
        let cfg = PipelineConfig {
            window: 3,
            ..s.config().clone()
        };
        s.set_config(cfg);
        assert!(!s.has_cached_selection());
        let third = s.render(RenderMode::Fb).unwrap();
        assert_ne!(first.png, third.png);
    }

    #[test]
    fn scribble_size_checked() {
        let mut s = session();
        assert!(s.set_scribbles(ScribbleSet::blank(3, 3)).is_err());
    }
}
