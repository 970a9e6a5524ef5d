//! Decoder-only backbone:
//!
//! ```text
//! patch embed → L × [spatial attn → temporal window attn → SwiGLU] → AdaLN head
//! ```
//!
//! Each sub-block is wrapped in AdaLN-Zero modulation driven by the scene
//! timestep, attention uses grouped-query heads, learnable register
//! keys/values and the relative encoding from [`crate::encoding`]. The
//! reverse pass is written by hand (see [`model::backward`]).

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod patch;

use crate::encoding::{attr_3d, attr_video, AttrMode, GeomAttr};
use crate::geometry::CameraPose;
use crate::image::Image;
use crate::real::Real;
use crate::{Error, Result};

pub use model::{backward, embed_tokens, embed_unembed_path, forward, predict, ForwardCache, Network};
pub use params::{ModelParams, ParamLayout};
pub use patch::{patchify, unpatchify};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    /// Temporal attention window edge `K`.
    pub window: usize,
    pub patch: usize,
    pub channels: usize,
    pub registers: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub ffn_hidden: usize,
    /// Width of auxiliary per-patch features concatenated to reference tokens.
    pub aux_dim: usize,
    pub time_freq_dim: usize,
    /// `false` selects the variant that transforms only queries and keys.
    pub value_transform: bool,
}

/// SwiGLU width: `8D/3` rounded up to a multiple of 32.
pub fn default_ffn_hidden(hidden: usize) -> usize {
    (8 * hidden).div_ceil(3).div_ceil(32) * 32
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// The desk-scale configuration: L=4, D=128, 4 query heads sharing one
    /// kv head, K=2, one register, 2×2 patches on 32×32 RGB.
    pub fn toy() -> Self {
        Self {
            layers: 4,
            hidden: 128,
            q_heads: 4,
            kv_heads: 1,
            window: 2,
            patch: 2,
            channels: 3,
            registers: 1,
            grid_h: 16,
            grid_w: 16,
            ffn_hidden: default_ffn_hidden(128),
            aux_dim: 0,
            time_freq_dim: 64,
            value_transform: true,
        }
    }

    /// Small configuration for gradient checks and unit tests.
    pub fn tiny(grid: usize) -> Self {
        Self {
            layers: 2,
            hidden: 32,
            q_heads: 2,
            kv_heads: 1,
            window: 2,
            patch: 2,
            channels: 3,
            registers: 1,
            grid_h: grid,
            grid_w: grid,
            ffn_hidden: 48,
            aux_dim: 0,
            time_freq_dim: 16,
            value_transform: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.q_heads == 0 || self.kv_heads == 0 || !self.q_heads.is_multiple_of(self.kv_heads) {
            return bad(format!(
                "query heads {} must be a positive multiple of kv heads {}",
                self.q_heads, self.kv_heads
            ));
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(self.q_heads) {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden, self.q_heads));
        }
        if !self.head_dim().is_multiple_of(8) {
            return bad(format!("head dim {} must be a multiple of 8", self.head_dim()));
        }
        if self.window == 0 || self.patch == 0 || self.channels == 0 {
            return bad("window, patch and channels must be positive".into());
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return bad("grid must be non-empty".into());
        }
        if self.ffn_hidden == 0 || self.time_freq_dim < 2 || !self.time_freq_dim.is_multiple_of(2) {
            return bad("ffn_hidden must be positive and time_freq_dim even".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.q_heads
    }

    pub fn tokens_per_view(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn in_dim(&self) -> usize {
        self.patch_dim() + self.aux_dim
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.grid_h * self.patch, self.grid_w * self.patch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reference,
    Target,
}

/// Per-view position: a camera pose (3D data) or a frame of a clip (video).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewAttr {
    Pose(CameraPose),
    Frame { index: usize, count: usize },
}

impl ViewAttr {
    pub fn mode(&self) -> AttrMode {
        match self {
            ViewAttr::Pose(_) => AttrMode::ThreeD,
            ViewAttr::Frame { .. } => AttrMode::Video,
        }
    }

    /// Token attribute of patch `(i, j)` on a `gh × gw` grid.
    pub fn token_attr(&self, i: usize, j: usize, gh: usize, gw: usize) -> Result<GeomAttr> {
        match *self {
            ViewAttr::Pose(p) => attr_3d(i, j, gh, gw, p),
            ViewAttr::Frame { index, count } => attr_video(i, j, gh, gw, index, count),
        }
    }
}

/// Provider of auxiliary per-patch features for reference views.
pub trait AuxFeatures {
    fn dim(&self) -> usize;
    /// Row-major `[grid_h·grid_w, dim]` features of one image.
    fn features(&self, image: &Image<f32>, grid_h: usize, grid_w: usize) -> Vec<f32>;
}

/// The shipped provider: all-zero features.
#[derive(Debug, Clone, Copy)]
pub struct ZeroFeatures {
    pub dim: usize,
}

impl AuxFeatures for ZeroFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, _image: &Image<f32>, grid_h: usize, grid_w: usize) -> Vec<f32> {
        vec![0.0; grid_h * grid_w * self.dim]
    }
}

/// Network input for one scene: token patches (clean for references,
/// noised for targets), view attributes, roles and the attention mask.
#[derive(Debug, Clone)]
pub struct SceneInputs<F> {
    pub views: usize,
    /// `[views · grid_h · grid_w, patch_dim]`, view-major.
    pub patches: Vec<F>,
    /// `[views · grid_h · grid_w, aux_dim]`; zero rows for targets.
    pub aux: Vec<F>,
    pub attrs: Vec<ViewAttr>,
    pub roles: Vec<Role>,
    /// Views removed from all attention (and from the loss).
    pub hidden: Vec<bool>,
}

impl<F: Real> SceneInputs<F> {
    pub fn new(cfg: &ModelConfig, patches: Vec<F>, attrs: Vec<ViewAttr>, roles: Vec<Role>) -> Result<Self> {
        let views = attrs.len();
        let s = Self {
            views,
            patches,
            aux: vec![F::zero(); views * cfg.tokens_per_view() * cfg.aux_dim],
            attrs,
            roles,
            hidden: vec![false; views],
        };
        s.validate(cfg)?;
        Ok(s)
    }

    /// Fills reference rows of the auxiliary channels from `provider`.
    pub fn with_aux(mut self, cfg: &ModelConfig, provider: &dyn AuxFeatures, images: &[Image<f32>]) -> Result<Self> {
        if provider.dim() != cfg.aux_dim || images.len() != self.views {
            return Err(Error::shape("aux provider width or image count mismatch"));
        }
        let s = cfg.tokens_per_view();
        for (v, img) in images.iter().enumerate() {
            if self.roles[v] != Role::Reference {
                continue;
            }
            let feats = provider.features(img, cfg.grid_h, cfg.grid_w);
            let dst = &mut self.aux[v * s * cfg.aux_dim..(v + 1) * s * cfg.aux_dim];
            for (d, x) in dst.iter_mut().zip(&feats) {
                *d = F::of(*x as f64);
            }
        }
        Ok(self)
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let t = self.views * cfg.tokens_per_view();
        if self.attrs.len() != self.views || self.roles.len() != self.views || self.hidden.len() != self.views {
            return Err(Error::shape("per-view attribute, role and mask lengths differ"));
        }
        if self.patches.len() != t * cfg.patch_dim() {
            return Err(Error::shape(format!(
                "expected {} patch values for {} views, got {}",
                t * cfg.patch_dim(),
                self.views,
                self.patches.len()
            )));
        }
        if self.aux.len() != t * cfg.aux_dim {
            return Err(Error::shape("aux feature buffer size"));
        }
        if let Some(first) = self.attrs.first() {
            if self.attrs.iter().any(|a| a.mode() != first.mode()) {
                return Err(Error::shape("views mix pose and frame attributes"));
            }
        }
        Ok(())
    }

    pub fn target_views(&self) -> Vec<usize> {
        (0..self.views)
            .filter(|&v| self.roles[v] == Role::Target && !self.hidden[v])
            .collect()
    }

    /// Whether a query in view `q` may attend to keys of view `k`.
    /// References only see (visible) references; targets see every visible view.
    pub fn may_attend(&self, q: usize, k: usize) -> bool {
        !self.hidden[k] && (self.roles[q] == Role::Target || self.roles[k] == Role::Reference)
    }

    /// Drops hidden views, keeping everything else in order.
    pub fn compact(&self, cfg: &ModelConfig) -> SceneInputs<F> {
        let s = cfg.tokens_per_view();
        let (pd, ad) = (cfg.patch_dim(), cfg.aux_dim);
        let keep: Vec<usize> = (0..self.views).filter(|&v| !self.hidden[v]).collect();
        let mut out = SceneInputs {
            views: keep.len(),
            patches: Vec::with_capacity(keep.len() * s * pd),
            aux: Vec::with_capacity(keep.len() * s * ad),
            attrs: Vec::new(),
            roles: Vec::new(),
            hidden: vec![false; keep.len()],
        };
        for &v in &keep {
            out.patches.extend_from_slice(&self.patches[v * s * pd..(v + 1) * s * pd]);
            out.aux.extend_from_slice(&self.aux[v * s * ad..(v + 1) * s * ad]);
            out.attrs.push(self.attrs[v]);
            out.roles.push(self.roles[v]);
        }
        out
    }
}
