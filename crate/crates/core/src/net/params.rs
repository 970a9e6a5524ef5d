//! Flat parameter storage with named, shaped slots.
//!
//! All learnable weights live in one contiguous vector; gradients and
//! optimiser moments use the same layout, so updates are plain slice loops
//! and the checkpoint writer iterates the named entries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::real::Real;
use crate::Result;

/// A `rows × cols` row-major block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnSlots {
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub reg_k: Slot,
    pub reg_v: Slot,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    /// `[9D, D]`: shift/scale/gate for spatial, temporal and FFN sub-blocks.
    pub ada_w: Slot,
    pub ada_b: Slot,
    pub spatial: AttnSlots,
    pub temporal: AttnSlots,
    pub ffn_gate: Slot,
    pub ffn_up: Slot,
    pub ffn_down: Slot,
}

#[derive(Debug, Clone)]
pub struct ModelSlots {
    pub embed_w: Slot,
    pub embed_b: Slot,
    pub role: Slot,
    pub time_fc1_w: Slot,
    pub time_fc1_b: Slot,
    pub time_fc2_w: Slot,
    pub time_fc2_b: Slot,
    pub layers: Vec<LayerSlots>,
    /// `[2D, D]`: shift/scale of the output norm.
    pub final_w: Slot,
    pub final_b: Slot,
    pub unembed_w: Slot,
    pub unembed_b: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub slot: Slot,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub slots: ModelSlots,
    pub total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += slot.len();
        self.entries.push(ParamEntry { name, slot });
        slot
    }

    fn attn(&mut self, prefix: &str, cfg: &ModelConfig) -> AttnSlots {
        let d = cfg.head_dim();
        let (qd, kvd) = (cfg.q_heads * d, cfg.kv_heads * d);
        AttnSlots {
            wq: self.add(format!("{prefix}.wq"), qd, cfg.hidden),
            wk: self.add(format!("{prefix}.wk"), kvd, cfg.hidden),
            wv: self.add(format!("{prefix}.wv"), kvd, cfg.hidden),
            wo: self.add(format!("{prefix}.wo"), cfg.hidden, qd),
            reg_k: self.add(format!("{prefix}.reg_k"), cfg.registers, kvd),
            reg_v: self.add(format!("{prefix}.reg_v"), cfg.registers, kvd),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden;
        let mut b = Builder {
            entries: Vec::new(),
            offset: 0,
        };
        let embed_w = b.add("embed.weight".into(), d, cfg.in_dim());
        let embed_b = b.add("embed.bias".into(), 1, d);
        let role = b.add("embed.reference".into(), 1, d);
        let time_fc1_w = b.add("time.fc1.weight".into(), d, cfg.time_freq_dim);
        let time_fc1_b = b.add("time.fc1.bias".into(), 1, d);
        let time_fc2_w = b.add("time.fc2.weight".into(), d, d);
        let time_fc2_b = b.add("time.fc2.bias".into(), 1, d);
        let layers = (0..cfg.layers)
            .map(|l| LayerSlots {
                ada_w: b.add(format!("layers.{l}.adaln.weight"), 9 * d, d),
                ada_b: b.add(format!("layers.{l}.adaln.bias"), 1, 9 * d),
                spatial: b.attn(&format!("layers.{l}.spatial"), cfg),
                temporal: b.attn(&format!("layers.{l}.temporal"), cfg),
                ffn_gate: b.add(format!("layers.{l}.ffn.gate"), cfg.ffn_hidden, d),
                ffn_up: b.add(format!("layers.{l}.ffn.up"), cfg.ffn_hidden, d),
                ffn_down: b.add(format!("layers.{l}.ffn.down"), d, cfg.ffn_hidden),
            })
            .collect();
        let final_w = b.add("final.adaln.weight".into(), 2 * d, d);
        let final_b = b.add("final.adaln.bias".into(), 1, 2 * d);
        let unembed_w = b.add("unembed.weight".into(), cfg.patch_dim(), d);
        let unembed_b = b.add("unembed.bias".into(), 1, cfg.patch_dim());
        ParamLayout {
            total: b.offset,
            entries: b.entries,
            slots: ModelSlots {
                embed_w,
                embed_b,
                role,
                time_fc1_w,
                time_fc1_b,
                time_fc2_w,
                time_fc2_b,
                layers,
                final_w,
                final_b,
                unembed_w,
                unembed_b,
            },
        }
    }

    /// Slots that make up AdaLN modulation (zero at initialisation).
    fn modulation_slots(&self) -> Vec<Slot> {
        let s = &self.slots;
        let mut v: Vec<Slot> = s.layers.iter().flat_map(|l| [l.ada_w, l.ada_b]).collect();
        v.extend([s.final_w, s.final_b]);
        v
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<F>,
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        Ok(Self {
            config: config.clone(),
            data: vec![F::zero(); layout.total],
            layout,
        })
    }

    /// Standard initialisation: fan-in scaled Gaussians, zero biases and
    /// all AdaLN modulation (gates included) zero, so every block starts as
    /// the identity map.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = p.layout.slots.clone();
        let fan_in = |slot: &Slot| 1.0 / (slot.cols as f64).sqrt();
        p.fill_normal(&mut rng, s.embed_w, fan_in(&s.embed_w));
        p.fill_normal(&mut rng, s.role, 0.02);
        p.fill_normal(&mut rng, s.time_fc1_w, 0.02);
        p.fill_normal(&mut rng, s.time_fc2_w, 0.02);
        for l in &s.layers {
            for a in [&l.spatial, &l.temporal] {
                for w in [a.wq, a.wk, a.wv, a.wo] {
                    p.fill_normal(&mut rng, w, fan_in(&w));
                }
                p.fill_normal(&mut rng, a.reg_k, 0.02);
                p.fill_normal(&mut rng, a.reg_v, 0.02);
            }
            for w in [l.ffn_gate, l.ffn_up, l.ffn_down] {
                p.fill_normal(&mut rng, w, fan_in(&w));
            }
        }
        p.fill_normal(&mut rng, s.unembed_w, 0.1 * fan_in(&s.unembed_w));
        Ok(p)
    }

    /// Every parameter (modulation and biases included) drawn at
    /// `scale / sqrt(fan_in)`; used by gradient checks so no path is inert.
    pub fn init_dense(config: &ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = p.layout.entries.clone();
        for e in &entries {
            let std = scale / (e.slot.cols as f64).sqrt();
            p.fill_normal(&mut rng, e.slot, std);
        }
        Ok(p)
    }

    fn fill_normal(&mut self, rng: &mut ChaCha8Rng, slot: Slot, std: f64) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for x in &mut self.data[slot.range()] {
            *x = F::of(dist.sample(rng));
        }
    }

    #[inline]
    pub fn get(&self, slot: Slot) -> &[F] {
        &self.data[slot.range()]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut [F] {
        &mut self.data[slot.range()]
    }

    pub fn slots(&self) -> &ModelSlots {
        &self.layout.slots
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when every AdaLN weight and bias is zero.
    pub fn modulation_is_zero(&self) -> bool {
        self.layout
            .modulation_slots()
            .iter()
            .all(|s| self.get(*s).iter().all(|x| *x == F::zero()))
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::of(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_named_uniquely() {
        let cfg = ModelConfig::toy();
        let layout = ParamLayout::new(&cfg);
        let mut off = 0;
        let mut names = std::collections::HashSet::new();
        for e in &layout.entries {
            assert_eq!(e.slot.offset, off);
            off += e.slot.len();
            assert!(names.insert(e.name.clone()), "duplicate {}", e.name);
        }
        assert_eq!(off, layout.total);
        let wk = layout.find("layers.0.spatial.wk").unwrap();
        // GQA: one kv head of width 32
        assert_eq!((wk.slot.rows, wk.slot.cols), (32, 128));
        assert_eq!(layout.find("layers.3.temporal.reg_v").unwrap().slot.rows, 1);
    }

    #[test]
    fn init_zeroes_modulation_and_is_seeded() {
        let cfg = ModelConfig::tiny(4);
        let a = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let c = ModelParams::<f32>::init(&cfg, 4).unwrap();
        assert!(a.modulation_is_zero());
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        let d = ModelParams::<f64>::init_dense(&cfg, 3, 0.5).unwrap();
        assert!(!d.modulation_is_zero());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = ModelConfig::tiny(4);
        cfg.kv_heads = 3;
        assert!(ModelParams::<f32>::zeros(&cfg).is_err());
        let mut cfg = ModelConfig::tiny(4);
        cfg.hidden = 24; // head dim 12
        assert!(ModelParams::<f32>::zeros(&cfg).is_err());
    }
}
