//! Architecture configuration and parameter layouts for the encoder (ψ) and
//! the shared hypernetwork bundle (Φ).

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{project_l2_ball, ParamLayout, ParamVector};

pub const LOGSIG_MIN: f64 = -6.0;
pub const LOGSIG_MAX: f64 = 2.0;

/// Dimensions of the generative model. Everything but `data_dim` and
/// `num_classes` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub code_dim: usize,
    pub domain_dim: usize,
    pub label_embed_dim: usize,
    pub hyper_hidden_dim: usize,
    /// ℓ₂ bound `r` on client codes.
    pub code_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            data_dim: 16,
            num_classes: 3,
            latent_dim: 16,
            hidden_dim: 128,
            code_dim: 8,
            domain_dim: 16,
            label_embed_dim: 8,
            hyper_hidden_dim: 32,
            code_radius: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model.data_dim", self.data_dim),
            ("model.latent_dim", self.latent_dim),
            ("model.hidden_dim", self.hidden_dim),
            ("model.code_dim", self.code_dim),
            ("model.domain_dim", self.domain_dim),
            ("model.label_embed_dim", self.label_embed_dim),
            ("model.hyper_hidden_dim", self.hyper_hidden_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "need at least 2 classes"));
        }
        if !(self.code_radius > 0.0) {
            return Err(Error::config("model.code_radius", "must be positive"));
        }
        Ok(())
    }
}

/// Offsets of one affine layer inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Precomputed layouts and offsets for a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Architecture {
    pub cfg: ModelConfig,
    pub psi_layout: Arc<ParamLayout>,
    pub phi_layout: Arc<ParamLayout>,
    pub(crate) enc: [LayerOffsets; 3],
    pub(crate) dec: [LayerOffsets; 3],
    pub(crate) h_theta: [LayerOffsets; 2],
    pub(crate) h_omega: [LayerOffsets; 2],
    pub(crate) g_omega: [LayerOffsets; 2],
    pub(crate) label_embedding: usize,
    /// (offset of a_ℓ, offset of Δb_ℓ) inside the h_θ output, per decoder layer.
    pub(crate) modulation: [(usize, usize); 3],
}

/// Names of the hypernetwork weight matrices covered by the Lipschitz penalty.
pub const HYPER_MATRICES: [&str; 6] = [
    "h_theta.0.w",
    "h_theta.1.w",
    "h_omega.0.w",
    "h_omega.1.w",
    "g_omega.0.w",
    "g_omega.1.w",
];

fn push_layer(l: &mut ParamLayout, prefix: &str, rows: usize, cols: usize) -> LayerOffsets {
    let w = l.push_matrix(format!("{prefix}.w"), rows, cols);
    let b = l.push_vector(format!("{prefix}.b"), rows);
    LayerOffsets { w, b, rows, cols }
}

impl Architecture {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (dx, k, dz, h) = (cfg.data_dim, cfg.num_classes, cfg.latent_dim, cfg.hidden_dim);

        let mut psi = ParamLayout::new();
        let enc = [
            push_layer(&mut psi, "enc.0", h, dx + k),
            push_layer(&mut psi, "enc.1", h, h),
            push_layer(&mut psi, "enc.2", 2 * dz, h),
        ];

        let mut phi = ParamLayout::new();
        let dec = [
            push_layer(&mut phi, "dec.0", h, dz + k),
            push_layer(&mut phi, "dec.1", h, h),
            push_layer(&mut phi, "dec.2", dx, h),
        ];
        let mod_len: usize = dec.iter().map(|l| 2 * l.rows).sum();
        let mut modulation = [(0, 0); 3];
        let mut cursor = 0;
        for (m, l) in modulation.iter_mut().zip(&dec) {
            *m = (cursor, cursor + l.rows);
            cursor += 2 * l.rows;
        }
        let hh = cfg.hyper_hidden_dim;
        let h_theta = [
            push_layer(&mut phi, "h_theta.0", hh, cfg.code_dim),
            push_layer(&mut phi, "h_theta.1", mod_len, hh),
        ];
        let h_omega = [
            push_layer(&mut phi, "h_omega.0", hh, cfg.code_dim),
            push_layer(&mut phi, "h_omega.1", cfg.domain_dim, hh),
        ];
        let g_omega = [
            push_layer(&mut phi, "g_omega.0", hh, cfg.domain_dim + cfg.label_embed_dim),
            push_layer(&mut phi, "g_omega.1", 2 * dz, hh),
        ];
        let label_embedding = phi.push_matrix("label_embedding", k, cfg.label_embed_dim);

        psi.validate()?;
        phi.validate()?;
        Ok(Self {
            cfg,
            psi_layout: Arc::new(psi),
            phi_layout: Arc::new(phi),
            enc,
            dec,
            h_theta,
            h_omega,
            g_omega,
            label_embedding,
            modulation,
        })
    }

    pub fn decoder_layers(&self) -> &[LayerOffsets; 3] {
        &self.dec
    }

    pub fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.cfg.num_classes {
            return Err(Error::UnknownClass {
                class: y,
                num_classes: self.cfg.num_classes,
            });
        }
        Ok(())
    }

    pub fn check_len(&self, op: &'static str, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::dim(op, format!("{what} len {got}"), format!("expected {want}")));
        }
        Ok(())
    }

    /// Fresh Φ: scaled-normal weights, zero biases, zero output layers on
    /// h_θ (identity modulation) and g_ω (standard-normal priors).
    pub fn init_phi<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut phi = ParamVector::zeros(self.phi_layout.clone());
        let layers = self
            .dec
            .iter()
            .chain(&self.h_theta[..1])
            .chain(&self.h_omega)
            .chain(&self.g_omega[..1]);
        for l in layers {
            fill_weights(&mut phi.as_mut_slice()[l.w..l.w + l.rows * l.cols], l.cols, rng);
        }
        let k = self.cfg.num_classes * self.cfg.label_embed_dim;
        for v in &mut phi.as_mut_slice()[self.label_embedding..self.label_embedding + k] {
            *v = StandardNormal.sample(rng);
        }
        phi
    }

    pub fn init_psi<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut psi = ParamVector::zeros(self.psi_layout.clone());
        for l in &self.enc {
            fill_weights(&mut psi.as_mut_slice()[l.w..l.w + l.rows * l.cols], l.cols, rng);
        }
        psi
    }

    /// `v ~ N(0, I)` projected onto the code ball.
    pub fn init_code<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.cfg.code_dim).map(|_| StandardNormal.sample(rng)).collect();
        project_l2_ball(&mut v, self.cfg.code_radius);
        v
    }
}

fn fill_weights<R: Rng + ?Sized>(w: &mut [f64], fan_in: usize, rng: &mut R) {
    let std = (1.0 / fan_in as f64).sqrt();
    for v in w {
        let n: f64 = StandardNormal.sample(rng);
        *v = n * std;
    }
}
