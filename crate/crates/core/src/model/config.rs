use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture hyperparameters. Parameter shapes are a pure function of this struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Samples per segment.
    pub samples: usize,
    /// Output widths of the four stride-2 encoder stages.
    pub widths: Vec<usize>,
    /// Parallel kernel lengths per stage (odd).
    pub kernels: Vec<usize>,
    /// Number of latent channel blocks; must divide the final encoder width.
    pub blocks: usize,
    /// Per-source embedding width.
    pub embed_dim: usize,
    pub embed_hidden: usize,
    pub attn_hidden: usize,
    pub gat_dim: usize,
    /// Neighbours per target in the refinement graph.
    pub neighbors: usize,
    /// Prior temperature; `None` uses the median squared distance over ln 2.
    pub prior_tau: Option<f64>,
    pub lambda_init: f64,
    /// Widths after the first three transposed-convolution stages.
    pub decoder_widths: Vec<usize>,
    pub norm_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            samples: 3000,
            widths: vec![32, 64, 128, 256],
            kernels: vec![3, 5, 9],
            blocks: 32,
            embed_dim: 32,
            embed_hidden: 64,
            attn_hidden: 64,
            gat_dim: 64,
            neighbors: 4,
            prior_tau: None,
            lambda_init: 1.0,
            decoder_widths: vec![128, 64, 32],
            norm_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ArchConfig {
    /// Reduced configuration: encoder/decoder widths divided by 8, 256 samples.
    pub fn toy() -> Self {
        Self {
            samples: 256,
            widths: vec![4, 8, 16, 32],
            blocks: 4,
            embed_dim: 8,
            embed_hidden: 16,
            attn_hidden: 16,
            gat_dim: 16,
            decoder_widths: vec![16, 8, 4],
            ..Self::default()
        }
    }

    /// Toy widths on a custom segment length.
    pub fn toy_with_samples(samples: usize) -> Self {
        Self {
            samples,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.decoder_widths.len() != 3 {
            return Err(invalid("expected 4 encoder widths and 3 decoder widths"));
        }
        let dims = [
            self.blocks,
            self.embed_dim,
            self.embed_hidden,
            self.attn_hidden,
            self.gat_dim,
            self.neighbors,
        ];
        if self.widths.iter().chain(&self.decoder_widths).chain(&dims).any(|&d| d == 0) {
            return Err(invalid("all dimensions must be positive"));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(invalid("encoder kernels must be odd"));
        }
        if self.final_width() % self.blocks != 0 {
            return Err(invalid(format!(
                "final width {} is not divisible by {} blocks",
                self.final_width(),
                self.blocks
            )));
        }
        if self.samples < 16 {
            return Err(invalid(format!("{} samples cannot survive four halvings", self.samples)));
        }
        if self.neighbors > 12 {
            return Err(invalid("at most 12 neighbours exist among 13 targets"));
        }
        if self.prior_tau.is_some_and(|t| !(t > 0.0)) {
            return Err(invalid("prior temperature must be positive"));
        }
        Ok(())
    }

    pub fn final_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    /// Attention vector length per target (`4 * blocks`).
    pub fn attn_dim(&self) -> usize {
        4 * self.blocks
    }

    /// Time lengths after each encoder stage.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.widths.len());
        let mut l = self.samples;
        for _ in &self.widths {
            l = (l - 1) / 2 + 1;
            out.push(l);
        }
        out
    }
}
