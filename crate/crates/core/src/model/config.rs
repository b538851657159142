use crate::error::{bail, Result};

/// Which stage of the network is bypassed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    #[default]
    Full,
    NoTransformer,
    NoAgent,
    NoSrmamba,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoTransformer, Ablation::NoAgent, Ablation::NoSrmamba];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTransformer => "no_transformer",
            Ablation::NoAgent => "no_agent",
            Ablation::NoSrmamba => "no_srmamba",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_agents: usize,
    pub n_landmarks: usize,
    pub pinv_iters: usize,
    pub srmamba_layers: usize,
    pub srmamba_rate: usize,
    pub ssm_state_dim: usize,
    pub dropout: f64,
    pub n_bins: usize,
    pub ablation: Ablation,
    /// Whether the class token takes part in attention pooling.
    pub pool_includes_class: bool,
    /// Side of the reference grid the agent position biases live on; biases
    /// are bilinearly resampled to each bag's token grid.
    pub agent_bias_side: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 512,
            d_model: 256,
            n_heads: 8,
            n_agents: 64,
            n_landmarks: 64,
            pinv_iters: 6,
            srmamba_layers: 2,
            srmamba_rate: 5,
            ssm_state_dim: 16,
            dropout: 0.25,
            n_bins: 4,
            ablation: Ablation::Full,
            pool_includes_class: true,
            agent_bias_side: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_model == 0 || self.n_heads == 0 {
            bail!(Shape, "dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            bail!(Shape, "d_model {} not divisible by n_heads {}", self.d_model, self.n_heads);
        }
        if self.n_bins != 4 {
            bail!(Shape, "n_bins is fixed at 4, got {}", self.n_bins);
        }
        if self.srmamba_rate == 0 {
            bail!(Shape, "srmamba_rate must be at least 1");
        }
        if self.n_agents == 0 || self.n_landmarks == 0 || self.ssm_state_dim == 0 || self.agent_bias_side == 0 {
            bail!(Shape, "agent, landmark, state and bias-grid sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Shape, "dropout {} outside [0, 1)", self.dropout);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn pool_hidden(&self) -> usize {
        (self.d_model / 2).max(1)
    }
}
