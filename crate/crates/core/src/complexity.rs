//! Operation counts for offline training and online inference of the HCL network.
//!
//! Per time step, each vehicle's CNN costs `Σ_l n_{l-1} s_l² n_l a_l b_l` and the
//! LSTM costs `4(κ1 κ2 + κ2² + κ2)`. Online inference runs `τ` steps for `K`
//! vehicles; offline training repeats that for `I_t` iterations over `N_e`
//! examples.

use alloc::vec::Vec;

use crate::hcl::HclConfig;

/// Dimensions of one convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvLayerDims {
    /// Input channels `n_{l-1}`.
    pub in_channels: u64,
    /// Filter size `s_l`.
    pub kernel: u64,
    /// Output channels `n_l`.
    pub out_channels: u64,
    /// Output feature map length `a_l` and width `b_l`.
    pub out_len: u64,
    pub out_width: u64,
}

impl ConvLayerDims {
    pub fn ops(&self) -> u64 {
        self.in_channels * self.kernel * self.kernel * self.out_channels * self.out_len * self.out_width
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexityReport {
    pub tau: u64,
    pub k_vehicles: u64,
    pub conv_layers: Vec<ConvLayerDims>,
    pub kappa1: u64,
    pub kappa2: u64,
    /// `I_t`
    pub iterations: u64,
    /// `N_e`
    pub n_examples: u64,
    pub cnn_online: u64,
    pub lstm_online: u64,
    pub online: u64,
    pub offline: u64,
}

/// Evaluates both counts for `cfg` trained for `iterations` passes over `n_examples`.
pub fn complexity_report(cfg: &HclConfig, iterations: u64, n_examples: u64) -> ComplexityReport {
    let conv = ConvLayerDims {
        in_channels: 2,
        kernel: cfg.conv_kernel.0 as u64,
        out_channels: cfg.conv_filters as u64,
        out_len: cfg.n_tx as u64,
        out_width: 1,
    };
    let tau = cfg.tau as u64;
    let k = cfg.k_vehicles as u64;
    let kappa1 = cfg.concat_dim() as u64;
    let kappa2 = cfg.lstm_hidden as u64;
    let cnn_online = tau * k * conv.ops();
    let lstm_online = 4 * tau * (kappa1 * kappa2 + kappa2 * kappa2 + kappa2);
    let online = cnn_online + lstm_online;
    ComplexityReport {
        tau,
        k_vehicles: k,
        conv_layers: alloc::vec![conv],
        kappa1,
        kappa2,
        iterations,
        n_examples,
        cnn_online,
        lstm_online,
        online,
        offline: iterations * n_examples * online,
    }
}
