//! Comparison semi-supervised methods sharing the dialog transformer.

mod pseudo;
mod vae;

pub use pseudo::{
    param_fingerprint, predict_pseudo_labels, pseudo_label_pipeline, PseudoLabel, PseudoLabelConfig, PseudoLabelOutcome,
    PseudoLabelSet,
};
pub use vae::{
    gaussian_kl, gaussian_kl_value, standard_normal, LatentGaussian, VaeHeads, VaeObjective, VaeTerms, LATENT_DIM,
    LOGVAR_BOUND,
};
