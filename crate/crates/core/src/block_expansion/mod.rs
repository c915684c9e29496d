//! Desk-scale block expansion: interleave zero-output copies of decoder
//! blocks so the expanded model starts out computing the same function.

mod model;
mod plan;

use serde::Serialize;
use thiserror::Error;

pub use model::{max_abs_deviation, random_inputs, Block, BlockBiases, ToyModel};
pub use plan::{count_params, per_block_params, plan_expansion, shared_params, ExpansionPlan, TransformerSpec};

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("invalid transformer spec: {0}")]
    InvalidSpec(String),
    #[error("cannot add {added} blocks to {n_blocks}: the count must divide the depth; nearest valid counts: {suggestions:?}")]
    NotDivisible { n_blocks: usize, added: usize, suggestions: Vec<usize> },
    #[error("token {token} is outside the vocabulary of {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("plan is for {plan} blocks but the model has {model}")]
    PlanMismatch { plan: usize, model: usize },
}

/// Summary printed by the expand demo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub plan: ExpansionPlan,
    pub original_params: usize,
    pub expanded_params: usize,
    pub per_block_params: usize,
    pub trainable_params: usize,
    pub identity_residual: f64,
}

/// Builds a random model, expands it and measures the identity residual.
pub fn demo(spec: TransformerSpec, added: usize, seed: u64, samples: usize) -> Result<ExpansionReport, BlockError> {
    let plan = plan_expansion(&spec, added)?;
    let model = ToyModel::random(spec, seed)?;
    let expanded = model.expand(&plan)?;
    let inputs = random_inputs(&spec, samples, seed.wrapping_add(1));
    let trainable_params = expanded
        .tensor_inventory()
        .iter()
        .filter(|t| t.2)
        .map(|t| t.1.iter().product::<usize>())
        .sum();
    Ok(ExpansionReport {
        original_params: count_params(&spec),
        expanded_params: count_params(&expanded.spec),
        per_block_params: per_block_params(&spec),
        trainable_params,
        identity_residual: max_abs_deviation(&model, &expanded, &inputs)?,
        plan,
    })
}
