use serde::{Deserialize, Serialize};

use super::BlockError;

/// Shape of a toy decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab: usize,
    /// Length of the learned position table.
    pub max_seq: usize,
    #[serde(default)]
    pub bias: bool,
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<(), BlockError> {
        let fields = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(BlockError::InvalidSpec(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(BlockError::InvalidSpec(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn with_blocks(self, n_blocks: usize) -> Self {
        Self { n_blocks, ..self }
    }
}

/// Parameters held by one decoder block.
///
/// Without biases: `4·d²` attention, `3·d·d_ffn` gated MLP, `2·d` norm gains.
/// Biases add `4·d` (attention) and `2·d_ffn + d` (MLP).
pub fn per_block_params(spec: &TransformerSpec) -> usize {
    let (d, f) = (spec.d_model, spec.d_ffn);
    let mut n = 4 * d * d + 3 * d * f + 2 * d;
    if spec.bias {
        n += 4 * d + 2 * f + d;
    }
    n
}

/// Parameters outside the blocks: token and position embeddings, final
/// norm, untied output head.
pub fn shared_params(spec: &TransformerSpec) -> usize {
    let d = spec.d_model;
    let mut n = spec.vocab * d + spec.max_seq * d + d + d * spec.vocab;
    if spec.bias {
        n += spec.vocab;
    }
    n
}

pub fn count_params(spec: &TransformerSpec) -> usize {
    shared_params(spec) + spec.n_blocks * per_block_params(spec)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub original_blocks: usize,
    pub added_blocks: usize,
    /// Originals per group; zero for an empty plan.
    pub group_size: usize,
    pub copies_per_group: usize,
    /// Positions of the inserted blocks in the expanded stack.
    pub insertion_indices: Vec<usize>,
    /// Original block copied into each inserted position.
    pub source_indices: Vec<usize>,
}

impl ExpansionPlan {
    pub fn resulting_depth(&self) -> usize {
        self.original_blocks + self.added_blocks
    }
}

/// Divisors of `n`, closest to `k` first (at most two).
fn nearest_divisors(n: usize, k: usize) -> Vec<usize> {
    let mut divs: Vec<usize> = (1..=n).filter(|d| n.is_multiple_of(*d)).collect();
    divs.sort_by_key(|&d| (d.abs_diff(k), d));
    divs.truncate(2);
    divs.sort_unstable();
    divs
}

/// One copy after every `n_blocks / added` originals.
pub fn plan_expansion(spec: &TransformerSpec, added: usize) -> Result<ExpansionPlan, BlockError> {
    let n = spec.n_blocks;
    if added == 0 {
        return Ok(ExpansionPlan {
            original_blocks: n,
            added_blocks: 0,
            group_size: 0,
            copies_per_group: 0,
            insertion_indices: Vec::new(),
            source_indices: Vec::new(),
        });
    }
    if n == 0 || !n.is_multiple_of(added) {
        return Err(BlockError::NotDivisible { n_blocks: n, added, suggestions: nearest_divisors(n, added) });
    }
    let group_size = n / added;
    let insertion_indices = (0..added).map(|g| (g + 1) * group_size + g).collect();
    let source_indices = (0..added).map(|g| (g + 1) * group_size - 1).collect();
    Ok(ExpansionPlan {
        original_blocks: n,
        added_blocks: added,
        group_size,
        copies_per_group: 1,
        insertion_indices,
        source_indices,
    })
}
