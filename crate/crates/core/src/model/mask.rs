use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::vocab::SerializedTriple;

/// Attention visibility policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Bidirectional query region with role separation for `[H]`/`[R]`,
    /// causal tail.
    #[default]
    #[serde(rename = "paper")]
    RoleSeparated,
    /// Strict lower-triangular visibility.
    FullCausal,
    /// Bidirectional query region without role separation, causal tail.
    NoMask,
}

impl std::str::FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(MaskMode::RoleSeparated),
            "full_causal" => Ok(MaskMode::FullCausal),
            "no_mask" => Ok(MaskMode::NoMask),
            o => Err(format!("unknown mask mode `{o}` (paper|full_causal|no_mask)")),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::RoleSeparated => "paper",
            MaskMode::FullCausal => "full_causal",
            MaskMode::NoMask => "no_mask",
        })
    }
}

/// Square attend/block matrix. `true` entries are additive 0, `false`
/// entries are additive `-inf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    len: usize,
    visible: Arc<Vec<bool>>,
}

/// Visibility of one tail-side row `i` (i >= query_len) over `0..=i`.
/// Tail rows see the whole query region and earlier tail tokens in every mode.
pub fn tail_row(i: usize) -> Vec<bool> {
    vec![true; i + 1]
}

fn visible(s: &SerializedTriple, mode: MaskMode, i: usize, j: usize) -> bool {
    let q = s.query_len;
    match mode {
        MaskMode::FullCausal => j <= i,
        _ if i >= q => j <= i,
        MaskMode::NoMask => j < q,
        MaskMode::RoleSeparated => {
            if i == s.pos_h {
                j == i || s.head_span.contains(&j)
            } else if i == s.pos_r {
                j == i || s.rel_span.contains(&j)
            } else {
                j < q
            }
        }
    }
}

impl VisibilityMask {
    pub fn build(s: &SerializedTriple, mode: MaskMode) -> Self {
        let n = s.len();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push(visible(s, mode, i, j));
            }
        }
        VisibilityMask {
            len: n,
            visible: Arc::new(v),
        }
    }

    /// Extends the mask to `total` positions for right padding: pad columns
    /// are blocked everywhere, pad rows see only themselves.
    pub fn padded(&self, total: usize) -> Self {
        assert!(total >= self.len);
        let mut v = vec![false; total * total];
        for i in 0..total {
            for j in 0..total {
                v[i * total + j] = if i < self.len && j < self.len { self.get(i, j) } else { i == j };
            }
        }
        VisibilityMask {
            len: total,
            visible: Arc::new(v),
        }
    }

    /// The top-left `len x len` block.
    pub fn truncated(&self, len: usize) -> Self {
        assert!(len <= self.len);
        let mut v = Vec::with_capacity(len * len);
        for i in 0..len {
            v.extend_from_slice(&self.visible[i * self.len..i * self.len + len]);
        }
        VisibilityMask {
            len,
            visible: Arc::new(v),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.visible[i * self.len + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.visible[i * self.len..(i + 1) * self.len]
    }

    /// Additive form: 0 where visible, `-inf` where blocked.
    pub fn additive(&self) -> Vec<f64> {
        self.visible
            .iter()
            .map(|&b| if b { 0.0 } else { f64::NEG_INFINITY })
            .collect()
    }

    pub fn shared(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.visible)
    }

    /// Rows as `0`/`1` strings, handy for inspecting a mask.
    pub fn to_rows(&self) -> Vec<String> {
        (0..self.len)
            .map(|i| self.row(i).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }
}
