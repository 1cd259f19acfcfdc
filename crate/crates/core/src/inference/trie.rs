use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<u32>,
}

/// Prefix tree over entity token sequences. A node may be both terminal and
/// internal (one entity's surface form is a prefix of another's).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityTrie {
    nodes: Vec<Node>,
    entities: Vec<(u32, Vec<TokenId>)>,
}

pub const ROOT: usize = 0;

impl EntityTrie {
    /// Builds the trie; two entities with the same token sequence are
    /// ambiguous and rejected.
    pub fn build(entities: &[(u32, Vec<TokenId>)]) -> Result<Self> {
        let mut t = EntityTrie {
            nodes: vec![Node::default()],
            entities: Vec::with_capacity(entities.len()),
        };
        for (id, seq) in entities {
            if seq.is_empty() {
                return Err(Error::Contract(format!("entity {id} has an empty token sequence")));
            }
            let mut cur = ROOT;
            for &tok in seq {
                cur = match t.nodes[cur].children.get(&tok) {
                    Some(&n) => n,
                    None => {
                        t.nodes.push(Node::default());
                        let n = t.nodes.len() - 1;
                        t.nodes[cur].children.insert(tok, n);
                        n
                    }
                };
            }
            if let Some(other) = t.nodes[cur].terminal {
                if other != *id {
                    return Err(Error::Contract(format!(
                        "entities {other} and {id} share the same token sequence"
                    )));
                }
                continue;
            }
            t.nodes[cur].terminal = Some(*id);
            t.entities.push((*id, seq.clone()));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Inserted entities in insertion order.
    pub fn entities(&self) -> &[(u32, Vec<TokenId>)] {
        &self.entities
    }

    /// Allowed next tokens and child nodes, in ascending token order.
    pub fn children(&self, node: usize) -> impl Iterator<Item = (TokenId, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    /// Entity completed at `node`, if any (`[E]` is allowed only here).
    pub fn terminal(&self, node: usize) -> Option<u32> {
        self.nodes[node].terminal
    }

    pub fn step(&self, node: usize, tok: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&tok).copied()
    }

    /// The entity whose full token sequence is `seq`.
    pub fn lookup(&self, seq: &[TokenId]) -> Option<u32> {
        let mut cur = ROOT;
        for &t in seq {
            cur = self.step(cur, t)?;
        }
        self.terminal(cur)
    }

    pub fn is_prefix(&self, seq: &[TokenId]) -> bool {
        let mut cur = ROOT;
        for &t in seq {
            match self.step(cur, t) {
                Some(n) => cur = n,
                None => return false,
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_prefix() {
        let t = EntityTrie::build(&[(0, vec![10, 11]), (1, vec![10, 12])]).unwrap();
        let root: Vec<_> = t.children(ROOT).collect();
        assert_eq!(root.len(), 1);
        let a = root[0].1;
        assert_eq!(t.children(a).map(|c| c.0).collect::<Vec<_>>(), vec![11, 12]);
        assert_eq!(t.lookup(&[10, 11]), Some(0));
        assert_eq!(t.lookup(&[10, 12]), Some(1));
        assert_eq!(t.lookup(&[10]), None);
    }

    #[test]
    fn prefix_entity_is_terminal_and_internal() {
        let t = EntityTrie::build(&[(0, vec![10]), (1, vec![10, 11])]).unwrap();
        let a = t.step(ROOT, 10).unwrap();
        assert_eq!(t.terminal(a), Some(0));
        assert_eq!(t.children(a).count(), 1);
        assert_eq!(t.lookup(&[10, 11]), Some(1));
    }

    #[test]
    fn duplicate_sequences_name_both_ids() {
        let e = EntityTrie::build(&[(3, vec![9]), (5, vec![9])]).unwrap_err().to_string();
        assert!(e.contains('3') && e.contains('5'));
        assert!(EntityTrie::build(&[(1, vec![])]).is_err());
    }
}
