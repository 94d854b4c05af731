use serde::Serialize;

use super::{Address, ChainId, CrosschainTransaction, TxType};

/// The five coordination fields that must agree across a whole nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedField {
    CoordinationChain,
    CoordinationContract,
    TimeoutBlock,
    CrosschainTxId,
    OriginatingChain,
}

impl SharedField {
    pub const ALL: [SharedField; 5] = [
        SharedField::CoordinationChain,
        SharedField::CoordinationContract,
        SharedField::TimeoutBlock,
        SharedField::CrosschainTxId,
        SharedField::OriginatingChain,
    ];

    fn same(self, a: &CrosschainTransaction, b: &CrosschainTransaction) -> bool {
        match self {
            SharedField::CoordinationChain => a.coordination_chain == b.coordination_chain,
            SharedField::CoordinationContract => a.coordination_contract == b.coordination_contract,
            SharedField::TimeoutBlock => a.timeout_block == b.timeout_block,
            SharedField::CrosschainTxId => a.crosschain_tx_id == b.crosschain_tx_id,
            SharedField::OriginatingChain => a.originating_chain == b.originating_chain,
        }
    }
}

/// A consistency violation at `path` (subordinate indices from the root).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    FieldMismatch {
        path: Vec<usize>,
        field: SharedField,
    },
    FromChainMismatch {
        path: Vec<usize>,
        expected: ChainId,
        found: ChainId,
    },
    FromAddressMismatch {
        path: Vec<usize>,
        expected: Address,
        found: Address,
    },
    OriginatingNotAtRoot {
        path: Vec<usize>,
    },
    NonViewUnderView {
        path: Vec<usize>,
    },
    SignallingWithSubordinates {
        path: Vec<usize>,
    },
}

/// Check cross-field consistency of a nest. An empty result means valid.
pub fn validate_nesting(root: &CrosschainTransaction) -> Vec<Violation> {
    let mut out = Vec::new();
    check(root, root, &mut Vec::new(), &mut out);
    out
}

fn check(root: &CrosschainTransaction, tx: &CrosschainTransaction, path: &mut Vec<usize>, out: &mut Vec<Violation>) {
    if tx.tx_type == TxType::Signalling && !tx.subordinates.is_empty() {
        out.push(Violation::SignallingWithSubordinates { path: path.clone() });
    }
    for (i, sub) in tx.subordinates.iter().enumerate() {
        path.push(i);
        for field in SharedField::ALL {
            if !field.same(root, sub) {
                out.push(Violation::FieldMismatch {
                    path: path.clone(),
                    field,
                });
            }
        }
        if sub.from_chain != tx.chain_id {
            out.push(Violation::FromChainMismatch {
                path: path.clone(),
                expected: tx.chain_id,
                found: sub.from_chain,
            });
        }
        if sub.from_address != tx.to {
            out.push(Violation::FromAddressMismatch {
                path: path.clone(),
                expected: tx.to,
                found: sub.from_address,
            });
        }
        if sub.tx_type == TxType::Originating {
            out.push(Violation::OriginatingNotAtRoot { path: path.clone() });
        }
        if tx.tx_type == TxType::View && sub.tx_type != TxType::View {
            out.push(Violation::NonViewUnderView { path: path.clone() });
        }
        check(root, sub, path, out);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::testutil::leaf;
    use crate::txcore::CrosschainTxId;

    // c1 on b1 calls c2 on b1 (local), c2 calls c3 on b2 as a subordinate.
    const C1: u64 = 0xC1;
    const C2: u64 = 0xC2;

    fn c1_c2_c3(sub_from: u64) -> CrosschainTransaction {
        let mut root = leaf(TxType::Originating, 1, C1, 1, 0xEE);
        root.subordinates.push(leaf(TxType::Subordinate, 2, 0xC3, 1, sub_from));
        root
    }

    #[test]
    fn from_address_is_root_to_not_intermediate_contract() {
        assert!(validate_nesting(&c1_c2_c3(C1)).is_empty());
        let v = validate_nesting(&c1_c2_c3(C2));
        assert_eq!(
            v,
            vec![Violation::FromAddressMismatch {
                path: vec![0],
                expected: Address::from_u64(C1),
                found: Address::from_u64(C2),
            }]
        );
    }

    #[test]
    fn single_originating_is_valid() {
        assert!(validate_nesting(&leaf(TxType::Originating, 1, C1, 1, 0xEE)).is_empty());
    }

    fn mutated(f: impl FnOnce(&mut CrosschainTransaction)) -> Vec<Violation> {
        let mut root = c1_c2_c3(C1);
        f(&mut root.subordinates[0]);
        validate_nesting(&root)
    }

    #[test]
    fn each_shared_field_mismatch_is_reported() {
        type Mutation = Box<dyn Fn(&mut CrosschainTransaction)>;
        let cases: [(SharedField, Mutation); 5] = [
            (
                SharedField::CoordinationChain,
                Box::new(|t| t.coordination_chain = ChainId::new(101)),
            ),
            (
                SharedField::CoordinationContract,
                Box::new(|t| t.coordination_contract = Address::from_u64(1)),
            ),
            (SharedField::TimeoutBlock, Box::new(|t| t.timeout_block += 1)),
            (
                SharedField::CrosschainTxId,
                Box::new(|t| t.crosschain_tx_id = CrosschainTxId(8)),
            ),
            (
                SharedField::OriginatingChain,
                Box::new(|t| t.originating_chain = ChainId::new(2)),
            ),
        ];
        for (field, f) in cases {
            assert_eq!(
                mutated(|t| f(t)),
                vec![Violation::FieldMismatch { path: vec![0], field }]
            );
        }
    }

    #[test]
    fn from_chain_mismatch() {
        assert_eq!(
            mutated(|t| t.from_chain = ChainId::new(3)),
            vec![Violation::FromChainMismatch {
                path: vec![0],
                expected: ChainId::new(1),
                found: ChainId::new(3),
            }]
        );
    }

    #[test]
    fn structural_rules() {
        assert_eq!(
            mutated(|t| t.tx_type = TxType::Originating),
            vec![Violation::OriginatingNotAtRoot { path: vec![0] }]
        );
        let v = mutated(|t| {
            t.tx_type = TxType::View;
            t.subordinates.push(leaf(TxType::Subordinate, 3, 0xC4, 2, 0xC3));
        });
        assert_eq!(v, vec![Violation::NonViewUnderView { path: vec![0, 0] }]);
        let v = mutated(|t| {
            t.tx_type = TxType::Signalling;
            t.subordinates.push(leaf(TxType::Subordinate, 3, 0xC4, 2, 0xC3));
        });
        assert_eq!(v, vec![Violation::SignallingWithSubordinates { path: vec![0] }]);
    }

    #[test]
    fn deep_mismatch_reported_with_path() {
        let mut root = c1_c2_c3(C1);
        let mut deep = leaf(TxType::View, 3, 0xC5, 2, 0xC3);
        deep.crosschain_tx_id = CrosschainTxId(99);
        root.subordinates[0].subordinates.push(deep);
        assert_eq!(
            validate_nesting(&root),
            vec![Violation::FieldMismatch {
                path: vec![0, 0],
                field: SharedField::CrosschainTxId
            }]
        );
    }
}
