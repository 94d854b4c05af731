//! Canonical byte encoding.
//!
//! Integers are 8-byte big-endian, addresses are their 8 raw bytes, strings
//! and lists carry a 4-byte big-endian count prefix. Fields appear in
//! declaration order of [`CrosschainTransaction`]; subordinates recurse.

use super::{Address, CallPayload, ChainId, CrosschainTransaction, CrosschainTxId, TxError, TxType};

/// Nesting beyond this depth is rejected by the decoder.
pub const MAX_DECODE_DEPTH: usize = 64;

pub fn encode(tx: &CrosschainTransaction) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    encode_into(tx, &mut out);
    out
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_count(out: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("list longer than u32::MAX");
    out.extend_from_slice(&n.to_be_bytes());
}

fn encode_into(tx: &CrosschainTransaction, out: &mut Vec<u8>) {
    put_u64(out, tx.tx_type.tag());
    put_u64(out, tx.nonce);
    put_u64(out, tx.gas_price);
    put_u64(out, tx.gas_limit);
    out.extend_from_slice(&tx.to.0);
    put_u64(out, tx.value);
    put_count(out, tx.data.function_name.len());
    out.extend_from_slice(tx.data.function_name.as_bytes());
    put_count(out, tx.data.args.len());
    for &a in &tx.data.args {
        put_u64(out, a);
    }
    put_u64(out, tx.chain_id.value());
    out.extend_from_slice(&tx.sender.0);
    put_u64(out, tx.coordination_chain.value());
    out.extend_from_slice(&tx.coordination_contract.0);
    put_u64(out, tx.timeout_block);
    put_u64(out, tx.crosschain_tx_id.0);
    put_u64(out, tx.originating_chain.value());
    put_u64(out, tx.from_chain.value());
    out.extend_from_slice(&tx.from_address.0);
    put_count(out, tx.subordinates.len());
    for s in &tx.subordinates {
        encode_into(s, out);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> TxError {
    TxError::MalformedEncoding(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TxError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("truncated reading {what} at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, TxError> {
        let b = self.take(8, what)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn address(&mut self, what: &str) -> Result<Address, TxError> {
        let b = self.take(8, what)?;
        Ok(Address(b.try_into().expect("8 bytes")))
    }

    fn chain(&mut self, what: &str) -> Result<ChainId, TxError> {
        let v = self.u64(what)?;
        ChainId::try_new(v).ok_or_else(|| malformed(format!("{what} is zero")))
    }

    /// Reads a count and checks that `count * min_item` bytes remain.
    fn count(&mut self, what: &str, min_item: usize) -> Result<usize, TxError> {
        let b = self.take(4, what)?;
        let n = u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize;
        let remaining = self.buf.len() - self.pos;
        if n.saturating_mul(min_item) > remaining {
            return Err(malformed(format!(
                "{what} count {n} exceeds remaining {remaining} bytes"
            )));
        }
        Ok(n)
    }
}

/// Smallest possible encoded transaction: 15 fixed 8-byte fields plus three counts.
const MIN_TX_BYTES: usize = 15 * 8 + 3 * 4;

pub fn decode(bytes: &[u8]) -> Result<CrosschainTransaction, TxError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let tx = decode_one(&mut r, 0)?;
    if r.pos != bytes.len() {
        return Err(malformed(format!(
            "{} trailing bytes after transaction",
            bytes.len() - r.pos
        )));
    }
    Ok(tx)
}

fn decode_one(r: &mut Reader<'_>, depth: usize) -> Result<CrosschainTransaction, TxError> {
    if depth > MAX_DECODE_DEPTH {
        return Err(malformed("nesting too deep"));
    }
    let tag = r.u64("tx_type")?;
    let tx_type = TxType::from_tag(tag).ok_or_else(|| malformed(format!("unknown tx_type {tag}")))?;
    let nonce = r.u64("nonce")?;
    let gas_price = r.u64("gas_price")?;
    let gas_limit = r.u64("gas_limit")?;
    let to = r.address("to")?;
    let value = r.u64("value")?;
    let name_len = r.count("function_name", 1)?;
    let name_bytes = r.take(name_len, "function_name")?;
    let function_name = std::str::from_utf8(name_bytes)
        .map_err(|_| malformed("function_name is not UTF-8"))?
        .to_owned();
    let argc = r.count("args", 8)?;
    let args = (0..argc).map(|_| r.u64("arg")).collect::<Result<Vec<_>, _>>()?;
    let chain_id = r.chain("chain_id")?;
    let sender = r.address("sender")?;
    let coordination_chain = r.chain("coordination_chain")?;
    let coordination_contract = r.address("coordination_contract")?;
    let timeout_block = r.u64("timeout_block")?;
    let crosschain_tx_id = CrosschainTxId(r.u64("crosschain_tx_id")?);
    let originating_chain = r.chain("originating_chain")?;
    let from_chain = r.chain("from_chain")?;
    let from_address = r.address("from_address")?;
    let nsubs = r.count("subordinates", MIN_TX_BYTES)?;
    let subordinates = (0..nsubs)
        .map(|_| decode_one(r, depth + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CrosschainTransaction {
        tx_type,
        nonce,
        gas_price,
        gas_limit,
        to,
        value,
        data: CallPayload { function_name, args },
        chain_id,
        sender,
        coordination_chain,
        coordination_contract,
        timeout_block,
        crosschain_tx_id,
        originating_chain,
        from_chain,
        from_address,
        subordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::testutil::leaf;
    use proptest::prelude::*;

    #[test]
    fn nonce_sits_after_type_tag() {
        let mut tx = leaf(TxType::Originating, 1, 2, 1, 3);
        tx.nonce = 5;
        let bytes = encode(&tx);
        assert_eq!(&bytes[8..16], &[0, 0, 0, 0, 0, 0, 0, 5]);
    }

    #[test]
    fn empty_subordinate_list_is_four_zero_bytes() {
        let tx = leaf(TxType::Originating, 1, 2, 1, 3);
        let bytes = encode(&tx);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
    }

    #[test]
    fn fixed_layout_length() {
        // 15 u64-sized fields, three counts, the name "f" and one argument.
        let tx = leaf(TxType::Originating, 1, 2, 1, 3);
        assert_eq!(encode(&tx).len(), MIN_TX_BYTES + 1 + 8);
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let mut tx = leaf(TxType::Originating, 1, 2, 1, 3);
        tx.subordinates.push(leaf(TxType::Subordinate, 2, 4, 1, 2));
        let bytes = encode(&tx);
        for cut in [0, 1, 8, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(TxError::MalformedEncoding(_))));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(TxError::MalformedEncoding(_))));
        assert_eq!(decode(&bytes).unwrap(), tx);
    }

    #[test]
    fn oversized_count_rejected() {
        let tx = leaf(TxType::Originating, 1, 2, 1, 3);
        let mut bytes = encode(&tx);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(decode(&bytes), Err(TxError::MalformedEncoding(_))));
    }

    #[test]
    fn bad_tag_and_zero_chain_rejected() {
        let tx = leaf(TxType::Originating, 1, 2, 1, 3);
        let mut bytes = encode(&tx);
        bytes[7] = 9;
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&tx);
        // chain_id follows: tag, nonce, gas_price, gas_limit, to, value, name(4+1), args(4+8)
        let off = 8 * 6 + 5 + 12;
        bytes[off..off + 8].copy_from_slice(&0u64.to_be_bytes());
        assert!(decode(&bytes).is_err());
    }

    fn arb_tx(depth: u32) -> impl Strategy<Value = CrosschainTransaction> {
        let leaf = (
            0u64..5,
            any::<u64>(),
            any::<[u64; 4]>(),
            "[a-zA-Z_]{0,12}",
            prop::collection::vec(any::<u64>(), 0..5),
            prop::array::uniform6(1u64..u64::MAX),
            any::<[u64; 4]>(),
        )
            .prop_map(|(tag, nonce, misc, name, args, chains, addrs)| CrosschainTransaction {
                tx_type: TxType::from_tag(tag).unwrap(),
                nonce,
                gas_price: misc[0],
                gas_limit: misc[1],
                to: Address::from_u64(addrs[0]),
                value: misc[2],
                data: CallPayload::new(name, args),
                chain_id: ChainId::new(chains[0]),
                sender: Address::from_u64(addrs[1]),
                coordination_chain: ChainId::new(chains[1]),
                coordination_contract: Address::from_u64(addrs[2]),
                timeout_block: misc[3],
                crosschain_tx_id: CrosschainTxId(chains[5]),
                originating_chain: ChainId::new(chains[2]),
                from_chain: ChainId::new(chains[3]),
                from_address: Address::from_u64(addrs[3]),
                subordinates: vec![],
            });
        leaf.prop_recursive(depth, 40, 3, |inner| {
            (inner.clone(), prop::collection::vec(inner, 0..3)).prop_map(|(mut p, subs)| {
                p.subordinates = subs;
                p
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 1000, rng_seed: proptest::test_runner::RngSeed::Fixed(7), ..ProptestConfig::default() })]
        #[test]
        fn round_trip(tx in arb_tx(4)) {
            let bytes = encode(&tx);
            prop_assert_eq!(decode(&bytes).unwrap(), tx);
        }
    }
}
