//! M-of-N threshold signatures with Pedersen verifiable secret sharing.
//!
//! The group is *transparent*: every element is represented by its discrete
//! logarithm modulo the Mersenne prime `q = 2^61 - 1`, generators are the
//! fixed scalars `G = 1` and `H = 2`, and the pairing check collapses to a
//! scalar product. All of the Shamir, Lagrange and Pedersen arithmetic is
//! exact, but the scheme offers no security whatsoever. It exists so the
//! coordination protocol can be exercised end to end without a pairing
//! library.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::rng_stream;

/// Group order, `2^61 - 1`.
pub const GROUP_ORDER: u64 = (1 << 61) - 1;

/// Element of `Z_q`. Also stands in for group elements via their discrete log.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupScalar(u64);

/// Public generator `G`.
pub const GENERATOR_G: GroupScalar = GroupScalar(1);
/// Public generator `H` used for Pedersen blinding.
pub const GENERATOR_H: GroupScalar = GroupScalar(2);

impl GroupScalar {
    pub const ZERO: GroupScalar = GroupScalar(0);
    pub const ONE: GroupScalar = GroupScalar(1);

    /// Reduce an arbitrary `u64` into the field.
    pub const fn new(value: u64) -> Self {
        GroupScalar(value % GROUP_ORDER)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = GroupScalar::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        if self.0 == 0 {
            None
        } else {
            Some(self.pow(GROUP_ORDER - 2))
        }
    }

    fn reduce_u128(x: u128) -> Self {
        // q is a Mersenne prime: fold the high bits back in.
        let q = GROUP_ORDER as u128;
        let folded = (x & q) + (x >> 61);
        let folded = (folded & q) + (folded >> 61);
        GroupScalar::new(folded as u64)
    }
}

impl fmt::Debug for GroupScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupScalar({})", self.0)
    }
}

impl fmt::Display for GroupScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for GroupScalar {
    type Output = GroupScalar;
    fn add(self, rhs: Self) -> Self {
        GroupScalar::new(self.0 + rhs.0)
    }
}

impl Sub for GroupScalar {
    type Output = GroupScalar;
    fn sub(self, rhs: Self) -> Self {
        GroupScalar::new(self.0 + GROUP_ORDER - rhs.0)
    }
}

impl Neg for GroupScalar {
    type Output = GroupScalar;
    fn neg(self) -> Self {
        GroupScalar::ZERO - self
    }
}

impl Mul for GroupScalar {
    type Output = GroupScalar;
    fn mul(self, rhs: Self) -> Self {
        GroupScalar::reduce_u128(self.0 as u128 * rhs.0 as u128)
    }
}

impl std::iter::Sum for GroupScalar {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(GroupScalar::ZERO, |a, b| a + b)
    }
}

/// SHA-256 of `msg`, read as a big-endian integer and reduced mod `q`.
pub fn hash_to_scalar(msg: &[u8]) -> GroupScalar {
    let digest = Sha256::digest(msg);
    digest.iter().fold(GroupScalar::ZERO, |acc, &b| {
        GroupScalar::reduce_u128(acc.0 as u128 * 256 + b as u128)
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TsigError {
    #[error("invalid threshold configuration: m={m}, n={n}")]
    InvalidConfig { n: u32, m: u32 },
    #[error("insufficient signature shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: u32 },
    #[error("duplicate share index {0}")]
    DuplicateIndex(u32),
    #[error("share index 0 is reserved for the secret")]
    ZeroIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdConfig {
    n: u32,
    m: u32,
}

impl ThresholdConfig {
    pub fn new(n: u32, m: u32) -> Result<Self, TsigError> {
        if m == 0 || m > n {
            return Err(TsigError::InvalidConfig { n, m });
        }
        Ok(ThresholdConfig { n, m })
    }

    /// Total number of key shares.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Signing threshold.
    pub fn m(&self) -> u32 {
        self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyShare {
    pub index: u32,
    pub secret_share: GroupScalar,
    pub blinding_share: GroupScalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyShareSet(Vec<KeyShare>);

impl KeyShareSet {
    pub fn get(&self, index: u32) -> Option<&KeyShare> {
        self.0.iter().find(|s| s.index == index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, KeyShare> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[KeyShare] {
        &self.0
    }
}

/// Pedersen commitments `a_j·G + b_j·H`, one per polynomial coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PedersenCommitments(Vec<GroupScalar>);

impl PedersenCommitments {
    /// Commitments received from a dealer, lowest degree first.
    pub fn new(commitments: Vec<GroupScalar>) -> Self {
        PedersenCommitments(commitments)
    }

    pub fn as_slice(&self) -> &[GroupScalar] {
        &self.0
    }

    /// `Σ_j index^j · C_j`.
    pub fn evaluate(&self, index: u32) -> GroupScalar {
        let x = GroupScalar::new(index as u64);
        // Horner from the highest coefficient down.
        self.0.iter().rev().fold(GroupScalar::ZERO, |acc, &c| acc * x + c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureShare {
    pub index: u32,
    pub value: GroupScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdSignature {
    pub value: GroupScalar,
}

/// Dealer polynomial coefficients, lowest degree first. Retained only so tests
/// can evaluate the sharing independently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DealerPolynomials {
    pub secret_coeffs: Vec<GroupScalar>,
    pub blinding_coeffs: Vec<GroupScalar>,
}

#[derive(Debug, Clone)]
pub struct KeygenOutput {
    pub public_key: GroupScalar,
    pub shares: KeyShareSet,
    pub commitments: PedersenCommitments,
    pub dealer_secret: GroupScalar,
    pub polynomials: DealerPolynomials,
}

/// Trusted-dealer Shamir sharing of a fresh secret with Pedersen commitments.
pub fn dealer_keygen(cfg: ThresholdConfig, seed: u64) -> Result<KeygenOutput, TsigError> {
    // Re-validate: the fields are private but the config may come from deserialization.
    let cfg = ThresholdConfig::new(cfg.n, cfg.m)?;
    let mut rng = rng_stream(seed, "tsig/dealer");
    let degree_plus_one = cfg.m as usize;
    let mut draw = || GroupScalar::new(rng.below(GROUP_ORDER));
    let secret_coeffs: Vec<GroupScalar> = (0..degree_plus_one).map(|_| draw()).collect();
    let blinding_coeffs: Vec<GroupScalar> = (0..degree_plus_one).map(|_| draw()).collect();

    let commitments = PedersenCommitments(
        secret_coeffs
            .iter()
            .zip(&blinding_coeffs)
            .map(|(&a, &b)| a * GENERATOR_G + b * GENERATOR_H)
            .collect(),
    );
    let shares = KeyShareSet(
        (1..=cfg.n)
            .map(|index| KeyShare {
                index,
                secret_share: eval_poly(&secret_coeffs, index),
                blinding_share: eval_poly(&blinding_coeffs, index),
            })
            .collect(),
    );
    let dealer_secret = secret_coeffs[0];
    Ok(KeygenOutput {
        public_key: dealer_secret * GENERATOR_G,
        shares,
        commitments,
        dealer_secret,
        polynomials: DealerPolynomials {
            secret_coeffs,
            blinding_coeffs,
        },
    })
}

fn eval_poly(coeffs: &[GroupScalar], index: u32) -> GroupScalar {
    let x = GroupScalar::new(index as u64);
    coeffs.iter().rev().fold(GroupScalar::ZERO, |acc, &c| acc * x + c)
}

pub fn verify_share(share: &KeyShare, commitments: &PedersenCommitments) -> bool {
    if share.index == 0 || commitments.0.is_empty() {
        return false;
    }
    let lhs = share.secret_share * GENERATOR_G + share.blinding_share * GENERATOR_H;
    lhs == commitments.evaluate(share.index)
}

pub fn sign_share(share: &KeyShare, msg: &[u8]) -> SignatureShare {
    SignatureShare {
        index: share.index,
        value: share.secret_share * hash_to_scalar(msg),
    }
}

/// Lagrange coefficients at zero for the given evaluation points.
pub fn lagrange_at_zero(indices: &[u32]) -> Result<Vec<GroupScalar>, TsigError> {
    let mut seen = std::collections::BTreeSet::new();
    for &i in indices {
        if i == 0 {
            return Err(TsigError::ZeroIndex);
        }
        if !seen.insert(i) {
            return Err(TsigError::DuplicateIndex(i));
        }
    }
    Ok(indices
        .iter()
        .map(|&i| {
            let xi = GroupScalar::new(i as u64);
            let (num, den) =
                indices
                    .iter()
                    .filter(|&&j| j != i)
                    .fold((GroupScalar::ONE, GroupScalar::ONE), |(num, den), &j| {
                        let xj = GroupScalar::new(j as u64);
                        (num * xj, den * (xj - xi))
                    });
            // Indices are distinct and below q, so den is never zero.
            num * den.inverse().expect("distinct indices")
        })
        .collect())
}

/// Interpolate the signature at zero over every supplied share.
///
/// At least `cfg.m()` distinct indices are required. With honest shares the
/// result does not depend on which subset was supplied.
pub fn combine(shares: &[SignatureShare], cfg: ThresholdConfig) -> Result<ThresholdSignature, TsigError> {
    let indices: Vec<u32> = shares.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(&indices)?;
    if shares.len() < cfg.m as usize {
        return Err(TsigError::InsufficientShares {
            have: shares.len(),
            need: cfg.m,
        });
    }
    let value = shares.iter().zip(lambdas).map(|(s, l)| l * s.value).sum();
    Ok(ThresholdSignature { value })
}

/// Transparent pairing check: `σ == H(msg) · dlog(pk)`.
pub fn verify(public_key: GroupScalar, msg: &[u8], sig: &ThresholdSignature) -> bool {
    // pk = x·G with G = 1, so dlog(pk) = pk.
    sig.value == hash_to_scalar(msg) * public_key
}

/// Search `m`-subsets of `candidates` (lexicographic order) for one whose
/// combination verifies. Used by nodes when some validators may return
/// corrupted shares.
pub fn combine_verified(
    public_key: GroupScalar,
    msg: &[u8],
    candidates: &[SignatureShare],
    cfg: ThresholdConfig,
) -> Option<ThresholdSignature> {
    let m = cfg.m as usize;
    if candidates.len() < m {
        return None;
    }
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        let subset: Vec<SignatureShare> = pick.iter().map(|&i| candidates[i]).collect();
        if let Ok(sig) = combine(&subset, cfg) {
            if verify(public_key, msg, &sig) {
                return Some(sig);
            }
        }
        // advance to the next combination
        let len = candidates.len();
        let mut k = m;
        loop {
            if k == 0 {
                return None;
            }
            k -= 1;
            if pick[k] < len - m + k {
                break;
            }
        }
        pick[k] += 1;
        for j in k + 1..m {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32, m: u32) -> ThresholdConfig {
        ThresholdConfig::new(n, m).unwrap()
    }

    #[test]
    fn field_arithmetic_basics() {
        let a = GroupScalar::new(GROUP_ORDER - 1);
        assert_eq!(a + GroupScalar::ONE, GroupScalar::ZERO);
        assert_eq!(-GroupScalar::ONE, a);
        assert_eq!(a * a, GroupScalar::ONE);
        let x = GroupScalar::new(123_456_789_012);
        assert_eq!(x * x.inverse().unwrap(), GroupScalar::ONE);
        assert!(GroupScalar::ZERO.inverse().is_none());
        assert_eq!(GroupScalar::new(GROUP_ORDER), GroupScalar::ZERO);
    }

    #[test]
    fn config_validation() {
        assert_eq!(ThresholdConfig::new(3, 4), Err(TsigError::InvalidConfig { n: 3, m: 4 }));
        assert_eq!(ThresholdConfig::new(3, 0), Err(TsigError::InvalidConfig { n: 3, m: 0 }));
        assert!(ThresholdConfig::new(1, 1).is_ok());
    }

    #[test]
    fn single_share_equals_secret() {
        let out = dealer_keygen(cfg(1, 1), 77).unwrap();
        assert_eq!(out.shares.len(), 1);
        assert_eq!(out.shares.as_slice()[0].secret_share, out.dealer_secret);
        assert!(verify_share(&out.shares.as_slice()[0], &out.commitments));
    }

    #[test]
    fn tampered_share_fails_only_at_its_index() {
        let out = dealer_keygen(cfg(5, 3), 42).unwrap();
        for share in out.shares.iter() {
            let mut s = *share;
            if s.index == 2 {
                s.secret_share = s.secret_share + GroupScalar::ONE;
                assert!(!verify_share(&s, &out.commitments));
            } else {
                assert!(verify_share(&s, &out.commitments));
            }
        }
    }

    #[test]
    fn sign_share_identities() {
        let msg = b"hello";
        let zero = KeyShare {
            index: 1,
            secret_share: GroupScalar::ZERO,
            blinding_share: GroupScalar::ZERO,
        };
        assert_eq!(sign_share(&zero, msg).value, GroupScalar::ZERO);
        let one = KeyShare {
            secret_share: GroupScalar::ONE,
            ..zero
        };
        assert_eq!(sign_share(&one, msg).value, hash_to_scalar(msg));
        assert_eq!(sign_share(&one, msg), sign_share(&one, msg));
    }

    #[test]
    fn two_point_interpolation() {
        let s1 = GroupScalar::new(1000);
        let s2 = GroupScalar::new(37);
        let sig = combine(
            &[
                SignatureShare { index: 1, value: s1 },
                SignatureShare { index: 2, value: s2 },
            ],
            cfg(2, 2),
        )
        .unwrap();
        assert_eq!(sig.value, GroupScalar::new(2) * s1 - s2);
    }

    #[test]
    fn combine_errors() {
        let s = SignatureShare {
            index: 1,
            value: GroupScalar::ONE,
        };
        assert_eq!(
            combine(&[s], cfg(3, 2)),
            Err(TsigError::InsufficientShares { have: 1, need: 2 })
        );
        assert_eq!(combine(&[s, s], cfg(3, 2)), Err(TsigError::DuplicateIndex(1)));
        let z = SignatureShare { index: 0, ..s };
        assert_eq!(combine(&[z, s], cfg(3, 2)), Err(TsigError::ZeroIndex));
    }

    #[test]
    fn zero_key_verifies_zero_signature() {
        let sig = ThresholdSignature {
            value: GroupScalar::ZERO,
        };
        for msg in [&b""[..], b"a", b"anything at all"] {
            assert!(verify(GroupScalar::ZERO, msg, &sig));
        }
    }

    #[test]
    fn combine_verified_skips_corrupted_share() {
        let c = cfg(4, 3);
        let out = dealer_keygen(c, 5).unwrap();
        let msg = b"READY";
        let mut shares: Vec<SignatureShare> = out.shares.iter().map(|s| sign_share(s, msg)).collect();
        shares[0].value = shares[0].value + GroupScalar::ONE;
        let sig = combine_verified(out.public_key, msg, &shares, c).unwrap();
        assert_eq!(sig.value, out.dealer_secret * hash_to_scalar(msg));
        assert!(combine_verified(out.public_key, msg, &shares[..2], c).is_none());
    }

    #[test]
    fn hash_to_scalar_reduces_sha256() {
        // SHA-256("") = e3b0c442...b855; reduce independently with u128 long division.
        let digest = Sha256::digest(b"");
        let mut acc: u128 = 0;
        for b in digest.iter() {
            acc = (acc * 256 + *b as u128) % GROUP_ORDER as u128;
        }
        assert_eq!(hash_to_scalar(b"").value() as u128, acc);
    }
}
