//! Fault specifications and the randomized fault generator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ScenarioConfig};
use crate::rng::rng_stream;
use crate::txcore::ChainId;

/// Where a coordinating node stops. One per case of the liveness argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashPoint {
    /// On receiving the submission, before any Start is signed.
    BeforeStart,
    /// After Start is accepted, at the point of signing Commit or Ignore.
    AfterStartBeforeCommit,
    /// After Commit is accepted, before any signalling request is sent.
    AfterCommit,
    /// A subordinate chain's coordinating node, after mining and before Ready.
    SubordinateCoordinator,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 4] = [
        CrashPoint::BeforeStart,
        CrashPoint::AfterStartBeforeCommit,
        CrashPoint::AfterCommit,
        CrashPoint::SubordinateCoordinator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::BeforeStart => "before_start",
            CrashPoint::AfterStartBeforeCommit => "after_start_before_commit",
            CrashPoint::AfterCommit => "after_commit",
            CrashPoint::SubordinateCoordinator => "subordinate_coordinator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineStyle {
    /// Never answers a share request.
    Crash,
    /// Answers with a share that does not interpolate.
    Corrupt,
}

/// Message classes that loss can be restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageClass {
    Process,
    ViewRequest,
    ViewReply,
    Ready,
    ErrorReport,
    SignallingRequest,
}

impl MessageClass {
    pub fn name(self) -> &'static str {
        match self {
            MessageClass::Process => "process",
            MessageClass::ViewRequest => "view_request",
            MessageClass::ViewReply => "view_reply",
            MessageClass::Ready => "ready",
            MessageClass::ErrorReport => "error_report",
            MessageClass::SignallingRequest => "signalling_request",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            MessageClass::Process,
            MessageClass::ViewRequest,
            MessageClass::ViewReply,
            MessageClass::Ready,
            MessageClass::ErrorReport,
            MessageClass::SignallingRequest,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultSpec {
    /// Crash a coordinating node at `point`. Without a `chain`, the site is
    /// the coordinating node of the first submission; `SubordinateCoordinator`
    /// needs the subordinate `chain`, and picks the first submission's
    /// multichain member there unless `node` is given.
    CrashCoordinator {
        point: CrashPoint,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chain: Option<ChainId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<u32>,
    },
    ByzantineValidators {
        chain: ChainId,
        count: u32,
        style: ByzantineStyle,
    },
    MessageLoss {
        rate: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        classes: Vec<MessageClass>,
    },
    MessageDelay {
        min: u64,
        max: u64,
    },
}

impl FaultSpec {
    pub(crate) fn check_site(&self, cfg: &ScenarioConfig) -> Result<(), ConfigError> {
        match *self {
            FaultSpec::CrashCoordinator { point, chain, node } => {
                if cfg.submissions.is_empty() && chain.is_none() {
                    return Err(ConfigError::UnknownSite("no submission to crash".into()));
                }
                if point == CrashPoint::SubordinateCoordinator && chain.is_none() {
                    return Err(ConfigError::UnknownSite("subordinate_coordinator needs a chain".into()));
                }
                if let Some(chain) = chain {
                    let c = cfg
                        .chain(chain)
                        .ok_or_else(|| ConfigError::UnknownSite(format!("chain {chain}")))?;
                    if let Some(n) = node {
                        if n == 0 || n > c.validators {
                            return Err(ConfigError::UnknownSite(format!("node {chain}/{n}")));
                        }
                    }
                }
                Ok(())
            }
            FaultSpec::ByzantineValidators { chain, count, .. } => {
                let c = cfg
                    .chain(chain)
                    .ok_or_else(|| ConfigError::UnknownSite(format!("chain {chain}")))?;
                if count > c.validators {
                    return Err(ConfigError::UnknownSite(format!(
                        "{count} byzantine validators on chain {chain} of {}",
                        c.validators
                    )));
                }
                Ok(())
            }
            FaultSpec::MessageLoss { rate, .. } => {
                if (0.0..=1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!("loss rate {rate} outside [0, 1]")))
                }
            }
            FaultSpec::MessageDelay { min, max } => {
                if min <= max {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!("delay range {min}-{max} is empty")))
                }
            }
        }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultSpec::CrashCoordinator { point, chain, node } => {
                write!(f, "crash:{}", point.name())?;
                if let Some(c) = chain {
                    write!(f, "@{c}")?;
                    if let Some(n) = node {
                        write!(f, "/{n}")?;
                    }
                }
                Ok(())
            }
            FaultSpec::ByzantineValidators { chain, count, style } => {
                let s = match style {
                    ByzantineStyle::Crash => "crash",
                    ByzantineStyle::Corrupt => "corrupt",
                };
                write!(f, "byzantine:{chain}:{count}:{s}")
            }
            FaultSpec::MessageLoss { rate, classes } => {
                write!(f, "loss:{rate}")?;
                if !classes.is_empty() {
                    let names: Vec<_> = classes.iter().map(|c| c.name()).collect();
                    write!(f, ":{}", names.join(","))?;
                }
                Ok(())
            }
            FaultSpec::MessageDelay { min, max } => write!(f, "delay:{min}-{max}"),
        }
    }
}

/// Parses the compact command-line form, e.g. `crash:after_commit`,
/// `crash:subordinate_coordinator@4`, `byzantine:2:1:corrupt`,
/// `loss:0.3:ready`, `delay:0-5`.
impl FromStr for FaultSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unrecognized fault {s:?}");
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "crash" => {
                let (point, site) = match rest.split_once('@') {
                    Some((p, site)) => (p, Some(site)),
                    None => (rest, None),
                };
                let point = CrashPoint::ALL
                    .into_iter()
                    .find(|p| p.name() == point)
                    .ok_or_else(bad)?;
                let (chain, node) = match site {
                    None => (None, None),
                    Some(site) => {
                        let (c, n) = match site.split_once('/') {
                            Some((c, n)) => (c, Some(n.parse::<u32>().map_err(|_| bad())?)),
                            None => (site, None),
                        };
                        let c = c.parse::<u64>().ok().and_then(ChainId::try_new).ok_or_else(bad)?;
                        (Some(c), n)
                    }
                };
                Ok(FaultSpec::CrashCoordinator { point, chain, node })
            }
            "byzantine" => {
                let parts: Vec<_> = rest.split(':').collect();
                let [chain, count, style] = parts[..] else {
                    return Err(bad());
                };
                let chain = chain.parse::<u64>().ok().and_then(ChainId::try_new).ok_or_else(bad)?;
                let count = count.parse().map_err(|_| bad())?;
                let style = match style {
                    "crash" => ByzantineStyle::Crash,
                    "corrupt" => ByzantineStyle::Corrupt,
                    _ => return Err(bad()),
                };
                Ok(FaultSpec::ByzantineValidators { chain, count, style })
            }
            "loss" => {
                let (rate, classes) = match rest.split_once(':') {
                    Some((r, c)) => (r, Some(c)),
                    None => (rest, None),
                };
                let rate: f64 = rate.parse().map_err(|_| bad())?;
                let classes = match classes {
                    None => Vec::new(),
                    Some(c) => c
                        .split(',')
                        .map(|n| MessageClass::parse(n).ok_or_else(bad))
                        .collect::<Result<_, _>>()?,
                };
                Ok(FaultSpec::MessageLoss { rate, classes })
            }
            "delay" => {
                let (lo, hi) = rest.split_once('-').ok_or_else(bad)?;
                Ok(FaultSpec::MessageDelay {
                    min: lo.parse().map_err(|_| bad())?,
                    max: hi.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Draw a fault set for `cfg` from `seed`: maybe a crash at a random point,
/// 0-30% message loss, a random extra delay range and, on one chain, up to
/// m-1 byzantine validators.
pub fn random_faults(cfg: &ScenarioConfig, seed: u64) -> Vec<FaultSpec> {
    let mut rng = rng_stream(seed, "sim/random-faults");
    let mut out = Vec::new();
    let origin = cfg.submissions.first().map(|s| s.chain);
    if rng.chance(0.5) && origin.is_some() {
        let point = CrashPoint::ALL[rng.below(4) as usize];
        if point == CrashPoint::SubordinateCoordinator {
            let others: Vec<_> = cfg
                .chains
                .iter()
                .filter(|c| Some(c.id) != origin && c.validators > 1)
                .map(|c| c.id)
                .collect();
            if !others.is_empty() {
                let chain = others[rng.below(others.len() as u64) as usize];
                out.push(FaultSpec::CrashCoordinator {
                    point,
                    chain: Some(chain),
                    node: None,
                });
            }
        } else {
            out.push(FaultSpec::CrashCoordinator {
                point,
                chain: None,
                node: None,
            });
        }
    }
    let rate = (rng.below(31) as f64) / 100.0;
    if rate > 0.0 {
        out.push(FaultSpec::MessageLoss {
            rate,
            classes: Vec::new(),
        });
    }
    let max = rng.below(7);
    if max > 0 {
        out.push(FaultSpec::MessageDelay { min: 0, max });
    }
    if rng.chance(0.5) {
        let c = cfg.chains[rng.below(cfg.chains.len() as u64) as usize];
        if c.threshold > 1 {
            let count = rng.range_inclusive(1, u64::from(c.threshold - 1)) as u32;
            let style = if rng.chance(0.5) {
                ByzantineStyle::Crash
            } else {
                ByzantineStyle::Corrupt
            };
            out.push(FaultSpec::ByzantineValidators {
                chain: c.id,
                count,
                style,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_form_round_trips() {
        for s in [
            "crash:before_start",
            "crash:subordinate_coordinator@4",
            "crash:after_commit@1/2",
            "byzantine:2:1:corrupt",
            "loss:0.3",
            "loss:0.3:ready,error_report",
            "delay:0-5",
        ] {
            let f: FaultSpec = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("crash:sometime".parse::<FaultSpec>().is_err());
        assert!("byzantine:0:1:crash".parse::<FaultSpec>().is_err());
        assert!("delay:5".parse::<FaultSpec>().is_err());
    }

    #[test]
    fn json_form() {
        let f: FaultSpec = serde_json::from_str(r#"{"kind":"crash_coordinator","point":"after_commit"}"#).unwrap();
        assert_eq!(
            f,
            FaultSpec::CrashCoordinator {
                point: CrashPoint::AfterCommit,
                chain: None,
                node: None
            }
        );
        let f: FaultSpec = serde_json::from_str(r#"{"kind":"message_loss","rate":0.25,"classes":["ready"]}"#).unwrap();
        assert_eq!(
            f,
            FaultSpec::MessageLoss {
                rate: 0.25,
                classes: vec![MessageClass::Ready]
            }
        );
    }
}
