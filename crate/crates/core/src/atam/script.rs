//! Line-oriented scenario scripts: one `step key=value ...` record per line,
//! `#` comments, and a `repeat count=N` directive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    CreateIdentity,
    ConnectWallet,
    MintNft { data_size: usize },
    ListNft { price: u128 },
    BuyNft,
    RetrieveState,
}

impl Step {
    /// Whether the step is carried by an on-chain transaction.
    pub fn is_transaction(&self) -> bool {
        matches!(self, Step::MintNft { .. } | Step::ListNft { .. } | Step::BuyNft)
    }

    /// Whether the step counts as a user operation for availability.
    pub fn is_operation(&self) -> bool {
        self.is_transaction() || *self == Step::RetrieveState
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub steps: Vec<Step>,
    /// Concurrent seller/buyer sessions, each running every step.
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: unknown step {step:?}")]
    UnknownStep { line: usize, step: String },
    #[error("line {line}: bad argument {arg:?}")]
    BadArg { line: usize, arg: String },
    #[error("line {line}: missing argument {name}")]
    MissingArg { line: usize, name: &'static str },
    #[error("buy_nft must follow a list_nft step")]
    BuyBeforeList,
    #[error("mint_nft must precede list_nft")]
    ListBeforeMint,
}

impl Default for ScenarioScript {
    /// Alice mints a 512-byte NFT, lists it, Bob buys it and reads it back.
    fn default() -> Self {
        ScenarioScript {
            steps: vec![
                Step::CreateIdentity,
                Step::ConnectWallet,
                Step::MintNft { data_size: 512 },
                Step::ListNft { price: 100 },
                Step::BuyNft,
                Step::RetrieveState,
            ],
            repetitions: 200,
        }
    }
}

impl ScenarioScript {
    pub fn data_size(&self) -> Option<usize> {
        self.steps.iter().find_map(|s| match s {
            Step::MintNft { data_size } => Some(*data_size),
            _ => None,
        })
    }

    pub fn price(&self) -> u128 {
        self.steps
            .iter()
            .find_map(|s| match s {
                Step::ListNft { price } => Some(*price),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn with_repetitions(mut self, n: usize) -> ScenarioScript {
        self.repetitions = n;
        self
    }

    pub fn with_data_size(mut self, size: usize) -> ScenarioScript {
        for s in &mut self.steps {
            if let Step::MintNft { data_size } = s {
                *data_size = size;
            }
        }
        self
    }

    fn validate(&self) -> Result<(), ScriptError> {
        let pos = |f: fn(&Step) -> bool| self.steps.iter().position(f);
        let mint = pos(|s| matches!(s, Step::MintNft { .. }));
        let list = pos(|s| matches!(s, Step::ListNft { .. }));
        let buy = pos(|s| *s == Step::BuyNft);
        if let Some(b) = buy {
            if list.is_none_or(|l| l > b) {
                return Err(ScriptError::BuyBeforeList);
            }
        }
        if let Some(l) = list {
            if mint.is_none_or(|m| m > l) {
                return Err(ScriptError::ListBeforeMint);
            }
        }
        Ok(())
    }
}

impl FromStr for ScenarioScript {
    type Err = ScriptError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut steps = Vec::new();
        let mut repetitions = 1;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            let name = words.next().expect("non-empty line");
            let mut args = Vec::new();
            for w in words {
                let (k, v) = w.split_once('=').ok_or_else(|| ScriptError::BadArg {
                    line,
                    arg: w.to_string(),
                })?;
                args.push((k, v));
            }
            let get = |key: &'static str| -> Result<&str, ScriptError> {
                args.iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .ok_or(ScriptError::MissingArg { line, name: key })
            };
            let num = |key: &'static str| -> Result<u128, ScriptError> {
                let v = get(key)?;
                v.parse().map_err(|_| ScriptError::BadArg {
                    line,
                    arg: format!("{key}={v}"),
                })
            };
            match name {
                "repeat" => repetitions = num("count")? as usize,
                "create_identity" => steps.push(Step::CreateIdentity),
                "connect_wallet" => steps.push(Step::ConnectWallet),
                "mint_nft" => steps.push(Step::MintNft {
                    data_size: num("data_size")? as usize,
                }),
                "list_nft" => steps.push(Step::ListNft { price: num("price")? }),
                "buy_nft" => steps.push(Step::BuyNft),
                "retrieve_state" => steps.push(Step::RetrieveState),
                other => {
                    return Err(ScriptError::UnknownStep {
                        line,
                        step: other.to_string(),
                    })
                }
            }
        }
        let script = ScenarioScript { steps, repetitions };
        script.validate()?;
        Ok(script)
    }
}

impl fmt::Display for ScenarioScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "repeat count={}", self.repetitions)?;
        for s in &self.steps {
            match s {
                Step::CreateIdentity => writeln!(f, "create_identity")?,
                Step::ConnectWallet => writeln!(f, "connect_wallet")?,
                Step::MintNft { data_size } => writeln!(f, "mint_nft data_size={data_size}")?,
                Step::ListNft { price } => writeln!(f, "list_nft price={price}")?,
                Step::BuyNft => writeln!(f, "buy_nft")?,
                Step::RetrieveState => writeln!(f, "retrieve_state")?,
            }
        }
        Ok(())
    }
}
