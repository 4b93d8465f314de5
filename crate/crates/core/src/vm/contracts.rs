//! Built-in contract kinds: fungible token, non-fungible token, NFT market
//! and the registration record for hybrid executors.

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::identity::{Address, AddressScheme};
use crate::tx::{ContractId, Value};

use super::frame::CallFrame;
use super::state::{decode_u128, Event, KeyKind, Leg, StorageKey};
use super::{QueryError, RevertReason};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractKind {
    /// Six-method fungible token. The whole supply is minted to `owner`.
    FungibleToken { initial_supply: u128, owner: Address },
    NonFungibleToken,
    /// Marketplace selling tokens of `nft` for units of `token`.
    NftMarket { nft: ContractId, token: ContractId },
    /// Records the off-chain executor trusted by hybrid computation.
    HybridVerifier { executor: Address },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDef {
    pub contract_id: ContractId,
    pub kind: ContractKind,
}

pub(crate) fn supply_key() -> StorageKey {
    StorageKey::new(KeyKind::Supply, &[], None)
}

pub(crate) fn balance_key(holder: Address) -> StorageKey {
    StorageKey::new(KeyKind::Balance, &[holder], None)
}

pub(crate) fn allowance_key(owner: Address, spender: Address) -> StorageKey {
    StorageKey::new(KeyKind::Allowance, &[owner, spender], None)
}

pub(crate) fn owner_key(token_id: u128) -> StorageKey {
    StorageKey::new(KeyKind::Owner, &[], Some(token_id))
}

pub(crate) fn holding_key(holder: Address, token_id: u128) -> StorageKey {
    StorageKey::new(KeyKind::Holding, &[holder], Some(token_id))
}

pub(crate) fn content_key(token_id: u128) -> StorageKey {
    StorageKey::new(KeyKind::Content, &[], Some(token_id))
}

pub(crate) fn listing_key(token_id: u128) -> StorageKey {
    StorageKey::new(KeyKind::Listing, &[], Some(token_id))
}

pub(crate) fn listed_by_key(seller: Address, token_id: u128) -> StorageKey {
    StorageKey::new(KeyKind::Listing, &[seller], Some(token_id))
}

pub(crate) fn encode_address(a: &Address) -> Vec<u8> {
    a.payload.to_vec()
}

pub(crate) fn decode_address(b: &[u8]) -> Option<Address> {
    let payload: [u8; 20] = b.get(..20)?.try_into().ok()?;
    Some(Address::from_payload(payload, AddressScheme::Base16Eth))
}

/// Stored NFT content: raw bytes kept on-chain or a content id pointing off-chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NftContent {
    Raw(Vec<u8>),
    Linked(Digest),
}

impl NftContent {
    fn encode(&self) -> Vec<u8> {
        match self {
            NftContent::Raw(d) => {
                let mut v = Vec::with_capacity(d.len() + 1);
                v.push(0);
                v.extend_from_slice(d);
                v
            }
            NftContent::Linked(c) => {
                let mut v = vec![1];
                v.extend_from_slice(&c.0);
                v
            }
        }
    }

    pub fn decode(b: &[u8]) -> Option<NftContent> {
        match b.first()? {
            0 => Some(NftContent::Raw(b[1..].to_vec())),
            1 => Some(NftContent::Linked(Digest(b.get(1..33)?.try_into().ok()?))),
            _ => None,
        }
    }
}

fn arg_addr(args: &[Value], i: usize) -> Result<Address, RevertReason> {
    args.get(i)
        .and_then(Value::as_addr)
        .ok_or(RevertReason::BadArgs)
}

fn arg_uint(args: &[Value], i: usize) -> Result<u128, RevertReason> {
    args.get(i)
        .and_then(Value::as_uint)
        .ok_or(RevertReason::BadArgs)
}

fn u128_bytes(v: u128) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

/// Constructor writes for a freshly deployed contract.
pub(crate) fn constructor_writes(def: &ContractDef) -> Vec<(StorageKey, Vec<u8>)> {
    match &def.kind {
        ContractKind::FungibleToken {
            initial_supply,
            owner,
        } => vec![
            (supply_key(), u128_bytes(*initial_supply)),
            (balance_key(*owner), u128_bytes(*initial_supply)),
        ],
        ContractKind::NonFungibleToken
        | ContractKind::NftMarket { .. }
        | ContractKind::HybridVerifier { .. } => Vec::new(),
    }
}

/// Dispatch a state-changing call.
pub(crate) fn call(
    f: &mut CallFrame<'_, '_>,
    def: &ContractDef,
    method: &str,
    args: &[Value],
    inline_data: &[u8],
) -> Result<(), RevertReason> {
    let me = def.contract_id;
    match (&def.kind, method) {
        (ContractKind::FungibleToken { .. }, "transfer") => {
            let to = arg_addr(args, 0)?;
            let amount = arg_uint(args, 1)?;
            let from = f.caller;
            move_tokens(f, me, from, to, amount)
        }
        (ContractKind::FungibleToken { .. }, "approve") => {
            let spender = arg_addr(args, 0)?;
            let amount = arg_uint(args, 1)?;
            let owner = f.caller;
            f.write(me, allowance_key(owner, spender), Some(u128_bytes(amount)), Leg::Auxiliary);
            f.emit(Event::new(
                me,
                "Approval",
                &[
                    ("owner", owner.text()),
                    ("spender", spender.text()),
                    ("value", amount.to_string()),
                ],
            ));
            Ok(())
        }
        (ContractKind::FungibleToken { .. }, "transferFrom") => {
            let from = arg_addr(args, 0)?;
            let to = arg_addr(args, 1)?;
            let amount = arg_uint(args, 2)?;
            let spender = f.caller;
            let allowed = f.read_u128(me, &allowance_key(from, spender));
            if allowed < amount {
                return Err(RevertReason::InsufficientAllowance);
            }
            let bal = f.read_u128(me, &balance_key(from));
            if bal < amount {
                return Err(RevertReason::InsufficientBalance);
            }
            f.write(
                me,
                allowance_key(from, spender),
                Some(u128_bytes(allowed - amount)),
                Leg::Payment,
            );
            move_tokens(f, me, from, to, amount)
        }
        (ContractKind::NonFungibleToken, "mint") => {
            let token_id = arg_uint(args, 0)?;
            let content = match args.get(1) {
                Some(Value::Cid(c)) => NftContent::Linked(*c),
                Some(Value::Bytes(b)) => NftContent::Raw(b.clone()),
                None => NftContent::Raw(inline_data.to_vec()),
                Some(_) => return Err(RevertReason::BadArgs),
            };
            if f.read(me, &owner_key(token_id)).is_some() {
                return Err(RevertReason::DuplicateTokenId);
            }
            let to = f.caller;
            f.write(me, owner_key(token_id), Some(encode_address(&to)), Leg::Payment);
            f.write(me, holding_key(to, token_id), Some(vec![1]), Leg::Payment);
            f.write(me, content_key(token_id), Some(content.encode()), Leg::Auxiliary);
            f.emit(Event::new(
                me,
                "Transfer",
                &[
                    ("from", Address::ZERO.text()),
                    ("to", to.text()),
                    ("tokenId", token_id.to_string()),
                ],
            ));
            Ok(())
        }
        (ContractKind::NonFungibleToken, "transferFrom") => {
            let from = arg_addr(args, 0)?;
            let to = arg_addr(args, 1)?;
            let token_id = arg_uint(args, 2)?;
            if f.caller != from {
                return Err(RevertReason::NotOwner);
            }
            move_nft(f, me, from, to, token_id)
        }
        (ContractKind::NftMarket { nft, .. }, "list") => {
            let token_id = arg_uint(args, 0)?;
            let price = arg_uint(args, 1)?;
            let seller = f.caller;
            let owner = f.read(*nft, &owner_key(token_id)).and_then(|b| decode_address(&b));
            if owner != Some(seller) {
                return Err(RevertReason::NotOwner);
            }
            let mut rec = encode_address(&seller);
            rec.extend_from_slice(&price.to_be_bytes());
            f.write(me, listing_key(token_id), Some(rec), Leg::Auxiliary);
            f.write(me, listed_by_key(seller, token_id), Some(u128_bytes(price)), Leg::Auxiliary);
            f.emit(Event::new(
                me,
                "Listed",
                &[
                    ("seller", seller.text()),
                    ("tokenId", token_id.to_string()),
                    ("price", price.to_string()),
                ],
            ));
            Ok(())
        }
        (ContractKind::NftMarket { nft, token }, "buy") => {
            let token_id = arg_uint(args, 0)?;
            let offered = arg_uint(args, 1)?;
            let rec = f
                .read(me, &listing_key(token_id))
                .ok_or(RevertReason::NotListed)?;
            let seller = decode_address(&rec).ok_or(RevertReason::NotListed)?;
            let price = decode_u128(&rec[20..]);
            if offered != price {
                return Err(RevertReason::PriceMismatch);
            }
            let owner = f.read(*nft, &owner_key(token_id)).and_then(|b| decode_address(&b));
            if owner != Some(seller) {
                return Err(RevertReason::NotOwner);
            }
            let buyer = f.caller;
            // Payment and ownership move together or not at all.
            move_tokens(f, *token, buyer, seller, price)?;
            move_nft(f, *nft, seller, buyer, token_id)?;
            f.write(me, listing_key(token_id), None, Leg::Auxiliary);
            f.write(me, listed_by_key(seller, token_id), None, Leg::Auxiliary);
            f.emit(Event::new(
                me,
                "Sold",
                &[
                    ("seller", seller.text()),
                    ("buyer", buyer.text()),
                    ("tokenId", token_id.to_string()),
                    ("price", price.to_string()),
                ],
            ));
            Ok(())
        }
        _ => Err(RevertReason::UnknownMethod(method.to_string())),
    }
}

fn move_tokens(
    f: &mut CallFrame<'_, '_>,
    token: ContractId,
    from: Address,
    to: Address,
    amount: u128,
) -> Result<(), RevertReason> {
    let from_bal = f.read_u128(token, &balance_key(from));
    if from_bal < amount {
        return Err(RevertReason::InsufficientBalance);
    }
    f.write(token, balance_key(from), Some(u128_bytes(from_bal - amount)), Leg::Payment);
    let to_bal = f.read_u128(token, &balance_key(to));
    let credited = to_bal.checked_add(amount).ok_or(RevertReason::Overflow)?;
    f.write(token, balance_key(to), Some(u128_bytes(credited)), Leg::Payment);
    f.emit(Event::new(
        token,
        "Transfer",
        &[
            ("from", from.text()),
            ("to", to.text()),
            ("value", amount.to_string()),
        ],
    ));
    Ok(())
}

fn move_nft(
    f: &mut CallFrame<'_, '_>,
    nft: ContractId,
    from: Address,
    to: Address,
    token_id: u128,
) -> Result<(), RevertReason> {
    let owner = f.read(nft, &owner_key(token_id)).and_then(|b| decode_address(&b));
    if owner != Some(from) {
        return Err(RevertReason::NotOwner);
    }
    f.write(nft, owner_key(token_id), Some(encode_address(&to)), Leg::Payment);
    f.write(nft, holding_key(from, token_id), None, Leg::Payment);
    f.write(nft, holding_key(to, token_id), Some(vec![1]), Leg::Payment);
    f.emit(Event::new(
        nft,
        "Transfer",
        &[
            ("from", from.text()),
            ("to", to.text()),
            ("tokenId", token_id.to_string()),
        ],
    ));
    Ok(())
}

/// Read-only methods. No gas is charged.
pub(crate) fn query(
    f: &mut CallFrame<'_, '_>,
    def: &ContractDef,
    method: &str,
    args: &[Value],
) -> Result<Value, QueryError> {
    let me = def.contract_id;
    let bad = |_| QueryError::BadArgs;
    match (&def.kind, method) {
        (ContractKind::FungibleToken { .. }, "totalSupply") => {
            Ok(Value::Uint(f.read_u128(me, &supply_key())))
        }
        (ContractKind::FungibleToken { .. }, "balanceOf") => {
            let who = arg_addr(args, 0).map_err(bad)?;
            Ok(Value::Uint(f.read_u128(me, &balance_key(who))))
        }
        (ContractKind::FungibleToken { .. }, "allowance") => {
            let owner = arg_addr(args, 0).map_err(bad)?;
            let spender = arg_addr(args, 1).map_err(bad)?;
            Ok(Value::Uint(f.read_u128(me, &allowance_key(owner, spender))))
        }
        (ContractKind::NonFungibleToken, "ownerOf") => {
            let id = arg_uint(args, 0).map_err(bad)?;
            f.read(me, &owner_key(id))
                .and_then(|b| decode_address(&b))
                .map(Value::Addr)
                .ok_or(QueryError::NotMinted(id))
        }
        (ContractKind::NonFungibleToken, "contentOf") => {
            let id = arg_uint(args, 0).map_err(bad)?;
            let raw = f.read(me, &content_key(id)).ok_or(QueryError::NotMinted(id))?;
            match NftContent::decode(&raw) {
                Some(NftContent::Raw(d)) => Ok(Value::Bytes(d)),
                Some(NftContent::Linked(c)) => Ok(Value::Cid(c)),
                None => Err(QueryError::NotMinted(id)),
            }
        }
        (ContractKind::NftMarket { .. }, "listingOf") => {
            let id = arg_uint(args, 0).map_err(bad)?;
            let rec = f.read(me, &listing_key(id)).ok_or(QueryError::NotListed(id))?;
            let seller = decode_address(&rec).ok_or(QueryError::NotListed(id))?;
            Ok(Value::List(vec![
                Value::Addr(seller),
                Value::Uint(decode_u128(&rec[20..])),
            ]))
        }
        (ContractKind::HybridVerifier { executor }, "executor") => Ok(Value::Addr(*executor)),
        _ => Err(QueryError::UnknownMethod(method.to_string())),
    }
}
