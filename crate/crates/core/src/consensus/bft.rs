//! One BFT view: a proposal, a vote broadcast, and commit on quorum.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use super::{Block, ByzantineKind, ConfirmedTx, Network, NodeBehavior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Msg {
    Proposal { to: usize, block: usize },
    Vote { to: usize, from: usize, block: usize },
}

impl Network {
    pub(super) fn run_bft_round(&mut self, quorum: usize) -> Vec<ConfirmedTx> {
        let round = self.round;
        self.round += 1;
        let t0 = self.now;
        let n = self.nodes.len();
        let live: Vec<bool> = (0..n).map(|i| self.is_live(i, round)).collect();
        let proposer = (round % n as u64) as usize;
        let parent = self.nodes[proposer].tip;

        let mut proposals: Vec<(Arc<Block>, Vec<usize>)> = Vec::new();
        if live[proposer] {
            match self.nodes[proposer].behavior {
                NodeBehavior::Honest => {
                    let b = self.build_block(proposer, parent, 0, true);
                    proposals.push((b, (0..n).collect()));
                }
                NodeBehavior::Byzantine(ByzantineKind::Withhold) => {
                    let b = self.build_block(proposer, parent, 0, false);
                    proposals.push((b, (0..n).collect()));
                }
                NodeBehavior::Byzantine(ByzantineKind::Equivocate) => {
                    let a = self.build_block(proposer, parent, 0, true);
                    let b = self.build_block(proposer, parent, 1, false);
                    let half = n / 2;
                    proposals.push((a, (0..half).collect()));
                    proposals.push((b, (half..n).collect()));
                }
                NodeBehavior::Byzantine(_) | NodeBehavior::Crashed => {}
            }
        }

        let mut queue: BinaryHeap<Reverse<(u64, u64, Msg)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |q: &mut BinaryHeap<_>, t: u64, m: Msg| {
            q.push(Reverse((t, seq, m)));
            seq += 1;
        };
        for (idx, (block, recipients)) in proposals.iter().enumerate() {
            let transfer = block.size_bytes() as u64 / self.config.bytes_per_tick.max(1);
            for &to in recipients {
                let d = if to == proposer { 0 } else { self.delay() + transfer };
                push(&mut queue, t0 + d, Msg::Proposal { to, block: idx });
            }
        }

        let deadline = t0 + self.config.view_timeout;
        let mut voted: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut tallies: Vec<Vec<BTreeSet<usize>>> = vec![vec![BTreeSet::new(); proposals.len()]; n];
        let mut committed: Vec<Option<(usize, u64)>> = vec![None; n];

        while let Some(Reverse((t, _, msg))) = queue.pop() {
            if t > deadline {
                break;
            }
            match msg {
                Msg::Proposal { to, block } => {
                    if !live[to] {
                        continue;
                    }
                    let valid = proposals[block].0.parent_hash == self.nodes[to].tip;
                    let vote = match self.nodes[to].behavior {
                        NodeBehavior::Honest | NodeBehavior::Byzantine(ByzantineKind::Withhold) => {
                            valid && voted[to].is_empty()
                        }
                        NodeBehavior::Byzantine(ByzantineKind::Equivocate) => {
                            !voted[to].contains(&block)
                        }
                        _ => false,
                    };
                    if vote {
                        voted[to].push(block);
                        for j in 0..n {
                            let d = if j == to { 0 } else { self.delay() };
                            push(&mut queue, t + d, Msg::Vote { to: j, from: to, block });
                        }
                    }
                }
                Msg::Vote { to, from, block } => {
                    if !live[to] {
                        continue;
                    }
                    tallies[to][block].insert(from);
                    if committed[to].is_none() && tallies[to][block].len() >= quorum {
                        committed[to] = Some((block, t));
                    }
                }
            }
        }

        let honest_commits: Vec<(usize, u64)> = (0..n)
            .filter(|&i| self.nodes[i].behavior == NodeBehavior::Honest)
            .filter_map(|i| committed[i])
            .collect();
        let Some(&(first_block, _)) = honest_commits.iter().min_by_key(|(_, t)| *t) else {
            self.now = t0 + self.config.view_timeout.max(self.config.block_interval);
            return Vec::new();
        };

        let mut out = Vec::new();
        let mut distinct: Vec<usize> = honest_commits.iter().map(|(b, _)| *b).collect();
        distinct.sort_unstable();
        distinct.dedup();
        // The earliest honest commit is canonical; any other one is a violation.
        distinct.sort_by_key(|b| *b != first_block);
        for b in distinct {
            let at = honest_commits
                .iter()
                .filter(|(x, _)| *x == b)
                .map(|(_, t)| *t)
                .min()
                .expect("commit exists");
            out.extend(self.confirm_block(proposals[b].0.hash, at));
        }

        let winner = proposals[first_block].0.hash;
        for (i, c) in committed.iter().enumerate() {
            let synced = match *c {
                Some((b, _)) => Some(proposals[b].0.hash),
                None if self.nodes[i].behavior != NodeBehavior::Crashed
                    && self.nodes[i].tip == parent =>
                {
                    Some(winner)
                }
                None => None,
            };
            if let Some(h) = synced {
                self.nodes[i].tip = h;
            }
        }
        let last = honest_commits.iter().map(|(_, t)| *t).max().unwrap_or(t0);
        self.now = last.max(t0 + self.config.block_interval);
        out
    }
}
